import numpy as np
import pytest

from sensefuse.errors import DegenerateInput, NoUsableFeatures, SchemaMismatch
from sensefuse.reduce import (
    CorrelationSelector,
    PrincipalComponents,
    select_top_k,
)


def test_points_on_a_line_need_one_component():
    t = np.linspace(-3, 3, 30)
    X = np.column_stack([t, 2 * t])
    model = PrincipalComponents(n_components=1).fit(X)
    assert model.explained_variance_ratio_[0] == pytest.approx(1.0)


def test_full_rank_reconstruction_is_exact():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 6))
    model = PrincipalComponents(n_components=6).fit(X)
    back = model.inverse_transform(model.transform(X))
    assert np.max(np.abs(back - X)) <= 1e-8


def test_components_orthonormal():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 8)) @ rng.normal(size=(8, 8))
    model = PrincipalComponents(n_components=5).fit(X)
    gram = model.components_ @ model.components_.T
    assert np.max(np.abs(gram - np.eye(5))) <= 1e-8


def test_explained_variance_non_increasing():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, 7)) * np.array([5, 4, 3, 2, 1, 0.5, 0.1])
    model = PrincipalComponents(n_components=6).fit(X)
    assert np.all(np.diff(model.explained_variance_) <= 1e-12)


def test_transform_variances_equal_explained_variances():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(80, 5)) * np.array([3, 2, 1, 0.5, 0.25])
    model = PrincipalComponents(n_components=4).fit(X)
    Z = model.transform(X)
    observed = Z.var(axis=0, ddof=1)
    assert np.allclose(observed, model.explained_variance_, atol=1e-10)


def test_mean_vector_maps_to_zero():
    rng = np.random.default_rng(4)
    X = rng.normal(2.0, 1.0, size=(30, 4))
    model = PrincipalComponents(n_components=2).fit(X)
    z = model.transform(X.mean(axis=0, keepdims=True))
    assert np.allclose(z, 0.0, atol=1e-12)


def test_reconstruction_error_decreases_with_components():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(60, 8)) * np.linspace(4, 0.2, 8)
    errs = []
    for k in (1, 3, 6):
        model = PrincipalComponents(n_components=k).fit(X)
        back = model.inverse_transform(model.transform(X))
        errs.append(float(np.sqrt(np.mean((back - X) ** 2))))
    assert errs[0] >= errs[1] >= errs[2]


def test_sign_convention_largest_loading_positive():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(50, 5))
    model = PrincipalComponents(n_components=3).fit(X)
    for comp in model.components_:
        assert comp[np.argmax(np.abs(comp))] > 0


def test_rank_zero_raises_degenerate():
    with pytest.raises(DegenerateInput):
        PrincipalComponents(n_components=1).fit(np.ones((10, 3)))


def test_missing_cells_rejected():
    X = np.ones((10, 3))
    X[0, 0] = np.nan
    with pytest.raises(DegenerateInput):
        PrincipalComponents(n_components=1).fit(X)


def test_too_many_components_rejected():
    with pytest.raises(ValueError):
        PrincipalComponents(n_components=5).fit(np.random.default_rng(0)
                                                .normal(size=(4, 8)))


def test_transform_schema_mismatch():
    rng = np.random.default_rng(7)
    model = PrincipalComponents(n_components=2).fit(rng.normal(size=(20, 4)))
    with pytest.raises(SchemaMismatch):
        model.transform(rng.normal(size=(5, 3)))


def test_state_round_trip():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(30, 5))
    model = PrincipalComponents(n_components=3).fit(X)
    clone = PrincipalComponents.from_state(model.state())
    assert np.array_equal(clone.transform(X), model.transform(X))


# ---------------------------------------------------------------------------
# select_top_k
# ---------------------------------------------------------------------------


def test_feature_equal_to_target_ranks_first():
    rng = np.random.default_rng(0)
    y = rng.normal(size=50)
    X = np.column_stack([rng.normal(size=50), y, rng.normal(size=50)])
    mask = select_top_k(X, y, ["a", "b", "c"], k=2, method="pearson")
    assert mask.names[0] == "b"
    assert mask.entries[0][1] == pytest.approx(1.0)


def test_k_larger_than_feature_count_returns_all():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 3))
    y = rng.normal(size=30)
    mask = select_top_k(X, y, ["a", "b", "c"], k=10)
    assert len(mask) == 3


def test_planted_feature_survives_noise_monte_carlo():
    hits = 0
    n_seeds = 200
    for seed in range(n_seeds):
        rng = np.random.default_rng(seed)
        n = 60
        y = rng.normal(size=n)
        planted = 0.9 * y + np.sqrt(1 - 0.81) * rng.normal(size=n)
        X = np.column_stack([rng.normal(size=(n, 50)), planted])
        names = [f"n{j:02d}" for j in range(50)] + ["planted"]
        mask = select_top_k(X, y, names, k=20, method="pearson")
        if "planted" in mask.names:
            hits += 1
    assert hits >= 0.99 * n_seeds


def test_tie_break_lexicographic():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    X = np.column_stack([y, y])
    mask = select_top_k(X, y, ["zeta", "alpha"], k=2)
    assert mask.names == ["alpha", "zeta"]


def test_features_with_few_pairs_excluded():
    y = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    sparse = np.array([1.0, np.nan, np.nan, np.nan, np.nan])
    dense = np.array([1.0, 2.0, 3.0, 4.0, 5.5])
    mask = select_top_k(np.column_stack([sparse, dense]), y,
                        ["sparse", "dense"], k=5)
    assert mask.names == ["dense"]


def test_no_usable_features_raises():
    y = np.array([1.0, 2.0, 3.0])
    X = np.full((3, 2), 5.0)  # zero variance
    with pytest.raises(NoUsableFeatures):
        select_top_k(X, y, ["a", "b"], k=1)


def test_spearman_invariant_under_monotone_rescaling():
    rng = np.random.default_rng(9)
    n = 40
    y = rng.normal(size=n)
    base = rng.normal(size=(n, 4))
    mask1 = select_top_k(base, y, list("abcd"), k=4, method="spearman")
    rescaled = np.column_stack([np.exp(base[:, 0]), base[:, 1] ** 3,
                                base[:, 2] * 7 + 2, base[:, 3]])
    mask2 = select_top_k(rescaled, y, list("abcd"), k=4, method="spearman")
    assert mask1.names == mask2.names
    for (n1, s1), (n2, s2) in zip(mask1.entries, mask2.entries):
        assert s1 == pytest.approx(s2, abs=1e-12)


def test_selector_estimator_transform():
    rng = np.random.default_rng(10)
    y = rng.normal(size=30)
    X = np.column_stack([y, rng.normal(size=30), rng.normal(size=30)])
    sel = CorrelationSelector(k=1, method="pearson").fit(X, y,
                                                         names=["hit", "a", "b"])
    out = sel.transform(X)
    assert out.shape == (30, 1)
    assert np.array_equal(out[:, 0], X[:, 0])


def test_selection_ignores_rows_outside_training(small_cohort):
    # leakage guard: the mask is a function of the rows it is given
    rng = np.random.default_rng(11)
    X = rng.normal(size=(50, 6))
    y = rng.normal(size=50)
    names = list("abcdef")
    mask1 = select_top_k(X[:30], y[:30], names, k=3)
    X_perturbed = X.copy()
    X_perturbed[30:] += 100.0
    mask2 = select_top_k(X_perturbed[:30], y[:30], names, k=3)
    assert mask1.entries == mask2.entries


def test_loadings_csv_export(tmp_path):
    rng = np.random.default_rng(12)
    X = rng.normal(size=(30, 3))
    model = PrincipalComponents(n_components=2).fit(X)
    path = tmp_path / "loadings.csv"
    from sensefuse.reduce import write_loadings_csv
    write_loadings_csv(str(path), model, ["a", "b", "c"])
    lines = path.read_text().splitlines()
    assert lines[0] == "component,feature,loading,explained_variance_ratio"
    assert len(lines) == 1 + 2 * 3
    first = lines[1].split(",")
    assert first[0] == "0" and first[1] == "a"
    assert float(first[2]) == model.components_[0, 0]
