import math

import numpy as np
import pytest

from oracles import prefix_mean_fill
from sensefuse.core import ModalityKind
from sensefuse.errors import InvalidConfig, NoDonorRows
from sensefuse.impute import (
    CohortImputer,
    CrossStreamImputer,
    ImputePolicy,
    farthest_point_kmeans,
    rolling_mean_impute,
)
from sensefuse.ingest import FeatureMatrix

W = ModalityKind.WEARABLE
S = ModalityKind.SOCIAL_MEDIA


def _fm(modality, values, prefix="f"):
    values = np.asarray(values, dtype=float)
    pids = [f"p{i}" for i in range(values.shape[0])]
    cols = [f"{prefix}{j}" for j in range(values.shape[1])]
    return FeatureMatrix(modality, pids, cols, values)


def test_rolling_mean_examples():
    assert list(rolling_mean_impute([1.0, math.nan, 3.0], 0.0)) == [1.0, 1.0, 3.0]
    assert list(rolling_mean_impute([math.nan, 5.0], 2.0)) == [2.0, 5.0]
    assert list(rolling_mean_impute([1.0, 2.0, 3.0], 9.0)) == [1.0, 2.0, 3.0]


def test_rolling_mean_matches_prefix_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        values = rng.normal(size=30)
        gaps = rng.random(30) < 0.3
        values[gaps] = math.nan
        filled = rolling_mean_impute(values, 7.5)
        oracle = prefix_mean_fill(list(values), 7.5)
        assert np.allclose(filled, oracle)


def test_rolling_mean_is_causal():
    base = np.array([1.0, math.nan, 3.0, 4.0, math.nan])
    edited = base.copy()
    edited[3] = 400.0
    assert rolling_mean_impute(base, 0.0)[1] == rolling_mean_impute(edited, 0.0)[1]
    # but the later gap does see the edit
    assert rolling_mean_impute(base, 0.0)[4] != rolling_mean_impute(edited, 0.0)[4]


def test_mean_strategy_uses_training_mean():
    values = np.array([[2.0, 1.0], [6.0, 2.0], [np.nan, 3.0], [8.0, np.nan]])
    blocks = {W: _fm(W, values)}
    imp = CohortImputer(ImputePolicy(full_modality_strategy="mean"))
    imp.fit(blocks, train_index=[0, 1])  # train mean of f0 = 4.0
    out = imp.transform(blocks)[W]
    assert out.values[2, 0] == 4.0
    assert out.values[3, 1] == 1.5


def test_zero_strategy():
    values = np.array([[2.0], [np.nan]])
    blocks = {W: _fm(W, values)}
    policy = ImputePolicy(overrides=(("wearable", "zero"),))
    imp = CohortImputer(policy).fit(blocks, [0])
    out = imp.transform(blocks)[W]
    assert out.values[1, 0] == 0.0


def test_median_strategy():
    values = np.array([[1.0], [2.0], [9.0], [np.nan]])
    policy = ImputePolicy(default_strategy="median")
    blocks = {W: _fm(W, values)}
    imp = CohortImputer(policy).fit(blocks, [0, 1, 2])
    assert imp.transform(blocks)[W].values[3, 0] == 2.0


def test_rolling_mean_rejected_for_matrix_columns():
    blocks = {W: _fm(W, np.array([[1.0], [np.nan]]))}
    policy = ImputePolicy(overrides=(("wearable", "rolling_mean"),))
    with pytest.raises(InvalidConfig):
        CohortImputer(policy).fit(blocks, [0])


def test_leakage_test_fold_perturbation_leaves_fit_unchanged():
    rng = np.random.default_rng(1)
    values = rng.normal(size=(20, 4))
    values[rng.random((20, 4)) < 0.2] = np.nan
    train = list(range(12))
    blocks_a = {W: _fm(W, values)}
    perturbed = values.copy()
    perturbed[12:] = perturbed[12:] * 100 + 5  # arbitrary test-fold edits
    blocks_b = {W: _fm(W, perturbed)}
    imp_a = CohortImputer(ImputePolicy(full_modality_strategy="mean")).fit(blocks_a, train)
    imp_b = CohortImputer(ImputePolicy(full_modality_strategy="mean")).fit(blocks_b, train)
    assert np.array_equal(imp_a.fill_values_[W], imp_b.fill_values_[W])
    # imputed values for train rows identical
    out_a = imp_a.transform(blocks_a)[W].values[:12]
    out_b = imp_b.transform(blocks_b)[W].values[:12]
    assert np.array_equal(out_a, out_b)


def test_all_missing_column_falls_back_to_block_mean():
    values = np.array([[1.0, np.nan], [3.0, np.nan], [np.nan, np.nan]])
    blocks = {W: _fm(W, values)}
    imp = CohortImputer(ImputePolicy(full_modality_strategy="mean"))
    imp.fit(blocks, [0, 1])
    out = imp.transform(blocks)[W]
    assert out.columns == ["f0", "f1"]
    assert np.all(out.values[:, 1] == 2.0)  # block mean of the training rows
    assert out.values[2, 0] == 2.0


def test_undefined_block_mean_drops_column_with_warning():
    values = np.full((3, 2), np.nan)
    blocks = {W: _fm(W, values)}
    imp = CohortImputer(ImputePolicy(full_modality_strategy="mean"))
    with pytest.warns(UserWarning):
        imp.fit(blocks, [0, 1])
    out = imp.transform(blocks)[W]
    assert out.columns == []


def test_post_imputation_no_missing_property():
    rng = np.random.default_rng(2)
    values = rng.normal(size=(30, 5))
    values[rng.random((30, 5)) < 0.3] = np.nan
    social = rng.normal(size=(30, 3))
    social[rng.random(30) < 0.2] = np.nan  # whole rows
    blocks = {W: _fm(W, values), S: _fm(S, social, prefix="s")}
    imp = CohortImputer(ImputePolicy(k_clusters=3)).fit(blocks, list(range(20)))
    out = imp.transform(blocks)
    for fm in out.values():
        assert not np.isnan(fm.values).any()


def test_kmeans_deterministic_and_partitions():
    rng = np.random.default_rng(3)
    X = np.vstack([rng.normal(0, 0.3, size=(20, 2)),
                   rng.normal(5, 0.3, size=(20, 2))])
    c1, a1 = farthest_point_kmeans(X, 2, seed=7)
    c2, a2 = farthest_point_kmeans(X, 2, seed=7)
    assert np.array_equal(c1, c2)
    assert np.array_equal(a1, a2)
    # the two obvious clusters are separated
    assert len(set(a1[:20])) == 1 and len(set(a1[20:])) == 1
    assert a1[0] != a1[20]


def test_kmeans_needs_enough_rows():
    with pytest.raises(NoDonorRows):
        farthest_point_kmeans(np.ones((3, 2)), 5, seed=0)


def test_cluster_cross_stream_fills_from_matching_cluster():
    rng = np.random.default_rng(4)
    # two wearable clusters with distinct social profiles
    wear = np.vstack([rng.normal(0, 0.2, size=(15, 3)),
                      rng.normal(6, 0.2, size=(15, 3))])
    social = np.vstack([np.full((15, 2), 10.0) + rng.normal(0, 0.1, (15, 2)),
                        np.full((15, 2), -10.0) + rng.normal(0, 0.1, (15, 2))])
    # participant 29 is missing social entirely but matches cluster 2
    social_obs = social.copy()
    social_obs[29] = np.nan
    blocks = {W: _fm(W, wear), S: _fm(S, social_obs, prefix="s")}
    imp = CohortImputer(ImputePolicy(k_clusters=2, donor=W), seed=0)
    imp.fit(blocks, list(range(30)))
    out = imp.transform(blocks)[S]
    assert np.all(out.values[29] < -5.0)  # filled from the matching cluster


def test_cluster_k1_equals_mean_imputation():
    rng = np.random.default_rng(5)
    wear = rng.normal(size=(20, 3))
    social = rng.normal(size=(20, 2))
    social[5] = np.nan
    social[11, 0] = np.nan
    blocks = {W: _fm(W, wear), S: _fm(S, social, prefix="s")}
    train = list(range(20))

    k1 = CohortImputer(ImputePolicy(k_clusters=1, donor=W), seed=3)
    out_k1 = k1.fit(blocks, train).transform(blocks)[S]
    mean_imp = CohortImputer(ImputePolicy(full_modality_strategy="mean"))
    out_mean = mean_imp.fit(blocks, train).transform(blocks)[S]
    assert np.max(np.abs(out_k1.values - out_mean.values)) <= 1e-12


def test_complete_row_unchanged():
    rng = np.random.default_rng(6)
    wear = rng.normal(size=(15, 3))
    social = rng.normal(size=(15, 2))
    social[3] = np.nan
    blocks = {W: _fm(W, wear), S: _fm(S, social, prefix="s")}
    imp = CohortImputer(ImputePolicy(k_clusters=2, donor=W)).fit(blocks, range(15))
    out = imp.transform(blocks)
    keep = [i for i in range(15) if i != 3]
    assert np.array_equal(out[S].values[keep], social[keep])
    assert np.array_equal(out[W].values, wear)


def test_cross_stream_requires_complete_donor_rows():
    wear = np.full((10, 2), np.nan)
    wear[:, 0] = 1.0  # no complete rows
    blocks = {W: _fm(W, wear)}
    imp = CrossStreamImputer(k_clusters=2, donor=W)
    with pytest.raises(NoDonorRows):
        imp.fit(blocks, np.arange(10))


def test_audit_log_records_fills():
    values = np.array([[2.0], [np.nan]])
    blocks = {W: _fm(W, values)}
    imp = CohortImputer(ImputePolicy(full_modality_strategy="mean")).fit(blocks, [0])
    imp.transform(blocks)
    assert len(imp.last_audit_) == 1
    entry = imp.last_audit_[0]
    assert entry.participant == "p1" and entry.feature == "f0"
    assert entry.imputed_value == 2.0


def test_imputer_state_round_trip():
    rng = np.random.default_rng(7)
    wear = rng.normal(size=(20, 3))
    social = rng.normal(size=(20, 2))
    social[4] = np.nan
    blocks = {W: _fm(W, wear), S: _fm(S, social, prefix="s")}
    imp = CohortImputer(ImputePolicy(k_clusters=2, donor=W), seed=1)
    imp.fit(blocks, list(range(20)))
    clone = CohortImputer.from_state(imp.state())
    out_a = imp.transform(blocks)
    out_b = clone.transform(blocks)
    for m in out_a:
        assert np.array_equal(out_a[m].values, out_b[m].values)
