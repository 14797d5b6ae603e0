import math

import numpy as np
import pytest
from scipy import stats as sstats

from oracles import tau_b_enumeration, tau_b_pure_python
from sensefuse.core import ConstructId
from sensefuse.errors import EmptyInput, LengthMismatch, ZeroVariance
from sensefuse.evaluation import (
    MonotoneComposite,
    _PairTauScorer,
    baseline_predictions,
    delta_tau,
    discriminant_matrix,
    expected_value_baseline,
    fold_theory_taus,
    gemm_tau,
    kendall_tau,
    reliability_report,
    significance_stars,
    smape,
    tau_or_nan,
)


# ---------------------------------------------------------------------------
# SMAPE
# ---------------------------------------------------------------------------


def test_smape_identical_is_zero():
    assert smape([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0


def test_smape_upper_bound_case():
    assert smape([0.0], [10.0]) == pytest.approx(200.0)


def test_smape_hand_computed():
    assert smape([3.0], [1.0]) == pytest.approx(100.0)


def test_smape_zero_zero_term_defined():
    assert smape([0.0, 2.0], [0.0, 2.0]) == 0.0


def test_smape_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = rng.normal(size=10)
        b = rng.normal(size=10)
        assert smape(a, b) == pytest.approx(smape(b, a), abs=1e-12)


def test_smape_bounded_on_random_pairs():
    rng = np.random.default_rng(1)
    for _ in range(200):
        a = rng.normal(scale=10, size=20)
        b = rng.normal(scale=10, size=20)
        value = smape(a, b)
        assert 0.0 <= value <= 200.0


def test_smape_errors():
    with pytest.raises(EmptyInput):
        smape([], [])
    with pytest.raises(LengthMismatch):
        smape([1.0], [1.0, 2.0])


# ---------------------------------------------------------------------------
# Kendall tau-b
# ---------------------------------------------------------------------------


def test_tau_simple_cases():
    assert kendall_tau([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert kendall_tau([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert kendall_tau([1, 2, 3], [1, 3, 2]) == pytest.approx(1.0 / 3.0)


def test_tau_merge_count_equals_enumeration_exactly():
    rng = np.random.default_rng(2)
    for _ in range(60):
        n = int(rng.integers(5, 200))
        x = rng.integers(0, 12, size=n).astype(float)  # heavy ties
        y = rng.integers(0, 12, size=n).astype(float)
        if np.all(x == x[0]) or np.all(y == y[0]):
            continue
        assert kendall_tau(x, y) == tau_b_enumeration(x, y)


def test_tau_matches_pure_python_and_scipy():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n = int(rng.integers(5, 60))
        x = rng.integers(0, 6, size=n).astype(float)
        y = rng.integers(0, 6, size=n).astype(float)
        if np.all(x == x[0]) or np.all(y == y[0]):
            continue
        mine = kendall_tau(x, y)
        assert mine == pytest.approx(tau_b_pure_python(list(x), list(y)),
                                     abs=1e-14)
        assert mine == pytest.approx(sstats.kendalltau(x, y).statistic,
                                     abs=1e-12)


def test_tau_invariant_under_monotone_transforms():
    rng = np.random.default_rng(4)
    x = rng.normal(size=50)
    y = rng.normal(size=50)
    base = kendall_tau(x, y)
    assert kendall_tau(np.exp(x), y) == base
    assert kendall_tau(x, y**3) == base
    assert kendall_tau(5 * x + 3, y) == base


def test_tau_zero_variance_raises():
    with pytest.raises(ZeroVariance):
        kendall_tau([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    assert math.isnan(tau_or_nan([1.0, 1.0], [1.0, 2.0]))


def test_tau_errors():
    with pytest.raises(LengthMismatch):
        kendall_tau([1, 2], [1, 2, 3])
    with pytest.raises(EmptyInput):
        kendall_tau([1], [1])


def test_pair_scorer_bitwise_equal_to_kendall():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(4, 80))
        x = rng.integers(0, 8, size=n).astype(float)
        y = rng.integers(0, 8, size=n).astype(float)
        if np.all(y == y[0]) or np.all(x == x[0]):
            continue
        scorer = _PairTauScorer(y)
        assert scorer.score(x) == kendall_tau(x, y)


# ---------------------------------------------------------------------------
# Monotone composite
# ---------------------------------------------------------------------------


def test_gemm_single_predictor_reduces_to_kendall():
    rng = np.random.default_rng(6)
    for _ in range(10):
        x = rng.normal(size=30)
        y = rng.normal(size=30)
        assert gemm_tau(x[:, None], y) == kendall_tau(x, y)


def test_gemm_composite_dominates_single_predictors():
    rng = np.random.default_rng(7)
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x1 = rng.normal(size=60)
        x2 = rng.normal(size=60)
        y = x1 + x2
        combined = gemm_tau(np.column_stack([x1, x2]), y, restarts=5,
                            iters=60, seed=seed)
        best_single = max(kendall_tau(x1, y), kendall_tau(x2, y))
        assert combined >= best_single - 1e-9


def test_gemm_null_monte_carlo():
    hits = 0
    n_seeds = 40
    for seed in range(n_seeds):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(200, 3))
        y = rng.normal(size=200)
        tau = gemm_tau(X, y, restarts=3, iters=30, seed=seed)
        if abs(tau) < 0.15:
            hits += 1
    assert hits >= 0.95 * n_seeds


def test_composite_predict_consistency():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(50, 3))
    y = X @ np.array([1.0, 2.0, -1.0])
    model = MonotoneComposite(restarts=5, iters=60, seed=0).fit(X, y)
    assert kendall_tau(model.predict(X), y) == pytest.approx(model.tau_)


def test_fold_theory_taus_recovers_monotone_signal():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(120, 2))
    y = X[:, 0] + 0.5 * X[:, 1] + 0.2 * rng.normal(size=120)
    folds = [(X[:90], y[:90], X[90:], y[90:])]
    taus = fold_theory_taus(folds, restarts=4, iters=40, seed=0)
    assert taus[0] > 0.5


# ---------------------------------------------------------------------------
# Baseline
# ---------------------------------------------------------------------------


def test_baseline_mean_prediction():
    assert expected_value_baseline([2.0, 4.0, 6.0]) == 4.0
    assert list(baseline_predictions([2.0, 4.0, 6.0], 3)) == [4.0, 4.0, 4.0]


def test_baseline_tau_undefined():
    preds = baseline_predictions([2.0, 4.0], 5)
    assert math.isnan(tau_or_nan(preds, [1.0, 2.0, 3.0, 4.0, 5.0]))


def test_baseline_smape_matches_analytic_form():
    rng = np.random.default_rng(10)
    train = rng.uniform(1, 7, size=40)
    test = rng.uniform(1, 7, size=20)
    mu = expected_value_baseline(train)
    direct = 100.0 * np.mean(2 * np.abs(mu - test) / (abs(mu) + np.abs(test)))
    assert smape(np.full(20, mu), test) == pytest.approx(direct, abs=1e-12)


def test_baseline_empty_raises():
    with pytest.raises(EmptyInput):
        expected_value_baseline([])


# ---------------------------------------------------------------------------
# Delta tau
# ---------------------------------------------------------------------------


def test_delta_tau_identical_inputs():
    out = delta_tau([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])
    assert out.samples == [0.0, 0.0, 0.0]
    assert out.mean == 0.0
    assert out.fraction_positive == 0.0
    assert out.mode_sign == 0


def test_delta_tau_strictly_better():
    out = delta_tau([0.3, 0.4, 0.5], [0.1, 0.2, 0.3])
    assert out.fraction_positive == 1.0
    assert out.mean == pytest.approx(0.2)
    assert out.mode_sign == 1


def test_delta_tau_length_mismatch():
    with pytest.raises(LengthMismatch):
        delta_tau([0.1], [0.1, 0.2])


# ---------------------------------------------------------------------------
# Discriminant validity
# ---------------------------------------------------------------------------


def test_discriminant_diagonal_excluded_and_duplicate_detected():
    rng = np.random.default_rng(11)
    a = rng.normal(size=100)
    b = rng.normal(size=100)
    preds = {ConstructId.IRB: a, ConstructId.ITP: a.copy(),
             ConstructId.OCB: b}
    matrix = discriminant_matrix(preds, {},
                                 [ConstructId.IRB, ConstructId.ITP,
                                  ConstructId.OCB])
    assert matrix.cell(0, 0) is None
    r, p, n = matrix.cell(0, 1)
    assert r == pytest.approx(1.0)
    assert significance_stars(p) == "***"


def test_discriminant_independent_constructs_mostly_small():
    rng = np.random.default_rng(12)
    cids = list(ConstructId)[:10]
    preds = {cid: rng.normal(size=500) for cid in cids}
    matrix = discriminant_matrix(preds, {}, cids)
    cells = [abs(matrix.cell(i, j)[0]) for i in range(10) for j in range(10)
             if i < j]
    inside = sum(1 for c in cells if c <= 0.2)
    assert inside >= 0.95 * len(cells)


def test_discriminant_insufficient_overlap_missing():
    preds = {ConstructId.IRB: np.array([1.0, np.nan, np.nan, np.nan]),
             ConstructId.ITP: np.array([1.0, 2.0, np.nan, np.nan])}
    matrix = discriminant_matrix(preds, {}, [ConstructId.IRB, ConstructId.ITP])
    assert matrix.cell(0, 1) is None


def test_discriminant_triangles_independent():
    rng = np.random.default_rng(13)
    n = 50
    preds = {ConstructId.IRB: rng.normal(size=n),
             ConstructId.ITP: rng.normal(size=n)}
    truths = {ConstructId.IRB: rng.normal(size=n),
              ConstructId.ITP: rng.normal(size=n)}
    matrix = discriminant_matrix(preds, truths)
    upper = matrix.cell(0, 1)
    lower = matrix.cell(1, 0)
    assert upper is not None and lower is not None
    assert upper[0] != lower[0]


# ---------------------------------------------------------------------------
# Reliability
# ---------------------------------------------------------------------------


def test_reliability_constant_folds():
    rows = reliability_report({ConstructId.IRB: [0.3, 0.3, 0.3, 0.3, 0.3]},
                              bootstrap_samples=200, seed=0)
    row = rows[0]
    assert (row.min, row.max, row.mean) == (0.3, 0.3, 0.3)
    assert row.ci_lo == pytest.approx(0.3)
    assert row.ci_hi == pytest.approx(0.3)


def test_reliability_mean_of_spread():
    rows = reliability_report({ConstructId.IRB: [0.1, 0.2, 0.3, 0.4, 0.5]},
                              bootstrap_samples=500, seed=0)
    assert rows[0].mean == pytest.approx(0.3)
    assert rows[0].min == 0.1 and rows[0].max == 0.5
    assert rows[0].ci_lo < 0.3 < rows[0].ci_hi


def test_reliability_null_fold_taus_straddle_zero():
    rng = np.random.default_rng(14)
    hits = 0
    n_seeds = 40
    for seed in range(n_seeds):
        taus = rng.normal(0, 0.05, size=5)
        rows = reliability_report({ConstructId.IRB: list(taus)},
                                  bootstrap_samples=300, seed=seed)
        if rows[0].ci_lo <= 0.0 <= rows[0].ci_hi:
            hits += 1
    assert hits >= 0.9 * n_seeds


def test_reliability_undefined_folds_excluded():
    rows = reliability_report({ConstructId.IRB: [math.nan, 0.2, 0.4]},
                              bootstrap_samples=100, seed=0)
    assert rows[0].min == 0.2 and rows[0].max == 0.4
