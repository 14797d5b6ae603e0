"""Evaluation battery: SMAPE vs. constant baseline, rank correlation,
monotone-composite scoring, discriminant validity, and reliability summaries.

All metrics are pure functions; report writers emit deterministic CSV/text so
two runs with the same seed produce byte-identical artifacts.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _sstats

from .core import ConstructId
from .errors import (
    EmptyInput,
    LengthMismatch,
    NonFiniteValue,
    ZeroVariance,
)

# ---------------------------------------------------------------------------
# SMAPE
# ---------------------------------------------------------------------------


def smape(pred, actual) -> float:
    """Symmetric mean absolute percentage error, bounded to [0, 200].

    Each term is |p - a| / ((|p| + |a|) / 2), defined as 0 when both values
    are 0, averaged and scaled to percent.
    """
    p = np.asarray(pred, dtype=float).ravel()
    a = np.asarray(actual, dtype=float).ravel()
    if p.size == 0 or a.size == 0:
        raise EmptyInput("smape needs at least one pair")
    if p.size != a.size:
        raise LengthMismatch(f"pred has {p.size} values, actual has {a.size}")
    if not np.all(np.isfinite(p)) or not np.all(np.isfinite(a)):
        raise NonFiniteValue("smape inputs must be finite")
    denom = (np.abs(p) + np.abs(a)) / 2.0
    terms = np.zeros_like(denom)
    nz = denom > 0
    terms[nz] = np.abs(p[nz] - a[nz]) / denom[nz]
    return float(100.0 * terms.mean())


# ---------------------------------------------------------------------------
# Kendall's tau-b
# ---------------------------------------------------------------------------


def _merge_count(values: list) -> int:
    """Count strict inversions (i < j with values[i] > values[j])."""
    a = list(values)
    n = len(a)
    buf = a[:]
    inv = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            if mid >= hi:
                buf[lo:hi] = a[lo:hi]
                continue
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if a[i] <= a[j]:
                    buf[k] = a[i]
                    i += 1
                else:
                    buf[k] = a[j]
                    inv += mid - i
                    j += 1
                k += 1
            if i < mid:
                buf[k:hi] = a[i:mid]
            else:
                buf[k:hi] = a[j:hi]
        a, buf = buf, a
        width *= 2
    return inv


def _tie_pairs(sorted_vals: np.ndarray) -> int:
    """Number of tied pairs in a sorted array."""
    _, counts = np.unique(sorted_vals, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def _tau_b_from_counts(c_minus_d: int, n0: int, n1: int, n2: int) -> float:
    denom = math.sqrt(float(n0 - n1) * float(n0 - n2))
    return c_minus_d / denom


def kendall_tau(pred, actual) -> float:
    """Tie-corrected Kendall rank correlation via merge counting.

    Raises ZeroVariance when either vector is entirely tied (tau undefined).
    """
    x = np.asarray(pred, dtype=float).ravel()
    y = np.asarray(actual, dtype=float).ravel()
    if x.size != y.size:
        raise LengthMismatch(f"{x.size} vs {y.size}")
    n = x.size
    if n < 2:
        raise EmptyInput("kendall_tau needs at least two pairs")
    n0 = n * (n - 1) // 2
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    n1 = _tie_pairs(xs)
    n2 = _tie_pairs(np.sort(y))
    if n0 == n1 or n0 == n2:
        raise ZeroVariance("all values tied; tau undefined")
    # joint ties: runs where both coordinates repeat
    both = np.flatnonzero(np.diff(xs) != 0) + 1
    n3 = 0
    start = 0
    for stop in list(both) + [n]:
        if stop - start > 1:
            n3 += _tie_pairs(np.sort(ys[start:stop]))
        start = stop
    discordant = _merge_count(ys.tolist())
    concordant = n0 - n1 - n2 + n3 - discordant
    return _tau_b_from_counts(concordant - discordant, n0, n1, n2)


def _tau_b_pairs(x: np.ndarray, y: np.ndarray) -> float:
    """Vectorized pairwise tau-b; same count arithmetic as kendall_tau.

    Used in hot loops; O(n^2) memory, so keep n modest.
    """
    n = x.size
    n0 = n * (n - 1) // 2
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(n, k=1)
    sx, sy = dx[iu], dy[iu]
    n1 = int(np.sum(sx == 0))
    n2 = int(np.sum(sy == 0))
    if n0 == n1 or n0 == n2:
        raise ZeroVariance("all values tied; tau undefined")
    prod = sx * sy
    concordant = int(np.sum(prod > 0))
    discordant = int(np.sum(prod < 0))
    return _tau_b_from_counts(concordant - discordant, n0, n1, n2)


def tau_or_nan(pred, actual) -> float:
    """kendall_tau with the all-tied case reported as NaN instead of raised."""
    try:
        return kendall_tau(pred, actual)
    except ZeroVariance:
        return math.nan


class _PairTauScorer:
    """Repeated tau-b evaluations against a fixed target: pair structure and
    target tie counts are precomputed once. Produces the same count
    arithmetic (and therefore bit-identical values) as kendall_tau."""

    def __init__(self, y: np.ndarray):
        n = y.size
        self.n0 = n * (n - 1) // 2
        self.iu = np.triu_indices(n, k=1)
        self.sy = np.sign(y[self.iu[0]] - y[self.iu[1]])
        self.n2 = int(np.sum(self.sy == 0))
        if self.n0 == self.n2:
            raise ZeroVariance("target is entirely tied")

    def score(self, x: np.ndarray) -> float:
        sx = np.sign(x[self.iu[0]] - x[self.iu[1]])
        n1 = int(np.sum(sx == 0))
        if n1 == self.n0:
            return -math.inf
        prod = sx * self.sy
        concordant = int(np.sum(prod > 0))
        discordant = int(np.sum(prod < 0))
        return _tau_b_from_counts(concordant - discordant, self.n0, n1, self.n2)


# ---------------------------------------------------------------------------
# Monotone composite (rank-maximizing weighted combination)
# ---------------------------------------------------------------------------

_COORD_STEPS = (-1.0, -0.5, -0.25, 0.25, 0.5, 1.0)


class MonotoneComposite:
    """Weighted linear composite of predictors fitted to maximize tau.

    The search is a seeded random-restart coordinate descent over the weight
    vector; unit-weight starts are always included, so the fitted composite
    never scores below the best single predictor.
    """

    def __init__(self, restarts: int = 20, iters: int = 200, seed: int = 0):
        self.restarts = restarts
        self.iters = iters
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != y.size:
            raise LengthMismatch(f"{X.shape[0]} rows vs {y.size} targets")
        if X.shape[0] < 2:
            raise EmptyInput("need at least two rows")
        if X.shape[1] == 0:
            raise EmptyInput("need at least one predictor column")
        self.mean_ = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale_ = np.where(sd > 0, sd, 1.0)
        Z = (X - self.mean_) / self.scale_
        p = Z.shape[1]

        if p == 1:
            # exact reduction to the plain rank correlation
            self.weights_ = np.ones(1)
            self.tau_ = kendall_tau(Z[:, 0], y)
            return self

        scorer = _PairTauScorer(y)

        def score(w):
            return scorer.score(Z @ w)

        starts = []
        for j in range(p):
            e = np.zeros(p)
            e[j] = 1.0
            starts.append(e)
            starts.append(-e)
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, 0x6E11)))
        for _ in range(self.restarts):
            w = rng.normal(size=p)
            norm = np.linalg.norm(w)
            starts.append(w / norm if norm > 0 else np.ones(p) / math.sqrt(p))

        best_w, best_tau = None, -math.inf
        for w0 in starts:
            w = w0.copy()
            cur = score(w)
            step = 1.0
            for it in range(self.iters):
                j = it % p
                improved = False
                for delta in _COORD_STEPS:
                    trial = w.copy()
                    trial[j] += delta * step
                    s = score(trial)
                    if s > cur:
                        cur, w = s, trial
                        improved = True
                if not improved and j == p - 1:
                    step *= 0.5
                    if step < 1e-3:
                        break
            if cur > best_tau:
                best_tau, best_w = cur, w.copy()
        self.weights_ = best_w
        self.tau_ = best_tau
        return self

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] != self.weights_.size:
            raise LengthMismatch("column count differs from fit")
        return ((X - self.mean_) / self.scale_) @ self.weights_


def gemm_tau(predictors, actual, restarts: int = 20, iters: int = 200,
             seed: int = 0) -> float:
    """Best tau achieved by a fitted monotone composite of the predictors.

    A single predictor reduces exactly to kendall_tau (including sign).
    """
    model = MonotoneComposite(restarts=restarts, iters=iters, seed=seed)
    model.fit(predictors, actual)
    return model.tau_


def fold_theory_taus(folds, restarts: int = 20, iters: int = 200,
                     seed: int = 0) -> list:
    """Per-fold tau of a monotone composite fitted on the training split.

    ``folds`` is a list of (X_train, y_train, X_test, y_test); the composite
    weights come from the training rows only. Undefined folds yield NaN.
    """
    out = []
    for X_tr, y_tr, X_te, y_te in folds:
        try:
            composite = MonotoneComposite(restarts=restarts, iters=iters,
                                          seed=seed).fit(X_tr, y_tr)
            out.append(tau_or_nan(composite.predict(X_te), y_te))
        except (ZeroVariance, EmptyInput):
            out.append(math.nan)
    return out


# ---------------------------------------------------------------------------
# Expected-value baseline
# ---------------------------------------------------------------------------


def expected_value_baseline(train_targets) -> float:
    """Mean of the training targets; predicts this constant for every row."""
    y = np.asarray(train_targets, dtype=float).ravel()
    y = y[np.isfinite(y)]
    if y.size == 0:
        raise EmptyInput("baseline needs at least one training target")
    return float(y.mean())


def baseline_predictions(train_targets, n: int) -> np.ndarray:
    return np.full(n, expected_value_baseline(train_targets))


# ---------------------------------------------------------------------------
# Delta-tau comparison
# ---------------------------------------------------------------------------


@dataclass
class DeltaTauSummary:
    samples: list[float]
    mean: float
    fraction_positive: float
    mode_sign: int  # sign of the sample median (+1, 0, -1)


def delta_tau(model_taus, theory_taus) -> DeltaTauSummary:
    """Fold-paired differences model - theory with a sign summary."""
    m = np.asarray(model_taus, dtype=float).ravel()
    t = np.asarray(theory_taus, dtype=float).ravel()
    if m.size != t.size:
        raise LengthMismatch(f"{m.size} model taus vs {t.size} theory taus")
    if m.size == 0:
        raise EmptyInput("no paired samples")
    d = m - t
    med = float(np.median(d))
    return DeltaTauSummary(
        samples=[float(v) for v in d],
        mean=float(d.mean()),
        fraction_positive=float(np.mean(d > 0)),
        mode_sign=int(np.sign(med)),
    )


# ---------------------------------------------------------------------------
# Discriminant validity
# ---------------------------------------------------------------------------


def _pearson_with_p(x: np.ndarray, y: np.ndarray) -> tuple[float, float, int]:
    ok = np.isfinite(x) & np.isfinite(y)
    n = int(ok.sum())
    if n < 3:
        return math.nan, math.nan, n
    xv, yv = x[ok], y[ok]
    if xv.std() == 0 or yv.std() == 0:
        return math.nan, math.nan, n
    r = float(np.corrcoef(xv, yv)[0, 1])
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0, n
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * float(_sstats.t.sf(abs(t), df=n - 2))
    return r, p, n


def significance_stars(p: float) -> str:
    if not math.isfinite(p):
        return ""
    if p <= 0.001:
        return "***"
    if p <= 0.01:
        return "**"
    if p <= 0.05:
        return "*"
    return ""


@dataclass
class DiscriminantMatrix:
    """Pairwise Pearson correlations: predictions above the diagonal,
    ground truth below, diagonal undefined."""

    constructs: list[ConstructId]
    pred_r: dict = field(default_factory=dict)    # (row, col) -> (r, p, n)
    truth_r: dict = field(default_factory=dict)

    def cell(self, i: int, j: int):
        if i == j:
            return None
        a, b = self.constructs[min(i, j)], self.constructs[max(i, j)]
        table = self.pred_r if i < j else self.truth_r
        return table.get((a, b))


def discriminant_matrix(preds: dict, truths: dict,
                        constructs: list[ConstructId] | None = None) -> DiscriminantMatrix:
    """Cross-construct correlation table over overlapping participants.

    ``preds`` and ``truths`` map construct id to a participant-aligned vector
    (NaN where unavailable). Pairs with fewer than 3 overlapping rows are
    reported as missing.
    """
    if constructs is None:
        constructs = [c for c in ConstructId if c in preds or c in truths]
    out = DiscriminantMatrix(constructs=list(constructs))
    for i, a in enumerate(constructs):
        for b in constructs[i + 1:]:
            if a in preds and b in preds:
                r, p, n = _pearson_with_p(np.asarray(preds[a], dtype=float),
                                          np.asarray(preds[b], dtype=float))
                if math.isfinite(r):
                    out.pred_r[(a, b)] = (r, p, n)
            if a in truths and b in truths:
                r, p, n = _pearson_with_p(np.asarray(truths[a], dtype=float),
                                          np.asarray(truths[b], dtype=float))
                if math.isfinite(r):
                    out.truth_r[(a, b)] = (r, p, n)
    return out


# ---------------------------------------------------------------------------
# Reliability
# ---------------------------------------------------------------------------


@dataclass
class ReliabilityRow:
    construct: ConstructId
    min: float
    max: float
    mean: float
    ci_lo: float
    ci_hi: float


def reliability_report(fold_taus: dict, bootstrap_samples: int = 2000,
                       seed: int = 0) -> list[ReliabilityRow]:
    """Per-construct min/max/mean of fold taus plus a percentile bootstrap
    95% interval over the fold values. Undefined folds are excluded."""
    rows = []
    for construct in fold_taus:
        taus = np.asarray(
            [t for t in fold_taus[construct] if t is not None and math.isfinite(t)],
            dtype=float,
        )
        if taus.size == 0:
            rows.append(ReliabilityRow(construct, math.nan, math.nan, math.nan,
                                       math.nan, math.nan))
            continue
        rng = np.random.default_rng(
            np.random.SeedSequence((seed, 0xB007, _construct_code(construct)))
        )
        means = rng.choice(taus, size=(bootstrap_samples, taus.size),
                           replace=True).mean(axis=1)
        lo, hi = np.percentile(means, [2.5, 97.5])
        rows.append(ReliabilityRow(
            construct=construct,
            min=float(taus.min()),
            max=float(taus.max()),
            mean=float(taus.mean()),
            ci_lo=float(lo),
            ci_hi=float(hi),
        ))
    return rows


def _construct_code(construct) -> int:
    ids = list(ConstructId)
    try:
        return ids.index(ConstructId(construct))
    except ValueError:
        return len(ids)


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    """Shortest round-trip float formatting; missing values become empty."""
    if v is None:
        return ""
    if isinstance(v, float) and not math.isfinite(v):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(path, rows):
    """rows: (construct_id, fold, smape, tau, gemm_tau, baseline_smape)."""
    lines = ["construct,fold,smape,tau,gemm_tau,baseline_smape"]
    for construct, fold, sm, tau, gtau, base in rows:
        lines.append(",".join([
            ConstructId(construct).value, str(fold),
            _fmt(sm), _fmt(tau), _fmt(gtau), _fmt(base),
        ]))
    _write_lines(path, lines)


def write_reliability_csv(path, rows: list[ReliabilityRow]):
    lines = ["construct,min,max,mean,ci_lo,ci_hi"]
    for r in rows:
        lines.append(",".join([
            r.construct.value, _fmt(r.min), _fmt(r.max), _fmt(r.mean),
            _fmt(r.ci_lo), _fmt(r.ci_hi),
        ]))
    _write_lines(path, lines)


def write_discriminant_csv(path, matrix: DiscriminantMatrix):
    lines = ["row,col,triangle,r,stars,n"]
    cs = matrix.constructs
    for i, a in enumerate(cs):
        for j, b in enumerate(cs):
            if i == j:
                continue
            cell = matrix.cell(i, j)
            triangle = "pred" if i < j else "truth"
            if cell is None:
                lines.append(f"{a.value},{b.value},{triangle},,,")
            else:
                r, p, n = cell
                lines.append(",".join([
                    a.value, b.value, triangle, _fmt(r),
                    significance_stars(p), str(n),
                ]))
    _write_lines(path, lines)


def write_delta_tau_csv(path, summaries: dict):
    """summaries: construct id -> DeltaTauSummary."""
    lines = ["construct,fold,delta_tau,mean,fraction_positive,mode_sign"]
    for construct, summary in summaries.items():
        cid = ConstructId(construct).value
        for k, d in enumerate(summary.samples):
            lines.append(",".join([
                cid, str(k), _fmt(d), _fmt(summary.mean),
                _fmt(summary.fraction_positive), str(summary.mode_sign),
            ]))
    _write_lines(path, lines)


def _finite_mean(values) -> float:
    vals = [v for v in values if v is not None and math.isfinite(v)]
    return float(np.mean(vals)) if vals else math.nan


def render_summary_text(metric_rows, delta_summaries: dict | None = None) -> str:
    """Plain-text tables: per-construct SMAPE vs. baseline, then the
    job-performance tau comparison when delta summaries are available."""
    by_construct: dict = {}
    for construct, fold, sm, tau, gtau, base in metric_rows:
        by_construct.setdefault(ConstructId(construct), []).append((sm, tau, base))
    lines = ["Prediction error (SMAPE %, mean over folds) vs. expected-value baseline",
             "",
             f"{'Variable':<26}{'Model':>10}{'Baseline':>10}"]
    for construct, vals in by_construct.items():
        sm = _finite_mean(v[0] for v in vals)
        base = _finite_mean(v[2] for v in vals)
        lines.append(f"{construct.value:<26}{sm:>10.1f}{base:>10.1f}")
    if delta_summaries:
        lines += ["", "Rank-correlation vs. theory-driven baseline (mean tau over folds)",
                  "",
                  f"{'Variable':<26}{'Theory':>10}{'Model':>10}{'frac>0':>10}"]
        for construct, summary in delta_summaries.items():
            cid = ConstructId(construct)
            model_tau = _finite_mean(v[1] for v in by_construct.get(cid, []))
            theory_tau = (model_tau - summary.mean
                          if math.isfinite(model_tau) else math.nan)
            lines.append(
                f"{cid.value:<26}{theory_tau:>10.3f}{model_tau:>10.3f}"
                f"{summary.fraction_positive:>10.2f}"
            )
    lines.append("")
    return "\n".join(lines)


def _write_lines(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
