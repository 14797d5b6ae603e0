"""Fixed-order transition models over discretized physiological series.

A series is cut into equal time slots, each slot keyed by the bin of its mean
value; the order-n model counts how often each length-n context precedes each
next state and normalizes the counts into conditional probabilities. Slots
with no samples break the sequence so that no transition spans a gap.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import (
    DegenerateInput,
    EmptySeries,
    OrderTooHigh,
    RankDeficientWarning,
)
from .ingest import TimeSeries
from .reduce import PrincipalComponents, fit_pca_padded


@dataclass(frozen=True)
class BinSpec:
    """Internal cut points; a value maps to the count of edges below it."""

    edges: tuple

    @property
    def n_bins(self) -> int:
        return len(self.edges) + 1

    def assign(self, values: np.ndarray) -> np.ndarray:
        return np.searchsorted(np.asarray(self.edges), values, side="right")


def quantile_bins(values, n_bins: int = 3) -> BinSpec:
    """Equal-mass cut points from pooled training values."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise EmptySeries("no values to bin")
    qs = np.linspace(0, 1, n_bins + 1)[1:-1]
    return BinSpec(edges=tuple(float(q) for q in np.quantile(v, qs)))


def slot_means(ts: TimeSeries, slot_minutes: int) -> tuple[np.ndarray, np.ndarray]:
    """(slot indices, mean per slot) for occupied slots, in time order."""
    if not len(ts):
        raise EmptySeries(f"{ts.participant}/{ts.signal} is empty")
    width = slot_minutes * 60
    slots = ts.t // width
    uniq, start = np.unique(slots, return_index=True)
    sums = np.add.reduceat(ts.v, start)
    counts = np.add.reduceat(np.ones_like(ts.v), start)
    return uniq, sums / counts


@dataclass
class DiscreteSeries:
    """Binned slot symbols, split into segments at missing slots."""

    participant: str
    slot_minutes: int
    segments: list  # list of int arrays

    @property
    def symbols(self) -> np.ndarray:
        if not self.segments:
            return np.empty(0, dtype=int)
        return np.concatenate(self.segments)


def discretize(ts: TimeSeries, slot_minutes: int, bins: BinSpec) -> DiscreteSeries:
    """Mean-per-slot then binning; empty slots split the sequence."""
    slots, means = slot_means(ts, slot_minutes)
    symbols = bins.assign(means).astype(int)
    breaks = np.flatnonzero(np.diff(slots) != 1) + 1
    segments = [seg for seg in np.split(symbols, breaks)]
    return DiscreteSeries(ts.participant, slot_minutes, segments)


@dataclass
class HonModel:
    """Order-n transition counts and conditional probabilities."""

    order: int
    counts: dict = field(default_factory=dict)          # (ctx tuple, next) -> int
    context_totals: dict = field(default_factory=dict)  # ctx tuple -> int

    @property
    def probabilities(self) -> dict:
        return {key: cnt / self.context_totals[key[0]]
                for key, cnt in self.counts.items()}

    def prob(self, context: tuple, nxt: int) -> float:
        total = self.context_totals.get(tuple(context))
        if not total:
            return 0.0
        return self.counts.get((tuple(context), int(nxt)), 0) / total


def build_hon(ds: DiscreteSeries, order: int) -> HonModel:
    """Windowed counting within segments; probabilities are exact ratios.

    Windows are packed into base-B integer codes so the per-window counting
    is a single 1-D unique; counts stay exact integers throughout.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    model = HonModel(order=order)
    base = 1 + max((int(seg.max()) for seg in ds.segments if seg.size), default=0)
    all_codes = []
    for seg in ds.segments:
        if seg.size <= order:
            continue
        seg = seg.astype(np.int64)
        n_windows = seg.size - order
        codes = np.zeros(n_windows, dtype=np.int64)
        for i in range(order + 1):
            codes = codes * base + seg[i:i + n_windows]
        all_codes.append(codes)
    if not all_codes:
        raise OrderTooHigh(
            f"no segment longer than order {order} for {ds.participant}")
    uniq, cnt = np.unique(np.concatenate(all_codes), return_counts=True)
    for code, c in zip(uniq.tolist(), cnt.tolist()):
        nxt = code % base
        rest = code // base
        digits = []
        for _ in range(order):
            digits.append(rest % base)
            rest //= base
        ctx = tuple(reversed(digits))
        model.counts[(ctx, nxt)] = c
        model.context_totals[ctx] = model.context_totals.get(ctx, 0) + c
    return model


def vectorize_cohort(models: dict, orders=None) -> tuple[list, list, np.ndarray]:
    """Cohort matrix over the union of observed transition keys.

    ``models`` maps participant -> {order: HonModel}. Returns (participants,
    keys, matrix) where keys are (order, context, next) sorted, and matrix
    holds each participant's probabilities with 0 for unobserved transitions.
    """
    if len(models) < 2:
        raise ValueError("cohort vectorization needs at least 2 participants")
    participants = sorted(models)
    if orders is None:
        orders = sorted({o for per in models.values() for o in per})
    keys = sorted({
        (order, ctx, nxt)
        for per in models.values()
        for order, model in per.items() if order in set(orders)
        for (ctx, nxt) in model.counts
    })
    index = {key: j for j, key in enumerate(keys)}
    matrix = np.zeros((len(participants), len(keys)))
    for i, pid in enumerate(participants):
        for order, model in models[pid].items():
            if order not in set(orders):
                continue
            totals = model.context_totals
            for (ctx, nxt), cnt in model.counts.items():
                matrix[i, index[(order, ctx, nxt)]] = cnt / totals[ctx]
    return participants, keys, matrix


def embed(matrix: np.ndarray, components: int = 5,
          train_index=None) -> tuple[np.ndarray, PrincipalComponents | None]:
    """Project cohort rows onto the top principal directions.

    The PCA is fitted on ``train_index`` rows only (all rows by default);
    missing directions are padded with zero-variance columns under a warning.
    """
    matrix = np.asarray(matrix, dtype=float)
    fit_rows = matrix if train_index is None else matrix[train_index]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            model, pad = fit_pca_padded(fit_rows, components)
    except DegenerateInput:
        warnings.warn("no informative directions; embedding is all zeros",
                      category=RankDeficientWarning, stacklevel=2)
        return np.zeros((matrix.shape[0], components)), None
    if pad > 0:
        warnings.warn(
            f"only {components - pad} informative directions; padding {pad}",
            category=RankDeficientWarning, stacklevel=2)
    Z = model.transform(matrix)
    if pad > 0:
        Z = np.hstack([Z, np.zeros((Z.shape[0], pad))])
    return Z, model


def hon_column_names(prefix: str, n: int) -> list[str]:
    return [f"{prefix}.pc{j}" for j in range(n)]


class HonFeaturizer(BaseEstimator, TransformerMixin):
    """Per-fold estimator: train-quantile bins, per-participant transition
    models, train-defined key columns, and a train-fitted projection.

    fit/transform operate on {participant: TimeSeries}; transform returns a
    dense embedding row per requested participant (NaN row when the
    participant has no usable series).
    """

    def __init__(self, orders=(1, 2, 3, 4, 5), n_bins: int = 3,
                 slot_minutes: int = 30, n_components: int = 5):
        self.orders = tuple(orders)
        self.n_bins = n_bins
        self.slot_minutes = slot_minutes
        self.n_components = n_components

    def _models_for(self, ts: TimeSeries) -> dict:
        ds = discretize(ts, self.slot_minutes, self.bins_)
        per: dict = {}
        for order in self.orders:
            try:
                per[order] = build_hon(ds, order)
            except OrderTooHigh:
                continue
        return per

    def fit(self, series_by_pid: dict, y=None):
        pooled = []
        for ts in series_by_pid.values():
            try:
                _, means = slot_means(ts, self.slot_minutes)
            except EmptySeries:
                continue
            pooled.append(means)
        if not pooled:
            raise EmptySeries("no training series with samples")
        self.bins_ = quantile_bins(np.concatenate(pooled), self.n_bins)

        models = {}
        for pid, ts in series_by_pid.items():
            try:
                per = self._models_for(ts)
            except EmptySeries:
                continue
            if per:
                models[pid] = per
        if len(models) < 2:
            raise EmptySeries("fewer than 2 training participants with models")
        train_pids, keys, matrix = vectorize_cohort(models, self.orders)

        # orders whose columns never vary across the cohort add nothing
        keep = []
        self.dropped_orders_ = []
        for order in self.orders:
            cols = [j for j, key in enumerate(keys) if key[0] == order]
            if cols and np.ptp(matrix[:, cols], axis=0).max() > 0:
                keep.extend(cols)
            elif cols:
                self.dropped_orders_.append(order)
        keep = sorted(keep)
        self.keys_ = [keys[j] for j in keep]
        self.key_index_ = {key: j for j, key in enumerate(self.keys_)}
        train_matrix = matrix[:, keep]

        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model, pad = fit_pca_padded(train_matrix, self.n_components)
        except DegenerateInput:
            model, pad = None, self.n_components
        self.pca_ = model
        self.pad_ = pad
        return self

    def _row(self, ts: TimeSeries | None) -> np.ndarray:
        row = np.zeros(len(self.keys_))
        if ts is None or not len(ts):
            return np.full(self.n_components, np.nan)
        try:
            per = self._models_for(ts)
        except EmptySeries:
            return np.full(self.n_components, np.nan)
        if not per:
            return np.full(self.n_components, np.nan)
        for order, model in per.items():
            totals = model.context_totals
            for (ctx, nxt), cnt in model.counts.items():
                j = self.key_index_.get((order, ctx, nxt))
                if j is not None:
                    row[j] = cnt / totals[ctx]
        if self.pca_ is None:
            return np.zeros(self.n_components)
        z = self.pca_.transform(row[None, :])[0]
        if self.pad_ > 0:
            z = np.concatenate([z, np.zeros(self.pad_)])
        return z

    def transform(self, series_by_pid: dict, participants=None) -> np.ndarray:
        if not hasattr(self, "pca_"):
            raise NotFittedError("fit before transform")
        if participants is None:
            participants = sorted(series_by_pid)
        return np.vstack([self._row(series_by_pid.get(p)) for p in participants])

    def state(self) -> dict:
        return {
            "orders": list(self.orders),
            "n_bins": self.n_bins,
            "slot_minutes": self.slot_minutes,
            "n_components": self.n_components,
            "edges": list(self.bins_.edges),
            "keys": [[order, list(ctx), nxt] for order, ctx, nxt in self.keys_],
            "dropped_orders": list(self.dropped_orders_),
            "pad": self.pad_,
            "pca": self.pca_.state() if self.pca_ is not None else None,
        }

    @classmethod
    def from_state(cls, state: dict) -> "HonFeaturizer":
        obj = cls(orders=tuple(state["orders"]), n_bins=int(state["n_bins"]),
                  slot_minutes=int(state["slot_minutes"]),
                  n_components=int(state["n_components"]))
        obj.bins_ = BinSpec(edges=tuple(state["edges"]))
        obj.keys_ = [(int(order), tuple(int(s) for s in ctx), int(nxt))
                     for order, ctx, nxt in state["keys"]]
        obj.key_index_ = {key: j for j, key in enumerate(obj.keys_)}
        obj.dropped_orders_ = list(state["dropped_orders"])
        obj.pad_ = int(state["pad"])
        obj.pca_ = (PrincipalComponents.from_state(state["pca"])
                    if state["pca"] is not None else None)
        return obj


def dump_edge_list(model: HonModel, path: str):
    """CSV of context,next,count,prob for inspection."""
    lines = ["context,next,count,prob"]
    for (ctx, nxt), cnt in sorted(model.counts.items()):
        prob = cnt / model.context_totals[ctx]
        ctx_txt = "|".join(str(s) for s in ctx)
        lines.append(f"{ctx_txt},{nxt},{cnt},{prob!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
