"""Missing-data handling, fitted per fold on training rows only.

Per-feature gaps use column strategies (mean/median/zero); a participant
missing an entire modality is filled from the profile of similar training
participants: k-means clusters fitted on a complete donor stream, with the
row routed to its nearest cluster using whatever dimensions it does have.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .core import ModalityKind
from .errors import (
    DroppedColumnWarning,
    InvalidConfig,
    NoDonorRows,
    SchemaMismatch,
)
from .ingest import FeatureMatrix


def rolling_mean_impute(values, global_mean: float) -> np.ndarray:
    """Fill each missing entry with the mean of the observed values strictly
    before it; entries with no history take the supplied global mean.

    ``values`` is one participant's chronological sequence with NaN gaps.
    The fill is causal: edits after position t never change the fill at t.
    """
    v = np.asarray(values, dtype=float).copy()
    total, count = 0.0, 0
    for i in range(v.size):
        if math.isnan(v[i]):
            v[i] = total / count if count else global_mean
        else:
            total += v[i]
            count += 1
    return v


@dataclass(frozen=True)
class ImputePolicy:
    """Resolves every feature to exactly one strategy; the global-mean
    fallback for all-missing columns is always defined."""

    default_strategy: str = "mean"
    overrides: tuple = ()  # ((column-or-modality key, strategy), ...)
    full_modality_strategy: str = "cluster_cross_stream"
    donor: ModalityKind = ModalityKind.WEARABLE
    k_clusters: int = 8

    def strategy_for(self, column: str, modality: ModalityKind) -> str:
        over = dict(self.overrides)
        if column in over:
            return over[column]
        if modality.value in over:
            return over[modality.value]
        return self.default_strategy


def farthest_point_kmeans(X: np.ndarray, k: int, seed: int,
                          max_iter: int = 100, tol: float = 1e-6):
    """Lloyd's algorithm with deterministic farthest-point seeding.

    The first center is drawn from the seeded generator; each further center
    is the row farthest from its nearest chosen center (ties to the lowest
    row index). Returns (centers, assignments).
    """
    n = X.shape[0]
    if k > n:
        raise NoDonorRows(f"need at least {k} rows, have {n}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC1A5)))
    first = int(rng.integers(n))
    chosen = [first]
    d2 = ((X - X[first]) ** 2).sum(axis=1)
    while len(chosen) < k:
        j = int(np.argmax(d2))
        chosen.append(j)
        d2 = np.minimum(d2, ((X - X[j]) ** 2).sum(axis=1))
    centers = X[chosen].astype(float).copy()
    assign = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        dist = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(dist, axis=1)
        new_centers = centers.copy()
        for c in range(k):
            members = assign == c
            if members.any():
                new_centers[c] = X[members].mean(axis=0)
            else:
                new_centers[c] = X[int(np.argmax(dist.min(axis=1)))]
        shift = float(np.max(np.linalg.norm(new_centers - centers, axis=1)))
        centers = new_centers
        if shift <= tol:
            break
    dist = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return centers, np.argmin(dist, axis=1)


class CrossStreamImputer(BaseEstimator):
    """Cluster-profile imputation across modality blocks.

    Fit clusters the donor block's complete training rows (z-scored), then
    assigns every training row to its nearest cluster using the dimensions it
    has, and records per-cluster column means for every block. A row missing
    an entire modality receives that block's means from its nearest cluster.
    """

    def __init__(self, k_clusters: int = 8,
                 donor: ModalityKind = ModalityKind.WEARABLE, seed: int = 0):
        self.k_clusters = k_clusters
        self.donor = donor
        self.seed = seed

    def fit(self, blocks: dict, train_index: np.ndarray):
        if self.donor not in blocks:
            raise NoDonorRows(f"donor stream {self.donor.value} absent")
        self.block_order_ = sorted(blocks, key=lambda m: m.value)
        self.columns_ = {m: list(blocks[m].columns) for m in self.block_order_}

        train = {m: blocks[m].values[train_index] for m in self.block_order_}
        # per-column z stats over training rows (for distance computation)
        self.col_mean_, self.col_std_ = {}, {}
        for m in self.block_order_:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                mu = np.nanmean(train[m], axis=0)
                sd = np.nanstd(train[m], axis=0)
            self.col_mean_[m] = np.where(np.isfinite(mu), mu, 0.0)
            self.col_std_[m] = np.where(np.isfinite(sd) & (sd > 0), sd, 1.0)

        donor_vals = train[self.donor]
        complete = ~np.isnan(donor_vals).any(axis=1)
        if complete.sum() < self.k_clusters:
            raise NoDonorRows(
                f"only {int(complete.sum())} complete donor rows for "
                f"{self.k_clusters} clusters")
        donor_z = ((donor_vals[complete] - self.col_mean_[self.donor])
                   / self.col_std_[self.donor])
        self.centers_, _ = farthest_point_kmeans(
            donor_z, self.k_clusters, self.seed)

        # phase 1: rows with any donor data cluster by donor distance alone
        n_train = donor_vals.shape[0]
        has_donor = np.isfinite(donor_vals).any(axis=1)
        assign = np.zeros(n_train, dtype=int)
        donor_profiles = {self.donor: self.centers_}
        for i in np.flatnonzero(has_donor):
            assign[i] = self._nearest({self.donor: donor_vals[i]}, None,
                                      donor_profiles)
        # phase 2: donor-less rows cluster against provisional profiles built
        # from the phase-1 members
        provisional = self._means_by_cluster(train, assign, has_donor)
        profiles = {m: self._to_z(m, provisional[m]) for m in self.block_order_}
        profiles[self.donor] = self.centers_
        for i in np.flatnonzero(~has_donor):
            row_blocks = {m: train[m][i] for m in self.block_order_}
            assign[i] = self._nearest(row_blocks, None, profiles)

        self.cluster_means_ = self._means_by_cluster(
            train, assign, np.ones(n_train, dtype=bool))
        return self

    def _to_z(self, modality: ModalityKind, raw: np.ndarray) -> np.ndarray:
        return (raw - self.col_mean_[modality]) / self.col_std_[modality]

    def _means_by_cluster(self, train: dict, assign: np.ndarray,
                          include: np.ndarray) -> dict:
        out = {}
        for m in self.block_order_:
            means = np.empty((self.k_clusters, train[m].shape[1]))
            for c in range(self.k_clusters):
                members = train[m][include & (assign == c)]
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    mu = np.nanmean(members, axis=0) if members.size else \
                        np.full(train[m].shape[1], np.nan)
                means[c] = np.where(np.isfinite(mu), mu, self.col_mean_[m])
            out[m] = means
        return out

    def _fitted_profiles(self) -> dict:
        """Cluster profiles in z-scored coordinates per block."""
        profiles = {m: self._to_z(m, self.cluster_means_[m])
                    for m in self.block_order_}
        profiles[self.donor] = self.centers_
        return profiles

    def _nearest(self, row_blocks: dict, skip: ModalityKind | None,
                 profiles: dict) -> int:
        """Nearest cluster by summed squared z-distance over available dims."""
        diffs = np.zeros(self.k_clusters)
        n_dims = 0
        for m in self.block_order_:
            if m == skip or m not in profiles:
                continue
            row = row_blocks.get(m)
            if row is None:
                continue
            ok = np.isfinite(row)
            if not ok.any():
                continue
            z = (row[ok] - self.col_mean_[m][ok]) / self.col_std_[m][ok]
            diffs += ((profiles[m][:, ok] - z[None, :]) ** 2).sum(axis=1)
            n_dims += int(ok.sum())
        if n_dims == 0:
            return 0
        return int(np.argmin(diffs))

    def fill_block(self, row_blocks: dict, modality: ModalityKind) -> np.ndarray:
        if not hasattr(self, "centers_"):
            raise NotFittedError("fit before fill_block")
        c = self._nearest(row_blocks, modality, self._fitted_profiles())
        return self.cluster_means_[modality][c].copy()

    def state(self) -> dict:
        return {
            "k_clusters": self.k_clusters,
            "donor": self.donor.value,
            "seed": self.seed,
            "block_order": [m.value for m in self.block_order_],
            "columns": {m.value: self.columns_[m] for m in self.block_order_},
            "col_mean": {m.value: self.col_mean_[m].tolist()
                         for m in self.block_order_},
            "col_std": {m.value: self.col_std_[m].tolist()
                        for m in self.block_order_},
            "centers": self.centers_.tolist(),
            "cluster_means": {m.value: self.cluster_means_[m].tolist()
                              for m in self.block_order_},
        }

    @classmethod
    def from_state(cls, state: dict) -> "CrossStreamImputer":
        obj = cls(k_clusters=int(state["k_clusters"]),
                  donor=ModalityKind(state["donor"]), seed=int(state["seed"]))
        obj.block_order_ = [ModalityKind(m) for m in state["block_order"]]
        obj.columns_ = {ModalityKind(m): list(cols)
                        for m, cols in state["columns"].items()}
        obj.col_mean_ = {ModalityKind(m): np.asarray(v, dtype=float)
                         for m, v in state["col_mean"].items()}
        obj.col_std_ = {ModalityKind(m): np.asarray(v, dtype=float)
                        for m, v in state["col_std"].items()}
        obj.centers_ = np.asarray(state["centers"], dtype=float)
        obj.cluster_means_ = {ModalityKind(m): np.asarray(v, dtype=float)
                              for m, v in state["cluster_means"].items()}
        return obj


@dataclass
class AuditEntry:
    participant: str
    feature: str
    strategy: str
    imputed_value: float


class CohortImputer(BaseEstimator, TransformerMixin):
    """Per-fold imputer over all modality blocks.

    fit computes every statistic from training rows; transform completes any
    aligned set of blocks and records an audit trail. Output matrices contain
    no missing state.
    """

    def __init__(self, policy: ImputePolicy | None = None, seed: int = 0):
        self.policy = policy or ImputePolicy()
        self.seed = seed

    def fit(self, blocks: dict, train_index):
        train_index = np.asarray(train_index, dtype=int)
        self.fill_values_: dict = {}
        self.block_fallback_: dict = {}
        self.dropped_: dict = {m: [] for m in blocks}
        for modality, fm in blocks.items():
            train = fm.values[train_index]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                block_mean = float(np.nanmean(train)) if np.isfinite(train).any() \
                    else math.nan
            self.block_fallback_[modality] = block_mean
            fills = np.empty(len(fm.columns))
            for j, col in enumerate(fm.columns):
                strategy = self.policy.strategy_for(col, modality)
                if strategy == "rolling_mean":
                    raise InvalidConfig(
                        "imputation_policy",
                        f"rolling_mean applies to chronological series, not "
                        f"matrix column {col!r}; use rolling_mean_impute upstream")
                colv = train[:, j]
                obs = colv[np.isfinite(colv)]
                if strategy == "zero":
                    fills[j] = 0.0
                elif obs.size == 0:
                    if math.isnan(block_mean):
                        fills[j] = math.nan  # column will be dropped
                        self.dropped_[modality].append(col)
                    else:
                        fills[j] = block_mean
                elif strategy == "median":
                    fills[j] = float(np.median(obs))
                else:  # mean or cluster_cross_stream cell-level fallback
                    fills[j] = float(obs.mean())
            self.fill_values_[modality] = fills
            if self.dropped_[modality]:
                warnings.warn(
                    f"dropping {len(self.dropped_[modality])} all-missing "
                    f"column(s) in {modality.value}",
                    category=DroppedColumnWarning, stacklevel=2)

        self.cross_ = None
        if (self.policy.full_modality_strategy == "cluster_cross_stream"
                and self.policy.donor in blocks and len(blocks) > 1):
            try:
                self.cross_ = CrossStreamImputer(
                    k_clusters=self.policy.k_clusters, donor=self.policy.donor,
                    seed=self.seed).fit(blocks, train_index)
            except NoDonorRows:
                self.cross_ = None
        return self

    def transform(self, blocks: dict) -> dict:
        if not hasattr(self, "fill_values_"):
            raise NotFittedError("fit before transform")
        participant_lists = {tuple(fm.participants) for fm in blocks.values()}
        if len(participant_lists) > 1:
            raise SchemaMismatch("blocks must share one participant row order")
        out: dict = {}
        self.last_audit_: list[AuditEntry] = []
        for modality, fm in blocks.items():
            fills = self.fill_values_[modality]
            keep = [j for j, col in enumerate(fm.columns)
                    if col not in set(self.dropped_[modality])]
            values = fm.values[:, keep].copy()
            columns = [fm.columns[j] for j in keep]
            col_fills = fills[keep]

            full_missing = np.isnan(fm.values).all(axis=1) if fm.values.size \
                else np.zeros(len(fm.participants), bool)
            for i, pid in enumerate(fm.participants):
                row = values[i]
                gaps = np.isnan(row)
                if not gaps.any():
                    continue
                if full_missing[i] and self.cross_ is not None \
                        and modality in self.cross_.cluster_means_:
                    row_blocks = {m: blocks[m].values[i] for m in blocks}
                    filled = self.cross_.fill_block(row_blocks, modality)[keep]
                    strategy = "cluster_cross_stream"
                else:
                    filled = col_fills
                    strategy = None
                for j in np.flatnonzero(gaps):
                    value = filled[j]
                    if math.isnan(value):
                        value = col_fills[j]
                    row[j] = value
                    self.last_audit_.append(AuditEntry(
                        pid, columns[j],
                        strategy or self.policy.strategy_for(columns[j], modality),
                        float(value)))
            out[modality] = FeatureMatrix(modality, list(fm.participants),
                                          columns, values)
            assert not np.isnan(values).any(), "imputation left missing cells"
        return out

    def state(self) -> dict:
        return {
            "seed": self.seed,
            "policy": {
                "default_strategy": self.policy.default_strategy,
                "overrides": [list(kv) for kv in self.policy.overrides],
                "full_modality_strategy": self.policy.full_modality_strategy,
                "donor": self.policy.donor.value,
                "k_clusters": self.policy.k_clusters,
            },
            "fill_values": {m.value: v.tolist()
                            for m, v in self.fill_values_.items()},
            "block_fallback": {m.value: v
                               for m, v in self.block_fallback_.items()},
            "dropped": {m.value: list(v) for m, v in self.dropped_.items()},
            "cross": self.cross_.state() if self.cross_ is not None else None,
        }

    @classmethod
    def from_state(cls, state: dict) -> "CohortImputer":
        pol = state["policy"]
        policy = ImputePolicy(
            default_strategy=pol["default_strategy"],
            overrides=tuple((k, v) for k, v in pol["overrides"]),
            full_modality_strategy=pol["full_modality_strategy"],
            donor=ModalityKind(pol["donor"]),
            k_clusters=int(pol["k_clusters"]),
        )
        imp = cls(policy=policy, seed=int(state["seed"]))
        imp.fill_values_ = {ModalityKind(m): np.asarray(v, dtype=float)
                            for m, v in state["fill_values"].items()}
        imp.block_fallback_ = {ModalityKind(m): v
                               for m, v in state["block_fallback"].items()}
        imp.dropped_ = {ModalityKind(m): list(v)
                        for m, v in state["dropped"].items()}
        imp.cross_ = (CrossStreamImputer.from_state(state["cross"])
                      if state["cross"] is not None else None)
        return imp


def write_audit_csv(path: str, entries: list[AuditEntry]):
    lines = ["participant,feature,strategy,imputed_value"]
    for e in entries:
        lines.append(f"{e.participant},{e.feature},{e.strategy},{e.imputed_value!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
