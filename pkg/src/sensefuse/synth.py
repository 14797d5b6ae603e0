"""Seeded synthetic multimodal cohort generator.

Latent factors per participant drive (a) construct values through a
signal-to-noise knob, (b) static feature tables through loading matrices,
(c) heart/stress series as regime-switching processes whose transition
dynamics tilt with the latents (so sequence features carry signal the
summaries do not), and (d) office-beacon streams with latent-dependent work
hours. Missingness is applied last: per-cell for features/samples and
per-(participant, modality) for whole streams.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ConstructId, ModalityKind, construct_registry
from .errors import InvalidConfig
from .ingest import (
    FeatureMatrix,
    GroundTruthTable,
    TimeSeries,
    Universe,
    write_ground_truth_csv,
    write_series_csv,
    write_static_csv,
)

T0 = 1514764800  # 2018-01-01T00:00:00Z
DAY = 86400

HEART_LEVELS = (62.0, 80.0, 104.0)
STRESS_LEVELS = (22.0, 45.0, 72.0)


@dataclass
class CohortSpec:
    n_participants: int = 100
    seed: int = 0
    latent_dim: int = 8
    snr: float | dict = 1.5  # scalar default or per-construct map
    construct_latent_weights: dict | None = None  # ConstructId -> vector
    days: int = 10
    wearable_period_minutes: int = 30
    phone_period_minutes: int = 60
    beacon_period_minutes: int = 10
    n_social_features: int = 40
    n_phone_static: int = 24
    n_heart_derived: int = 8
    feature_missing_rate: float = 0.05
    modality_missing_rate: float = 0.05
    regime_states: int = 3
    # how many latent dimensions each static feature loads (None = all);
    # small values give construct-specific features
    loading_active_dims: int | None = None
    keep_debug: bool = False

    def __post_init__(self):
        if self.n_participants < 10:
            raise InvalidConfig("n_participants", "must be >= 10")
        if not 0.0 <= self.feature_missing_rate <= 1.0:
            raise InvalidConfig("feature_missing_rate", "must be in [0, 1]")
        if not 0.0 <= self.modality_missing_rate <= 1.0:
            raise InvalidConfig("modality_missing_rate", "must be in [0, 1]")
        if self.latent_dim < 1:
            raise InvalidConfig("latent_dim", "must be >= 1")
        if self.days < 2:
            raise InvalidConfig("days", "must be >= 2")
        if not 2 <= self.regime_states <= 4:
            raise InvalidConfig("regime_states", "must be in [2, 4]")
        if self.loading_active_dims is not None and self.loading_active_dims < 1:
            raise InvalidConfig("loading_active_dims", "must be >= 1 or None")
        for value in (self.snr.values() if isinstance(self.snr, dict)
                      else [self.snr]):
            if value < 0:
                raise InvalidConfig("snr", "must be >= 0")

    def snr_for(self, construct: ConstructId) -> float:
        if isinstance(self.snr, dict):
            return float(self.snr.get(construct, 1.5))
        return float(self.snr)


@dataclass
class DebugInfo:
    """Generator internals kept for invariant tests, never written to disk."""

    latents: np.ndarray
    construct_weights: dict
    regime_tilt: dict          # signal -> per-participant tilt value
    regime_states: dict = field(default_factory=dict)  # (pid, signal) -> array


def _rng(spec: CohortSpec, *tags) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((spec.seed, 0x537, *tags)))


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    A = rng.normal(size=(n, dim))
    return A / np.linalg.norm(A, axis=1, keepdims=True)


def _participant_ids(n: int) -> list[str]:
    width = max(4, len(str(n)))
    return [f"p{i:0{width}d}" for i in range(1, n + 1)]


def _softmax_rows(M: np.ndarray) -> np.ndarray:
    e = np.exp(M - M.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _markov_path(rng: np.random.Generator, P: np.ndarray, steps: int) -> np.ndarray:
    states = np.empty(steps, dtype=int)
    cum = np.cumsum(P, axis=1)
    s = int(rng.integers(P.shape[0]))
    u = rng.random(steps)
    for t in range(steps):
        states[t] = s
        s = int(np.searchsorted(cum[s], u[t], side="right"))
        s = min(s, P.shape[0] - 1)
    return states


def generate(spec: CohortSpec) -> tuple[Universe, DebugInfo]:
    """Build the full in-memory universe; same spec gives identical output."""
    n = spec.n_participants
    L = spec.latent_dim
    pids = _participant_ids(n)
    registry = construct_registry()

    Z = _rng(spec, 1).normal(size=(n, L))

    # construct values
    w_rng = _rng(spec, 2)
    weights = {}
    gt_values = {}
    for k, cid in enumerate(ConstructId):
        if spec.construct_latent_weights and cid in spec.construct_latent_weights:
            u = np.asarray(spec.construct_latent_weights[cid], dtype=float)
            norm = np.linalg.norm(u)
            u = u / norm if norm > 0 else u
        else:
            u = _unit_rows(w_rng, 1, L)[0]
        weights[cid] = u
        snr = spec.snr_for(cid)
        sig_sd = math.sqrt(snr / (snr + 1.0))
        noise_sd = math.sqrt(1.0 / (snr + 1.0))
        eps = _rng(spec, 3, k).normal(size=n)
        raw = sig_sd * (Z @ u) + noise_sd * eps
        c = registry[cid]
        mid, width = (c.lo + c.hi) / 2.0, c.hi - c.lo
        gt_values[cid] = np.clip(mid + raw * width / 6.0, c.lo, c.hi)
    ground_truth = GroundTruthTable(list(pids), gt_values)

    debug = DebugInfo(latents=Z, construct_weights=weights, regime_tilt={})

    # regime-switching wearable series
    R = spec.regime_states
    base_logits = np.full((R, R), 0.0)
    np.fill_diagonal(base_logits, 1.2)
    stay_tilt = np.eye(R) * 1.5 - 1.5 / R  # positive tilt favors staying put
    wear_steps = spec.days * DAY // (spec.wearable_period_minutes * 60)
    wearable = {}
    for signal, levels, tag in (("heart_rate", HEART_LEVELS, 10),
                                ("stress", STRESS_LEVELS, 11)):
        tilt_dir = _unit_rows(_rng(spec, tag), 1, L)[0]
        level_dir = _unit_rows(_rng(spec, tag + 2), 1, L)[0]
        g = Z @ tilt_dir
        level = Z @ level_dir
        debug.regime_tilt[signal] = g
        for i, pid in enumerate(pids):
            prng = _rng(spec, tag + 4, i)
            P = _softmax_rows(base_logits + g[i] * stay_tilt)
            states = _markov_path(prng, P, wear_steps)
            base = np.asarray(levels)[:R][states]
            values = base + 4.0 * level[i] + prng.normal(0, 2.0, size=wear_steps)
            lo, hi = (30.0, 240.0) if signal == "heart_rate" else (1.0, 99.0)
            values = np.clip(values, lo, hi)
            t = T0 + np.arange(wear_steps, dtype=np.int64) * \
                (spec.wearable_period_minutes * 60)
            keep = prng.random(wear_steps) >= spec.feature_missing_rate
            if keep.sum() < 2:
                keep[:2] = True
            wearable[(pid, signal)] = TimeSeries(pid, signal, t[keep], values[keep])
            if spec.keep_debug:
                debug.regime_states[(pid, signal)] = states

    # phone usage series with latent-shaped daily rhythm
    hours_profile = np.concatenate([np.zeros(7), np.linspace(0.5, 1.5, 10),
                                    np.linspace(1.4, 0.3, 7)])
    pref_dir = _unit_rows(_rng(spec, 20), 1, L)[0]
    evening_shape = np.concatenate([np.zeros(12), np.linspace(0.0, 1.2, 12)])
    use_dir = _unit_rows(_rng(spec, 21), 1, L)[0]
    phone_steps = spec.days * DAY // (spec.phone_period_minutes * 60)
    per_day = DAY // (spec.phone_period_minutes * 60)
    phone = {}
    for i, pid in enumerate(pids):
        prng = _rng(spec, 22, i)
        pref = Z[i] @ pref_dir
        usage = 8.0 + 2.0 * (Z[i] @ use_dir)
        hour_idx = (np.arange(phone_steps) % per_day) * 24 // per_day
        template = hours_profile[hour_idx] + pref * evening_shape[hour_idx]
        values = np.maximum(0.0, usage * template + prng.normal(0, 1.5, phone_steps))
        t = T0 + np.arange(phone_steps, dtype=np.int64) * \
            (spec.phone_period_minutes * 60)
        keep = prng.random(phone_steps) >= spec.feature_missing_rate
        if keep.sum() < 2:
            keep[:2] = True
        phone[(pid, "screen_active")] = TimeSeries(pid, "screen_active",
                                                   t[keep], values[keep])

    # office beacon pings with latent-driven hours and breaks
    work_dir = _unit_rows(_rng(spec, 30), 1, L)[0]
    break_dir = _unit_rows(_rng(spec, 31), 1, L)[0]
    beacon = {}
    period = spec.beacon_period_minutes * 60
    for i, pid in enumerate(pids):
        prng = _rng(spec, 32, i)
        start_h = 8.5 + 0.8 * (Z[i] @ work_dir)
        length_h = 8.0 + 0.6 * (Z[i] @ work_dir)
        breaks_per_day = max(0.0, 1.5 + 1.0 * (Z[i] @ break_dir))
        ts, vs = [], []
        for day in range(spec.days):
            jitter = prng.normal(0, 0.25)
            start = T0 + day * DAY + int((start_h + jitter) * 3600)
            end = start + int(max(2.0, length_h + prng.normal(0, 0.4)) * 3600)
            pings = np.arange(start, end + 1, period, dtype=np.int64)
            keep = np.ones(pings.size, dtype=bool)
            for _ in range(int(prng.poisson(breaks_per_day))):
                b0 = prng.integers(start, max(start + 1, end - 1800))
                blen = int(prng.integers(6, 40)) * 60
                keep &= ~((pings > b0) & (pings < b0 + blen))
            keep &= prng.random(pings.size) >= spec.feature_missing_rate
            if not keep.any():
                keep[0] = True
            pings = pings[keep]
            rssi = np.clip(-58.0 + prng.normal(0, 6.0, pings.size), -99.0, -30.0)
            ts.append(pings)
            vs.append(rssi)
        beacon[(pid, "office")] = TimeSeries(pid, "office",
                                             np.concatenate(ts), np.concatenate(vs))

    # static matrices from loading matrices + noise
    def static_block(tag: int, n_cols: int, names: list[str],
                     modality: ModalityKind, scale: float = 1.0) -> FeatureMatrix:
        arng = _rng(spec, tag)
        A = _unit_rows(arng, n_cols, L)
        if spec.loading_active_dims is not None and spec.loading_active_dims < L:
            for r in range(n_cols):
                keep = arng.choice(L, size=spec.loading_active_dims,
                                   replace=False)
                mask = np.zeros(L, dtype=bool)
                mask[keep] = True
                A[r, ~mask] = 0.0
                norm = np.linalg.norm(A[r])
                if norm > 0:
                    A[r] /= norm
        X = scale * (Z @ A.T) + 0.7 * arng.normal(size=(n, n_cols))
        cells = _rng(spec, tag + 1).random((n, n_cols)) < spec.feature_missing_rate
        X = X.astype(float)
        X[cells] = np.nan
        return FeatureMatrix(modality, list(pids), names, X)

    social = static_block(
        40, spec.n_social_features,
        [f"social.f{j:03d}" for j in range(spec.n_social_features)],
        ModalityKind.SOCIAL_MEDIA)
    n_state = spec.n_phone_static // 2
    phone_static = static_block(
        42, spec.n_phone_static,
        [f"user_state.{j:02d}" for j in range(n_state)]
        + [f"context.{j:02d}" for j in range(spec.n_phone_static - n_state)],
        ModalityKind.PHONE_AGENT)
    heart_derived = static_block(
        44, spec.n_heart_derived,
        [f"hrv.f{j:02d}" for j in range(spec.n_heart_derived)],
        ModalityKind.HEART_RATE_DERIVED)

    # full-modality missingness
    drop_rng = _rng(spec, 50)
    modality_order = (ModalityKind.WEARABLE, ModalityKind.PHONE_AGENT,
                      ModalityKind.BEACON, ModalityKind.SOCIAL_MEDIA,
                      ModalityKind.HEART_RATE_DERIVED)
    dropped = {m: drop_rng.random(n) < spec.modality_missing_rate
               for m in modality_order}
    for i, pid in enumerate(pids):
        if dropped[ModalityKind.WEARABLE][i]:
            wearable.pop((pid, "heart_rate"), None)
            wearable.pop((pid, "stress"), None)
        if dropped[ModalityKind.PHONE_AGENT][i]:
            phone.pop((pid, "screen_active"), None)
            phone_static.values[i, :] = np.nan
        if dropped[ModalityKind.BEACON][i]:
            beacon.pop((pid, "office"), None)
        if dropped[ModalityKind.SOCIAL_MEDIA][i]:
            social.values[i, :] = np.nan
        if dropped[ModalityKind.HEART_RATE_DERIVED][i]:
            heart_derived.values[i, :] = np.nan

    universe = Universe(
        participants=list(pids),
        series={ModalityKind.WEARABLE: wearable,
                ModalityKind.PHONE_AGENT: phone,
                ModalityKind.BEACON: beacon},
        matrices={ModalityKind.SOCIAL_MEDIA: social,
                  ModalityKind.PHONE_AGENT: phone_static,
                  ModalityKind.HEART_RATE_DERIVED: heart_derived},
        ground_truth=ground_truth,
    )
    return universe, debug


def write_cohort(universe: Universe, out_dir: str):
    """Emit the exact CSV schemas the ingest module reads back."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    write_series_csv(os.path.join(out_dir, "wearable.csv"),
                     universe.series[ModalityKind.WEARABLE],
                     ["heart_rate", "stress"])
    write_series_csv(os.path.join(out_dir, "phone.csv"),
                     universe.series[ModalityKind.PHONE_AGENT],
                     ["screen_active"])
    write_series_csv(os.path.join(out_dir, "beacon.csv"),
                     universe.series[ModalityKind.BEACON], ["office"])
    write_static_csv(os.path.join(out_dir, "social.csv"),
                     universe.matrices[ModalityKind.SOCIAL_MEDIA])
    write_static_csv(os.path.join(out_dir, "phone_features.csv"),
                     universe.matrices[ModalityKind.PHONE_AGENT])
    write_static_csv(os.path.join(out_dir, "heart_derived.csv"),
                     universe.matrices[ModalityKind.HEART_RATE_DERIVED])
    if universe.ground_truth is not None:
        write_ground_truth_csv(os.path.join(out_dir, "ground_truth.csv"),
                               universe.ground_truth)
