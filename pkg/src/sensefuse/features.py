"""Daily/epoch summary features, workplace beacon features, and regularity
features derived from raw time series.

Everything here is a pure per-participant transform (no cross-participant
fitting), so feature building happens once, before any fold split. Column
names are part of the on-disk contract:

    <signal>.<epoch>.<stat>          summary features
    beacon.<name>                    workplace features
    reg.<signal>.<family>            regularity features
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import ModalityKind
from .errors import InsufficientData
from .ingest import FeatureMatrix, TimeSeries

DAY_SECONDS = 86400


class Epoch(str, enum.Enum):
    """Within-day windows; the three sub-epochs partition the day and
    EPOCH0 is their union. Intervals are half-open [start, end)."""

    EPOCH0 = "epoch0"
    EARLY_MORNING = "early_morning"  # 00:00-09:00
    DAY = "day"                      # 09:00-18:00
    EVENING = "evening"              # 18:00-24:00


EPOCH_HOURS = {
    Epoch.EARLY_MORNING: (0, 9),
    Epoch.DAY: (9, 18),
    Epoch.EVENING: (18, 24),
}

SUB_EPOCHS = (Epoch.EARLY_MORNING, Epoch.DAY, Epoch.EVENING)


class SummaryStat(str, enum.Enum):
    MEAN = "mean"
    MEDIAN = "median"
    MODE = "mode"
    MIN = "min"
    MAX = "max"
    STD = "std"


ALL_STATS = tuple(SummaryStat)


def _local_seconds(ts: TimeSeries, tz_offset_hours: float) -> np.ndarray:
    return ts.t + int(round(tz_offset_hours * 3600))


def _epoch_ids(local: np.ndarray) -> np.ndarray:
    """0 early morning, 1 day, 2 evening."""
    hours = (local % DAY_SECONDS) // 3600
    return np.where(hours < 9, 0, np.where(hours < 18, 1, 2))


def epoch_partition(ts: TimeSeries, tz_offset_hours: float = 0.0) -> dict:
    """Assign each sample to exactly one sub-epoch by local clock time;
    EPOCH0 gets every sample."""
    local = _local_seconds(ts, tz_offset_hours)
    eids = _epoch_ids(local)
    out = {Epoch.EPOCH0: ts}
    for code, epoch in enumerate(SUB_EPOCHS):
        mask = eids == code
        out[epoch] = TimeSeries(ts.participant, ts.signal, ts.t[mask], ts.v[mask])
    return out


def _mode(values: np.ndarray) -> float:
    """Most frequent discretized value; ties resolve to the smallest."""
    rounded = np.round(values, 9)
    uniq, counts = np.unique(rounded, return_counts=True)
    return float(uniq[np.argmax(counts)])  # argmax takes the first (smallest)


def _stat_value(stat: SummaryStat, values: np.ndarray) -> float:
    if stat is SummaryStat.MEAN:
        return float(values.mean())
    if stat is SummaryStat.MEDIAN:
        return float(np.median(values))
    if stat is SummaryStat.MODE:
        return _mode(values)
    if stat is SummaryStat.MIN:
        return float(values.min())
    if stat is SummaryStat.MAX:
        return float(values.max())
    return float(values.std())


def feature_name(signal: str, epoch: Epoch, stat: SummaryStat) -> str:
    return f"{signal}.{epoch.value}.{stat.value}"


def summarize(ts: TimeSeries, epoch: Epoch, stats=ALL_STATS, day=None,
              tz_offset_hours: float = 0.0) -> dict:
    """Named summary features for one epoch of one local day.

    ``day`` is the local day index (floor(local seconds / 86400)); None uses
    the first day present. Empty slices yield missing (NaN) features.
    """
    local = _local_seconds(ts, tz_offset_hours)
    if day is None and local.size:
        day = int(local[0] // DAY_SECONDS)
    mask = (local // DAY_SECONDS) == day if local.size else np.zeros(0, bool)
    if epoch is not Epoch.EPOCH0:
        lo, hi = EPOCH_HOURS[epoch]
        hours = (local % DAY_SECONDS) // 3600
        mask = mask & (hours >= lo) & (hours < hi)
    values = ts.v[mask]
    out = {}
    for stat in stats:
        name = feature_name(ts.signal, epoch, stat)
        out[name] = _stat_value(stat, values) if values.size else math.nan
    return out


def _daily_epoch_stats(ts: TimeSeries, tz_offset_hours: float,
                       stats=ALL_STATS) -> dict:
    """(epoch, stat) -> list of per-day values, vectorized by day slices."""
    local = _local_seconds(ts, tz_offset_hours)
    days = local // DAY_SECONDS
    eids = _epoch_ids(local)
    acc = {(e, s): [] for e in Epoch for s in stats}
    # series are time-sorted, so each day is a contiguous slice
    boundaries = np.flatnonzero(np.diff(days) != 0) + 1
    start = 0
    for stop in list(boundaries) + [days.size]:
        v = ts.v[start:stop]
        e = eids[start:stop]
        for stat in stats:
            acc[(Epoch.EPOCH0, stat)].append(_stat_value(stat, v))
        for code, epoch in enumerate(SUB_EPOCHS):
            sub = v[e == code]
            for stat in stats:
                acc[(epoch, stat)].append(
                    _stat_value(stat, sub) if sub.size else math.nan)
        start = stop
    return acc


def summary_feature_matrix(series: dict, participants: list[str],
                           modality: ModalityKind, tz_offset_hours: float = 0.0,
                           stats=ALL_STATS) -> FeatureMatrix:
    """Participant-level matrix: each cell is the mean over days of that
    day's epoch summary. Signals a participant lacks stay missing."""
    signals = sorted({sig for _, sig in series})
    columns = [feature_name(sig, e, s) for sig in signals for e in Epoch
               for s in stats]
    col_index = {c: j for j, c in enumerate(columns)}
    values = np.full((len(participants), len(columns)), np.nan)
    row_index = {p: i for i, p in enumerate(participants)}
    for (pid, sig), ts in series.items():
        i = row_index.get(pid)
        if i is None or not len(ts):
            continue
        daily = _daily_epoch_stats(ts, tz_offset_hours, stats)
        for (epoch, stat), per_day in daily.items():
            arr = np.asarray(per_day, dtype=float)
            if np.all(np.isnan(arr)):
                continue
            values[i, col_index[feature_name(sig, epoch, stat)]] = np.nanmean(arr)
    return FeatureMatrix(modality, list(participants), columns, values)


# ---------------------------------------------------------------------------
# Beacon workplace features
# ---------------------------------------------------------------------------

BREAK_MINUTES = (5, 15, 30)

BEACON_COLUMNS = [
    "beacon.time_at_work",
    "beacon.pct_time_at_desk",
    "beacon.breaks_gt_5",
    "beacon.breaks_gt_15",
    "beacon.breaks_gt_30",
]


def beacon_day_features(office: TimeSeries, rssi_cutoff: float = -70.0) -> dict:
    """Per-local-day workplace features from office-beacon sightings.

    time_at_work: hours between the first and last office sighting.
    pct_time_at_desk: fraction of the work interval covered by sightings at
    or above the proximity cutoff (each sighting extends to the next one).
    breaks_gt_N: count of sighting gaps longer than N minutes; buckets are
    cumulative, so a 40-minute gap increments all three.
    """
    days = office.t // DAY_SECONDS
    out = {}
    boundaries = np.flatnonzero(np.diff(days) != 0) + 1
    start = 0
    for stop in list(boundaries) + [days.size]:
        t = office.t[start:stop]
        v = office.v[start:stop]
        day = int(days[start])
        record = {}
        span = float(t[-1] - t[0])
        record["beacon.time_at_work"] = span / 3600.0
        if span > 0:
            gaps = np.diff(t).astype(float)
            near = v[:-1] >= rssi_cutoff
            record["beacon.pct_time_at_desk"] = float(gaps[near].sum() / span)
            for minutes in BREAK_MINUTES:
                record[f"beacon.breaks_gt_{minutes}"] = float(
                    np.sum(gaps > minutes * 60))
        else:
            record["beacon.pct_time_at_desk"] = 1.0 if v[0] >= rssi_cutoff else 0.0
            for minutes in BREAK_MINUTES:
                record[f"beacon.breaks_gt_{minutes}"] = 0.0
        out[day] = record
        start = stop
    return out


def beacon_features(sightings: dict, rssi_cutoff: float = -70.0) -> dict:
    """Participant-level beacon features: per-day values averaged over days.

    ``sightings`` maps beacon tag (home/office/keychain/backpack) to a
    TimeSeries; only office sightings drive the features. Missing office
    data means missing features.
    """
    office = sightings.get("office")
    if office is None or not len(office):
        return {c: math.nan for c in BEACON_COLUMNS}
    per_day = beacon_day_features(office, rssi_cutoff)
    out = {}
    for col in BEACON_COLUMNS:
        vals = [rec[col] for rec in per_day.values()]
        out[col] = float(np.mean(vals))
    return out


def beacon_feature_matrix(series: dict, participants: list[str],
                          rssi_cutoff: float = -70.0) -> FeatureMatrix:
    values = np.full((len(participants), len(BEACON_COLUMNS)), np.nan)
    row_index = {p: i for i, p in enumerate(participants)}
    by_pid: dict = {}
    for (pid, sig), ts in series.items():
        by_pid.setdefault(pid, {})[sig] = ts
    for pid, tagged in by_pid.items():
        i = row_index.get(pid)
        if i is None:
            continue
        feats = beacon_features(tagged, rssi_cutoff)
        values[i] = [feats[c] for c in BEACON_COLUMNS]
    return FeatureMatrix(ModalityKind.BEACON, list(participants),
                         list(BEACON_COLUMNS), values)


# ---------------------------------------------------------------------------
# Regularity features
# ---------------------------------------------------------------------------


def regularity_names(signal: str) -> list[str]:
    return ([f"reg.{signal}.hist.h{h:02d}" for h in range(24)]
            + [f"reg.{signal}.circadian", f"reg.{signal}.day_cosine"])


def regularity_features(ts: TimeSeries, weeks: int | None = None,
                        tz_offset_hours: float = 0.0) -> dict:
    """Rhythm features per signal.

    hist.hNN: 24-bin hour-of-day activity histogram, normalized to sum 1
    (falls back to sample counts when the signal mass is zero).
    circadian: lag-24h autocorrelation of the hourly aggregate series.
    day_cosine: mean cosine similarity of consecutive daily hour profiles.
    """
    local = _local_seconds(ts, tz_offset_hours)
    if weeks is not None and local.size:
        cutoff = local.max() - weeks * 7 * DAY_SECONDS
        keep = local > cutoff
        local = local[keep]
        v = ts.v[keep]
    else:
        v = ts.v
    if local.size == 0:
        raise InsufficientData("empty series")
    days = local // DAY_SECONDS
    uniq_days = np.unique(days)
    if uniq_days.size < 2:
        raise InsufficientData("regularity needs at least 2 days of data")
    hours = (local % DAY_SECONDS) // 3600
    day_pos = np.searchsorted(uniq_days, days)
    n_days = uniq_days.size

    grid = np.zeros((n_days, 24))
    np.add.at(grid, (day_pos, hours), v)
    counts = np.zeros((n_days, 24))
    np.add.at(counts, (day_pos, hours), 1.0)

    out = {}
    mass = grid.sum(axis=0)
    total = mass.sum()
    hist = mass / total if total > 0 else counts.sum(axis=0) / counts.sum()
    for h in range(24):
        out[f"reg.{ts.signal}.hist.h{h:02d}"] = float(hist[h])

    hourly = grid.ravel()
    a, b = hourly[:-24], hourly[24:]
    if a.std() > 0 and b.std() > 0:
        out[f"reg.{ts.signal}.circadian"] = float(np.corrcoef(a, b)[0, 1])
    else:
        out[f"reg.{ts.signal}.circadian"] = math.nan

    sims = []
    for d in range(n_days - 1):
        x, y = grid[d], grid[d + 1]
        nx, ny = np.linalg.norm(x), np.linalg.norm(y)
        if nx > 0 and ny > 0:
            sims.append(float(x @ y / (nx * ny)))
    out[f"reg.{ts.signal}.day_cosine"] = float(np.mean(sims)) if sims else math.nan
    return out


def regularity_feature_matrix(series: dict, participants: list[str],
                              modality: ModalityKind,
                              tz_offset_hours: float = 0.0) -> FeatureMatrix:
    signals = sorted({sig for _, sig in series})
    columns = [name for sig in signals for name in regularity_names(sig)]
    col_index = {c: j for j, c in enumerate(columns)}
    values = np.full((len(participants), len(columns)), np.nan)
    row_index = {p: i for i, p in enumerate(participants)}
    for (pid, sig), ts in series.items():
        i = row_index.get(pid)
        if i is None:
            continue
        try:
            feats = regularity_features(ts, tz_offset_hours=tz_offset_hours)
        except InsufficientData:
            continue
        for name, value in feats.items():
            values[i, col_index[name]] = value
    return FeatureMatrix(modality, list(participants), columns, values)


# ---------------------------------------------------------------------------
# Modality block assembly
# ---------------------------------------------------------------------------


def _hstack_matrices(modality: ModalityKind, parts: list[FeatureMatrix],
                     participants: list[str]) -> FeatureMatrix:
    aligned = [p.subset(participants) for p in parts]
    columns: list[str] = []
    for m in aligned:
        columns.extend(m.columns)
    values = np.hstack([m.values for m in aligned]) if aligned else \
        np.empty((len(participants), 0))
    return FeatureMatrix(modality, list(participants), columns, values)


def build_summary_blocks(universe, config) -> dict:
    """Fold-free feature blocks per modality (HON blocks are built per fold).

    Returns {ModalityKind: FeatureMatrix} for every summary-type modality
    present in the universe.
    """
    tz = config.timezone_offset_hours
    participants = universe.participants
    blocks: dict = {}

    wear = universe.series.get(ModalityKind.WEARABLE)
    if wear:
        blocks[ModalityKind.WEARABLE] = summary_feature_matrix(
            wear, participants, ModalityKind.WEARABLE, tz)

    phone = universe.series.get(ModalityKind.PHONE_AGENT)
    phone_parts = []
    if phone:
        phone_parts.append(summary_feature_matrix(
            phone, participants, ModalityKind.PHONE_AGENT, tz))
        phone_parts.append(regularity_feature_matrix(
            phone, participants, ModalityKind.PHONE_AGENT, tz))
    static_phone = universe.matrices.get(ModalityKind.PHONE_AGENT)
    if static_phone is not None:
        phone_parts.append(static_phone)
    if phone_parts:
        blocks[ModalityKind.PHONE_AGENT] = _hstack_matrices(
            ModalityKind.PHONE_AGENT, phone_parts, participants)

    beacon = universe.series.get(ModalityKind.BEACON)
    if beacon:
        blocks[ModalityKind.BEACON] = beacon_feature_matrix(beacon, participants)

    social = universe.matrices.get(ModalityKind.SOCIAL_MEDIA)
    if social is not None:
        blocks[ModalityKind.SOCIAL_MEDIA] = social.subset(participants)

    heart = universe.matrices.get(ModalityKind.HEART_RATE_DERIVED)
    if heart is not None:
        blocks[ModalityKind.HEART_RATE_DERIVED] = heart.subset(participants)

    return blocks
