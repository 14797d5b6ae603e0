"""Loading, validation, and outlier screening of per-modality CSV tables.

On-disk contracts:
  series files    participant_id,timestamp,<signal...>   (ISO-8601 UTC)
  static files    participant_id,<feature...>
  ground truth    participant_id,<construct columns>

Empty cells are the missing state ("NA" is also accepted on read, never
written); in memory missing becomes NaN, which no legitimate value can take
because all series and feature values are required to be finite.
"""

import csv
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .core import Construct, ConstructId, ModalityKind
from .errors import (
    DuplicateTimestamp,
    EmptySeries,
    ParseError,
    SchemaError,
)


@dataclass
class TimeSeries:
    """One participant's samples for one signal, time-sorted, finite values."""

    participant: str
    signal: str
    t: np.ndarray  # int64 epoch seconds, strictly increasing
    v: np.ndarray  # float64

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.v = np.asarray(self.v, dtype=float)
        if self.t.size != self.v.size:
            raise SchemaError(self.signal, "timestamp/value length mismatch")
        if self.t.size and np.any(np.diff(self.t) <= 0):
            raise DuplicateTimestamp(
                f"{self.participant}/{self.signal}: non-increasing timestamps")
        if self.v.size and not np.all(np.isfinite(self.v)):
            raise SchemaError(self.signal, "non-finite value")

    def __len__(self):
        return int(self.t.size)


# keyed (participant, signal)
SeriesSet = dict


@dataclass
class FeatureMatrix:
    """participants x named features for one modality; NaN marks missing."""

    modality: ModalityKind
    participants: list[str]
    columns: list[str]
    values: np.ndarray  # (n_participants, n_columns) float64

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.columns) != len(set(self.columns)):
            dupes = sorted({c for c in self.columns if self.columns.count(c) > 1})
            raise SchemaError(dupes[0], "duplicate column name")
        if self.values.shape != (len(self.participants), len(self.columns)):
            raise SchemaError("<matrix>", "value shape does not match labels")
        self._row_index = {p: i for i, p in enumerate(self.participants)}

    def row(self, participant: str) -> np.ndarray:
        return self.values[self._row_index[participant]]

    def subset(self, participants: list[str]) -> "FeatureMatrix":
        """Rows for the given participants; unknown ones become all-missing."""
        out = np.full((len(participants), len(self.columns)), np.nan)
        for i, p in enumerate(participants):
            j = self._row_index.get(p)
            if j is not None:
                out[i] = self.values[j]
        return FeatureMatrix(self.modality, list(participants),
                             list(self.columns), out)

    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)


@dataclass
class GroundTruthTable:
    participants: list[str]
    values: dict  # ConstructId -> float64 array aligned with participants

    def column(self, construct: ConstructId) -> np.ndarray:
        return self.values[construct]

    def subset(self, participants: list[str]) -> "GroundTruthTable":
        idx = {p: i for i, p in enumerate(self.participants)}
        cols = {}
        for cid, arr in self.values.items():
            out = np.full(len(participants), np.nan)
            for i, p in enumerate(participants):
                if p in idx:
                    out[i] = arr[idx[p]]
            cols[cid] = out
        return GroundTruthTable(list(participants), cols)


def _parse_cell(text: str, row: int, column: str) -> float:
    text = text.strip()
    if text == "" or text == "NA":
        return np.nan
    try:
        value = float(text)
    except ValueError:
        raise ParseError(row, column, f"not a number: {text!r}") from None
    if not np.isfinite(value):
        raise ParseError(row, column, "non-finite value")
    return value


def _parse_timestamp(text: str, row: int) -> int:
    text = text.strip()
    try:
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        dt = datetime.fromisoformat(text)
    except ValueError:
        raise ParseError(row, "timestamp", f"not ISO-8601: {text!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(epoch_seconds: int) -> str:
    return datetime.fromtimestamp(int(epoch_seconds), tz=timezone.utc).strftime(
        "%Y-%m-%dT%H:%M:%SZ")


def load_series_csv(path: str) -> SeriesSet:
    """Parse a series file into {(participant, signal): TimeSeries}.

    Rows may arrive in any order; they are re-sorted per participant. Two rows
    with the same (participant, timestamp) are rejected.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "participant_id" or len(header) < 3 \
                or header[1] != "timestamp":
            raise SchemaError("participant_id",
                              "series header must be participant_id,timestamp,<signal...>")
        signals = header[2:]
        if len(signals) != len(set(signals)):
            raise SchemaError(signals[0], "duplicate signal column")
        raw: dict = {}
        seen: dict = {}
        for rownum, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(header):
                raise ParseError(rownum, "<row>", "wrong number of fields")
            pid = cells[0].strip()
            if not pid:
                raise ParseError(rownum, "participant_id", "empty id")
            ts = _parse_timestamp(cells[1], rownum)
            key = (pid, ts)
            if key in seen:
                raise DuplicateTimestamp(
                    f"duplicate (participant, timestamp) at row {rownum}: {pid}")
            seen[key] = rownum
            for sig, cell in zip(signals, cells[2:]):
                value = _parse_cell(cell, rownum, sig)
                if not np.isnan(value):
                    raw.setdefault((pid, sig), []).append((ts, value))
    out: SeriesSet = {}
    for (pid, sig), points in raw.items():
        points.sort(key=lambda p: p[0])
        t = np.array([p[0] for p in points], dtype=np.int64)
        v = np.array([p[1] for p in points], dtype=float)
        out[(pid, sig)] = TimeSeries(pid, sig, t, v)
    return out


def load_static_csv(path: str, modality: ModalityKind) -> FeatureMatrix:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "participant_id":
            raise SchemaError("participant_id", "first column must be participant_id")
        columns = header[1:]
        if len(columns) != len(set(columns)):
            raise SchemaError(columns[0], "duplicate feature column")
        participants, rows = [], []
        seen = set()
        for rownum, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(header):
                raise ParseError(rownum, "<row>", "wrong number of fields")
            pid = cells[0].strip()
            if not pid:
                raise ParseError(rownum, "participant_id", "empty id")
            if pid in seen:
                raise SchemaError("participant_id", f"duplicate participant {pid}")
            seen.add(pid)
            participants.append(pid)
            rows.append([_parse_cell(c, rownum, col)
                         for col, c in zip(columns, cells[1:])])
    values = np.array(rows, dtype=float) if rows else np.empty((0, len(columns)))
    return FeatureMatrix(modality, participants, list(columns), values)


def load_modality(path: str, modality: ModalityKind):
    """Dispatch on the header: a ``timestamp`` column means a series file."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), None)
    if header and len(header) > 1 and header[1] == "timestamp":
        return load_series_csv(path)
    return load_static_csv(path, modality)


def load_ground_truth(path: str, registry: dict) -> GroundTruthTable:
    """Ground-truth CSV; unknown construct columns are schema errors and
    present values must lie inside the construct's range."""
    known = {c.id.value: c for c in registry.values()}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "participant_id":
            raise SchemaError("participant_id", "first column must be participant_id")
        for col in header[1:]:
            if col not in known:
                raise SchemaError(col, "unknown construct column")
        if len(header[1:]) != len(set(header[1:])):
            raise SchemaError(header[1], "duplicate construct column")
        participants = []
        cols: dict = {known[c].id: [] for c in header[1:]}
        seen = set()
        for rownum, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(header):
                raise ParseError(rownum, "<row>", "wrong number of fields")
            pid = cells[0].strip()
            if pid in seen:
                raise SchemaError("participant_id", f"duplicate participant {pid}")
            seen.add(pid)
            participants.append(pid)
            for col, cell in zip(header[1:], cells[1:]):
                construct = known[col]
                value = _parse_cell(cell, rownum, col)
                if not np.isnan(value) and not (construct.lo <= value <= construct.hi):
                    raise ParseError(rownum, col,
                                     f"{value} outside [{construct.lo}, {construct.hi}]")
                cols[construct.id].append(value)
    values = {cid: np.array(vals, dtype=float) for cid, vals in cols.items()}
    return GroundTruthTable(participants, values)


# ---------------------------------------------------------------------------
# Outlier screening
# ---------------------------------------------------------------------------


@dataclass
class Reject:
    participant: str
    signal: str
    timestamp: int | None
    value: float
    reason: str


def screen_series(series: SeriesSet, rules: dict) -> tuple[SeriesSet, list[Reject]]:
    """Move out-of-range samples to a reject list; never aborts.

    |clean| + |rejects| = |input| sample-wise, and surviving samples keep
    their order.
    """
    clean: SeriesSet = {}
    rejects: list[Reject] = []
    for (pid, sig), ts in series.items():
        rule = rules.get(sig)
        if rule is None:
            clean[(pid, sig)] = ts
            continue
        lo, hi = rule
        ok = (ts.v >= lo) & (ts.v <= hi)
        for i in np.flatnonzero(~ok):
            value = float(ts.v[i])
            reason = (f"exceeds {hi}" if value > hi else f"below {lo}")
            rejects.append(Reject(pid, sig, int(ts.t[i]), value, reason))
        if ok.all():
            clean[(pid, sig)] = ts
        elif ok.any():
            clean[(pid, sig)] = TimeSeries(pid, sig, ts.t[ok], ts.v[ok])
    return clean, rejects


def screen_matrix(matrix: FeatureMatrix, rules: dict) -> tuple[FeatureMatrix, list[Reject]]:
    """Out-of-range cells become missing; the rejects record what was dropped."""
    values = matrix.values.copy()
    rejects: list[Reject] = []
    for j, col in enumerate(matrix.columns):
        rule = rules.get(col)
        if rule is None:
            continue
        lo, hi = rule
        colv = values[:, j]
        bad = np.isfinite(colv) & ((colv < lo) | (colv > hi))
        for i in np.flatnonzero(bad):
            value = float(colv[i])
            reason = f"exceeds {hi}" if value > hi else f"below {lo}"
            rejects.append(Reject(matrix.participants[i], col, None, value, reason))
            values[i, j] = np.nan
    return FeatureMatrix(matrix.modality, list(matrix.participants),
                         list(matrix.columns), values), rejects


# ---------------------------------------------------------------------------
# Canonical writers (round-trip identity with the loaders)
# ---------------------------------------------------------------------------


def write_static_csv(path: str, matrix: FeatureMatrix):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["participant_id"] + list(matrix.columns))
        for i, pid in enumerate(matrix.participants):
            row = [pid] + ["" if np.isnan(v) else repr(float(v))
                           for v in matrix.values[i]]
            writer.writerow(row)


def write_series_csv(path: str, series: SeriesSet, signals: list[str]):
    """Wide series file; signals without a sample at a timestamp stay empty."""
    by_pid: dict = {}
    for (pid, sig), ts in series.items():
        if sig not in signals:
            raise SchemaError(sig, "signal not in writer schema")
        for t, v in zip(ts.t, ts.v):
            by_pid.setdefault(pid, {}).setdefault(int(t), {})[sig] = float(v)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["participant_id", "timestamp"] + list(signals))
        for pid in sorted(by_pid):
            for t in sorted(by_pid[pid]):
                cells = by_pid[pid][t]
                writer.writerow([pid, format_timestamp(t)] +
                                ["" if s not in cells else repr(cells[s])
                                 for s in signals])


def write_ground_truth_csv(path: str, table: GroundTruthTable):
    cids = [c for c in ConstructId if c in table.values]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["participant_id"] + [c.value for c in cids])
        for i, pid in enumerate(table.participants):
            row = [pid]
            for c in cids:
                v = table.values[c][i]
                row.append("" if np.isnan(v) else repr(float(v)))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Universe assembly
# ---------------------------------------------------------------------------

SERIES_FILES = {
    "wearable.csv": ModalityKind.WEARABLE,
    "phone.csv": ModalityKind.PHONE_AGENT,
    "beacon.csv": ModalityKind.BEACON,
}
STATIC_FILES = {
    "phone_features.csv": ModalityKind.PHONE_AGENT,
    "social.csv": ModalityKind.SOCIAL_MEDIA,
    "heart_derived.csv": ModalityKind.HEART_RATE_DERIVED,
}
GROUND_TRUTH_FILE = "ground_truth.csv"


@dataclass
class Universe:
    """Everything the pipeline consumes, frozen after assembly."""

    participants: list[str]
    series: dict = field(default_factory=dict)    # ModalityKind -> SeriesSet
    matrices: dict = field(default_factory=dict)  # ModalityKind -> FeatureMatrix
    ground_truth: GroundTruthTable | None = None
    rejects: list = field(default_factory=list)


def load_universe(data_dir: str, registry: dict, rules: dict,
                  require_ground_truth: bool = True) -> Universe:
    """Assemble the participant universe from a data directory.

    Participants come from the ground-truth table when present, otherwise
    from the union of modality files.
    """
    gt_path = os.path.join(data_dir, GROUND_TRUTH_FILE)
    ground_truth = None
    if os.path.exists(gt_path):
        ground_truth = load_ground_truth(gt_path, registry)
    elif require_ground_truth:
        raise FileNotFoundError(f"missing ground-truth file: {gt_path}")

    series: dict = {}
    rejects: list = []
    for fname, modality in SERIES_FILES.items():
        path = os.path.join(data_dir, fname)
        if not os.path.exists(path):
            continue
        clean, rej = screen_series(load_series_csv(path), rules)
        series[modality] = clean
        rejects.extend(rej)

    matrices: dict = {}
    for fname, modality in STATIC_FILES.items():
        path = os.path.join(data_dir, fname)
        if not os.path.exists(path):
            continue
        clean, rej = screen_matrix(load_static_csv(path, modality), rules)
        matrices[modality] = clean
        rejects.extend(rej)

    if not series and not matrices:
        raise EmptySeries(f"no modality files found in {data_dir}")

    if ground_truth is not None:
        participants = list(ground_truth.participants)
    else:
        found = set()
        for sset in series.values():
            found.update(pid for pid, _ in sset)
        for fm in matrices.values():
            found.update(fm.participants)
        participants = sorted(found)
    return Universe(participants=participants, series=series, matrices=matrices,
                    ground_truth=ground_truth, rejects=rejects)
