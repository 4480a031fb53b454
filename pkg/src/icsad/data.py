"""Loading and preprocessing of 1 Hz plant logs.

The flow for training data is: load, trim warm-up, fit (0, 1) min-max
scaling on the training recording, append lag differences, split
chronologically, and cut sequence-to-vector windows out of extended
batches. Test recordings reuse the training scaling.
"""
import csv
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Optional

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, ParseError

_SWAT_TIME_FORMATS = ("%d/%m/%Y %I:%M:%S %p", "%d/%m/%Y %H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S")


@dataclass
class AttackLabel:
    attack_id: int
    start: int
    end: int
    stage_tags: list = field(default_factory=list)
    description: str = ""
    expected_impact_achieved: bool = True

    def __post_init__(self):
        if not self.start < self.end:
            raise DataError(f"attack {self.attack_id}: start {self.start} must precede end {self.end}")


@dataclass
class RawDataset:
    timestamps: np.ndarray
    values: np.ndarray
    feature_names: list
    labels: Optional[np.ndarray] = None
    attack_table: Optional[list] = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.timestamps):
            raise DataError(f"values shape {self.values.shape} does not match {len(self.timestamps)} timestamps")
        if self.values.shape[1] != len(self.feature_names):
            raise DataError(f"{self.values.shape[1]} value columns but {len(self.feature_names)} feature names")
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) <= 0):
            i = int(np.argmax(np.diff(self.timestamps) <= 0)) + 1
            raise DataError(f"timestamps not strictly increasing at record {i}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int8)
            if len(self.labels) != len(self.timestamps):
                raise DataError(f"{len(self.labels)} labels for {len(self.timestamps)} records")

    def __len__(self):
        return len(self.timestamps)

    def take(self, index):
        return RawDataset(
            self.timestamps[index], self.values[index], list(self.feature_names),
            None if self.labels is None else self.labels[index], self.attack_table,
        )

    def select(self, features):
        missing = [f for f in features if f not in self.feature_names]
        if missing:
            raise DataError(f"features not in dataset: {missing}")
        cols = [self.feature_names.index(f) for f in features]
        return RawDataset(self.timestamps, self.values[:, cols], list(features), self.labels, self.attack_table)


@dataclass
class Schema:
    """Column layout of a plant log. ``features=None`` takes every other column."""

    timestamp_column: str = "timestamp"
    label_column: Optional[str] = "label"
    features: Optional[list] = None

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown schema keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def load_schema(path):
    with open(path) as fh:
        return Schema.from_dict(json.load(fh))


def save_schema(schema, path):
    with open(path, "w") as fh:
        json.dump(schema.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_timestamps(col, name):
    numeric = pd.to_numeric(col, errors="coerce")
    if not numeric.isna().any():
        if np.any(numeric != np.round(numeric)):
            raise ParseError(f"column {name!r}: timestamps must be whole seconds")
        return numeric.to_numpy(dtype=np.int64)
    stripped = col.astype(str).str.strip()
    for fmt in _SWAT_TIME_FORMATS:
        parsed = pd.to_datetime(stripped, format=fmt, errors="coerce")
        if not parsed.isna().any():
            return (parsed - datetime(1970, 1, 1)).dt.total_seconds().to_numpy().astype(np.int64)
    bad = int(np.argmax(numeric.isna().to_numpy()))
    raise ParseError(f"row {bad + 2}, column {name!r}: cannot parse timestamp {col.iloc[bad]!r}")


def load_csv(path, schema=None):
    """Read a SWaT-style log. Whitespace around header names is ignored."""
    schema = schema or Schema()
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except FileNotFoundError:
        raise
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    frame.columns = [c.strip() for c in frame.columns]
    if schema.timestamp_column not in frame.columns:
        raise ParseError(f"{path}: missing timestamp column {schema.timestamp_column!r}")
    label_col = schema.label_column
    if label_col and label_col not in frame.columns and "Normal/Attack" in frame.columns:
        label_col = "Normal/Attack"
    has_labels = bool(label_col) and label_col in frame.columns
    features = schema.features
    if features is None:
        features = [c for c in frame.columns if c not in (schema.timestamp_column, label_col)]
    missing = [c for c in features if c not in frame.columns]
    if missing:
        raise ParseError(f"{path}: missing column {missing[0]!r} required by schema")

    timestamps = _parse_timestamps(frame[schema.timestamp_column], schema.timestamp_column)
    values = np.empty((len(frame), len(features)))
    for j, name in enumerate(features):
        text = frame[name].str.strip()
        try:
            # astype(float) parses exactly; to_numeric can be off by an ulp
            values[:, j] = text.astype(np.float64).to_numpy()
        except (ValueError, TypeError):
            bad = int(np.argmax(pd.to_numeric(text, errors="coerce").isna().to_numpy()))
            raise ParseError(f"{path}: row {bad + 2}, column {name!r}: non-numeric value {frame[name].iloc[bad]!r}") from None
        if np.isnan(values[:, j]).any():
            bad = int(np.argmax(np.isnan(values[:, j])))
            raise ParseError(f"{path}: row {bad + 2}, column {name!r}: missing value")
    labels = None
    if has_labels:
        text = frame[label_col].str.replace(" ", "", regex=False).str.lower()
        unknown = ~text.isin(["normal", "attack"])
        if unknown.any():
            bad = int(np.argmax(unknown.to_numpy()))
            raise ParseError(f"{path}: row {bad + 2}, column {label_col!r}: label {frame[label_col].iloc[bad]!r}")
        labels = (text == "attack").to_numpy().astype(np.int8)
    if len(timestamps) > 1:
        step = np.diff(timestamps)
        if np.any(step <= 0):
            bad = int(np.argmax(step <= 0)) + 1
            raise DataError(f"{path}: timestamps not strictly increasing at row {bad + 2}")
        if np.any(step != 1):
            bad = int(np.argmax(step != 1)) + 1
            raise DataError(f"{path}: gap of {int(step[bad - 1])} s before row {bad + 2}; 1 Hz cadence required")
    return RawDataset(timestamps, values, list(features), labels)


def _fmt(v):
    return repr(float(v)) if not float(v).is_integer() else str(int(v))


def write_csv(data, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *data.feature_names] + (["label"] if data.labels is not None else []))
        for i in range(len(data)):
            row = [str(int(data.timestamps[i]))] + [_fmt(v) for v in data.values[i]]
            if data.labels is not None:
                row.append("Attack" if data.labels[i] else "Normal")
            w.writerow(row)


def load_attack_table(path):
    """JSON-lines attack table, one object per attack."""
    attacks = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                attacks.append(AttackLabel(
                    int(d["attack_id"]), int(d["start_timestamp"]), int(d["end_timestamp"]),
                    list(d.get("stage_tags", [])), d.get("description", ""),
                    bool(d.get("expected_impact_achieved", True)),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
    return attacks


def write_attack_table(attacks, path):
    with open(path, "w") as fh:
        for a in attacks:
            fh.write(json.dumps({
                "attack_id": a.attack_id, "start_timestamp": a.start, "end_timestamp": a.end,
                "stage_tags": a.stage_tags, "description": a.description,
                "expected_impact_achieved": a.expected_impact_achieved,
            }, sort_keys=True) + "\n")


def trim_warmup(data, count):
    if count < 0:
        raise ConfigError(f"warm-up count must be >= 0, got {count}")
    if count >= len(data):
        raise DataError(f"warm-up trim of {count} records leaves nothing of {len(data)}")
    return data.take(slice(count, None))


# ------------------------------------------------------------------- scaling

@dataclass
class ScalingParams:
    minimum: np.ndarray
    maximum: np.ndarray

    def to_dict(self):
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))


def fit_minmax(train):
    return ScalingParams(train.values.min(axis=0), train.values.max(axis=0))


def apply_minmax(data, params):
    """``(x - min) / (max - min)`` per feature, unclipped; constant features map to 0."""
    if data.values.shape[1] != len(params.minimum):
        raise DataError(f"scaling fitted on {len(params.minimum)} features, data has {data.values.shape[1]}")
    span = params.maximum - params.minimum
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (data.values - params.minimum) / safe, 0.0)
    return RawDataset(data.timestamps, scaled, list(data.feature_names), data.labels, data.attack_table)


# -------------------------------------------------------------- augmentation

@dataclass
class AugmentConfig:
    lag: int = 1
    enabled: bool = True


def augment_lag_diff(data, cfg):
    """Append ``x_t - x_{t-lag}`` for every feature; drops the first ``lag`` records."""
    if not cfg.enabled:
        return data
    if not 1 <= cfg.lag < len(data):
        raise ConfigError(f"lag must be in [1, {len(data) - 1}], got {cfg.lag}")
    x = data.values
    values = np.hstack([x[cfg.lag :], x[cfg.lag :] - x[: -cfg.lag]])
    names = list(data.feature_names) + [f"{n}__diff{cfg.lag}" for n in data.feature_names]
    labels = None if data.labels is None else data.labels[cfg.lag :]
    return RawDataset(data.timestamps[cfg.lag :], values, names, labels, data.attack_table)


def split_train_val(data, fraction=0.8):
    """Chronological split: the first ``fraction`` of records train, the rest validate."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"split fraction must be in (0, 1), got {fraction}")
    cut = int(round(len(data) * fraction))
    if cut == 0 or cut == len(data):
        raise ConfigError(f"split of {len(data)} records at {fraction} leaves an empty side")
    return data.take(slice(0, cut)), data.take(slice(cut, None))


# ------------------------------------------------------------------ windows

def make_batches_with_extension(data, batch_count, n):
    """Contiguous record ranges ``[start, stop)`` used as window inputs.

    Records are cut into ``batch_count`` equal base batches (the remainder
    goes to the last one). Every batch but the last is extended by the
    first ``n - 1`` records of its successor. A window may take as target
    the record just past its batch, so each record from ``n`` onward is the
    target of exactly one window.
    """
    records = data if isinstance(data, (int, np.integer)) else len(data)
    if batch_count < 1:
        raise ConfigError(f"batch_count must be >= 1, got {batch_count}")
    base = records // batch_count
    if base < n:
        raise ConfigError(f"{records} records in {batch_count} batches gives {base} per batch; need at least n={n}")
    ranges = []
    for k in range(batch_count):
        start = k * base
        stop = records if k == batch_count - 1 else (k + 1) * base + n - 1
        ranges.append((start, stop))
    return ranges


@dataclass
class WindowedDataset:
    inputs: np.ndarray  # [samples, n, features], possibly a strided view
    targets: np.ndarray  # [samples, features]
    target_index: np.ndarray  # record index of each target
    batch_slices: list  # [(first_sample, stop_sample)] per batch
    n: int
    feature_names: list

    def __len__(self):
        return len(self.targets)

    def iter_batches(self):
        for s0, s1 in self.batch_slices:
            if s1 > s0:
                yield np.ascontiguousarray(self.inputs[s0:s1]), self.targets[s0:s1]


def window_samples(data, n, batches=None):
    """Sliding windows of length ``n`` (stride 1) predicting the next record."""
    values = data.values if isinstance(data, RawDataset) else np.asarray(data, dtype=np.float64)
    records = len(values)
    if n < 1 or n >= records:
        raise ConfigError(f"window length n={n} must be in [1, {records - 1}] for {records} records")
    if batches is None:
        batches = [(0, records)]
    starts, slices = [], []
    for a, b in batches:
        last = min(b - n, records - n - 1)  # last window start whose target exists
        s = np.arange(a, last + 1) if last >= a else np.arange(0)
        slices.append((sum(len(x) for x in starts), sum(len(x) for x in starts) + len(s)))
        starts.append(s)
    starts = np.concatenate(starts).astype(np.int64)
    view = np.lib.stride_tricks.sliding_window_view(values, n, axis=0).transpose(0, 2, 1)
    if len(starts) and np.array_equal(starts, np.arange(starts[0], starts[0] + len(starts))):
        inputs = view[starts[0] : starts[0] + len(starts)]
    else:
        inputs = view[starts]
    names = list(data.feature_names) if isinstance(data, RawDataset) else [f"f{i}" for i in range(values.shape[1])]
    return WindowedDataset(inputs, values[starts + n], starts + n, slices, n, names)
