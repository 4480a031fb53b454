"""Normalized prediction-error detector and a CUSUM baseline.

Per sample the score is the largest per-feature z-score of the absolute
prediction error. A detection needs ``W`` consecutive samples scoring above
``T``; the reported interval starts at the first sample of that run, so
every run of length >= W becomes exactly one interval.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError

SIGMA_FLOOR = 1e-6


def prediction_errors(predicted, observed):
    predicted, observed = np.asarray(predicted, dtype=np.float64), np.asarray(observed, dtype=np.float64)
    if predicted.shape != observed.shape:
        raise DimensionError(f"predicted shape {predicted.shape} != observed shape {observed.shape}")
    return np.abs(observed - predicted)


@dataclass
class ErrorStats:
    mu: np.ndarray
    sigma: np.ndarray
    fitted_on: int

    def to_dict(self):
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist(), "fitted_on": self.fitted_on}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mu"], dtype=np.float64), np.asarray(d["sigma"], dtype=np.float64), int(d["fitted_on"]))


def fit_error_stats(errors, sigma_floor=SIGMA_FLOOR):
    """Per-feature mean and population std of errors; std floored at ``sigma_floor``."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.ndim != 2 or len(errors) == 0:
        raise DimensionError(f"errors must be a non-empty [samples, features] array, got shape {errors.shape}")
    if sigma_floor <= 0:
        raise ConfigError(f"sigma_floor must be > 0, got {sigma_floor}")
    mu = errors.mean(axis=0)
    sigma = np.sqrt(((errors - mu) ** 2).mean(axis=0))
    return ErrorStats(mu, np.maximum(sigma, sigma_floor), len(errors))


def zscores(errors, stats):
    errors = np.asarray(errors, dtype=np.float64)
    if errors.ndim != 2 or errors.shape[1] != len(stats.mu):
        raise DimensionError(f"errors shape {errors.shape} does not match {len(stats.mu)} fitted features")
    return np.abs(errors - stats.mu) / stats.sigma


@dataclass
class DetectorConfig:
    threshold: float = 2.0
    window: int = 100
    sigma_floor: float = SIGMA_FLOOR

    def __post_init__(self):
        if not self.threshold > 0:
            raise ConfigError(f"threshold must be > 0, got {self.threshold}")
        if self.window < 1 or int(self.window) != self.window:
            raise ConfigError(f"window must be an integer >= 1, got {self.window}")
        if not self.sigma_floor > 0:
            raise ConfigError(f"sigma_floor must be > 0, got {self.sigma_floor}")


@dataclass
class AnomalyInterval:
    start_index: int  # half-open record range
    end_index: int
    peak_zscore: float = 0.0
    triggering_feature: str = ""

    def __post_init__(self):
        if not self.start_index < self.end_index:
            raise ConfigError(f"interval start {self.start_index} must precede end {self.end_index}")


def runs_above(mask):
    """``(start, stop)`` of every maximal run of True values."""
    mask = np.asarray(mask, dtype=bool)
    edges = np.diff(np.concatenate([[0], mask.view(np.int8), [0]]))
    return list(zip(np.flatnonzero(edges == 1).tolist(), np.flatnonzero(edges == -1).tolist()))


def _intervals_from_runs(runs, z, sample_to_record, feature_names):
    # records must be consecutive within a run; split where the map jumps
    out = []
    rec = np.asarray(sample_to_record, dtype=np.int64)
    for a, b in runs:
        cuts = [a] + (np.flatnonzero(np.diff(rec[a:b]) != 1) + a + 1).tolist() + [b]
        for s0, s1 in zip(cuts, cuts[1:]):
            seg = z[s0:s1]
            flat = int(np.argmax(seg))
            i, j = divmod(flat, seg.shape[1])
            out.append((s0, s1, float(seg[i, j]), feature_names[j] if feature_names else str(j)))
    return [AnomalyInterval(int(rec[s0]), int(rec[s1 - 1]) + 1, peak, feat) for s0, s1, peak, feat in out]


def detect(z, cfg, sample_to_record=None, feature_names=None):
    """Intervals where the max-feature z-score exceeds ``T`` for ``W`` straight samples.

    ``sample_to_record`` maps sample index to record index (identity by
    default). A jump in that map breaks a run.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    if cfg.window > len(z):
        raise ConfigError(f"window W={cfg.window} exceeds the {len(z)} available samples")
    if sample_to_record is None:
        sample_to_record = np.arange(len(z))
    if len(sample_to_record) != len(z):
        raise DimensionError(f"sample_to_record has {len(sample_to_record)} entries for {len(z)} samples")
    score = z.max(axis=1)
    rec = np.asarray(sample_to_record, dtype=np.int64)
    pieces = []
    for a, b in runs_above(score > cfg.threshold):
        cuts = [a] + (np.flatnonzero(np.diff(rec[a:b]) != 1) + a + 1).tolist() + [b]
        pieces += [(s0, s1) for s0, s1 in zip(cuts, cuts[1:]) if s1 - s0 >= cfg.window]
    return _intervals_from_runs(pieces, z, rec, feature_names)


# --------------------------------------------------------------------- CUSUM

@dataclass
class CusumConfig:
    drift: object = 0.5  # scalar or per-feature
    ucl: object = 5.0
    lcl: object = -5.0

    def __post_init__(self):
        if np.any(np.asarray(self.drift) < 0):
            raise ConfigError("CUSUM drift must be >= 0")
        if np.any(np.asarray(self.ucl) <= 0):
            raise ConfigError("CUSUM UCL must be > 0")
        if np.any(np.asarray(self.lcl) >= 0):
            raise ConfigError("CUSUM LCL must be < 0")


def cusum_sums(x, cfg):
    """High and low cumulative sums, both starting from 0.

    ``SH_t = max(0, SH_{t-1} + x_t - drift)``,
    ``SL_t = min(0, SL_{t-1} + x_t + drift)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    drift = np.broadcast_to(np.asarray(cfg.drift, dtype=np.float64), x.shape[1:])
    sh = np.zeros_like(x)
    sl = np.zeros_like(x)
    hi = np.zeros(x.shape[1])
    lo = np.zeros(x.shape[1])
    for t in range(len(x)):
        hi = np.maximum(0.0, hi + x[t] - drift)
        lo = np.minimum(0.0, lo + x[t] + drift)
        sh[t], sl[t] = hi, lo
    return sh, sl


def cusum_detect(x, cfg, sample_to_record=None, feature_names=None):
    """Intervals where any feature has ``SH > UCL`` or ``SL < LCL``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    sh, sl = cusum_sums(x, cfg)
    ucl = np.broadcast_to(np.asarray(cfg.ucl, dtype=np.float64), x.shape[1:])
    lcl = np.broadcast_to(np.asarray(cfg.lcl, dtype=np.float64), x.shape[1:])
    fire = (sh > ucl) | (sl < lcl)
    strength = np.maximum(sh / ucl, sl / lcl)
    rec = np.arange(len(x)) if sample_to_record is None else np.asarray(sample_to_record, dtype=np.int64)
    runs = []
    for a, b in runs_above(fire.any(axis=1)):
        cuts = [a] + (np.flatnonzero(np.diff(rec[a:b]) != 1) + a + 1).tolist() + [b]
        runs += list(zip(cuts, cuts[1:]))
    return _intervals_from_runs(runs, strength, rec, feature_names)


@dataclass
class DetectionReport:
    intervals: list
    config: dict
    timestamps: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        rows = []
        for iv in self.intervals:
            row = {"start_index": iv.start_index, "end_index": iv.end_index,
                   "peak_zscore": iv.peak_zscore, "triggering_feature": iv.triggering_feature}
            if self.timestamps is not None:
                row["start_timestamp"] = int(self.timestamps[iv.start_index])
                row["end_timestamp"] = int(self.timestamps[iv.end_index - 1]) + 1
            rows.append(row)
        return {
            "rule": "anomaly when max-feature z-score > threshold for window consecutive samples",
            "config": self.config,
            **self.extra,
            "intervals": rows,
        }

    @classmethod
    def from_dict(cls, d):
        ivs = [AnomalyInterval(r["start_index"], r["end_index"], r.get("peak_zscore", 0.0), r.get("triggering_feature", ""))
               for r in d["intervals"]]
        extra = {k: v for k, v in d.items() if k not in ("rule", "config", "intervals")}
        return cls(ivs, d.get("config", {}), None, extra)
