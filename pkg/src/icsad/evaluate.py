"""Scoring of detections against ground truth, ROC/AUC, ensembling and grid search."""
import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import AttackLabel  # noqa: F401  re-exported for callers
from .detector import AnomalyInterval, DetectorConfig, detect
from .errors import ConfigError, DimensionError

DEFAULT_EXTENSION = 300
DEFAULT_THRESHOLDS = tuple(round(1.8 + 0.2 * i, 1) for i in range(7))
DEFAULT_WINDOWS = tuple(range(50, 301, 50))


def f1(precision, recall):
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class MetricSet:
    precision: float
    recall: float
    f1: float
    true_positives: int
    false_positives: int
    false_negatives: int
    mode: str
    # precision had no flagged records/intervals to work with and is reported as 0
    degenerate: bool = False
    per_attack: list = field(default_factory=list)

    def to_dict(self):
        return {
            "mode": self.mode, "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "true_positives": self.true_positives, "false_positives": self.false_positives,
            "false_negatives": self.false_negatives, "degenerate_precision": self.degenerate,
            "per_attack": self.per_attack,
        }


def ensemble_union(per_stage):
    """Union of interval lists; overlapping or touching intervals merge."""
    flat = sorted((iv for ivs in per_stage for iv in ivs), key=lambda iv: (iv.start_index, iv.end_index))
    merged = []
    for iv in flat:
        if merged and iv.start_index <= merged[-1].end_index:
            last = merged[-1]
            peak = iv if iv.peak_zscore > last.peak_zscore else last
            merged[-1] = AnomalyInterval(last.start_index, max(last.end_index, iv.end_index),
                                         peak.peak_zscore, peak.triggering_feature)
        else:
            merged.append(AnomalyInterval(iv.start_index, iv.end_index, iv.peak_zscore, iv.triggering_feature))
    return merged


def _to_time(detections, timestamps):
    """Detection intervals as half-open timestamp ranges."""
    if timestamps is None:
        return [(iv.start_index, iv.end_index) for iv in detections]
    ts = np.asarray(timestamps)
    for iv in detections:
        if iv.end_index > len(ts):
            raise DimensionError(f"interval [{iv.start_index}, {iv.end_index}) exceeds the {len(ts)} records")
    return [(int(ts[iv.start_index]), int(ts[iv.end_index - 1]) + 1) for iv in detections]


def attack_based_score(detections, attacks, extension_seconds=DEFAULT_EXTENSION, timestamps=None,
                       exclude_ineffective=False):
    """Each attack counts once, detected if any interval meets ``[start, end + extension]``.

    Intervals are merged first; a merged interval meeting no extended attack
    is one false positive. Precision is over merged intervals. With
    ``exclude_ineffective`` attacks flagged as not achieving their impact
    drop out of recall, and intervals touching only them count neither way.
    ``timestamps`` maps record index to timestamp (identity when omitted).
    """
    if not attacks:
        raise ConfigError("attack-based scoring needs a non-empty attack table")
    if extension_seconds < 0:
        raise ConfigError(f"extension must be >= 0, got {extension_seconds}")
    merged = ensemble_union([detections])
    spans = _to_time(merged, timestamps)
    scored = [a for a in attacks if a.expected_impact_achieved or not exclude_ineffective]

    def touches(span, a):
        return span[0] <= a.end + extension_seconds and span[1] > a.start

    per_attack = []
    for a in scored:
        hits = [s for s in spans if touches(s, a)]
        per_attack.append({
            "attack_id": a.attack_id, "detected": bool(hits),
            "latency_seconds": max(0, min(s[0] for s in hits) - a.start) if hits else None,
        })
    tp_int = sum(1 for s in spans if any(touches(s, a) for a in scored))
    neutral = sum(1 for s in spans if not any(touches(s, a) for a in scored) and any(touches(s, a) for a in attacks))
    fp = len(spans) - tp_int - neutral
    detected = sum(p["detected"] for p in per_attack)
    recall = detected / len(scored) if scored else 0.0
    degenerate = tp_int + fp == 0
    precision = 0.0 if degenerate else tp_int / (tp_int + fp)
    return MetricSet(precision, recall, f1(precision, recall), detected, fp, len(scored) - detected,
                     "attack-based", degenerate, per_attack)


def detections_to_flags(detections, n_records):
    flags = np.zeros(n_records, dtype=bool)
    for iv in detections:
        if iv.end_index > n_records:
            raise DimensionError(f"interval [{iv.start_index}, {iv.end_index}) exceeds the {n_records} records")
        flags[iv.start_index : iv.end_index] = True
    return flags


def record_based_score(detections, labels):
    labels = np.asarray(labels).astype(bool)
    flags = detections_to_flags(detections, len(labels))
    tp = int(np.sum(flags & labels))
    fp = int(np.sum(flags & ~labels))
    fn = int(np.sum(~flags & labels))
    degenerate = tp + fp == 0
    precision = 0.0 if degenerate else tp / (tp + fp)
    recall = tp / (tp + fn) if tp + fn else 0.0
    return MetricSet(precision, recall, f1(precision, recall), tp, fp, fn, "record-based", degenerate)


def roc_auc(scores, labels):
    """ROC points ``(fpr, tpr)`` over all thresholds and the trapezoid AUC.

    Tied scores move together, which makes the trapezoid area equal the
    probability that a random positive outscores a random negative with
    ties counted half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DimensionError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    pos, neg = int(labels.sum()), int((~labels).sum())
    if pos == 0 or neg == 0:
        raise ConfigError("ROC needs both positive and negative records")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tps = np.cumsum(y)[last_of_group]
    fps = np.cumsum(~y)[last_of_group]
    tpr = np.r_[0.0, tps / pos]
    fpr = np.r_[0.0, fps / neg]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return np.column_stack([fpr, tpr]), auc


# --------------------------------------------------------------- grid search

@dataclass
class StageScores:
    """Per-sample z-scores of one stage model on one recording."""

    z: np.ndarray
    sample_to_record: np.ndarray
    feature_names: list = field(default_factory=list)


@dataclass
class GridCell:
    threshold: float
    window: int
    precision: float
    recall: float
    f1: float
    per_run: list


@dataclass
class GridSearchResult:
    cells: list
    chosen: GridCell
    runs_averaged: int


def evaluate_cell(run, attacks, threshold, window, extension, timestamps, exclude_ineffective):
    cfg = DetectorConfig(threshold, window)
    stage_dets = [detect(s.z, cfg, s.sample_to_record, s.feature_names) for s in run]
    return attack_based_score(ensemble_union(stage_dets), attacks, extension, timestamps, exclude_ineffective)


def choose_cell(cells, tol=1e-12):
    """Highest mean F1; ties go to the highest T, then the highest W."""
    best = max(c.f1 for c in cells)
    tied = [c for c in cells if c.f1 >= best - tol]
    return max(tied, key=lambda c: (c.threshold, c.window))


def grid_search(runs, attacks, thresholds=DEFAULT_THRESHOLDS, windows=DEFAULT_WINDOWS,
                extension=DEFAULT_EXTENSION, timestamps=None, exclude_ineffective=False, jobs=1):
    """Score every (T, W) cell on every run; each run is a list of per-stage scores.

    Stage detections within a run are unioned before scoring. Cell metrics
    are means over runs.
    """
    if not runs:
        raise ConfigError("grid search needs at least one run")
    if not thresholds or not windows:
        raise ConfigError("grid search needs non-empty threshold and window ranges")
    grid = [(float(t), int(w)) for t in thresholds for w in windows]

    def one(cell):
        t, w = cell
        metrics = [evaluate_cell(run, attacks, t, w, extension, timestamps, exclude_ineffective) for run in runs]
        return GridCell(t, w, float(np.mean([m.precision for m in metrics])), float(np.mean([m.recall for m in metrics])),
                        float(np.mean([m.f1 for m in metrics])), metrics)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(one, grid))
    else:
        cells = [one(c) for c in grid]
    return GridSearchResult(cells, choose_cell(cells), len(runs))


def write_grid_csv(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "window", "precision", "recall", "f1", "chosen"])
        for c in result.cells:
            w.writerow([repr(c.threshold), c.window, repr(c.precision), repr(c.recall), repr(c.f1),
                        int(c is result.chosen)])
