"""End-to-end glue: raw recording -> trained predictor -> per-record z-scores.

Everything a scoring run needs (feature list, scaling, preprocessing
options, error statistics) travels in ``model.metadata`` so a saved model
plus a CSV is enough to score new data.
"""
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .data import (
    AugmentConfig, ScalingParams, apply_minmax, augment_lag_diff, fit_minmax, make_batches_with_extension,
    split_train_val, trim_warmup, window_samples,
)
from .detector import SIGMA_FLOOR, ErrorStats, fit_error_stats, prediction_errors, zscores
from .errors import ConfigError, DimensionError
from .nn import build_model, train

logger = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    warmup: int = 600
    lag: int = 1
    augment: bool = True
    train_fraction: float = 0.8
    sequence_length: int = 32
    sigma_floor: float = SIGMA_FLOOR

    def __post_init__(self):
        if self.sequence_length < 2:
            raise ConfigError(f"sequence_length must be >= 2, got {self.sequence_length}")
        if self.warmup < 0:
            raise ConfigError(f"warmup must be >= 0, got {self.warmup}")

    @property
    def augment_config(self):
        return AugmentConfig(self.lag, self.augment)

    def record_offset(self):
        return self.warmup + (self.lag if self.augment else 0)

    def to_dict(self):
        return asdict(self)


def _preprocess(raw, features, scaling, pcfg):
    data = trim_warmup(raw.select(features), pcfg.warmup)
    return augment_lag_diff(apply_minmax(data, scaling), pcfg.augment_config)


def prepare_training(raw, features, pcfg, batch_count):
    """Windowed train and validation sets plus the scaling fitted on training records."""
    trimmed = trim_warmup(raw.select(features), pcfg.warmup)
    if trimmed.labels is not None and trimmed.labels.any():
        raise ConfigError("training data contains attack-labelled records")
    scaling = fit_minmax(trimmed)
    data = augment_lag_diff(apply_minmax(trimmed, scaling), pcfg.augment_config)
    tr, va = split_train_val(data, pcfg.train_fraction)
    n = pcfg.sequence_length
    train_set = window_samples(tr, n, make_batches_with_extension(tr, batch_count, n))
    val_set = window_samples(va, n)
    return train_set, val_set, scaling


def fit_stage_model(raw, features, pcfg, model_cfg, train_cfg):
    """Train a predictor on ``features`` of an attack-free recording.

    Error statistics are fitted on the validation split.
    """
    train_set, val_set, scaling = prepare_training(raw, features, pcfg, train_cfg.batch_count)
    if model_cfg.feature_count != train_set.targets.shape[1]:
        raise DimensionError(
            f"model predicts {model_cfg.feature_count} features but preprocessing yields {train_set.targets.shape[1]}"
        )
    if model_cfg.input_sequence_length != pcfg.sequence_length:
        raise DimensionError(
            f"model sequence length {model_cfg.input_sequence_length} != pipeline sequence length {pcfg.sequence_length}"
        )
    model = build_model(model_cfg)
    model, history = train(model, train_set, val_set, train_cfg)
    errors = prediction_errors(model.predict(val_set.inputs), val_set.targets)
    stats = fit_error_stats(errors, pcfg.sigma_floor)
    model.metadata = {
        "features": list(features),
        "model_features": list(train_set.feature_names),
        "scaling": scaling.to_dict(),
        "pipeline": pcfg.to_dict(),
        "error_stats": stats.to_dict(),
        "best_epoch": history.best_epoch,
        "val_rmse": float(np.sqrt(history.val_loss[history.best_epoch - 1])) if history.best_epoch else None,
    }
    return model, history


def model_features_needed(n_aug_features, pcfg):
    return n_aug_features * (2 if pcfg.augment else 1)


@dataclass
class Scores:
    z: np.ndarray  # [samples, model features]
    sample_to_record: np.ndarray  # index into the scored recording
    feature_names: list

    @property
    def max_z(self):
        return self.z.max(axis=1)


def score_recording(model, raw):
    """Per-sample z-scores of ``raw`` under a model trained by :func:`fit_stage_model`."""
    meta = model.metadata
    if "error_stats" not in meta:
        raise ConfigError("model carries no preprocessing metadata; train it with the train command")
    pcfg = PipelineConfig(**meta["pipeline"])
    missing = [f for f in meta["features"] if f not in raw.feature_names]
    if missing:
        raise DimensionError(f"data lacks {len(missing)} model feature(s), first {missing[0]!r}")
    data = _preprocess(raw, meta["features"], ScalingParams.from_dict(meta["scaling"]), pcfg)
    if data.values.shape[1] != model.config.feature_count:
        raise DimensionError(
            f"model expects {model.config.feature_count} features, preprocessed data has {data.values.shape[1]}"
        )
    ws = window_samples(data, pcfg.sequence_length)
    errors = prediction_errors(model.predict(ws.inputs), ws.targets)
    z = zscores(errors, ErrorStats.from_dict(meta["error_stats"]))
    return Scores(z, ws.target_index + pcfg.record_offset(), list(ws.feature_names))
