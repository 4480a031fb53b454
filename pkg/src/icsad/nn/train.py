import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError, DimensionError, TrainingError

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    max_epochs: int = 100
    initial_learning_rate: float = 0.001
    decay_rate: float = 0.95
    decay_period_epochs: int = 1
    early_stop_patience: int = 5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_count: int = 100
    # stop as soon as validation RMSE reaches this value (None: train on)
    target_val_rmse: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.initial_learning_rate < 1.0:
            raise ConfigError(f"initial_learning_rate must be in (0, 1), got {self.initial_learning_rate}")
        if not 0.0 < self.decay_rate <= 1.0:
            raise ConfigError(f"decay_rate must be in (0, 1], got {self.decay_rate}")
        if self.decay_period_epochs < 1 or self.early_stop_patience < 1 or self.batch_count < 1:
            raise ConfigError("decay_period_epochs, early_stop_patience and batch_count must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be >= 0, got {self.max_epochs}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int = 0  # 1-based; 0 when no epoch ran

    def __len__(self):
        return len(self.val_loss)


def mse_loss(pred, target):
    """Mean squared error over all elements and its gradient w.r.t. ``pred``."""
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def decayed_lr(cfg, epoch):
    """Step-exponential schedule; ``epoch`` counts from 0."""
    return cfg.initial_learning_rate * cfg.decay_rate ** (epoch // cfg.decay_period_epochs)


def adam_step(model, grads, cfg, lr):
    """Bias-corrected Adam update, in place on ``model``; returns the model."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            layer = int(name.split(".", 1)[0])
            raise TrainingError(f"non-finite gradient for parameter {name!r} in layer {layer}")
    state = model.adam
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    params = model.params
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter has {params[name].shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        state.m[name], state.v[name] = m, v
        model.set_param(name, params[name] - lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_epsilon))
    return model


class EarlyStopper:
    """Tracks the best validation loss; signals a stop after ``patience`` epochs without improvement."""

    def __init__(self, patience):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.epoch = 0

    def update(self, val_loss):
        self.epoch += 1
        if val_loss < self.best:
            self.best, self.best_epoch = val_loss, self.epoch
            return False
        return self.epoch - self.best_epoch >= self.patience

    @property
    def improved(self):
        return self.best_epoch == self.epoch


def evaluate_loss(model, dataset, chunk=2048):
    if len(dataset) == 0:
        return float("nan")
    total = 0.0
    for i in range(0, len(dataset), chunk):
        x = np.ascontiguousarray(dataset.inputs[i : i + chunk])
        diff = model.forward(x) - dataset.targets[i : i + chunk]
        total += float(np.sum(diff * diff))
    return total / dataset.targets.size


def train(model, train_set, val_set, cfg):
    """Train with MSE + Adam, one update per (extended) batch of ``train_set``.

    Batches are visited in temporal order every epoch. Returns the model
    restored to its best-validation epoch, plus the history.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("training and validation sets must both be non-empty")
    history = TrainHistory()
    if cfg.max_epochs == 0:
        return model, history
    rng = np.random.default_rng((model.config.seed, 1))
    stopper = EarlyStopper(cfg.early_stop_patience)
    best = model.snapshot()
    for epoch in range(cfg.max_epochs):
        started = time.perf_counter()
        lr = decayed_lr(cfg, epoch)
        loss_sum = 0.0
        for x, y in train_set.iter_batches():
            pred = model.forward(x, training=True, rng=rng)
            loss, grad = mse_loss(pred, y)
            if not np.isfinite(loss):
                raise TrainingError(f"training loss became non-finite in epoch {epoch + 1}")
            adam_step(model, model.backward(grad), cfg, lr)
            loss_sum += loss * y.size
        train_loss = loss_sum / train_set.targets.size
        val_loss = evaluate_loss(model, val_set)
        if not np.isfinite(val_loss):
            raise TrainingError(f"validation loss became non-finite in epoch {epoch + 1}")
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.seconds.append(time.perf_counter() - started)
        stop = stopper.update(val_loss)
        if stopper.improved:
            best = model.snapshot()
        logger.info(
            "epoch %d lr %.3g train %.6g val %.6g (%.1fs)", epoch + 1, lr, train_loss, val_loss, history.seconds[-1]
        )
        if stop:
            break
        if cfg.target_val_rmse is not None and np.sqrt(val_loss) <= cfg.target_val_rmse:
            logger.info("validation RMSE target %.3g reached", cfg.target_val_rmse)
            break
    model.restore(best)
    history.best_epoch = stopper.best_epoch
    return model, history
