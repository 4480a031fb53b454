from .layers import LayerSpec
from .model import AdamState, Model, ModelConfig, build_model, filters_per_block, block_cnn
from .serialize import load_model, save_model
from .train import EarlyStopper, TrainConfig, TrainHistory, adam_step, decayed_lr, mse_loss, train

__all__ = [
    "AdamState", "EarlyStopper", "LayerSpec", "Model", "ModelConfig", "TrainConfig", "TrainHistory",
    "adam_step", "build_model", "decayed_lr", "filters_per_block", "load_model", "mse_loss",
    "block_cnn", "save_model", "train",
]
