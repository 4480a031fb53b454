from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DimensionError
from .layers import LAYER_TYPES, LayerSpec


@dataclass
class ModelConfig:
    layers: list
    input_sequence_length: int
    feature_count: int
    seed: int = 0

    def to_dict(self):
        return {
            "layers": [s.to_dict() for s in self.layers],
            "input_sequence_length": self.input_sequence_length,
            "feature_count": self.feature_count,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"layers", "input_sequence_length", "feature_count", "seed"}
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(
            [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in d["layers"]],
            int(d["input_sequence_length"]),
            int(d["feature_count"]),
            int(d.get("seed", 0)),
        )


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()}, 0)


class Model:
    """Ordered layer stack plus parameters and Adam state.

    Parameters are addressed as ``"<layer index>.<name>"`` in declaration
    order, which is also the on-disk order.
    """

    def __init__(self, config, layers):
        self.config = config
        self.layers = layers
        self.adam = AdamState.zeros_like(self.params)
        # free-form JSON-serializable info (preprocessing, error stats) saved with the model
        self.metadata = {}

    @property
    def params(self):
        return {f"{i}.{k}": layer.params[k] for i, layer in enumerate(self.layers) for k in layer.param_names}

    @property
    def buffers(self):
        return {f"{i}.{k}": layer.buffers[k] for i, layer in enumerate(self.layers) for k in layer.buffer_names}

    def set_param(self, name, value):
        i, k = name.split(".", 1)
        self.layers[int(i)].params[k] = value

    def set_buffer(self, name, value):
        i, k = name.split(".", 1)
        self.layers[int(i)].buffers[k] = value

    @property
    def grads(self):
        return {f"{i}.{k}": layer.grads[k] for i, layer in enumerate(self.layers) for k in layer.param_names}

    def n_params(self):
        return sum(p.size for p in self.params.values())

    def _check_input(self, x):
        expected = (self.config.input_sequence_length, self.config.feature_count)
        if x.ndim != 3 or x.shape[1:] != expected:
            raise DimensionError(f"model expects input [batch, {expected[0]}, {expected[1]}], got shape {x.shape}")

    def forward(self, x, training=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        if training and rng is None:
            rng = np.random.default_rng(self.config.seed)
        for layer in self.layers:
            x = layer.forward(x, training, rng)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return self.grads

    def predict(self, inputs, chunk=2048):
        if len(inputs) == 0:
            return np.zeros((0, self.config.feature_count))
        return np.concatenate([self.forward(inputs[i : i + chunk]) for i in range(0, len(inputs), chunk)])

    def snapshot(self):
        return (
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            AdamState({k: v.copy() for k, v in self.adam.m.items()}, {k: v.copy() for k, v in self.adam.v.items()}, self.adam.t),
        )

    def restore(self, snap):
        params, buffers, adam = snap
        for k, v in params.items():
            self.set_param(k, v.copy())
        for k, v in buffers.items():
            self.set_buffer(k, v.copy())
        self.adam = AdamState({k: v.copy() for k, v in adam.m.items()}, {k: v.copy() for k, v in adam.v.items()}, adam.t)


def build_model(config):
    """Instantiate layers, check that shapes chain, initialize from ``config.seed``."""
    if not config.layers:
        raise ConfigError("model has no layers")
    if config.input_sequence_length < 2:
        raise ConfigError(f"input_sequence_length must be >= 2, got {config.input_sequence_length}")
    if config.feature_count < 1:
        raise ConfigError(f"feature_count must be >= 1, got {config.feature_count}")
    rng = np.random.default_rng(config.seed)
    shape = (config.input_sequence_length, config.feature_count)
    layers = []
    for i, spec in enumerate(config.layers):
        try:
            layer = LAYER_TYPES[spec.kind](spec, shape)
            shape = layer.out_shape()
        except ConfigError as exc:
            raise ConfigError(f"layer {i} ({spec.kind}): {exc}") from None
        if min(shape) < 1:
            raise ConfigError(f"layer {i} ({spec.kind}): output shape {shape} is empty")
        layer.init_params(rng)
        layers.append(layer)
    last = config.layers[-1]
    if last.kind != "dense" or shape != (config.feature_count,):
        raise ConfigError(
            f"layer {len(layers) - 1} ({last.kind}): architecture must end in a dense layer of width "
            f"{config.feature_count}, ends with output shape {shape}"
        )
    return Model(config, layers)


def block_cnn(layers=4, base_filters=32, kernel=2, *, sequence_length, feature_count, seed=0,
              convs_per_block=1, pool=2, dropout=0.25, batchnorm=False, enrich_width=None):
    """Classic (CONV-[BN]-RELU) x convs_per_block - MAXPOOL block stack.

    Filters per input feature double with each block: the first conv of the
    first block has ``base_filters`` per feature and the first conv of every
    later block multiplies the channel count by two. The stack ends with
    flatten, dropout and a dense readout predicting every feature.
    """
    specs = []
    if enrich_width:
        specs.append(LayerSpec("feature_enrich_dense", {"width": enrich_width}))
    for block in range(layers):
        for j in range(convs_per_block):
            mult = (base_filters if block == 0 else 2) if j == 0 else 1
            specs.append(LayerSpec("depthwise_conv", {"kernel_size": kernel, "filters_per_feature": mult}))
            if batchnorm:
                specs.append(LayerSpec("batchnorm"))
            specs.append(LayerSpec("relu"))
        specs.append(LayerSpec("maxpool", {"pool": pool, "stride": pool}))
    specs.append(LayerSpec("flatten"))
    if dropout:
        specs.append(LayerSpec("dropout", {"rate": dropout}))
    specs.append(LayerSpec("dense", {"width": feature_count}))
    return ModelConfig(specs, sequence_length, feature_count, seed)


def filters_per_block(config):
    """Cumulative filters per input feature after each maxpool block."""
    out, total = [], 1
    for spec in config.layers:
        if spec.kind == "depthwise_conv":
            total *= spec.args["filters_per_feature"]
        elif spec.kind == "maxpool":
            out.append(total)
    return out
