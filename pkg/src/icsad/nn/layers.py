"""Layer objects wrapping the kernels in :mod:`icsad.ops`.

A layer sees per-sample shapes without the batch axis: ``(time, channels)``
for sequence layers and ``(dim,)`` after ``flatten``. Each layer caches
what its backward pass needs during ``forward``.
"""
from dataclasses import dataclass, field

import numpy as np

from .. import ops
from ..errors import ConfigError

KINDS = (
    "depthwise_conv",
    "relu",
    "maxpool",
    "dropout",
    "batchnorm",
    "dense",
    "flatten",
    "feature_enrich_dense",
)

_DEFAULTS = {
    "depthwise_conv": {"kernel_size": 2, "filters_per_feature": 1, "stride": 1},
    "relu": {},
    "maxpool": {"pool": 2, "stride": 2},
    "dropout": {"rate": 0.25},
    "batchnorm": {"momentum": 0.9, "epsilon": 1e-5},
    "dense": {"width": None},
    "flatten": {},
    "feature_enrich_dense": {"width": None},
}


@dataclass
class LayerSpec:
    kind: str
    args: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        unknown = set(self.args) - set(_DEFAULTS[self.kind])
        if unknown:
            raise ConfigError(f"{self.kind} layer got unknown options {sorted(unknown)}")
        self.args = {**_DEFAULTS[self.kind], **self.args}

    def to_dict(self):
        return {"kind": self.kind, **self.args}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        return cls(d.pop("kind"), d)


class Layer:
    param_names = ()
    buffer_names = ()

    def __init__(self, spec, in_shape):
        self.spec = spec
        self.in_shape = in_shape
        self.params = {}
        self.grads = {}
        self.buffers = {}

    def out_shape(self):
        return self.in_shape

    def init_params(self, rng):
        pass

    def forward(self, x, training, rng):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError


def _require_seq(spec, in_shape):
    if len(in_shape) != 2:
        raise ConfigError(f"{spec.kind} needs a (time, channels) input, got shape {in_shape}")


def _he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class DepthwiseConv(Layer):
    param_names = ("kernels", "bias")

    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        _require_seq(spec, in_shape)
        a = spec.args
        self.conv = ops.ConvSpec(a["kernel_size"], a["filters_per_feature"], a["stride"])
        if in_shape[0] < self.conv.kernel_size:
            raise ConfigError(
                f"depthwise_conv kernel_size {self.conv.kernel_size} exceeds sequence length {in_shape[0]}"
            )

    def out_shape(self):
        t, c = self.in_shape
        return (self.conv.out_time(t), c * self.conv.filters_per_feature)

    def init_params(self, rng):
        c = self.in_shape[1]
        k, s = self.conv.filters_per_feature, self.conv.kernel_size
        self.params["kernels"] = _he_uniform(rng, (c, k, s), s)
        self.params["bias"] = np.zeros((c, k))

    def forward(self, x, training, rng):
        self._x = x
        return ops.conv1d_depthwise(x, self.conv, self.params["kernels"], self.params["bias"])

    def backward(self, g):
        gx, gk, gb = ops.conv1d_depthwise_grad(self._x, self.conv, self.params["kernels"], g)
        self.grads["kernels"], self.grads["bias"] = gk, gb
        return gx


class ReLU(Layer):
    def forward(self, x, training, rng):
        self._x = x
        return ops.relu(x)

    def backward(self, g):
        return ops.relu_grad(self._x, g)


class MaxPool(Layer):
    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        _require_seq(spec, in_shape)
        if in_shape[0] < spec.args["pool"]:
            raise ConfigError(f"maxpool pool {spec.args['pool']} exceeds sequence length {in_shape[0]}")

    def out_shape(self):
        t, c = self.in_shape
        return ((t - self.spec.args["pool"]) // self.spec.args["stride"] + 1, c)

    def forward(self, x, training, rng):
        out, self._idx = ops.maxpool1d(x, self.spec.args["pool"], self.spec.args["stride"])
        self._time = x.shape[1]
        return out

    def backward(self, g):
        return ops.maxpool1d_grad(g, self._idx, self._time)


class Dropout(Layer):
    def forward(self, x, training, rng):
        out, self._mask = ops.dropout(x, self.spec.args["rate"], rng, training)
        return out

    def backward(self, g):
        return ops.dropout_grad(g, self._mask)


class BatchNorm(Layer):
    param_names = ("gamma", "beta")
    buffer_names = ("running_mean", "running_var")

    def init_params(self, rng):
        c = self.in_shape[-1]
        self.params["gamma"] = np.ones(c)
        self.params["beta"] = np.zeros(c)
        stats = ops.RunningStats.init(c)
        self.buffers["running_mean"], self.buffers["running_var"] = stats.mean, stats.var

    def forward(self, x, training, rng):
        shape = x.shape
        flat = x.reshape(-1, shape[-1])
        running = ops.RunningStats(self.buffers["running_mean"], self.buffers["running_var"])
        out, running, self._cache = ops.batchnorm1d(
            flat, self.params["gamma"], self.params["beta"], running, training,
            self.spec.args["momentum"], self.spec.args["epsilon"],
        )
        self.buffers["running_mean"], self.buffers["running_var"] = running.mean, running.var
        return out.reshape(shape)

    def backward(self, g):
        shape = g.shape
        gx, self.grads["gamma"], self.grads["beta"] = ops.batchnorm1d_grad(g.reshape(-1, shape[-1]), self._cache)
        return gx.reshape(shape)


class Flatten(Layer):
    def out_shape(self):
        return (int(np.prod(self.in_shape)),)

    def forward(self, x, training, rng):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)


class Dense(Layer):
    param_names = ("weights", "bias")

    def __init__(self, spec, in_shape):
        super().__init__(spec, in_shape)
        if len(in_shape) != 1:
            raise ConfigError(f"dense needs a flat input (insert a flatten layer), got shape {in_shape}")
        if not spec.args["width"] or spec.args["width"] < 1:
            raise ConfigError("dense layer needs a positive width")

    def out_shape(self):
        return (self.spec.args["width"],)

    def init_params(self, rng):
        n_in = self.in_shape[0]
        self.params["weights"] = _he_uniform(rng, (n_in, self.spec.args["width"]), n_in)
        self.params["bias"] = np.zeros(self.spec.args["width"])

    def forward(self, x, training, rng):
        self._x = x
        return ops.dense(x, self.params["weights"], self.params["bias"])

    def backward(self, g):
        gx, self.grads["weights"], self.grads["bias"] = ops.dense_grad(self._x, self.params["weights"], g)
        return gx


class FeatureEnrichDense(Dense):
    """Dense map applied at every time step; mixes features before the conv stack."""

    def __init__(self, spec, in_shape):
        _require_seq(spec, in_shape)
        Layer.__init__(self, spec, in_shape)
        if not spec.args["width"] or spec.args["width"] < 1:
            raise ConfigError("feature_enrich_dense layer needs a positive width")

    def out_shape(self):
        return (self.in_shape[0], self.spec.args["width"])

    def init_params(self, rng):
        n_in = self.in_shape[1]
        self.params["weights"] = _he_uniform(rng, (n_in, self.spec.args["width"]), n_in)
        self.params["bias"] = np.zeros(self.spec.args["width"])

    def forward(self, x, training, rng):
        b, t, c = x.shape
        return super().forward(x.reshape(b * t, c), training, rng).reshape(b, t, -1)

    def backward(self, g):
        b, t, w = g.shape
        return super().backward(g.reshape(b * t, w)).reshape(b, t, -1)


LAYER_TYPES = {
    "depthwise_conv": DepthwiseConv,
    "relu": ReLU,
    "maxpool": MaxPool,
    "dropout": Dropout,
    "batchnorm": BatchNorm,
    "dense": Dense,
    "flatten": Flatten,
    "feature_enrich_dense": FeatureEnrichDense,
}
