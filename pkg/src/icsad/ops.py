"""Dense float64 kernels with hand-derived gradients.

Tensors are plain ``numpy.ndarray`` objects in float64. Time-series kernels
take ``[time, channels]`` or batched ``[batch, time, channels]`` input.
Nothing here mutates its arguments.
"""
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DimensionError

DTYPE = np.float64


@dataclass(frozen=True)
class ConvSpec:
    kernel_size: int
    filters_per_feature: int = 1
    stride: int = 1

    def __post_init__(self):
        if self.kernel_size < 2:
            raise DimensionError(f"kernel_size must be >= 2, got {self.kernel_size}")
        if self.filters_per_feature < 1:
            raise DimensionError(f"filters_per_feature must be >= 1, got {self.filters_per_feature}")
        if self.stride < 1:
            raise DimensionError(f"stride must be >= 1, got {self.stride}")

    def out_time(self, time):
        return (time - self.kernel_size) // self.stride + 1


def as_tensor(x):
    return np.asarray(x, dtype=DTYPE)


def _batched(x, name="input"):
    x = as_tensor(x)
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise DimensionError(f"{name} must be [time, channels] or [batch, time, channels], got shape {x.shape}")


# ---------------------------------------------------------------- convolution

@njit(cache=True)
def _conv_fwd(x, kt, bias, stride, out):
    batch, t_out, filters, features = out.shape
    size = kt.shape[0]
    for b in range(batch):
        for t in range(t_out):
            t0 = t * stride
            for k in range(filters):
                for f in range(features):
                    acc = bias[k, f]
                    for s in range(size):
                        acc += x[b, t0 + s, f] * kt[s, k, f]
                    out[b, t, k, f] = acc


@njit(cache=True)
def _conv_bwd(x, kt, g, stride, gx, gk):
    batch, t_out, filters, features = g.shape
    size = kt.shape[0]
    for b in range(batch):
        for t in range(t_out):
            t0 = t * stride
            for s in range(size):
                for k in range(filters):
                    for f in range(features):
                        gx[b, t0 + s, f] += g[b, t, k, f] * kt[s, k, f]
                        gk[s, k, f] += x[b, t0 + s, f] * g[b, t, k, f]


def _check_conv(x, spec, kernels):
    _, time, features = x.shape
    if time < spec.kernel_size:
        raise DimensionError(f"time axis has length {time}, shorter than kernel_size {spec.kernel_size}")
    expected = (features, spec.filters_per_feature, spec.kernel_size)
    if kernels.shape != expected:
        axis = next(i for i, (a, b) in enumerate(zip(kernels.shape + (0,) * 3, expected)) if a != b)
        names = ("features", "filters_per_feature", "kernel_size")
        raise DimensionError(
            f"kernels axis {axis} ({names[axis]}) mismatch: got shape {kernels.shape}, expected {expected}"
        )


def conv1d_depthwise(x, spec, kernels, bias):
    """Valid depthwise 1D cross-correlation along time.

    ``kernels`` is ``[features, filters_per_feature, kernel_size]`` and
    ``bias`` is ``[features, filters_per_feature]``. Output channel
    ``k * features + f`` is feature ``f`` correlated with ``kernels[f, k]``
    plus ``bias[f, k]``; features never mix.
    """
    x, squeeze = _batched(x)
    kernels = as_tensor(kernels)
    _check_conv(x, spec, kernels)
    features, filters = kernels.shape[:2]
    kt = np.ascontiguousarray(kernels.transpose(2, 1, 0))  # [S, K, F]
    bias = np.ascontiguousarray(as_tensor(bias).reshape(features, filters).T)
    out = np.empty((x.shape[0], spec.out_time(x.shape[1]), filters, features))
    _conv_fwd(np.ascontiguousarray(x), kt, bias, spec.stride, out)
    out = out.reshape(out.shape[0], out.shape[1], filters * features)
    return out[0] if squeeze else out


def conv1d_depthwise_grad(x, spec, kernels, upstream):
    """Return ``(grad_input, grad_kernels, grad_bias)`` for :func:`conv1d_depthwise`."""
    x, squeeze = _batched(x)
    kernels = as_tensor(kernels)
    _check_conv(x, spec, kernels)
    features, filters, size = kernels.shape
    batch, time, _ = x.shape
    t_out = spec.out_time(time)
    g = as_tensor(upstream)
    if squeeze:
        g = g[None]
    if g.shape != (batch, t_out, features * filters):
        raise DimensionError(
            f"upstream_grad shape {g.shape[1:] if squeeze else g.shape} does not match forward output "
            f"{(t_out, features * filters) if squeeze else (batch, t_out, features * filters)}"
        )
    g = np.ascontiguousarray(g.reshape(batch, t_out, filters, features))
    kt = np.ascontiguousarray(kernels.transpose(2, 1, 0))
    grad_kernels = np.zeros((size, filters, features))
    grad_x = np.zeros_like(x)
    _conv_bwd(np.ascontiguousarray(x), kt, g, spec.stride, grad_x, grad_kernels)
    grad_bias = g.sum(axis=(0, 1)).T
    return (grad_x[0] if squeeze else grad_x), grad_kernels.transpose(2, 1, 0).copy(), grad_bias


# ---------------------------------------------------------------------- dense

def _check_dense(x, w):
    if x.ndim != 2:
        raise DimensionError(f"dense input must be [batch, in_dim], got shape {x.shape}")
    if w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"in_dim mismatch: input has {x.shape[1]}, weights expect {w.shape[0] if w.ndim else '?'}")


def dense(x, weights, bias):
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    _check_dense(x, weights)
    if bias.shape != (weights.shape[1],):
        raise DimensionError(f"out_dim mismatch: bias {bias.shape}, weights {weights.shape}")
    return x @ weights + bias


def dense_grad(x, weights, upstream):
    x, weights, g = as_tensor(x), as_tensor(weights), as_tensor(upstream)
    _check_dense(x, weights)
    if g.shape != (x.shape[0], weights.shape[1]):
        raise DimensionError(f"upstream_grad shape {g.shape} does not match output {(x.shape[0], weights.shape[1])}")
    return g @ weights.T, x.T @ g, g.sum(axis=0)


# ----------------------------------------------------------------------- relu

def relu(x):
    return np.maximum(as_tensor(x), 0.0)


@njit(cache=True)
def _relu_bwd(x, g, out):
    for i in range(x.size):
        # subgradient at exactly 0 is 0
        out[i] = g[i] if x[i] > 0.0 else 0.0


def relu_grad(x, upstream):
    x, g = as_tensor(x), as_tensor(upstream)
    if x.shape != g.shape:
        raise DimensionError(f"upstream_grad shape {g.shape} does not match input {x.shape}")
    out = np.empty(x.shape)
    _relu_bwd(np.ascontiguousarray(x).ravel(), np.ascontiguousarray(g).ravel(), out.ravel())
    return out


# -------------------------------------------------------------------- maxpool

@njit(cache=True)
def _pool_fwd(x, pool, stride, out, idx):
    batch, t_out, channels = out.shape
    for b in range(batch):
        for t in range(t_out):
            t0 = t * stride
            for c in range(channels):
                out[b, t, c] = x[b, t0, c]
                idx[b, t, c] = t0
            for j in range(1, pool):
                for c in range(channels):
                    # strict > keeps the first index on ties
                    if x[b, t0 + j, c] > out[b, t, c]:
                        out[b, t, c] = x[b, t0 + j, c]
                        idx[b, t, c] = t0 + j


@njit(cache=True)
def _pool_bwd(g, idx, grad):
    batch, t_out, channels = g.shape
    for b in range(batch):
        for t in range(t_out):
            for c in range(channels):
                grad[b, idx[b, t, c], c] += g[b, t, c]


def maxpool1d(x, pool=2, stride=2):
    """Max over time windows; returns ``(out, argmax)``.

    ``argmax`` holds absolute time indices into ``x``; ties resolve to the
    first index in the window. Trailing steps that do not fill a window are
    dropped.
    """
    x, squeeze = _batched(x)
    if pool < 1 or stride < 1:
        raise DimensionError(f"pool and stride must be >= 1, got {pool}, {stride}")
    if x.shape[1] < pool:
        raise DimensionError(f"time axis has length {x.shape[1]}, shorter than pool {pool}")
    t_out = (x.shape[1] - pool) // stride + 1
    out = np.empty((x.shape[0], t_out, x.shape[2]))
    idx = np.empty(out.shape, dtype=np.int64)
    _pool_fwd(np.ascontiguousarray(x), pool, stride, out, idx)
    if squeeze:
        return out[0], idx[0]
    return out, idx


def maxpool1d_grad(upstream, argmax, in_time):
    g = as_tensor(upstream)
    squeeze = g.ndim == 2
    if squeeze:
        g, argmax = g[None], np.asarray(argmax)[None]
    if g.shape != argmax.shape:
        raise DimensionError(f"upstream_grad shape {g.shape} does not match argmax {argmax.shape}")
    grad = np.zeros((g.shape[0], in_time, g.shape[2]), dtype=DTYPE)
    _pool_bwd(np.ascontiguousarray(g), np.ascontiguousarray(argmax, dtype=np.int64), grad)
    return grad[0] if squeeze else grad


# -------------------------------------------------------------------- dropout

def dropout(x, rate, rng, training=True):
    """Inverted dropout. ``rng`` is a ``numpy.random.Generator``.

    Returns ``(out, mask)``; the mask already carries the ``1/(1-rate)``
    scale so the backward pass is ``upstream * mask``.
    """
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x.copy(), np.ones_like(x)
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


def dropout_grad(upstream, mask):
    return as_tensor(upstream) * mask


# ---------------------------------------------------------------- batch norm

@dataclass(frozen=True)
class RunningStats:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def init(cls, channels):
        return cls(np.zeros(channels, dtype=DTYPE), np.ones(channels, dtype=DTYPE))


def batchnorm1d(x, gamma, beta, running, training=True, momentum=0.9, epsilon=1e-5):
    """Per-channel batch normalization over ``[batch, channels]``.

    Returns ``(out, new_running, cache)``; ``running`` itself is untouched.
    In training mode the running statistics move as
    ``momentum * old + (1 - momentum) * batch``.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"batchnorm1d input must be [batch, channels], got shape {x.shape}")
    if training:
        if x.shape[0] < 2:
            raise DimensionError("batchnorm1d needs a batch of at least 2 in training mode")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        new_running = RunningStats(
            momentum * running.mean + (1.0 - momentum) * mean,
            momentum * running.var + (1.0 - momentum) * var,
        )
    else:
        mean, var = running.mean, running.var
        new_running = running
    inv_std = 1.0 / np.sqrt(var + epsilon)
    x_hat = (x - mean) * inv_std
    out = gamma * x_hat + beta
    return out, new_running, (x_hat, inv_std, as_tensor(gamma), training)


def batchnorm1d_grad(upstream, cache):
    """Return ``(grad_input, grad_gamma, grad_beta)``."""
    x_hat, inv_std, gamma, training = cache
    g = as_tensor(upstream)
    grad_gamma = (g * x_hat).sum(axis=0)
    grad_beta = g.sum(axis=0)
    g_hat = g * gamma
    if not training:
        return g_hat * inv_std, grad_gamma, grad_beta
    n = g.shape[0]
    grad_x = inv_std / n * (n * g_hat - g_hat.sum(axis=0) - x_hat * (g_hat * x_hat).sum(axis=0))
    return grad_x, grad_gamma, grad_beta
