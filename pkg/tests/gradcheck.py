"""Finite-difference gradient checks for single layers and a tiny full model."""
import numpy as np

from icsad.nn import LayerSpec, build_model, mse_loss, block_cnn
from icsad.nn.layers import LAYER_TYPES

from oracles import numeric_grad, rel_error

H = 1e-5


def _spaced(rng, shape, gap=1e-2):
    """Random values with pairwise gaps >= ``gap`` and none near zero, so
    max and relu stay on one side of their kinks under an ``H`` nudge."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) + 1 + rng.uniform(0, 0.5, n)) * gap
    signs = rng.choice([-1.0, 1.0], n)
    return (vals * signs).reshape(shape)


def _layer_setup(kind, rng):
    batch = int(rng.integers(2, 4))
    time = int(rng.integers(4, 9))
    ch = int(rng.integers(1, 4))
    args = {}
    if kind == "depthwise_conv":
        args = {"kernel_size": int(rng.integers(2, 4)), "filters_per_feature": int(rng.integers(1, 3)),
                "stride": int(rng.integers(1, 3))}
    elif kind == "maxpool":
        pool = int(rng.integers(2, 4))
        args = {"pool": pool, "stride": int(rng.integers(1, pool + 1))}
    elif kind == "dropout":
        args = {"rate": float(rng.uniform(0.1, 0.6))}
    elif kind in ("dense", "feature_enrich_dense"):
        args = {"width": int(rng.integers(1, 5))}
    in_shape = (time * ch,) if kind == "dense" else (time, ch)
    layer = LAYER_TYPES[kind](LayerSpec(kind, args), in_shape)
    layer.init_params(rng)
    for k in layer.param_names:
        layer.params[k] = rng.normal(size=layer.params[k].shape)
    if kind in ("relu", "maxpool"):
        x = _spaced(rng, (batch,) + in_shape)
    else:
        x = rng.normal(size=(batch,) + in_shape)
    return layer, x


def layer_grad_error(kind, seed):
    """Largest relative error over input and parameter gradients of one layer."""
    rng = np.random.default_rng(seed)
    layer, x = _layer_setup(kind, rng)
    out = layer.forward(x, True, np.random.default_rng(seed))
    upstream = rng.normal(size=out.shape)

    def loss():
        # fresh rng each call: dropout draws the same mask every time
        return float(np.sum(layer.forward(x, True, np.random.default_rng(seed)) * upstream))

    loss()
    gx = layer.backward(upstream)
    grads = {k: v.copy() for k, v in layer.grads.items()}
    errs = [rel_error(gx, numeric_grad(loss, x, H))]
    for k in layer.param_names:
        errs.append(rel_error(grads[k], numeric_grad(loss, layer.params[k], H)))
    return max(errs)


def tiny_model(seed, batchnorm=True):
    cfg = block_cnn(2, 2, 2, sequence_length=8, feature_count=2, seed=seed, dropout=0.25, batchnorm=batchnorm)
    return build_model(cfg)


def model_grad_error(seed, batchnorm=True):
    """Relative error of the MSE-loss gradient over every parameter of a tiny model."""
    rng = np.random.default_rng(1000 + seed)
    model = tiny_model(seed, batchnorm)
    x = rng.normal(size=(4, 8, 2))
    y = rng.normal(size=(4, 2))

    def loss():
        return mse_loss(model.forward(x, training=True, rng=np.random.default_rng(seed)), y)[0]

    _, g = mse_loss(model.forward(x, training=True, rng=np.random.default_rng(seed)), y)
    analytic = {k: v.copy() for k, v in model.backward(g).items()}
    params = model.params
    a = np.concatenate([analytic[k].ravel() for k in params])
    n = np.concatenate([numeric_grad(loss, params[k], H).ravel() for k in params])
    return rel_error(a, n)
