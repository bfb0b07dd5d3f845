"""Central finite-difference checks of the analytic gradients in float64."""

import numpy as np

from . import nncore
from .model import DiscriminatorConfig, build

STEP = 1e-5
TOLERANCES = {"conv": 1e-4, "batchnorm": 1e-4, "leaky_relu": 1e-4, "bce": 1e-4, "network": 1e-3}
LAYERS = tuple(TOLERANCES)

# reduced network used for the end-to-end check
TOY_CONFIG = DiscriminatorConfig(input_size=32, widths=(4, 8, 8, 8))


def relative_error(analytic, numeric):
    a, n = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def numeric_gradient(loss_fn, arr, step=STEP):
    """Central differences of ``loss_fn()`` with respect to every slot of ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn()
        flat[i] = orig - step
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def _max_error(loss_fn, arrays, analytic, step):
    worst = 0.0
    for name, arr in arrays.items():
        num = numeric_gradient(loss_fn, arr, step)
        worst = max(worst, float(relative_error(analytic[name], num).max()))
    return worst


def check_conv(shape=(2, 3, 8, 8), seed=0, step=STEP, c_out=4):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    params = nncore.ConvParams(rng.standard_normal((c_out, shape[1], 4, 4)), rng.standard_normal(c_out))
    proj = rng.standard_normal(nncore.conv2d_forward(x, params).shape)

    def loss():
        return float((nncore.conv2d_forward(x, params) * proj).sum())

    gx, gw, gb = nncore.conv2d_backward(x, params, proj)
    arrays = {"x": x, "w": params.weight, "b": params.bias}
    return _max_error(loss, arrays, {"x": gx, "w": gw, "b": gb}, step)


def check_batchnorm(shape=(4, 2, 4, 4), seed=0, step=STEP):
    rng = np.random.default_rng(seed)
    c = shape[1]
    x = rng.standard_normal(shape) * 2.0 + 0.5
    params = nncore.BatchNormParams.fresh(c, np.float64)
    params.gamma = rng.standard_normal(c) + 1.0
    params.beta = rng.standard_normal(c)
    proj = rng.standard_normal(shape)

    def loss():
        out, _, _ = nncore.batchnorm_forward(x, params, "train")
        return float((out * proj).sum())

    _, _, cache = nncore.batchnorm_forward(x, params, "train")
    gx, gg, gb = nncore.batchnorm_backward(proj, cache)
    arrays = {"x": x, "gamma": params.gamma, "beta": params.beta}
    return _max_error(loss, arrays, {"x": gx, "gamma": gg, "beta": gb}, step)


def check_leaky_relu(shape=(2, 3, 8, 8), seed=0, step=STEP, slope=nncore.LEAKY_SLOPE):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    # keep samples clear of the kink so central differences stay one-sided
    x = np.where(np.abs(x) < 0.01, 0.01 * np.sign(x) + 0.01 * (x == 0), x)
    proj = rng.standard_normal(shape)

    def loss():
        return float((nncore.leaky_relu(x, slope) * proj).sum())

    gx = nncore.leaky_relu_backward(x, proj, slope)
    return _max_error(loss, {"x": x}, {"x": gx}, step)


def check_bce(size=16, seed=0, step=STEP):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(size) * 3.0
    y = rng.integers(0, 2, size).astype(np.float64)

    def loss():
        return nncore.bce_with_logits(z, y)[0]

    _, gz = nncore.bce_with_logits(z, y)
    return _max_error(loss, {"z": z}, {"z": gz}, step)


def _min_kink_margin(model, x):
    model.forward(x, "train")
    return min(float(np.abs(pre).min()) for _, _, _, pre in model.cache.stages)


def check_network(shape=(2, 3, 32, 32), seed=0, step=STEP, config=None, margin=1e-3, max_draws=200):
    """End-to-end check of model forward/backward through the BCE loss.

    The instance is redrawn until every LeakyReLU input is at least ``margin``
    away from zero; a central difference straddling the kink would measure
    the wrong one-sided slope.
    """
    rng = np.random.default_rng(seed)
    config = config or DiscriminatorConfig(input_size=shape[2], widths=TOY_CONFIG.widths)
    model = build(config, init_seed=seed, dtype=np.float64)
    # larger-than-default weights keep the logits and gradients well scaled
    for k, p in model.params.items():
        if k.endswith(".weight"):
            p *= 10.0
        if k.endswith(".bias") or k.endswith(".beta"):
            p += rng.standard_normal(p.shape) * 0.1
    for _ in range(max_draws):
        x = rng.standard_normal(shape)
        if _min_kink_margin(model, x) >= margin:
            break
    else:
        raise RuntimeError(f"no instance with kink margin {margin} in {max_draws} draws")
    y = np.arange(shape[0]) % 2

    def loss():
        return nncore.bce_with_logits(model.forward(x, "train"), y)[0]

    _, g = nncore.bce_with_logits(model.forward(x, "train"), y)
    grads = dict(model.backward(g))
    grads["input"] = model.input_grad
    arrays = dict(model.trainable())
    arrays["input"] = x
    return _max_error(loss, arrays, grads, step)


_CHECKS = {
    "conv": check_conv,
    "batchnorm": check_batchnorm,
    "leaky_relu": check_leaky_relu,
    "bce": check_bce,
    "network": check_network,
}


def gradcheck(layer, size=None, seed=0, step=STEP):
    """Worst relative error |a-n|/max(|a|,|n|,1e-8) over every slot of ``layer``."""
    if layer not in _CHECKS:
        raise ValueError(f"unknown layer {layer!r}; choose from {', '.join(LAYERS)}")
    if size is None:
        return _CHECKS[layer](seed=seed, step=step)
    return _CHECKS[layer](size, seed=seed, step=step)


def run_all(layers=LAYERS, seed=0):
    """``{layer: (max_rel_err, tolerance, passed)}`` for each requested layer."""
    out = {}
    for layer in layers:
        err = gradcheck(layer, seed=seed)
        tol = TOLERANCES[layer]
        out[layer] = (err, tol, err < tol)
    return out
