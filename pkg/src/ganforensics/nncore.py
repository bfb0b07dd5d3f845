"""Forward/backward passes for the layers the discriminator uses.

Tensors are plain ``numpy`` arrays in (N, C, H, W) layout. Every function is
pure: batch norm hands back new running statistics instead of mutating its
parameters. Training runs in float32; gradient checks run in float64.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError

LEAKY_SLOPE = 0.2


def _check_4d(name, x):
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (N, C, H, W), got shape {x.shape}")


@dataclass
class ConvParams:
    weight: np.ndarray  # (C_out, C_in, k, k)
    bias: np.ndarray  # (C_out,), or None for a bias-free conv
    stride: int = 2
    padding: int = 1

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ShapeError(f"conv weight must be (C_out, C_in, k, k), got {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"conv bias shape {self.bias.shape} does not match weight {self.weight.shape}")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(f"invalid stride/padding {self.stride}/{self.padding}")

    @property
    def kernel(self):
        return self.weight.shape[2]


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def fresh(cls, channels, dtype=np.float32, **kw):
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            **kw,
        )


@dataclass
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def _conv_geometry(x, params):
    _check_4d("conv input", x)
    n, c, h, w = x.shape
    c_out, c_in, k, _ = params.weight.shape
    if c != c_in:
        raise ShapeError(f"conv input shape {x.shape} incompatible with weight shape {params.weight.shape}")
    p, s = params.padding, params.stride
    if h + 2 * p < k or w + 2 * p < k:
        raise ShapeError(f"conv input shape {x.shape} too small for weight shape {params.weight.shape}")
    return n, c, h + 2 * p, w + 2 * p, conv_output_size(h, k, s, p), conv_output_size(w, k, s, p)


def _pad(x, p):
    if p == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d_forward(x, params, return_cols=False):
    """Strided 2-D cross-correlation (no kernel flip) plus per-channel bias.

    With ``return_cols=True`` also returns the im2col matrix so a caller can
    hand it to :func:`conv2d_backward` instead of recomputing it.
    """
    n, _, hp, wp, oh, ow = _conv_geometry(x, params)
    c_out, _, k, _ = params.weight.shape
    cols = kernels.im2col(_pad(x, params.padding), k, params.stride, oh, ow)
    out = cols @ params.weight.reshape(c_out, -1).T
    if params.bias is not None:
        out += params.bias
    out = out.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2)
    if return_cols:
        return out, cols
    return out


def conv2d_backward(x, params, grad_out, cols=None):
    """Gradients of a conv layer: ``(grad_input, grad_weight, grad_bias)``.

    ``grad_bias`` is None for a bias-free conv.
    """
    n, c, hp, wp, oh, ow = _conv_geometry(x, params)
    c_out, _, k, _ = params.weight.shape
    if grad_out.shape != (n, c_out, oh, ow):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match conv output shape {(n, c_out, oh, ow)}")
    if cols is None:
        cols = kernels.im2col(_pad(x, params.padding), k, params.stride, oh, ow)
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, c_out)
    grad_w = (g.T @ cols).reshape(params.weight.shape)
    grad_b = g.sum(axis=0) if params.bias is not None else None
    dcols = np.ascontiguousarray(g @ params.weight.reshape(c_out, -1))
    dxp = kernels.col2im(dcols, n, c, hp, wp, k, params.stride, oh, ow)
    p = params.padding
    grad_x = dxp[:, :, p : hp - p, p : wp - p] if p else dxp
    return grad_x, grad_w, grad_b


def batchnorm_forward(x, params, mode="train"):
    """Per-channel batch normalization.

    Returns ``(out, params, cache)``. In train mode ``params`` is a new
    :class:`BatchNormParams` with updated running statistics and ``cache`` feeds
    :func:`batchnorm_backward`; in infer mode both come back unchanged/None.
    """
    _check_4d("batchnorm input", x)
    n, c, h, w = x.shape
    if params.gamma.shape != (c,):
        raise ShapeError(f"batchnorm input shape {x.shape} does not match {params.gamma.shape[0]} channels")
    shape = (1, c, 1, 1)
    if mode == "infer":
        inv_std = 1.0 / np.sqrt(params.running_var + params.eps)
        scale = (params.gamma * inv_std).reshape(shape)
        out = (x - params.running_mean.reshape(shape)) * scale + params.beta.reshape(shape)
        return out, params, None
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if n * h * w < 2:
        raise NumericError(f"batchnorm train mode needs N*H*W >= 2, got input shape {x.shape}")
    mean = x.mean(axis=(0, 2, 3))
    centered = x - mean.reshape(shape)
    var = (centered * centered).mean(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + params.eps)
    x_hat = centered * inv_std.reshape(shape)
    out = x_hat * params.gamma.reshape(shape) + params.beta.reshape(shape)
    m = params.momentum
    updated = replace(
        params,
        running_mean=((1 - m) * params.running_mean + m * mean).astype(params.running_mean.dtype),
        running_var=((1 - m) * params.running_var + m * var).astype(params.running_var.dtype),
    )
    return out, updated, BatchNormCache(x_hat, inv_std, params.gamma)


def batchnorm_backward(grad_out, cache):
    """Adjoint of train-mode batch norm: ``(grad_input, grad_gamma, grad_beta)``."""
    if cache is None:
        raise NumericError("batchnorm_backward needs the cache of a preceding train-mode forward")
    if grad_out.shape != cache.x_hat.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match forward shape {cache.x_hat.shape}")
    n, c, h, w = grad_out.shape
    count = n * h * w
    shape = (1, c, 1, 1)
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * cache.x_hat).sum(axis=(0, 2, 3))
    # dx = gamma*inv_std/M * (M*dy - sum(dy) - x_hat*sum(dy*x_hat))
    coef = (cache.gamma * cache.inv_std / count).reshape(shape)
    grad_x = coef * (count * grad_out - grad_beta.reshape(shape) - cache.x_hat * grad_gamma.reshape(shape))
    return grad_x, grad_gamma, grad_beta


def leaky_relu(x, slope=LEAKY_SLOPE):
    if not 0 <= slope < 1:
        raise ValueError(f"leaky slope must be in [0, 1), got {slope}")
    return np.where(x >= 0, x, x * slope)


def leaky_relu_backward(x, grad_out, slope=LEAKY_SLOPE):
    if x.shape != grad_out.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match input shape {x.shape}")
    # derivative at exactly 0 is taken as 1
    return np.where(x >= 0, grad_out, grad_out * slope)


def sigmoid(z):
    z = np.asarray(z)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def bce_with_logits(logits, labels):
    """Mean binary cross-entropy on logits. Returns ``(loss, grad_logits)``.

    Labels use real=1, fake=0.
    """
    z = np.asarray(logits)
    y = np.asarray(labels)
    if z.shape != y.shape:
        raise ShapeError(f"logits shape {z.shape} does not match labels shape {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise NumericError("labels must be 0 (fake) or 1 (real)")
    y = y.astype(z.dtype)
    count = z.size
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = float(per.sum() / count)
    grad = ((sigmoid(z) - y) / count).astype(z.dtype)
    return loss, grad
