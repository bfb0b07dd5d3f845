"""Independent reference implementations used as test oracles."""

import numpy as np


def direct_correlation(x, w, b, stride, pad):
    """Reference conv: explicit loops, sum over (c, kh, kw) in order, bias first."""
    n, c, h, wd = x.shape
    c_out, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, c_out, oh, ow), dtype=x.dtype)
    for i in range(n):
        for o in range(c_out):
            for y in range(oh):
                for z in range(ow):
                    acc = b[o] if b is not None else x.dtype.type(0)
                    for ch in range(c):
                        for p in range(k):
                            for q in range(k):
                                acc += xp[i, ch, y * stride + p, z * stride + q] * w[o, ch, p, q]
                    out[i, o, y, z] = acc
    return out


def dyadic(rng, shape, lo=-8, hi=8, denom=8):
    """Random values on a 1/denom grid: products and short sums stay exact in float64."""
    return rng.integers(lo * denom, hi * denom + 1, shape).astype(np.float64) / denom
