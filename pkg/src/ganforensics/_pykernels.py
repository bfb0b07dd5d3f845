"""Pure-numpy im2col / col2im. Fallback when the compiled extension is missing."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, k, s, out_h, out_w):
    """Unfold padded ``xp`` (N, C, Hp, Wp) into rows of (C*k*k) patch values.

    Row order is (n, oh, ow); column order is (c, kh, kw).
    """
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : s * (out_h - 1) + 1 : s, : s * (out_w - 1) + 1 : s]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * out_h * out_w, c * k * k)


def col2im(cols, n, c, hp, wp, k, s, out_h, out_w):
    """Adjoint of :func:`im2col`: scatter-add patch rows back to (N, C, Hp, Wp).

    Contributions to a pixel are summed in ascending (kh, kw) order; the
    compiled kernel uses the same order so both backends agree bit for bit.
    """
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    parts = cols.reshape(n, out_h, out_w, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + s * (out_h - 1) + 1 : s, j : j + s * (out_w - 1) + 1 : s] += parts[:, :, i, j]
    return out
