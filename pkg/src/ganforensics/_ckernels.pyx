# Compiled im2col / col2im. Must stay bit-compatible with _pykernels.py.
cimport cython
import numpy as np
from cython cimport floating


@cython.boundscheck(False)
@cython.wraparound(False)
def im2col(floating[:, :, :, ::1] xp, int k, int s, int out_h, int out_w):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t ncol = c * k * k
    dtype = np.float32 if floating is float else np.float64
    cols_arr = np.empty((n * out_h * out_w, ncol), dtype=dtype)
    cdef floating[:, ::1] cols = cols_arr
    cdef Py_ssize_t b, ch, oh, ow, i, j, row, col, y0, x0
    with nogil:
        for b in range(n):
            for oh in range(out_h):
                y0 = oh * s
                for ow in range(out_w):
                    x0 = ow * s
                    row = (b * out_h + oh) * out_w + ow
                    col = 0
                    for ch in range(c):
                        for i in range(k):
                            for j in range(k):
                                cols[row, col] = xp[b, ch, y0 + i, x0 + j]
                                col += 1
    return cols_arr


@cython.boundscheck(False)
@cython.wraparound(False)
def col2im(floating[:, ::1] cols, int n, int c, int hp, int wp, int k, int s, int out_h, int out_w):
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, oh, ow, i, j, row, col
    # (kh, kw) outermost per pixel so accumulation order matches the numpy path.
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        col = (ch * k + i) * k + j
                        for oh in range(out_h):
                            row = (b * out_h + oh) * out_w
                            for ow in range(out_w):
                                out[b, ch, oh * s + i, ow * s + j] += cols[row + ow, col]
    return out_arr
