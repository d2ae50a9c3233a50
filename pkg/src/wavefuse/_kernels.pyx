# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled patch gather/scatter used by the convolution layer.

Patch matrices have shape ``[C*k*k, N*Ho*Wo]`` (row ``(c, ki, kj)``, column
``(n, oy, ox)``). Both routines visit kernel taps in the same order as the
numpy fallback so scatter-accumulation is bit-identical between backends.
"""
import numpy as np

ctypedef fused real:
    float
    double


cdef inline void _valid_range(Py_ssize_t kj, Py_ssize_t pad, Py_ssize_t stride,
                              Py_ssize_t width, Py_ssize_t out_w,
                              Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # output columns ox with 0 <= ox*stride + kj - pad < width
    lo[0] = 0
    hi[0] = out_w
    while lo[0] < out_w and lo[0] * stride + kj - pad < 0:
        lo[0] += 1
    while hi[0] > lo[0] and (hi[0] - 1) * stride + kj - pad >= width:
        hi[0] -= 1


def im2col(const real[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t n_batch = x.shape[0], channels = x.shape[1]
    cdef Py_ssize_t height = x.shape[2], width = x.shape[3]
    cdef Py_ssize_t out_h = (height + 2 * pad - k) // stride + 1
    cdef Py_ssize_t out_w = (width + 2 * pad - k) // stride + 1
    cdef Py_ssize_t plane = out_h * out_w
    dtype = np.float32 if real is float else np.float64
    cols_arr = np.zeros((channels * k * k, n_batch * plane), dtype=dtype)
    cdef real[:, ::1] cols = cols_arr
    cdef Py_ssize_t n, c, ki, kj, oy, ox, iy, row, lo, hi, shift
    cdef real* dst
    cdef const real* src
    with nogil:
        for c in range(channels):
            for ki in range(k):
                for kj in range(k):
                    row = (c * k + ki) * k + kj
                    _valid_range(kj, pad, stride, width, out_w, &lo, &hi)
                    shift = kj - pad
                    for n in range(n_batch):
                        for oy in range(out_h):
                            iy = oy * stride + ki - pad
                            if iy < 0 or iy >= height:
                                continue
                            dst = &cols[row, n * plane + oy * out_w]
                            src = &x[n, c, iy, 0]
                            if stride == 1:
                                for ox in range(lo, hi):
                                    dst[ox] = src[ox + shift]
                            else:
                                for ox in range(lo, hi):
                                    dst[ox] = src[ox * stride + shift]
    return cols_arr


def col2im(const real[:, ::1] cols, int n_batch, int channels, int height, int width,
           int k, int stride, int pad):
    cdef Py_ssize_t out_h = (height + 2 * pad - k) // stride + 1
    cdef Py_ssize_t out_w = (width + 2 * pad - k) // stride + 1
    cdef Py_ssize_t plane = out_h * out_w
    dtype = np.float32 if real is float else np.float64
    x_arr = np.zeros((n_batch, channels, height, width), dtype=dtype)
    cdef real[:, :, :, ::1] x = x_arr
    cdef Py_ssize_t n, c, ki, kj, oy, ox, iy, row, lo, hi, shift
    cdef real* dst
    cdef const real* src
    with nogil:
        for c in range(channels):
            for ki in range(k):
                for kj in range(k):
                    row = (c * k + ki) * k + kj
                    _valid_range(kj, pad, stride, width, out_w, &lo, &hi)
                    shift = kj - pad
                    for n in range(n_batch):
                        for oy in range(out_h):
                            iy = oy * stride + ki - pad
                            if iy < 0 or iy >= height:
                                continue
                            src = &cols[row, n * plane + oy * out_w]
                            dst = &x[n, c, iy, 0]
                            if stride == 1:
                                for ox in range(lo, hi):
                                    dst[ox + shift] += src[ox]
                            else:
                                for ox in range(lo, hi):
                                    dst[ox * stride + shift] += src[ox]
    return x_arr
