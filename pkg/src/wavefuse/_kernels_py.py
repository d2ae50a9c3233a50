"""Pure-numpy patch gather/scatter, used when the compiled module is absent."""
import numpy as np


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def im2col(x, k, stride, pad):
    n_batch, channels, height, width = x.shape
    out_h = _out_size(height, k, stride, pad)
    out_w = _out_size(width, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))).transpose(1, 0, 2, 3)
    cols = np.empty((channels, k, k, n_batch, out_h, out_w), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, ki, kj] = xp[:, :, ki:ki + stride * out_h:stride,
                                 kj:kj + stride * out_w:stride]
    return cols.reshape(channels * k * k, n_batch * out_h * out_w)


def col2im(cols, n_batch, channels, height, width, k, stride, pad):
    out_h = _out_size(height, k, stride, pad)
    out_w = _out_size(width, k, stride, pad)
    cols = cols.reshape(channels, k, k, n_batch, out_h, out_w)
    xp = np.zeros((channels, n_batch, height + 2 * pad, width + 2 * pad), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki:ki + stride * out_h:stride,
               kj:kj + stride * out_w:stride] += cols[:, ki, kj]
    return np.ascontiguousarray(xp[:, :, pad:pad + height, pad:pad + width].transpose(1, 0, 2, 3))
