# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _out(Py_ssize_t size, Py_ssize_t k, Py_ssize_t s, Py_ssize_t p) nogil:
    return (size + 2 * p - k) // s + 1


def _im2col(real[:, :, :, ::1] x, real[:, :, ::1] cols, Py_ssize_t kh, Py_ssize_t kw,
            Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = _out(h, kh, stride, pad), ow = _out(w, kw, stride, pad)
    cdef Py_ssize_t b, ch, i, j, r, q, row, iy, ix
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for r in range(oh):
                            iy = r * stride + i - pad
                            if iy < 0 or iy >= h:
                                for q in range(ow):
                                    cols[b, row, r * ow + q] = 0
                                continue
                            for q in range(ow):
                                ix = q * stride + j - pad
                                if ix < 0 or ix >= w:
                                    cols[b, row, r * ow + q] = 0
                                else:
                                    cols[b, row, r * ow + q] = x[b, ch, iy, ix]


def im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    oh, ow = _out(h, kh, stride, pad), _out(w, kw, stride, pad)
    x = np.ascontiguousarray(x)
    cols = np.empty((n, c * kh * kw, oh * ow), dtype=x.dtype)
    _im2col(x, cols, kh, kw, stride, pad)
    return cols


def _col2im(real[:, :, ::1] cols, real[:, :, :, ::1] dx, Py_ssize_t kh, Py_ssize_t kw,
            Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = dx.shape[0], c = dx.shape[1], h = dx.shape[2], w = dx.shape[3]
    cdef Py_ssize_t oh = _out(h, kh, stride, pad), ow = _out(w, kw, stride, pad)
    cdef Py_ssize_t b, ch, i, j, r, q, row, iy, ix
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for r in range(oh):
                            iy = r * stride + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            for q in range(ow):
                                ix = q * stride + j - pad
                                if ix >= 0 and ix < w:
                                    dx[b, ch, iy, ix] += cols[b, row, r * ow + q]


def col2im(cols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    oh, ow = _out(h, kh, stride, pad), _out(w, kw, stride, pad)
    cols = np.ascontiguousarray(cols).reshape(n, c * kh * kw, oh * ow)
    dx = np.zeros(x_shape, dtype=cols.dtype)
    _col2im(cols, dx, kh, kw, stride, pad)
    return dx


def _maxpool_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] out, cnp.int64_t[:, :, :, ::1] arg,
                     Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], w = x.shape[3]
    cdef Py_ssize_t oh = out.shape[2], ow = out.shape[3]
    cdef Py_ssize_t b, ch, r, q, i, j, iy, ix, best_i
    cdef real best, v
    with nogil:
        for b in range(n):
            for ch in range(c):
                for r in range(oh):
                    for q in range(ow):
                        iy = r * stride
                        ix = q * stride
                        best = x[b, ch, iy, ix]
                        best_i = iy * w + ix
                        for i in range(k):
                            for j in range(k):
                                v = x[b, ch, iy + i, ix + j]
                                if v > best:
                                    best = v
                                    best_i = (iy + i) * w + ix + j
                        out[b, ch, r, q] = best
                        arg[b, ch, r, q] = best_i


def maxpool_forward(x, k, stride):
    n, c, h, w = x.shape
    oh, ow = (h - k) // stride + 1, (w - k) // stride + 1
    x = np.ascontiguousarray(x)
    out = np.empty((n, c, oh, ow), dtype=x.dtype)
    arg = np.empty((n, c, oh, ow), dtype=np.int64)
    _maxpool_forward(x, out, arg, k, stride)
    return out, arg


def _maxpool_backward(real[:, :, :, ::1] dout, cnp.int64_t[:, :, :, ::1] arg, double[:, :, ::1] acc):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1], oh = dout.shape[2], ow = dout.shape[3]
    cdef Py_ssize_t b, ch, r, q
    with nogil:
        for b in range(n):
            for ch in range(c):
                for r in range(oh):
                    for q in range(ow):
                        acc[b, ch, arg[b, ch, r, q]] += dout[b, ch, r, q]


def maxpool_backward(dout, argmax, x_shape):
    n, c, h, w = x_shape
    acc = np.zeros((n, c, h * w), dtype=np.float64)
    _maxpool_backward(np.ascontiguousarray(dout), np.ascontiguousarray(argmax), acc)
    return acc.astype(dout.dtype).reshape(x_shape)


cdef void _axis(Py_ssize_t src, Py_ssize_t dst, Py_ssize_t[::1] i0, Py_ssize_t[::1] i1,
                double[::1] frac) nogil:
    cdef double scale = <double>src / <double>dst
    cdef double s
    cdef Py_ssize_t d
    for d in range(dst):
        s = (d + 0.5) * scale - 0.5
        if s < 0.0:
            s = 0.0
        if s > src - 1:
            s = src - 1
        i0[d] = <Py_ssize_t>floor(s)
        i1[d] = i0[d] + 1 if i0[d] + 1 < src else src - 1
        frac[d] = s - i0[d]


def resize_bilinear(const cnp.uint8_t[:, ::1] img, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], r, q
    cdef Py_ssize_t[::1] y0 = np.empty(out_h, dtype=np.intp), y1 = np.empty(out_h, dtype=np.intp)
    cdef Py_ssize_t[::1] x0 = np.empty(out_w, dtype=np.intp), x1 = np.empty(out_w, dtype=np.intp)
    cdef double[::1] wy = np.empty(out_h), wx = np.empty(out_w)
    out_arr = np.empty((out_h, out_w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef double top, bot, v, a, b
    with nogil:
        _axis(h, out_h, y0, y1, wy)
        _axis(w, out_w, x0, x1, wx)
        for r in range(out_h):
            for q in range(out_w):
                a = 1.0 - wx[q]
                b = wx[q]
                top = a * img[y0[r], x0[q]] + b * img[y0[r], x1[q]]
                bot = a * img[y1[r], x0[q]] + b * img[y1[r], x1[q]]
                v = floor((1.0 - wy[r]) * top + wy[r] * bot + 0.5)
                if v < 0:
                    v = 0
                if v > 255:
                    v = 255
                out[r, q] = <cnp.uint8_t>v
    return out_arr
