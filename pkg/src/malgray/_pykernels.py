"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is missing or when
``MALGRAY_PURE_PYTHON=1``. Signatures and results match the extension.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """``(N, C, H, W)`` -> ``(N, C*kh*kw, OH*OW)``, channel-major rows."""
    n, c, h, w = x.shape
    oh, ow = out_size(h, kh, stride, pad), out_size(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    # (N, C, OH, OW, kh, kw) -> (N, C, kh, kw, OH, OW)
    cols = win.transpose(0, 1, 4, 5, 2, 3)
    return np.ascontiguousarray(cols).reshape(n, c * kh * kw, oh * ow)


def col2im(cols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    oh, ow = out_size(h, kh, stride, pad), out_size(w, kw, stride, pad)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dx)


def maxpool_forward(x, k, stride):
    """Window maxima plus flat ``H*W`` argmax; ties go to the first row-major hit."""
    n, c, h, w = x.shape
    oh, ow = (h - k) // stride + 1, (w - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    win = win.reshape(n, c, oh, ow, k * k)
    a = win.argmax(axis=-1)
    out = np.take_along_axis(win, a[..., None], axis=-1)[..., 0]
    rows = np.arange(oh)[:, None] * stride + a // k
    cols = np.arange(ow)[None, :] * stride + a % k
    return np.ascontiguousarray(out), (rows * w + cols).astype(np.int64)


def maxpool_backward(dout, argmax, x_shape):
    n, c, h, w = x_shape
    plane = h * w
    offs = (np.arange(n * c, dtype=np.int64) * plane).reshape(n, c, 1, 1)
    flat = np.bincount((argmax + offs).ravel(), weights=dout.ravel().astype(np.float64),
                       minlength=n * c * plane)
    return flat.astype(dout.dtype).reshape(x_shape)


def _axis_weights(src, dst):
    scale = src / dst
    s = (np.arange(dst, dtype=np.float64) + 0.5) * scale - 0.5
    s = np.clip(s, 0.0, src - 1)
    i0 = np.floor(s).astype(np.int64)
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, s - i0


def resize_bilinear(img, out_h, out_w):
    """Half-pixel-centre bilinear resize of a uint8 plane, rounding half away from zero."""
    h, w = img.shape
    y0, y1, wy = _axis_weights(h, out_h)
    x0, x1, wx = _axis_weights(w, out_w)
    src = img.astype(np.float64)
    wy = wy[:, None]
    top = (1.0 - wx) * src[y0][:, x0] + wx * src[y0][:, x1]
    bot = (1.0 - wx) * src[y1][:, x0] + wx * src[y1][:, x1]
    v = (1.0 - wy) * top + wy * bot
    return np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8)
