"""Forward and backward numerics for every layer type.

Arrays are numpy ``float32`` or ``float64``; activations are ``NCHW``.
Convolution goes through im2col + matmul in bounded-size chunks, with the
im2col/col2im and pooling loops taken from the selected kernel backend.
"""

import numpy as np

from .. import backend
from ..errors import LabelOutOfRange, NegativeVariance, NonFiniteInput, ShapeMismatch

# Upper bound on im2col elements materialised at once.
COL_BUDGET = 1 << 24


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _conv_check(x, w, stride, padding, groups):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4-D input and weights, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    if groups < 1 or c % groups or o % groups or cg * groups != c:
        raise ShapeMismatch(f"conv2d: {c} input channels, weight {w.shape}, groups={groups}")
    if stride < 1 or padding < 0:
        raise ShapeMismatch("conv2d: stride must be >= 1 and padding >= 0")
    oh, ow = conv_out_size(h, kh, stride, padding), conv_out_size(wd, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeMismatch(f"conv2d: kernel {kh}x{kw} does not fit input {h}x{wd} with pad {padding}")
    return n, c, o, kh, kw, oh, ow


def _chunks(n, per_sample):
    step = max(1, COL_BUDGET // max(per_sample, 1))
    for s in range(0, n, step):
        yield s, min(n, s + step)


def conv2d_forward(x, w, b, stride=1, padding=0, groups=1, kernels=None):
    """Cross-correlation of ``x (N,C,H,W)`` with ``w (O, C/groups, kh, kw)`` plus bias ``(O,)``."""
    k = kernels or backend.kernels
    n, c, o, kh, kw, oh, ow = _conv_check(x, w, stride, padding, groups)
    if b is not None and b.shape != (o,):
        raise ShapeMismatch(f"conv2d bias shape {b.shape}, expected ({o},)")
    L = oh * ow
    ck = (c // groups) * kh * kw
    wg = w.reshape(groups, o // groups, ck)
    out = np.empty((n, groups, o // groups, L), dtype=x.dtype)
    for s, e in _chunks(n, c * kh * kw * L):
        cols = k.im2col(np.ascontiguousarray(x[s:e]), kh, kw, stride, padding)
        np.matmul(wg, cols.reshape(e - s, groups, ck, L), out=out[s:e])
    out = out.reshape(n, o, oh, ow)
    if b is not None:
        out += b.reshape(1, o, 1, 1)
    return out


def conv2d_backward(dout, x, w, stride=1, padding=0, groups=1, need_dx=True, need_dw=True, kernels=None):
    """Returns ``(dx, dw, db)``; skipped parts come back as ``None``."""
    k = kernels or backend.kernels
    n, c, o, kh, kw, oh, ow = _conv_check(x, w, stride, padding, groups)
    L = oh * ow
    og, ck = o // groups, (c // groups) * kh * kw
    wg = w.reshape(groups, og, ck)
    d = dout.reshape(n, groups, og, L)
    db = dout.sum(axis=(0, 2, 3)) if need_dw else None
    dw = np.zeros((groups, og, ck), dtype=w.dtype) if need_dw else None
    dx = np.empty_like(x) if need_dx else None
    if not (need_dx or need_dw):
        return None, None, None
    wt = wg.transpose(0, 2, 1)
    for s, e in _chunks(n, c * kh * kw * L):
        m = e - s
        dc = d[s:e]
        if need_dw:
            cols = k.im2col(np.ascontiguousarray(x[s:e]), kh, kw, stride, padding).reshape(m, groups, ck, L)
            lhs = dc.transpose(1, 2, 0, 3).reshape(groups, og, m * L)
            rhs = cols.transpose(1, 0, 3, 2).reshape(groups, m * L, ck)
            dw += np.matmul(lhs, rhs)
        if need_dx:
            dcols = np.matmul(wt, dc).reshape(m, c * kh * kw, L)
            dx[s:e] = k.col2im(dcols, (m, c, x.shape[2], x.shape[3]), kh, kw, stride, padding)
    if need_dw:
        dw = dw.reshape(w.shape)
    return dx, dw, db


def conv2d_direct(x, w, b, stride=1, padding=0, groups=1):
    """Reference convolution by explicit window loops (slow; used to validate the fast path)."""
    n, c, o, kh, kw, oh, ow = _conv_check(x, w, stride, padding, groups)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cg, og = c // groups, o // groups
    out = np.zeros((n, o, oh, ow), dtype=x.dtype)
    for oc in range(o):
        g = oc // og
        for i in range(oh):
            for j in range(ow):
                win = xp[:, g * cg:(g + 1) * cg, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[:, oc, i, j] = (win * w[oc]).sum(axis=(1, 2, 3))
        if b is not None:
            out[:, oc] += b[oc]
    return out


def maxpool2d_forward(x, kernel, stride, kernels=None):
    """Window maxima and argmax (flat ``H*W`` index, first row-major maximum wins)."""
    if x.ndim != 4:
        raise ShapeMismatch(f"maxpool expects 4-D input, got {x.shape}")
    if kernel < 1 or stride < 1 or kernel > x.shape[2] or kernel > x.shape[3]:
        raise ShapeMismatch(f"maxpool kernel {kernel} does not fit input {x.shape[2:]}")
    k = kernels or backend.kernels
    return k.maxpool_forward(np.ascontiguousarray(x), kernel, stride)


def maxpool2d_backward(dout, argmax, x_shape, kernels=None):
    k = kernels or backend.kernels
    return k.maxpool_backward(np.ascontiguousarray(dout), argmax, tuple(x_shape))


def dense_forward(x, w, b):
    """Affine map ``x @ w + b`` with ``w`` of shape ``(D, K)``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatch(f"dense: input {x.shape}, weights {w.shape}, bias {b.shape}")
    return x @ w + b


def dense_backward(dout, x, w, need_dx=True, need_dw=True):
    dx = dout @ w.T if need_dx else None
    if need_dw:
        return dx, x.T @ dout, dout.sum(axis=0)
    return dx, None, None


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dout, x):
    return np.where(x > 0, dout, 0).astype(dout.dtype)


def _channel_view(v, ndim):
    return v.reshape((1, -1) + (1,) * (ndim - 2))


def batchnorm_inference(x, gamma, beta, mean, var, eps):
    """Per-channel ``gamma * (x - mean) / sqrt(var + eps) + beta`` on ``(N, C, ...)``."""
    c = x.shape[1] if x.ndim >= 2 else -1
    for name, v in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        if v.shape != (c,):
            raise ShapeMismatch(f"batchnorm {name} shape {v.shape}, expected ({c},)")
    if np.any(var < 0) or np.any(var + eps <= 0):
        raise NegativeVariance("batchnorm variance must be >= 0 with var + eps > 0")
    scale = gamma / np.sqrt(var + eps)
    shift = beta - mean * scale
    return x * _channel_view(scale, x.ndim) + _channel_view(shift, x.ndim)


def batchnorm_inference_backward(dout, x, gamma, mean, var, eps, need_dx=True, need_dw=True):
    """Returns ``(dx, dgamma, dbeta)``; running statistics receive no gradient."""
    inv = 1.0 / np.sqrt(var + eps)
    axes = (0,) + tuple(range(2, x.ndim))
    dx = dout * _channel_view(gamma * inv, x.ndim) if need_dx else None
    if not need_dw:
        return dx, None, None
    xhat = (x - _channel_view(mean, x.ndim)) * _channel_view(inv, x.ndim)
    return dx, (dout * xhat).sum(axis=axes).astype(x.dtype), dout.sum(axis=axes)


def residual_add(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"residual add of {a.shape} and {b.shape}")
    return a + b


def global_avg_pool(x):
    if x.ndim != 4:
        raise ShapeMismatch(f"global average pool expects 4-D input, got {x.shape}")
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(dout, x_shape):
    n, c, h, w = x_shape
    return np.broadcast_to((dout / (h * w))[:, :, None, None], x_shape).astype(dout.dtype)


def softmax(logits):
    """Row-wise softmax with max subtraction."""
    if logits.ndim != 2:
        raise ShapeMismatch(f"softmax expects (N, K), got {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInput("softmax received non-finite logits")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(dout, probs):
    """Vector-Jacobian product of softmax."""
    return probs * (dout - (dout * probs).sum(axis=1, keepdims=True))


def _check_labels(labels, n, k):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeMismatch(f"{labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    return labels.astype(np.int64)


def cross_entropy_loss(scores, labels, from_logits=True):
    """Mean negative log-likelihood of the true class.

    With ``from_logits`` the softmax is fused in (log-sum-exp) and the
    returned gradient is ``(softmax - onehot) / N`` w.r.t. the logits;
    otherwise ``scores`` are probabilities and the gradient is
    ``-onehot / (N * p)``. Returns ``(loss, grad)``.
    """
    if scores.ndim != 2:
        raise ShapeMismatch(f"cross entropy expects (N, K), got {scores.shape}")
    n, k = scores.shape
    labels = _check_labels(labels, n, k)
    rows = np.arange(n)
    s = scores.astype(np.float64)
    if from_logits:
        if not np.all(np.isfinite(s)):
            raise NonFiniteInput("cross entropy received non-finite logits")
        z = s - s.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        loss = float(np.mean(lse - z[rows, labels]))
        grad = np.exp(z - lse[:, None])
        grad[rows, labels] -= 1.0
    else:
        p = s[rows, labels]
        with np.errstate(divide="ignore"):
            loss = float(np.mean(-np.log(p)))
        grad = np.zeros_like(s)
        grad[rows, labels] = -1.0 / p
    return loss, (grad / n).astype(scores.dtype)
