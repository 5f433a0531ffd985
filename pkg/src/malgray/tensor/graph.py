"""Layer vocabulary, model graphs and reverse-mode differentiation over them."""

from __future__ import annotations

import copy
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ShapeMismatch
from ..rng import derive_seed
from . import ops


# -- layer specs ---------------------------------------------------------------
# ``out_shape`` works on per-sample shapes (no batch axis).

@dataclass(frozen=True)
class Conv2d:
    in_ch: int
    out_ch: int
    kh: int = 3
    kw: int = 3
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def out_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.in_ch:
            raise ShapeMismatch(f"{self} got input {shape}")
        if self.in_ch % self.groups or self.out_ch % self.groups:
            raise ShapeMismatch(f"{self}: channels not divisible by groups")
        oh = ops.conv_out_size(shape[1], self.kh, self.stride, self.padding)
        ow = ops.conv_out_size(shape[2], self.kw, self.stride, self.padding)
        if oh < 1 or ow < 1:
            raise ShapeMismatch(f"{self} does not fit input {shape}")
        return (self.out_ch, oh, ow)

    def param_shapes(self):
        return {"weight": (self.out_ch, self.in_ch // self.groups, self.kh, self.kw), "bias": (self.out_ch,)}

    @property
    def fan_in(self):
        return self.in_ch // self.groups * self.kh * self.kw


@dataclass(frozen=True)
class MaxPool2d:
    kernel: int = 2
    stride: int = 2

    def out_shape(self, shape):
        if len(shape) != 3 or self.kernel > shape[1] or self.kernel > shape[2]:
            raise ShapeMismatch(f"{self} does not fit input {shape}")
        return (shape[0], (shape[1] - self.kernel) // self.stride + 1, (shape[2] - self.kernel) // self.stride + 1)


@dataclass(frozen=True)
class GlobalAvgPool:
    def out_shape(self, shape):
        if len(shape) != 3:
            raise ShapeMismatch(f"global average pool needs (C, H, W), got {shape}")
        return (shape[0],)


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int

    def out_shape(self, shape):
        if tuple(shape) != (self.in_features,):
            raise ShapeMismatch(f"{self} got input {shape}")
        return (self.out_features,)

    def param_shapes(self):
        return {"weight": (self.in_features, self.out_features), "bias": (self.out_features,)}

    @property
    def fan_in(self):
        return self.in_features


@dataclass(frozen=True)
class ReLU:
    def out_shape(self, shape):
        return tuple(shape)


@dataclass(frozen=True)
class BatchNormInference:
    channels: int
    epsilon: float = 1e-3

    def out_shape(self, shape):
        if len(shape) < 1 or shape[0] != self.channels:
            raise ShapeMismatch(f"{self} got input {shape}")
        return tuple(shape)

    def param_shapes(self):
        c = (self.channels,)
        return {"gamma": c, "beta": c, "mean": c, "var": c}


@dataclass(frozen=True)
class ResidualAdd:
    """Adds the output of layer ``from_layer`` (``-1`` = graph input) to the running activation."""

    from_layer: int

    def out_shape(self, shape):
        return tuple(shape)


@dataclass(frozen=True)
class Flatten:
    def out_shape(self, shape):
        return (int(np.prod(shape)),)


@dataclass(frozen=True)
class Softmax:
    def out_shape(self, shape):
        if len(shape) != 1:
            raise ShapeMismatch(f"softmax needs a feature vector, got {shape}")
        return tuple(shape)


LayerSpec = (Conv2d, MaxPool2d, GlobalAvgPool, Dense, ReLU, BatchNormInference, ResidualAdd, Flatten, Softmax)
NON_TRAINABLE = {"mean", "var"}


# -- parameters and graphs -----------------------------------------------------

class Parameter:
    """A value with a same-shaped gradient buffer and a trainable flag."""

    __slots__ = ("value", "grad", "trainable")

    def __init__(self, value: np.ndarray, trainable: bool = True):
        self.value = value
        self.grad = np.zeros_like(value)
        self.trainable = trainable

    def __repr__(self):
        return f"Parameter(shape={self.value.shape}, trainable={self.trainable})"


def he_uniform(shape, fan_in, seed, name, dtype=np.float32):
    """He-uniform draw in ``[-sqrt(6/fan_in), sqrt(6/fan_in)]``.

    Values come from numpy's PCG64 seeded with a SplitMix64-derived seed
    of ``(seed, crc32(name))``, so each tensor's init depends only on the
    run seed and its own name.
    """
    bound = math.sqrt(6.0 / fan_in)
    gen = np.random.Generator(np.random.PCG64(derive_seed(seed, zlib.crc32(name.encode()))))
    return gen.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(spec, prefix: str, seed: int, dtype=np.float32) -> dict:
    if not hasattr(spec, "param_shapes"):
        return {}
    shapes = spec.param_shapes()
    if isinstance(spec, BatchNormInference):
        vals = {"gamma": np.ones, "beta": np.zeros, "mean": np.zeros, "var": np.ones}
        return {k: Parameter(vals[k](s, dtype=dtype), trainable=k not in NON_TRAINABLE)
                for k, s in shapes.items()}
    return {
        "weight": Parameter(he_uniform(shapes["weight"], spec.fan_in, seed, f"{prefix}.weight", dtype)),
        "bias": Parameter(np.zeros(shapes["bias"], dtype=dtype)),
    }


@dataclass
class ModelGraph:
    """An ordered layer list with per-layer parameters.

    ``prefixes[i]`` names layer ``i`` (e.g. ``"backbone.3"``); parameters are
    addressed as ``"<prefix>.<param>"``. ``backbone_len`` is set for
    transfer models and counts the leading backbone layers.
    """

    name: str
    input_shape: tuple
    layers: list
    params: list
    prefixes: list
    backbone_len: Optional[int] = None
    dtype: object = np.float32
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.shape_check()

    def shape_check(self) -> list:
        """Per-sample output shape of every layer; raises ShapeMismatch on the first bad link."""
        shapes = []
        shape = tuple(self.input_shape)
        for i, spec in enumerate(self.layers):
            if isinstance(spec, ResidualAdd):
                if not -1 <= spec.from_layer < i:
                    raise ShapeMismatch(f"layer {i}: residual source {spec.from_layer} is not an earlier layer")
                src = tuple(self.input_shape) if spec.from_layer == -1 else shapes[spec.from_layer]
                if src != shape:
                    raise ShapeMismatch(f"layer {i}: residual shapes {src} and {shape} differ")
            try:
                shape = spec.out_shape(shape)
            except ShapeMismatch as exc:
                raise ShapeMismatch(f"layer {i} ({self.prefixes[i]}): {exc}") from None
            for pname, pshape in getattr(spec, "param_shapes", dict)().items():
                got = self.params[i][pname].value.shape
                if got != pshape:
                    raise ShapeMismatch(f"{self.prefixes[i]}.{pname}: shape {got}, expected {pshape}")
            shapes.append(shape)
        return shapes

    @property
    def output_shape(self):
        return self.shape_check()[-1]

    def named_parameters(self):
        for prefix, group in zip(self.prefixes, self.params):
            for pname, p in group.items():
                yield f"{prefix}.{pname}", p

    def state(self) -> dict:
        return {k: p.value for k, p in self.named_parameters()}

    def parameter_count(self, trainable_only=False) -> int:
        return sum(p.value.size for _, p in self.named_parameters() if p.trainable or not trainable_only)

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.grad[...] = 0

    def copy(self) -> "ModelGraph":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "ModelGraph":
        g = self.copy()
        g.dtype = dtype
        for _, p in g.named_parameters():
            p.value = p.value.astype(dtype)
            p.grad = np.zeros_like(p.value)
        return g


# -- forward / backward --------------------------------------------------------

@dataclass
class Tape:
    """Everything backward needs from one forward pass."""

    inputs: list
    caches: list
    saved: dict
    stop: int


def forward(graph: ModelGraph, x: np.ndarray, stop: Optional[int] = None, kernels=None):
    """Run layers ``[0, stop)``; returns ``(output, tape)``."""
    stop = len(graph.layers) if stop is None else stop
    x = np.asarray(x, dtype=graph.dtype)
    if x.shape[1:] != tuple(graph.input_shape):
        raise ShapeMismatch(f"input {x.shape[1:]} does not match graph input {tuple(graph.input_shape)}")
    wanted = {s.from_layer for s in graph.layers if isinstance(s, ResidualAdd)}
    saved = {-1: x} if -1 in wanted else {}
    inputs, caches = [], []
    for i in range(stop):
        spec, p = graph.layers[i], graph.params[i]
        inputs.append(x)
        cache = None
        if isinstance(spec, Conv2d):
            x = ops.conv2d_forward(x, p["weight"].value, p["bias"].value, spec.stride, spec.padding,
                                   spec.groups, kernels=kernels)
        elif isinstance(spec, MaxPool2d):
            x, cache = ops.maxpool2d_forward(x, spec.kernel, spec.stride, kernels=kernels)
        elif isinstance(spec, Dense):
            x = ops.dense_forward(x, p["weight"].value, p["bias"].value)
        elif isinstance(spec, ReLU):
            x = ops.relu(x)
        elif isinstance(spec, BatchNormInference):
            x = ops.batchnorm_inference(x, p["gamma"].value, p["beta"].value, p["mean"].value,
                                        p["var"].value, spec.epsilon)
        elif isinstance(spec, ResidualAdd):
            x = ops.residual_add(x, saved[spec.from_layer])
        elif isinstance(spec, GlobalAvgPool):
            x = ops.global_avg_pool(x)
        elif isinstance(spec, Flatten):
            x = x.reshape(x.shape[0], -1)
        elif isinstance(spec, Softmax):
            x = ops.softmax(x)
            cache = x
        else:
            raise TypeError(f"unknown layer {spec!r}")
        caches.append(cache)
        if i in wanted:
            saved[i] = x
    return x, Tape(inputs, caches, saved, stop)


def _first_trainable(graph: ModelGraph, stop: int) -> int:
    for i in range(stop):
        if any(p.trainable for p in graph.params[i].values()):
            return i
    return stop


def backward(graph: ModelGraph, tape: Tape, dout: np.ndarray, need_input_grad=False, kernels=None):
    """Accumulate parameter gradients into ``Parameter.grad`` for trainable parameters.

    Walks the tape in reverse. Gradients are only propagated as far down as
    the lowest trainable layer unless ``need_input_grad`` is set. Returns
    the gradient w.r.t. the graph input, or ``None``.
    """
    first = 0 if need_input_grad else _first_trainable(graph, tape.stop)
    pending = {}
    d = dout
    for i in range(tape.stop - 1, first - 1, -1):
        if i in pending:
            d = d + pending.pop(i)
        spec, p, x = graph.layers[i], graph.params[i], tape.inputs[i]
        need_dx = i > first or need_input_grad
        if isinstance(spec, Conv2d):
            train = p["weight"].trainable or p["bias"].trainable
            dx, dw, db = ops.conv2d_backward(d, x, p["weight"].value, spec.stride, spec.padding, spec.groups,
                                             need_dx=need_dx, need_dw=train, kernels=kernels)
            if train:
                _acc(p["weight"], dw)
                _acc(p["bias"], db)
            d = dx
        elif isinstance(spec, MaxPool2d):
            d = ops.maxpool2d_backward(d, tape.caches[i], x.shape, kernels=kernels) if need_dx else None
        elif isinstance(spec, Dense):
            train = p["weight"].trainable or p["bias"].trainable
            dx, dw, db = ops.dense_backward(d, x, p["weight"].value, need_dx=need_dx, need_dw=train)
            if train:
                _acc(p["weight"], dw)
                _acc(p["bias"], db)
            d = dx
        elif isinstance(spec, ReLU):
            d = ops.relu_backward(d, x) if need_dx else None
        elif isinstance(spec, BatchNormInference):
            train = p["gamma"].trainable or p["beta"].trainable
            dx, dg, dbeta = ops.batchnorm_inference_backward(
                d, x, p["gamma"].value, p["mean"].value, p["var"].value, spec.epsilon,
                need_dx=need_dx, need_dw=train)
            if train:
                _acc(p["gamma"], dg)
                _acc(p["beta"], dbeta)
            d = dx
        elif isinstance(spec, ResidualAdd):
            src = spec.from_layer
            if src >= first or (src == -1 and need_input_grad):
                pending[src] = pending.get(src, 0) + d
        elif isinstance(spec, GlobalAvgPool):
            d = ops.global_avg_pool_backward(d, x.shape) if need_dx else None
        elif isinstance(spec, Flatten):
            d = d.reshape(x.shape) if need_dx else None
        elif isinstance(spec, Softmax):
            d = ops.softmax_backward(d, tape.caches[i]) if need_dx else None
        if d is None:
            return None
    if need_input_grad:
        if -1 in pending:
            d = d + pending.pop(-1)
        return d
    return None


def _acc(param: Parameter, g):
    if param.trainable:
        param.grad += g.astype(param.grad.dtype, copy=False)


def loss_and_grad(graph: ModelGraph, x, labels, kernels=None):
    """Softmax cross-entropy loss and parameter gradients (accumulated).

    A terminal Softmax layer is fused into the loss; returns
    ``(loss, probabilities)``.
    """
    fused = isinstance(graph.layers[-1], Softmax)
    stop = len(graph.layers) - 1 if fused else len(graph.layers)
    out, tape = forward(graph, x, stop=stop, kernels=kernels)
    loss, dlogits = ops.cross_entropy_loss(out, labels, from_logits=fused)
    backward(graph, tape, dlogits, kernels=kernels)
    probs = ops.softmax(out) if fused else out
    return loss, probs


def predict_proba(graph: ModelGraph, x, batch_size: int = 64, kernels=None) -> np.ndarray:
    outs = [forward(graph, x[s:s + batch_size], kernels=kernels)[0] for s in range(0, len(x), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0,) + graph.output_shape, dtype=graph.dtype)


def gradient_check(graph: ModelGraph, x, labels, step: float = 1e-5) -> float:
    """Largest relative disagreement between backward and central differences.

    Runs on a float64 copy of ``graph``. For every trainable parameter
    element, ``n = (f(t+h) - f(t-h)) / 2h`` is compared with the analytic
    gradient ``a`` as ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    g = graph.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    g.zero_grad()
    loss_and_grad(g, x, labels)
    fused = isinstance(g.layers[-1], Softmax)
    stop = len(g.layers) - 1 if fused else None

    def f():
        out, _ = forward(g, x, stop=stop)
        return ops.cross_entropy_loss(out, labels, from_logits=fused)[0]

    worst = 0.0
    for _, p in g.named_parameters():
        if not p.trainable:
            continue
        flat = p.value.reshape(-1)
        analytic = p.grad.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            fp = f()
            flat[j] = orig - step
            fm = f()
            flat[j] = orig
            num = (fp - fm) / (2 * step)
            a = analytic[j]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
    return worst
