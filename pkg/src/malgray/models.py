"""The network architectures: backbone + classifier head, and the scratch CNN."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import NUM_CLASSES
from .errors import DescriptorError, FeatureDimMismatch, NotATransferModel
from .ntc import check_names, read_ntc, write_ntc
from .tensor.graph import (
    BatchNormInference,
    Conv2d,
    Dense,
    Flatten,
    GlobalAvgPool,
    MaxPool2d,
    ModelGraph,
    Parameter,
    ReLU,
    ResidualAdd,
    Softmax,
    init_params,
)

HEAD_HIDDEN = 1024

# Scratch CNN channel plans, one tuple per pooling block.
SCRATCH_PLANS = {
    "paper": ((64, 64), (128, 128), (256, 256, 256), (512, 512, 512), (512, 512, 512)),
    "tiny": ((4, 4), (8, 8), (8, 8, 8), (8, 8, 8), (8, 8, 8)),
}
SCRATCH_INPUT = {"paper": 256, "tiny": 32}

TINY_BACKBONE = """\
# Reference backbone used by tests and demos.
name tiny
input 3 32 32
conv 3 16 3 3 1 1 1
relu
maxpool 2 2
conv 16 32 3 3 1 1 1
relu
maxpool 2 2
conv 32 64 3 3 1 1 1
relu
gap
"""


# -- descriptor text -----------------------------------------------------------

def _layer_line(spec) -> str:
    if isinstance(spec, Conv2d):
        return f"conv {spec.in_ch} {spec.out_ch} {spec.kh} {spec.kw} {spec.stride} {spec.padding} {spec.groups}"
    if isinstance(spec, MaxPool2d):
        return f"maxpool {spec.kernel} {spec.stride}"
    if isinstance(spec, BatchNormInference):
        return f"bn {spec.channels} {spec.epsilon!r}"
    if isinstance(spec, ResidualAdd):
        return f"resadd {spec.from_layer}"
    if isinstance(spec, Dense):
        return f"dense {spec.in_features} {spec.out_features}"
    return {ReLU: "relu", GlobalAvgPool: "gap", Flatten: "flatten", Softmax: "softmax"}[type(spec)]


_ARITY = {"conv": 7, "maxpool": 2, "relu": 0, "bn": 2, "resadd": 1, "gap": 0, "flatten": 0, "dense": 2,
          "softmax": 0}


def _parse_layer(word, args, lineno):
    if word not in _ARITY:
        raise DescriptorError(f"line {lineno}: unknown layer {word!r}")
    if len(args) != _ARITY[word]:
        raise DescriptorError(f"line {lineno}: {word} takes {_ARITY[word]} arguments, got {len(args)}")
    try:
        if word == "bn":
            return BatchNormInference(int(args[0]), float(args[1]))
        ints = [int(a) for a in args]
    except ValueError:
        raise DescriptorError(f"line {lineno}: non-numeric argument in {' '.join([word] + args)!r}") from None
    if word == "conv":
        return Conv2d(*ints)
    if word == "maxpool":
        return MaxPool2d(*ints)
    if word == "resadd":
        return ResidualAdd(*ints)
    if word == "dense":
        return Dense(*ints)
    return {"relu": ReLU, "gap": GlobalAvgPool, "flatten": Flatten, "softmax": Softmax}[word]()


def parse_layers(text: str):
    """Parse descriptor text into ``(name, input_shape, [(section, spec), ...])``.

    Besides layer lines, ``name <text>``, ``input <c> <h> <w>`` and
    ``section <label>`` directives are understood. Layers before any
    ``section`` line belong to ``backbone``.
    """
    name, input_shape, section, out = "", None, "backbone", []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        word, *args = line.split()
        word = word.lower()
        if word == "name":
            name = " ".join(args)
        elif word == "input":
            if len(args) != 3:
                raise DescriptorError(f"line {lineno}: input takes 3 arguments")
            input_shape = tuple(int(a) for a in args)
        elif word == "section":
            section = args[0]
        else:
            out.append((section, _parse_layer(word, args, lineno)))
    return name, input_shape, out


@dataclass
class BackboneDescriptor:
    """A feature extractor ending in ``gap`` or ``flatten`` (classifier removed)."""

    name: str
    layers: list
    input_shape: tuple
    pretrained_weights: Optional[str] = None

    def __post_init__(self):
        if not self.layers:
            raise DescriptorError("backbone has no layers")
        if any(isinstance(s, Softmax) for s in self.layers):
            raise DescriptorError("backbone must not contain softmax")
        if not isinstance(self.layers[-1], (GlobalAvgPool, Flatten)):
            raise DescriptorError("backbone must end in gap or flatten")

    @property
    def prefixes(self):
        return [f"backbone.{i}" for i in range(len(self.layers))]

    def feature_dim(self) -> int:
        probe = ModelGraph(self.name, self.input_shape, self.layers, self.blank_params(), self.prefixes)
        out = probe.output_shape
        return int(out[0])

    def blank_params(self, dtype=np.float32):
        return [{k: Parameter(np.zeros(s, dtype=dtype)) for k, s in getattr(spec, "param_shapes", dict)().items()}
                for spec in self.layers]

    def expected_shapes(self) -> dict:
        out = {}
        for prefix, spec in zip(self.prefixes, self.layers):
            for k, s in getattr(spec, "param_shapes", dict)().items():
                out[f"{prefix}.{k}"] = s
        return out

    @classmethod
    def parse(cls, text: str, name: str = "", pretrained_weights=None) -> "BackboneDescriptor":
        parsed_name, input_shape, layers = parse_layers(text)
        if input_shape is None:
            raise DescriptorError("descriptor needs an 'input c h w' line")
        return cls(parsed_name or name, [s for _, s in layers], input_shape, pretrained_weights)

    @classmethod
    def load(cls, path, pretrained_weights=None) -> "BackboneDescriptor":
        with open(path) as fh:
            stem = os.path.splitext(os.path.basename(os.fspath(path)))[0]
            return cls.parse(fh.read(), stem, pretrained_weights)


def tiny_backbone(input_hw: int = 32, channels: int = 3) -> BackboneDescriptor:
    text = TINY_BACKBONE.replace("input 3 32 32", f"input {channels} {input_hw} {input_hw}")
    text = text.replace("conv 3 16", f"conv {channels} 16")
    return BackboneDescriptor.parse(text)


def resolve_backbone(ref: str, weights: Optional[str] = None) -> BackboneDescriptor:
    """``"tiny"`` for the bundled backbone, otherwise a descriptor file path."""
    if ref == "tiny":
        bb = tiny_backbone()
        bb.pretrained_weights = weights
        return bb
    return BackboneDescriptor.load(ref, weights)


@dataclass(frozen=True)
class ClassifierHead:
    feature_dim: int
    hidden: int = HEAD_HIDDEN
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        if self.num_classes != NUM_CLASSES:
            raise ValueError(f"classifier head must have exactly {NUM_CLASSES} outputs")

    def layers(self):
        return [Dense(self.feature_dim, self.hidden), ReLU(), Dense(self.hidden, self.num_classes), Softmax()]


def load_ntc(path, descriptor) -> dict:
    """Read weights and check them against a descriptor's parameter names and shapes.

    ``descriptor`` is a :class:`BackboneDescriptor`, a :class:`ModelGraph`
    or a plain ``{name: shape}`` mapping.
    """
    if isinstance(descriptor, BackboneDescriptor):
        expected = descriptor.expected_shapes()
    elif isinstance(descriptor, ModelGraph):
        expected = {k: p.value.shape for k, p in descriptor.named_parameters()}
    else:
        expected = dict(descriptor)
    tensors = read_ntc(path)
    check_names(tensors, expected)
    return tensors


def save_ntc(graph, path, prefix: str = "") -> None:
    """Write a graph's parameters (optionally only names under ``prefix``)."""
    state = graph.state() if isinstance(graph, ModelGraph) else dict(graph)
    write_ntc({k: v for k, v in state.items() if k.startswith(prefix)}, path)


def assign_state(graph: ModelGraph, tensors: dict) -> None:
    for k, p in graph.named_parameters():
        if k in tensors:
            p.value = np.array(tensors[k], dtype=graph.dtype)
            p.grad = np.zeros_like(p.value)


def _build(name, input_shape, sections, seed, dtype, backbone_len=None):
    layers = [s for _, s in sections]
    prefixes, counters = [], {}
    for sec, _ in sections:
        prefixes.append(f"{sec}.{counters.get(sec, 0)}")
        counters[sec] = counters.get(sec, 0) + 1
    params = [init_params(s, p, seed, dtype) for s, p in zip(layers, prefixes)]
    return ModelGraph(name, tuple(input_shape), layers, params, prefixes, backbone_len=backbone_len, dtype=dtype)


def build_transfer_model(backbone: BackboneDescriptor, head: Optional[ClassifierHead] = None, seed: int = 0,
                         backbone_frozen: bool = True, dtype=np.float32) -> ModelGraph:
    """Backbone followed by Dense(1024) + ReLU + Dense(9) + Softmax.

    Backbone weights come from ``backbone.pretrained_weights`` when given,
    otherwise He-uniform like the head.
    """
    fdim = backbone.feature_dim()
    if head is None:
        head = ClassifierHead(fdim)
    if head.feature_dim != fdim:
        raise FeatureDimMismatch(f"backbone emits {fdim} features, head expects {head.feature_dim}")
    sections = [("backbone", s) for s in backbone.layers] + [("head", s) for s in head.layers()]
    graph = _build(f"transfer:{backbone.name}", backbone.input_shape, sections, seed, dtype,
                   backbone_len=len(backbone.layers))
    if backbone.pretrained_weights:
        assign_state(graph, load_ntc(backbone.pretrained_weights, backbone))
    graph.meta["protocol"] = "transfer"
    return set_frozen(graph, backbone_frozen)


def build_scratch_cnn(scale: str = "paper", in_channels: int = 1, seed: int = 0, dtype=np.float32) -> ModelGraph:
    """VGG-style network: 13 3x3 convs in 5 pooled blocks, then Dense(1024) + ReLU + Dense(9) + Softmax."""
    if scale not in SCRATCH_PLANS:
        raise ValueError(f"unknown scale {scale!r}")
    size = SCRATCH_INPUT[scale]
    sections, ch = [], in_channels
    for block in SCRATCH_PLANS[scale]:
        for out in block:
            sections += [("features", Conv2d(ch, out, 3, 3, 1, 1, 1)), ("features", ReLU())]
            ch = out
        sections.append(("features", MaxPool2d(2, 2)))
    side = size // 2 ** len(SCRATCH_PLANS[scale])
    sections.append(("features", Flatten()))
    sections += [("classifier", s) for s in ClassifierHead(ch * side * side).layers()]
    graph = _build(f"scratch:{scale}", (in_channels, size, size), sections, seed, dtype)
    graph.meta["protocol"] = "scratch"
    return graph


def set_frozen(graph: ModelGraph, backbone_frozen: bool) -> ModelGraph:
    """Mark backbone parameters non-trainable (or trainable); head stays trainable."""
    if graph.backbone_len is None:
        raise NotATransferModel(f"{graph.name} has no backbone section")
    for i, group in enumerate(graph.params):
        for k, p in group.items():
            if k in ("mean", "var"):
                p.trainable = False
            else:
                p.trainable = i >= graph.backbone_len or not backbone_frozen
    graph.meta["backbone_frozen"] = bool(backbone_frozen)
    return graph


def describe(graph: ModelGraph) -> str:
    """Full-graph descriptor text; :func:`graph_from_description` rebuilds the topology."""
    lines = [f"name {graph.name}", "input " + " ".join(str(d) for d in graph.input_shape)]
    current = None
    for prefix, spec in zip(graph.prefixes, graph.layers):
        sec = prefix.rsplit(".", 1)[0]
        if sec != current:
            lines.append(f"section {sec}")
            current = sec
        lines.append(_layer_line(spec))
    return "\n".join(lines) + "\n"


def graph_from_description(text: str, seed: int = 0, dtype=np.float32) -> ModelGraph:
    name, input_shape, sections = parse_layers(text)
    if input_shape is None:
        raise DescriptorError("model description lacks an input line")
    n_backbone = sum(1 for sec, _ in sections if sec == "backbone")
    graph = _build(name, input_shape, sections, seed, dtype, backbone_len=n_backbone or None)
    if n_backbone:
        graph.meta["protocol"] = "transfer"
        set_frozen(graph, False)
    else:
        graph.meta["protocol"] = "scratch"
    return graph
