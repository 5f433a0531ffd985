"""Training protocols: two-phase transfer learning and from-scratch training."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .dataset import ImageLoader, Manifest, batches
from .errors import BadMagic, ConfigInvalid, IncompatibleConfig
from .evaluation import predict_manifest
from .models import describe, graph_from_description, set_frozen
from .ntc import decode_ntc, encode_ntc
from .optimizer import AdamState, adam_step
from .rng import derive_seed
from .tensor.graph import ModelGraph, loss_and_grad

log = logging.getLogger(__name__)

PROTOCOLS = ("transfer_two_phase", "scratch")
METRICS_HEADER = ("epoch", "phase", "train_loss", "train_acc", "test_acc", "wall_seconds")
CHECKPOINT_FILES = ("weights.ntc", "optimizer.ntc", "meta.csv", "model.desc")


@dataclass
class TrainConfig:
    protocol: str = "transfer_two_phase"
    phase1_epochs: int = 15
    phase1_lr: float = 0.01
    phase2_epochs: int = 10
    # The source gives "10e-5"; read as 1e-5.
    phase2_lr: float = 1e-5
    scratch_epochs: int = 25
    batch_size: int = 32
    seed: int = 0
    eval_every_epoch: bool = True
    reset_optimizer: bool = False
    record_wall_time: bool = True
    checkpoint_every_epoch: bool = False

    def validate(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigInvalid(f"unknown protocol {self.protocol!r}")
        for name in ("phase1_epochs", "phase2_epochs", "scratch_epochs"):
            if getattr(self, name) < 0:
                raise ConfigInvalid(f"{name} must be >= 0")
        for name in ("phase1_lr", "phase2_lr"):
            if not getattr(self, name) > 0:
                raise ConfigInvalid(f"{name} must be > 0")
        if self.batch_size < 1:
            raise ConfigInvalid("batch_size must be >= 1")
        return self

    @property
    def shuffle_seed(self) -> int:
        return derive_seed(self.seed, 1)


@dataclass
class EpochMetrics:
    epoch: int
    phase: str
    train_loss: float
    train_accuracy: float
    test_accuracy: float
    wall_seconds: float

    def row(self):
        f = lambda x: "nan" if math.isnan(x) else f"{x:.6g}"  # noqa: E731
        return [self.epoch, self.phase, f(self.train_loss), f(self.train_accuracy), f(self.test_accuracy),
                f(self.wall_seconds)]


def write_metrics(metrics: List[EpochMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for m in metrics:
            w.writerow(m.row())


def read_metrics(path) -> List[EpochMetrics]:
    with open(path, newline="") as fh:
        return [EpochMetrics(int(r["epoch"]), r["phase"], float(r["train_loss"]), float(r["train_acc"]),
                             float(r["test_acc"]), float(r["wall_seconds"])) for r in csv.DictReader(fh)]


@dataclass
class TrainingState:
    """Everything needed to continue a run: graph, optimizer and position."""

    graph: ModelGraph
    adam: AdamState
    epoch: int = 0
    phase: str = ""
    seed: int = 0
    metrics: list = field(default_factory=list)


# -- checkpoints ---------------------------------------------------------------

def checkpoint(graph: ModelGraph, adam: AdamState, cfg: TrainConfig, epoch: int, phase: str, path) -> str:
    """Write weights, optimizer moments, metadata and topology into directory ``path``."""
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "weights.ntc"), "wb") as fh:
        fh.write(encode_ntc(graph.state()))
    with open(os.path.join(path, "optimizer.ntc"), "wb") as fh:
        fh.write(encode_ntc(adam.moments()))
    frozen = graph.meta.get("backbone_frozen", "")
    with open(os.path.join(path, "meta.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "phase", "seed", "lr", "t", "beta1", "beta2", "epsilon", "batch_size",
                    "backbone_frozen"])
        w.writerow([epoch, phase, cfg.seed, repr(adam.lr), adam.t, repr(adam.beta1), repr(adam.beta2),
                    repr(adam.epsilon), cfg.batch_size, "" if frozen == "" else int(frozen)])
    with open(os.path.join(path, "model.desc"), "w") as fh:
        fh.write(describe(graph))
    return path


def restore(path, graph: Optional[ModelGraph] = None) -> TrainingState:
    """Load a checkpoint directory; ``graph``, if given, must have the saved topology."""
    for name in CHECKPOINT_FILES:
        if not os.path.isfile(os.path.join(path, name)):
            raise BadMagic(f"checkpoint {path} lacks {name}")
    with open(os.path.join(path, "model.desc")) as fh:
        desc = fh.read()
    if graph is None:
        graph = graph_from_description(desc)
    elif describe(graph) != desc:
        raise IncompatibleConfig(f"graph {graph.name} does not match the checkpoint topology")
    with open(os.path.join(path, "weights.ntc"), "rb") as fh:
        weights = decode_ntc(fh.read())
    expected = {k: p.value.shape for k, p in graph.named_parameters()}
    if set(weights) != set(expected) or any(weights[k].shape != s for k, s in expected.items()):
        raise IncompatibleConfig("checkpoint weights do not fit the graph")
    for k, p in graph.named_parameters():
        p.value = weights[k].astype(graph.dtype)
        p.grad = np.zeros_like(p.value)
    with open(os.path.join(path, "meta.csv"), newline="") as fh:
        meta = next(csv.DictReader(fh))
    adam = AdamState(lr=float(meta["lr"]), beta1=float(meta["beta1"]), beta2=float(meta["beta2"]),
                     epsilon=float(meta["epsilon"]), t=int(meta["t"]))
    with open(os.path.join(path, "optimizer.ntc"), "rb") as fh:
        adam.load_moments(decode_ntc(fh.read()))
    if meta.get("backbone_frozen", "") != "" and graph.backbone_len is not None:
        set_frozen(graph, bool(int(meta["backbone_frozen"])))
    return TrainingState(graph, adam, int(meta["epoch"]), meta["phase"], int(meta["seed"]))


# -- loops ---------------------------------------------------------------------

def default_loader(graph: ModelGraph) -> ImageLoader:
    return ImageLoader(input_shape=tuple(graph.input_shape), dtype=graph.dtype)


def run_epoch(graph: ModelGraph, adam: AdamState, train: Manifest, loader: Callable, cfg: TrainConfig,
              epoch_index: int):
    """One pass over ``train``; returns ``(mean loss, running accuracy)``."""
    total_loss, correct, seen = 0.0, 0, 0
    for batch in batches(train, cfg.batch_size, cfg.shuffle_seed, epoch_index, loader):
        graph.zero_grad()
        loss, probs = loss_and_grad(graph, batch.inputs, batch.labels)
        adam_step(graph, adam)
        n = len(batch.labels)
        total_loss += loss * n
        correct += int((probs.argmax(axis=1) == batch.labels).sum())
        seen += n
    return total_loss / seen, correct / seen


def run_phase(state: TrainingState, train: Manifest, test: Manifest, cfg: TrainConfig, phase: str, epochs: int,
              lr: float, loader: Callable, checkpoint_dir=None, on_epoch=None) -> TrainingState:
    state.adam.lr = lr
    state.phase = phase
    for _ in range(epochs):
        start = time.perf_counter()
        loss, acc = run_epoch(state.graph, state.adam, train, loader, cfg, state.epoch)
        state.epoch += 1
        test_acc = math.nan
        if cfg.eval_every_epoch and len(test):
            truth, pred = predict_manifest(state.graph, test, loader, cfg.batch_size)
            test_acc = float((truth == pred).mean())
        wall = time.perf_counter() - start if cfg.record_wall_time else 0.0
        m = EpochMetrics(state.epoch, phase, loss, acc, test_acc, wall)
        state.metrics.append(m)
        log.info("epoch %d (%s) loss %.4f train_acc %.4f test_acc %.4f", m.epoch, phase, loss, acc, test_acc)
        if checkpoint_dir and cfg.checkpoint_every_epoch:
            checkpoint(state.graph, state.adam, cfg, state.epoch, phase,
                       os.path.join(checkpoint_dir, f"epoch_{state.epoch:03d}"))
        if on_epoch is not None:
            on_epoch(state, m)
    if checkpoint_dir:
        checkpoint(state.graph, state.adam, cfg, state.epoch, phase, os.path.join(checkpoint_dir, _phase_name(phase)))
    return state


def _phase_name(p: str) -> str:
    return {"1": "phase1", "2": "phase2"}.get(p, p)


def train_transfer_two_phase(graph: ModelGraph, train: Manifest, test: Manifest, cfg: TrainConfig,
                             loader: Optional[Callable] = None, checkpoint_dir=None, on_epoch=None):
    """Phase 1 trains the head on a frozen backbone; phase 2 fine-tunes everything.

    Phase 2 starts from the phase-1 weights and, unless
    ``cfg.reset_optimizer``, from the phase-1 Adam moments and step count.
    Returns ``(graph, metrics)``; metric phases are ``"1"`` and ``"2"``.
    """
    cfg.validate()
    if cfg.protocol != "transfer_two_phase":
        raise ConfigInvalid("train_transfer_two_phase needs protocol transfer_two_phase")
    loader = loader or default_loader(graph)
    state = TrainingState(graph, AdamState(lr=cfg.phase1_lr), seed=cfg.seed)
    set_frozen(graph, True)
    run_phase(state, train, test, cfg, "1", cfg.phase1_epochs, cfg.phase1_lr, loader,
              _sub(checkpoint_dir), on_epoch)
    set_frozen(graph, False)
    if cfg.reset_optimizer:
        state.adam.reset()
    run_phase(state, train, test, cfg, "2", cfg.phase2_epochs, cfg.phase2_lr, loader,
              _sub(checkpoint_dir), on_epoch)
    return graph, state.metrics


def train_scratch(graph: ModelGraph, train: Manifest, test: Manifest, cfg: TrainConfig,
                  loader: Optional[Callable] = None, checkpoint_dir=None, on_epoch=None):
    """Single phase at ``phase1_lr`` for ``scratch_epochs`` epochs."""
    cfg.validate()
    loader = loader or default_loader(graph)
    state = TrainingState(graph, AdamState(lr=cfg.phase1_lr), seed=cfg.seed)
    run_phase(state, train, test, cfg, "scratch", cfg.scratch_epochs, cfg.phase1_lr, loader,
              _sub(checkpoint_dir), on_epoch)
    return graph, state.metrics


def resume(path, train: Manifest, test: Manifest, cfg: TrainConfig, epochs: int, graph=None,
           loader: Optional[Callable] = None, checkpoint_dir=None) -> TrainingState:
    """Continue a checkpointed run for ``epochs`` more epochs in the saved phase at the saved rate."""
    state = restore(path, graph)
    if state.seed != cfg.seed:
        raise IncompatibleConfig(f"checkpoint seed {state.seed} differs from config seed {cfg.seed}")
    loader = loader or default_loader(state.graph)
    return run_phase(state, train, test, cfg, state.phase, epochs, state.adam.lr, loader, checkpoint_dir)


def _sub(checkpoint_dir):
    return os.fspath(checkpoint_dir) if checkpoint_dir else None


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
