"""Adam with bias-corrected moment estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingGradient


@dataclass
class AdamState:
    """Moments keyed by parameter name plus the shared step counter."""

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")

    def reset(self):
        self.t = 0
        self.m.clear()
        self.v.clear()

    def moments(self) -> dict:
        """Flat name -> array view, e.g. for serialisation."""
        out = {}
        for k in sorted(self.m):
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load_moments(self, tensors: dict):
        self.m = {k[2:]: np.array(a) for k, a in tensors.items() if k.startswith("m.")}
        self.v = {k[2:]: np.array(a) for k, a in tensors.items() if k.startswith("v.")}


def adam_step(params, state: AdamState) -> AdamState:
    """One Adam update over ``(name, Parameter)`` pairs; frozen parameters are skipped.

    ``t`` is incremented before bias correction, so the first call uses t=1.
    """
    params = list(params.named_parameters() if hasattr(params, "named_parameters") else params)
    live = [(k, p) for k, p in params if p.trainable]
    for k, p in live:
        if p.grad is None or p.grad.shape != p.value.shape:
            raise MissingGradient(f"no gradient for trainable parameter {k}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in live:
        g = p.grad
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p.value)
            state.v[k] = np.zeros_like(p.value)
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.value -= (state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.value.dtype, copy=False)
    return state
