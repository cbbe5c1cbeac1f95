"""Adam and momentum SGD over lists of parameter tensors, plus global-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_global_norm(grads: list[np.ndarray], max_norm: float = 10.0) -> list[np.ndarray]:
    """Rescale all gradients by ``max_norm / g`` when their joint L2 norm ``g`` exceeds it."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    g = global_norm(grads)
    if g <= max_norm:
        return list(grads)
    scale = max_norm / g
    return [gr * scale for gr in grads]


@dataclass
class OptimizerState:
    kind: str  # "adam" | "sgd"
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    decay_end_factor: float | None = None  # None disables the polynomial schedule
    decay_steps: int = 1
    decay_power: float = 1.0
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def current_lr(self) -> float:
        if self.kind != "sgd" or self.decay_end_factor is None:
            return self.lr
        frac = min(self.step / max(self.decay_steps, 1), 1.0)
        return self.lr * (1.0 - (1.0 - self.decay_end_factor) * frac) ** self.decay_power


def adam(lr: float = 5e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    return OptimizerState("adam", lr, beta1=beta1, beta2=beta2, eps=eps)


def sgd(lr: float = 4e-3, momentum: float = 0.9, decay_end_factor: float | None = 2e-4 / 4e-3,
        decay_steps: int = 1, decay_power: float = 1.0) -> OptimizerState:
    return OptimizerState("sgd", lr, momentum=momentum, decay_end_factor=decay_end_factor,
                          decay_steps=decay_steps, decay_power=decay_power)


def optimizer_step(state: OptimizerState, params: list[Tensor], grads: list[np.ndarray]) -> None:
    """Apply one in-place update to ``params``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        if state.kind == "adam":
            state.v = [np.zeros_like(p.data) for p in params]
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or m.shape != g.shape:
            raise ValueError(f"shape mismatch for {p.name or 'parameter'}: {p.shape} vs {g.shape}")
    lr = state.current_lr()
    state.step += 1
    if state.kind == "adam":
        b1, b2 = state.beta1, state.beta2
        c1 = 1.0 - b1**state.step
        c2 = 1.0 - b2**state.step
        for p, g, m, v in zip(params, grads, state.m, state.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    elif state.kind == "sgd":
        for p, g, buf in zip(params, grads, state.m):
            buf *= state.momentum
            buf += g
            p.data -= lr * buf
    else:
        raise ValueError(f"unknown optimizer kind {state.kind!r}")
