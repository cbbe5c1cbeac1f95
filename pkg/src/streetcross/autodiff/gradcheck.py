"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def grad(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. ``params``; unreachable ones come back as zeros."""
    for p in params:
        p.grad = None
    loss.backward()
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative error ``|a - n|_inf / max(|a|_inf, |n|_inf)`` (0 when both vanish)."""
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    diff = np.max(np.abs(analytic - numeric), initial=0.0)
    if scale < 1e-300:
        return diff
    return diff / scale


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def numeric_grad(fn: Callable[[], float], array: np.ndarray, h: float = 1e-5,
                 indices: Sequence[tuple[int, ...]] | None = None) -> np.ndarray:
    """Central differences of ``fn`` w.r.t. ``array`` (perturbed in place and restored).

    With ``indices`` only those coordinates are estimated; the rest stay 0.
    """
    out = np.zeros_like(array)
    it = indices if indices is not None else list(np.ndindex(array.shape))
    for idx in it:
        old = array[idx]
        array[idx] = old + h
        fp = fn()
        array[idx] = old - h
        fm = fn()
        array[idx] = old
        out[idx] = (fp - fm) / (2 * h)
    return out


def check_function(build: Callable[[list[Tensor]], Tensor], arrays: Sequence[np.ndarray],
                   h: float = 1e-5, max_coords: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Compare autodiff and central differences for ``build(tensors) -> scalar``.

    ``arrays`` are wrapped as leaf tensors that require grad. Returns the worst
    per-input relative error. ``max_coords`` subsamples coordinates per input.
    """
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    analytic = grad(build(tensors), tensors)

    def value() -> float:
        return float(build(tensors).data)

    worst = 0.0
    for t, ga in zip(tensors, analytic):
        idx = None
        if max_coords is not None and t.size > max_coords:
            rng = rng or np.random.default_rng(0)
            flat = rng.choice(t.size, size=max_coords, replace=False)
            idx = [np.unravel_index(i, t.shape) for i in flat]
            ga = np.array([ga[i] for i in idx])
            gn = numeric_grad(value, t.data, h, idx)
            gn = np.array([gn[i] for i in idx])
        else:
            gn = numeric_grad(value, t.data, h)
        worst = max(worst, relative_error(ga, gn))
    return worst


def check_parameters(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
                     max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Finite-difference check of ``loss_fn()`` w.r.t. existing parameter tensors."""
    analytic = grad(loss_fn(), params)

    def value() -> float:
        return float(loss_fn().data)

    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p, ga in zip(params, analytic):
        if max_coords is not None and p.size > max_coords:
            flat = rng.choice(p.size, size=max_coords, replace=False)
            idx = [np.unravel_index(i, p.shape) for i in flat]
        else:
            idx = list(np.ndindex(p.shape))
        gn = numeric_grad(value, p.data, h, idx)
        a = np.array([ga[i] for i in idx])
        n = np.array([gn[i] for i in idx])
        worst = max(worst, relative_error(a, n))
    return worst


def check_direction(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
                    rng: np.random.Generator | None = None) -> float:
    """Directional-derivative check along one random unit direction over all ``params``."""
    rng = rng or np.random.default_rng(0)
    analytic = grad(loss_fn(), params)
    dirs = [rng.standard_normal(p.shape) for p in params]
    norm = np.sqrt(sum(float(np.sum(d * d)) for d in dirs))
    dirs = [d / norm for d in dirs]
    a = sum(float(np.sum(g * d)) for g, d in zip(analytic, dirs))
    olds = [p.data.copy() for p in params]
    for p, d in zip(params, dirs):
        p.data += h * d
    fp = float(loss_fn().data)
    for p, o, d in zip(params, olds, dirs):
        p.data[...] = o - h * d
    fm = float(loss_fn().data)
    for p, o in zip(params, olds):
        p.data[...] = o
    n = (fp - fm) / (2 * h)
    return abs(a - n) / max(abs(a), abs(n), 1e-300)
