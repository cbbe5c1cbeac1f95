"""Finite-difference verification suite over every differentiable op and model.

Each op is checked on ``cases`` random instances (random shapes and values);
non-scalar outputs are reduced with a fixed random weighting so the check
covers a full vector-Jacobian product. Models are checked at toy scale on
sampled parameter coordinates plus one random direction per case.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import attenet as tl
from . import fusion
from . import iatcnn as mp
from .autodiff import (
    BatchNormState,
    Tensor,
    batchnorm,
    bce_with_logits,
    causal_conv1d,
    check_direction,
    check_function,
    check_parameters,
    concat,
    conv2d,
    dense,
    dropout,
    elu,
    exp,
    global_avg_pool,
    log,
    relu,
    safe_norm,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    sqrt,
    square,
    stack,
    tanh,
)


@dataclass
class SuiteEntry:
    name: str
    cases: int
    max_rel_error: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def _weighted(out: Tensor, rng: np.random.Generator) -> Tensor:
    w = rng.standard_normal(out.shape)
    return (out * w).sum()


def _away_from(x: np.ndarray, kinks=(0.0,), gap: float = 1e-3) -> np.ndarray:
    """Push entries at least ``gap`` away from non-differentiable points."""
    for k in kinks:
        close = np.abs(x - k) < gap
        x = np.where(close, k + np.sign(x - k + 1e-300) * gap * 2, x)
    return x


# every builder: rng -> (arrays, fn(tensors) -> output Tensor)
def _unary(f, positive=False, kink=False):
    def make(rng):
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
        x = rng.uniform(0.2, 3.0, shape) if positive else rng.standard_normal(shape)
        if kink:
            x = _away_from(x)
        return [x], lambda t: f(t[0])
    return make


def _binary(f, nonzero_b=False):
    def make(rng):
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
        bshape = tuple(1 if rng.random() < 0.3 else n for n in shape)  # broadcasting
        b = rng.standard_normal(bshape)
        if nonzero_b:
            b = np.where(np.abs(b) < 0.3, 0.3 * np.sign(b + 1e-300), b)
        return [rng.standard_normal(shape), b], lambda t: f(t[0], t[1])
    return make


def _matmul(rng):
    n, k, m = rng.integers(1, 6, 3)
    batch = tuple(rng.integers(1, 3, size=rng.integers(0, 2)))
    return [rng.standard_normal(batch + (n, k)), rng.standard_normal((k, m))], lambda t: t[0] @ t[1]


def _reduce(kind):
    def make(rng):
        shape = tuple(rng.integers(1, 5, size=3))
        axis = [None, 0, 1, 2, (0, 2)][rng.integers(5)]
        keep = bool(rng.integers(2))
        f = (lambda t: t[0].sum(axis=axis, keepdims=keep)) if kind == "sum" else \
            (lambda t: t[0].mean(axis=axis, keepdims=keep))
        return [rng.standard_normal(shape)], f
    return make


def _reshape(rng):
    shape = (int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    return [rng.standard_normal(shape)], lambda t: t[0].reshape(shape[0], -1).transpose(1, 0)


def _getitem(rng):
    x = rng.standard_normal((5, 4))
    if rng.random() < 0.5:
        return [x], lambda t: t[0][1:4, ::2]
    idx = rng.integers(0, 5, 6)  # repeated indices accumulate
    return [x], lambda t: t[0][idx]


def _concat(rng):
    axis = int(rng.integers(0, 2))
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((int(rng.integers(1, 4)), 3) if axis == 0 else (2, int(rng.integers(1, 4))))
    return [a, b], lambda t: concat([t[0], t[1]], axis=axis)


def _stack(rng):
    return [rng.standard_normal((3, 2)), rng.standard_normal((3, 2))], lambda t: stack([t[0], t[1]], axis=1)


def _safe_norm(rng):
    x = rng.standard_normal((int(rng.integers(1, 5)), 3))
    return [x], lambda t: safe_norm(t[0], axis=-1)


def _dense(rng):
    b, i, o = rng.integers(1, 5, 3)
    return ([rng.standard_normal((b, i)), rng.standard_normal((i, o)), rng.standard_normal(o)],
            lambda t: dense(t[0], t[1], t[2]))


def _conv1d(rng):
    B, C, O, K, T = (int(v) for v in (rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4),
                                      rng.integers(1, 5), rng.integers(2, 9)))
    d = int(rng.integers(1, 4))
    return ([rng.standard_normal((B, C, T)), rng.standard_normal((O, C, K))],
            lambda t: causal_conv1d(t[0], t[1], dilation=d))


def _conv2d(rng):
    B, C, O = (int(v) for v in rng.integers(1, 4, 3))
    k = int(rng.choice([1, 3]))
    s = int(rng.choice([1, 2]))
    H = int(rng.integers(3, 7))
    return ([rng.standard_normal((B, C, H, H)), rng.standard_normal((O, C, k, k))],
            lambda t: conv2d(t[0], t[1], stride=s))


def _pool(rng):
    return [rng.standard_normal((2, 3, 4, 4))], lambda t: global_avg_pool(t[0])


def _batchnorm(rng):
    C = int(rng.integers(1, 4))
    shape = (int(rng.integers(2, 5)), C) + ((3, 3) if rng.random() < 0.5 else ())
    state = BatchNormState.fresh(C)
    return ([rng.standard_normal(shape), rng.uniform(0.5, 1.5, C), rng.standard_normal(C)],
            lambda t: batchnorm(t[0], t[1], t[2], state, train=True))


def _dropout(rng):
    seed = int(rng.integers(1 << 30))
    return [rng.standard_normal((3, 5))], lambda t: dropout(t[0], 0.3, seed, train=True)


def _softmax(rng):
    return [rng.standard_normal((int(rng.integers(1, 4)), int(rng.integers(2, 5))))], lambda t: softmax(t[0])


def _ce(rng):
    B, K = int(rng.integers(1, 5)), int(rng.integers(2, 5))
    y = rng.integers(0, K, B)
    return [3 * rng.standard_normal((B, K))], lambda t: softmax_cross_entropy(t[0], y)


def _bce(rng):
    shape = (int(rng.integers(1, 5)), int(rng.integers(1, 5)))
    y = rng.integers(0, 2, shape).astype(np.float64)
    return [3 * rng.standard_normal(shape)], lambda t: bce_with_logits(t[0], y)


def _nll(rng):
    n = int(rng.integers(1, 5))
    target = rng.standard_normal((n, 3))
    return ([rng.standard_normal((n, 3)), 0.5 * rng.standard_normal((n, 3)), rng.uniform(-0.8, 0.8, n)],
            lambda t: mp.positional_nll(t[0], t[1], t[2], target))


def _se(rng):
    C, r = 4, 2
    return ([rng.standard_normal((2, C, 3, 3)), rng.standard_normal((r, C, 1, 1)), rng.standard_normal(r),
             rng.standard_normal((C, r, 1, 1)), rng.standard_normal(C)],
            lambda t: tl.se_block(*t))


def _task_total(rng):
    keys = ("s_traj", "s_light", "s_cross")
    losses = rng.uniform(0.1, 3.0, 3)
    return [rng.standard_normal(3)], lambda t: fusion.total_loss(
        {k: Tensor(losses[i]) for i, k in enumerate(keys)}, {k: t[0][i] for i, k in enumerate(keys)})


OPS: dict[str, Callable] = {
    "add": _binary(lambda a, b: a + b),
    "sub": _binary(lambda a, b: a - b),
    "mul": _binary(lambda a, b: a * b),
    "div": _binary(lambda a, b: a / b, nonzero_b=True),
    "power": _unary(lambda a: a**1.7, positive=True),
    "matmul": _matmul,
    "sum": _reduce("sum"),
    "mean": _reduce("mean"),
    "reshape_transpose": _reshape,
    "getitem": _getitem,
    "concat": _concat,
    "stack": _stack,
    "exp": _unary(exp),
    "log": _unary(log, positive=True),
    "sqrt": _unary(sqrt, positive=True),
    "tanh": _unary(tanh),
    "sigmoid": _unary(sigmoid),
    "relu": _unary(relu, kink=True),
    "elu": _unary(elu, kink=True),
    "square": _unary(square),
    "safe_norm": _safe_norm,
    "dense": _dense,
    "causal_conv1d": _conv1d,
    "conv2d": _conv2d,
    "global_avg_pool": _pool,
    "batchnorm": _batchnorm,
    "dropout": _dropout,
    "softmax": _softmax,
    "softmax_cross_entropy": _ce,
    "bce_with_logits": _bce,
    "positional_nll": _nll,
    "se_block": _se,
    "task_weighted_total": _task_total,
}


def check_op(name: str, cases: int = 100, seed: int = 0, tol: float = 1e-4) -> SuiteEntry:
    rng = np.random.default_rng(seed)
    make = OPS[name]
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(cases):
        arrays, f = make(rng)
        wrng_seed = int(rng.integers(1 << 30))

        def build(ts, f=f, s=wrng_seed):
            out = f(ts)
            return out if out.size == 1 and out.ndim == 0 else _weighted(out, np.random.default_rng(s))

        worst = max(worst, check_function(build, arrays))
    return SuiteEntry(name, cases, worst, tol, time.perf_counter() - t0)


# ----------------------------------------------------------------------
# models
# ----------------------------------------------------------------------


def _random_window(rng, B, N, T, t_pred):
    obs = rng.standard_normal((B, N, T, 5))
    mask = (rng.random((B, N, T)) < 0.8).astype(np.float64)
    mask[:, 0, -2:] = 1
    tgt = rng.standard_normal((B, N, t_pred, 5))
    tmask = (rng.random((B, N, t_pred)) < 0.8).astype(np.float64)
    return obs, mask, tgt, tmask


def _jitter_biases(params: dict, rng) -> None:
    """Give zero-initialised biases random values.

    With zero biases an empty row feeds exactly 0 into a ReLU, where central
    differences straddle the kink and disagree with the (valid) subgradient.
    """
    for name, p in params.items():
        if name.endswith(".b") or name.endswith(".beta"):
            p.data = 0.1 * rng.standard_normal(p.shape)


def _relu_margin(model: mp.IATCNN, obs, mask) -> float:
    """Smallest |pre-activation| of the residual block's ReLU (inf for other variants)."""
    cfg = model.config
    if cfg.variant != "IA-DResTCNN":
        return np.inf
    _, acts = mp.forward(model, obs, mask, return_activations=True)
    inp = acts[0].reshape(-1, acts[0].shape[2], acts[0].shape[3])
    h = Tensor(inp)
    for j, d in enumerate(cfg.block_dilations()[1]):
        h = causal_conv1d(h, model.params[f"block1.conv{j}.w"].data, d) + model.params[f"block1.conv{j}.b"].data
    return float(np.min(np.abs(h.data + inp)))


def _model_case(loss_fn, params, rng, coords: int) -> float:
    e1 = check_parameters(loss_fn, params, max_coords=coords, rng=rng)
    e2 = check_direction(loss_fn, params, rng=rng)
    return max(e1, e2)


def check_iatcnn(variant: str, cases: int = 100, seed: int = 0, tol: float = 1e-4, coords: int = 2) -> SuiteEntry:
    rng = np.random.default_rng(seed)
    worst = 0.0
    t0 = time.perf_counter()
    for c in range(cases):
        cfg = mp.ModelConfig(variant=variant, kernel_size=3, filters=(4, 4, 4), t_obs=4, t_pred=3, n_max=2,
                             convs_per_block=1 if variant == "IA-LinConv" else 2)
        model = mp.build(cfg, seed=int(rng.integers(1 << 30)))
        _jitter_biases(model.params, rng)
        for w in model.weights.parameters():
            w.data = np.array(rng.uniform(-0.5, 0.5))
        obs, mask, tgt, tmask = _random_window(rng, 2, 2, 4, 3)
        while _relu_margin(model, obs, mask) < 1e-3:  # keep the ReLU kink out of reach of the step h
            obs, mask, tgt, tmask = _random_window(rng, 2, 2, 4, 3)

        def loss_fn(model=model, obs=obs, mask=mask, tgt=tgt, tmask=tmask):
            return mp.loss(mp.forward(model, obs, mask), (tgt, tmask), model.weights)

        worst = max(worst, _model_case(loss_fn, model.trainable(), rng, coords))
    return SuiteEntry(f"model:{variant}", cases, worst, tol, time.perf_counter() - t0)


def _tiny_attenet(rng, n_classes=4):
    cfg = tl.AtteNetConfig(widths=(4, 4, 8, 8, 8), units=(1, 1, 1, 1, 1), se_reduction=4, n_classes=n_classes,
                           input_size=8, dropout=0.0)
    return tl.build(cfg, seed=int(rng.integers(1 << 30)))


def check_attenet(cases: int = 100, seed: int = 0, tol: float = 1e-4, coords: int = 1) -> SuiteEntry:
    """Toy AtteNet on 8x8 inputs; BN in training mode (batch statistics)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(cases):
        model = _tiny_attenet(rng)
        _jitter_biases(model.params, rng)
        x = rng.uniform(0, 1, (3, 8, 8, 3))
        y = rng.integers(0, 4, 3)

        def loss_fn(model=model, x=x, y=y):
            return softmax_cross_entropy(tl.logits(model, x, train=True), y)

        worst = max(worst, _model_case(loss_fn, model.parameters(), rng, coords))
    return SuiteEntry("model:AtteNet", cases, worst, tol, time.perf_counter() - t0)


def check_fusion_head(cases: int = 100, seed: int = 0, tol: float = 1e-4, coords: int = 3) -> SuiteEntry:
    """Fusion head with toy shapes (N=4, T=12, 2x2x32 features) on the crossing cross entropy."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(cases):
        cfg = fusion.FusionConfig(variant="ARCP(TLR+MP)", hidden=16)
        params = fusion.build_head(cfg, seed=int(rng.integers(1 << 30)))
        g = Tensor(rng.standard_normal((2, cfg.gaussian_width)), requires_grad=True)
        f = Tensor(rng.standard_normal((2, cfg.tl_channels, cfg.H, cfg.W)), requires_grad=True)
        y = rng.integers(0, 2, 2)

        def loss_fn(params=params, g=g, f=f, y=y, cfg=cfg):
            return softmax_cross_entropy(fusion.fuse_logits(g, f, cfg, params), y)

        worst = max(worst, _model_case(loss_fn, list(params.values()) + [g, f], rng, coords))
    return SuiteEntry("model:fusion-head", cases, worst, tol, time.perf_counter() - t0)


def run_suite(cases: int = 100, model_cases: int = 100, seed: int = 0, tol: float = 1e-4,
              progress: Callable[[SuiteEntry], None] | None = None) -> list[SuiteEntry]:
    entries = []

    def emit(e):
        entries.append(e)
        if progress is not None:
            progress(e)

    for i, name in enumerate(OPS):
        emit(check_op(name, cases, seed + i, tol))
    for j, v in enumerate(mp.VARIANTS):
        emit(check_iatcnn(v, model_cases, seed + 100 + j, tol))
    emit(check_attenet(model_cases, seed + 200, tol))
    emit(check_fusion_head(model_cases, seed + 300, tol))
    return entries
