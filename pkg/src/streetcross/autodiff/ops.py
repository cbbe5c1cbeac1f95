"""Differentiable ops on top of :mod:`streetcross.autodiff.tensor`.

Layouts follow the channel-first convention: 1-D sequences are ``(B, C, T)``
and images are ``(B, C, H, W)``. Unbatched inputs (``(C, T)`` / ``(C, H, W)``)
are accepted by the convolution ops and returned unbatched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, as_tensor, concat, make_node, unbroadcast

# ----------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make_node(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return make_node(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return make_node(out, (x,), lambda g: (g * 0.5 / out,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make_node(out, (x,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return make_node(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return make_node(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def elu(x) -> Tensor:
    """ELU with alpha = 1."""
    x = as_tensor(x)
    pos = x.data > 0
    neg = np.expm1(np.minimum(x.data, 0.0))
    out = np.where(pos, x.data, neg)
    return make_node(out, (x,), lambda g: (g * np.where(pos, 1.0, neg + 1.0),))


def square(x) -> Tensor:
    x = as_tensor(x)
    return make_node(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def elementwise_mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"elementwise_mul shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def safe_norm(x, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at the origin is taken as 0."""
    x = as_tensor(x)
    out = np.sqrt(np.sum(x.data * x.data, axis=axis))

    def backward(g):
        denom = np.expand_dims(out, axis)
        scale = np.divide(np.expand_dims(g, axis), denom, out=np.zeros_like(denom), where=denom > 0)
        return (scale * x.data,)

    return make_node(out, (x,), backward)


# ----------------------------------------------------------------------
# dense / convolution
# ----------------------------------------------------------------------


def dense(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"dense: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    y = x @ weight
    return y if bias is None else y + bias


def causal_conv1d(x, kernel, dilation: int = 1) -> Tensor:
    """Causal dilated 1-D convolution.

    ``y[c, t] = sum_ci sum_j kernel[c, ci, j] * x[ci, t - j*dilation]`` with
    zeros for negative time indices, so the output keeps the input length and
    never looks ahead.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    unbatched = x.ndim == 2
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 3 or kernel.ndim != 3:
        raise ValueError("causal_conv1d expects input (B, C, T) and kernel (C_out, C_in, K)")
    B, C, T = xd.shape
    O, Ck, K = kernel.shape
    if Ck != C:
        raise ValueError(f"causal_conv1d: kernel expects {Ck} input channels, got {C}")
    # taps reaching further back than the sequence only see padding
    J = min(K, -(-T // dilation))
    P = (J - 1) * dilation
    xp = np.concatenate([np.zeros((B, C, P)), xd], axis=2) if P else xd
    cols = np.stack([xp[:, :, P - j * dilation : P - j * dilation + T] for j in range(J)], axis=2)
    cols = cols.transpose(1, 2, 0, 3).reshape(C * J, B * T)
    w2 = kernel.data[:, :, :J].reshape(O, C * J)
    y = (w2 @ cols).reshape(O, B, T).transpose(1, 0, 2)
    if unbatched:
        y = y[0]

    def backward(g):
        g2 = (g[None] if unbatched else g).transpose(1, 0, 2).reshape(O, B * T)
        gk = None
        if kernel.requires_grad:
            gk = np.zeros_like(kernel.data)
            gk[:, :, :J] = (g2 @ cols.T).reshape(O, C, J)
        gx = None
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(C, J, B, T).transpose(2, 0, 1, 3)
            gxp = np.zeros((B, C, T + P))
            for j in range(J):
                gxp[:, :, P - j * dilation : P - j * dilation + T] += dcols[:, :, j]
            gx = gxp[:, :, P:]
            if unbatched:
                gx = gx[0]
        return gx, gk

    return make_node(np.ascontiguousarray(y), (x, kernel), backward)


def conv2d(x, kernel, stride: int = 1, padding: int | None = None) -> Tensor:
    """2-D cross-correlation; ``padding`` defaults to ``kernel_size // 2``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4 or kernel.ndim != 4:
        raise ValueError("conv2d expects input (B, C, H, W) and kernel (O, C, kh, kw)")
    B, C, H, W = xd.shape
    O, Ck, kh, kw = kernel.shape
    if Ck != C:
        raise ValueError(f"conv2d: kernel expects {Ck} input channels, got {C}")
    if padding is None:
        padding = kh // 2
    p, s = padding, stride
    Ho = (H + 2 * p - kh) // s + 1
    Wo = (W + 2 * p - kw) // s + 1
    if kh == 1 and kw == 1 and p == 0:
        sub = xd[:, :, ::s, ::s]
        cols = sub.transpose(1, 0, 2, 3).reshape(C, B * Ho * Wo)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
        patches = [xp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] for i in range(kh) for j in range(kw)]
        cols = np.stack(patches, axis=2).transpose(1, 2, 0, 3, 4).reshape(C * kh * kw, B * Ho * Wo)
    w2 = kernel.data.reshape(O, C * kh * kw)
    y = (w2 @ cols).reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3)
    if unbatched:
        y = y[0]

    def backward(g):
        g2 = (g[None] if unbatched else g).transpose(1, 0, 2, 3).reshape(O, B * Ho * Wo)
        gk = (g2 @ cols.T).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(C, kh * kw, B, Ho, Wo).transpose(2, 0, 1, 3, 4)
            gxp = np.zeros((B, C, H + 2 * p, W + 2 * p))
            for n in range(kh * kw):
                i, j = divmod(n, kw)
                gxp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += dcols[:, :, n]
            gx = gxp[:, :, p : p + H, p : p + W] if p else gxp
            if unbatched:
                gx = gx[0]
        return gx, gk

    return make_node(np.ascontiguousarray(y), (x, kernel), backward)


def global_avg_pool(x) -> Tensor:
    """Mean over the trailing two (spatial) axes."""
    return as_tensor(x).mean(axis=(-2, -1))


def concat_channels(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    axis = 1 if a.ndim == 4 else 0
    if a.shape[:axis] != b.shape[:axis] or a.shape[axis + 1 :] != b.shape[axis + 1 :]:
        raise ValueError(f"concat_channels shape mismatch: {a.shape} vs {b.shape}")
    return concat([a, b], axis=axis)


# ----------------------------------------------------------------------
# normalization / regularization
# ----------------------------------------------------------------------


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormState":
        return cls(np.zeros(channels), np.ones(channels))


def batchnorm(x, gamma, beta, state: BatchNormState, train: bool) -> Tensor:
    """Per-channel batch normalization over every axis except axis 1.

    In train mode the batch statistics are used and the running statistics
    are updated in ``state``; in infer mode the frozen running statistics
    turn this into a fixed affine map.
    """
    x = as_tensor(x)
    C = x.shape[1]
    axes = tuple(i for i in range(x.ndim) if i != 1)
    bshape = [1] * x.ndim
    bshape[1] = C
    gamma = as_tensor(gamma).reshape(bshape)
    beta = as_tensor(beta).reshape(bshape)
    if train:
        mu = x.mean(axis=axes, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=axes, keepdims=True)
        xhat = centered * (var + state.eps) ** -0.5
        m = state.momentum
        state.running_mean = m * state.running_mean + (1 - m) * mu.data.reshape(C)
        state.running_var = m * state.running_var + (1 - m) * var.data.reshape(C)
    else:
        mu = state.running_mean.reshape(bshape)
        inv = 1.0 / np.sqrt(state.running_var.reshape(bshape) + state.eps)
        xhat = (x - mu) * inv
    return xhat * gamma + beta


def dropout(x, p: float, rng: np.random.Generator | int | None, train: bool) -> Tensor:
    """Inverted dropout; the identity in infer mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not train or p == 0.0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * keep


# ----------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(log_softmax(x.data))
    return make_node(out, (x,), lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),))


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    single = logits.ndim == 1
    z = logits.data[None] if single else logits.data
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (z.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= z.shape[1]:
        raise ValueError("label index out of range")
    logp = log_softmax(z)
    n = z.shape[0]
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        d *= g / n
        return (d[0] if single else d,)

    return make_node(np.asarray(max(loss, 0.0)), (logits,), backward)


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise binary cross entropy of ``sigmoid(logits)`` against ``targets``."""
    logits = as_tensor(logits)
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    z = logits.data
    out = np.maximum(z, 0.0) - t * z + np.log1p(np.exp(-np.abs(z)))
    return make_node(out, (logits,), lambda g: (unbroadcast(g * (_sigmoid(z) - t), logits.shape),))
