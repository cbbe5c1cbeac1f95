"""Interaction-aware temporal convolutional motion predictor.

Every agent slot of a window is run through the same stack of three causal
blocks. Its input channels hold the agent's own features plus the features of
every slot in the window (positions taken relative to the agent), so the
weights are shared across agents while each prediction still sees the whole
scene. The observation sequence is extended with zeros over the prediction
interval; because every convolution is causal, the outputs over that
extension depend on observed frames only. The last block is cropped to the
prediction interval and fed to a time-distributed width-9 head plus a
width-1 mask head.

Means are emitted as offsets from each agent's last observed state (the
anchor); scales go through ``exp``, the correlation through ``tanh`` and the
quaternion is renormalized.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .autodiff import (
    Tensor,
    adam,
    causal_conv1d,
    clip_global_norm,
    concat,
    exp,
    grad,
    optimizer_step,
    relu,
    safe_norm,
    sigmoid,
    tanh,
)
from .autodiff import ops as F
from .trajectory import N_FEATURES, ObservationBatch, TargetBatch, collate

log = logging.getLogger(__name__)

VARIANTS = ("IA-TCNN", "IA-LinConv", "IA-DResTCNN")
OUT_WIDTH = 9
LOG_2PI = math.log(2 * math.pi)
OWN_CHANNELS = 8
SLOT_CHANNELS = 6


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "IA-TCNN"
    kernel_size: int = 30
    filters: tuple[int, ...] = (128, 128, 128)
    convs_per_block: int = 1
    dilations: tuple[tuple[int, ...], ...] | None = None
    t_obs: int = 8
    t_pred: int = 12
    n_max: int = 32

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if len(self.filters) != 3 or min(self.filters) < 1:
            raise ValueError("exactly three positive filter counts are required")
        if self.kernel_size < 1 or self.convs_per_block < 1:
            raise ValueError("kernel_size and convs_per_block must be positive")
        if min(self.t_obs, self.t_pred, self.n_max) < 1:
            raise ValueError("t_obs, t_pred and n_max must be positive")
        if self.variant == "IA-DResTCNN" and self.filters[1] != self.filters[0]:
            raise ValueError("the residual middle block needs filters[1] == filters[0]")
        if self.dilations is not None:
            d = tuple(tuple(int(x) for x in b) for b in self.dilations)
            if len(d) != 3 or any(len(b) != self.n_convs for b in d) or min(min(b) for b in d) < 1:
                raise ValueError("dilations must give 3 blocks of convs_per_block positive rates")
            object.__setattr__(self, "dilations", d)

    @property
    def n_convs(self) -> int:
        return 1 if self.variant == "IA-LinConv" else self.convs_per_block

    def block_dilations(self) -> tuple[tuple[int, ...], ...]:
        if self.variant == "IA-LinConv":
            return ((1,), (1,), (1,))
        if self.dilations is not None:
            return self.dilations
        n = self.n_convs
        return tuple(tuple(b * n + k + 1 for k in range(n)) for b in range(3))

    @property
    def in_channels(self) -> int:
        return OWN_CHANNELS + SLOT_CHANNELS * self.n_max

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filters"] = list(self.filters)
        d["dilations"] = None if self.dilations is None else [list(b) for b in self.dilations]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("filters") is not None:
            d["filters"] = tuple(d["filters"])
        if d.get("dilations") is not None:
            d["dilations"] = tuple(tuple(b) for b in d["dilations"])
        return cls(**d)


def conv_layout(config: ModelConfig) -> list[tuple[int, int, int, int]]:
    """``(block, c_in, c_out, dilation)`` for every convolution in order."""
    layout = []
    c_in = config.in_channels
    for b, dils in enumerate(config.block_dilations()):
        for d in dils:
            layout.append((b, c_in, config.filters[b], d))
            c_in = config.filters[b]
    return layout


def analytic_parameter_count(config: ModelConfig) -> int:
    k = config.kernel_size
    convs = sum(ci * co * k + co for _, ci, co, _ in conv_layout(config))
    c = config.filters[-1]
    return convs + (c * OUT_WIDTH + OUT_WIDTH) + (c + 1)


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, shape)


@dataclass
class LossWeights:
    s_p: Tensor = field(default_factory=lambda: Tensor(0.0, requires_grad=True, name="s_p"))
    s_g: Tensor = field(default_factory=lambda: Tensor(0.0, requires_grad=True, name="s_g"))
    s_m: Tensor = field(default_factory=lambda: Tensor(0.0, requires_grad=True, name="s_m"))

    def parameters(self) -> list[Tensor]:
        return [self.s_p, self.s_g, self.s_m]


@dataclass
class IATCNN:
    config: ModelConfig
    params: dict[str, Tensor]
    weights: LossWeights = field(default_factory=LossWeights)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def trainable(self) -> list[Tensor]:
        return self.parameters() + self.weights.parameters()

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {k: p.data for k, p in self.params.items()}
        out.update({p.name: p.data for p in self.weights.parameters()})
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            p.data = np.array(arrays[k], dtype=np.float64).reshape(p.shape)
        for p in self.weights.parameters():
            if p.name in arrays:
                p.data = np.array(arrays[p.name], dtype=np.float64).reshape(p.shape)

    def __call__(self, obs, obs_mask=None, return_activations: bool = False):
        return forward(self, obs, obs_mask, return_activations)


def build(config: ModelConfig, seed: int = 0) -> IATCNN:
    """Initialise an IA-TCNN (or variant) deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    k = config.kernel_size
    counts: dict[int, int] = {}
    for b, ci, co, _ in conv_layout(config):
        j = counts.get(b, 0)
        counts[b] = j + 1
        params[f"block{b}.conv{j}.w"] = Tensor(_glorot(rng, (co, ci, k), ci * k, co * k), requires_grad=True)
        params[f"block{b}.conv{j}.b"] = Tensor(np.zeros((co, 1)), requires_grad=True)
    c = config.filters[-1]
    params["head.w"] = Tensor(_glorot(rng, (c, OUT_WIDTH), c, OUT_WIDTH), requires_grad=True)
    params["head.b"] = Tensor(np.zeros(OUT_WIDTH), requires_grad=True)
    params["mask_head.w"] = Tensor(_glorot(rng, (c, 1), c, 1), requires_grad=True)
    params["mask_head.b"] = Tensor(np.zeros(1), requires_grad=True)
    for name, p in params.items():
        p.name = name
    model = IATCNN(config, params)
    log.debug("built %s with %d parameters", config.variant, model.parameter_count())
    return model


# ----------------------------------------------------------------------
# input encoding
# ----------------------------------------------------------------------


def _as_arrays(obs, obs_mask):
    if isinstance(obs, ObservationBatch):
        return obs.features[None], obs.mask[None]
    if isinstance(obs, (list, tuple)) and obs and isinstance(obs[0], ObservationBatch):
        return np.stack([o.features for o in obs]), np.stack([o.mask for o in obs])
    feats = np.asarray(obs, dtype=np.float64)
    mask = np.asarray(obs_mask, dtype=np.float64)
    if feats.ndim == 3:
        feats, mask = feats[None], mask[None]
    return feats, mask


def encode_inputs(feats: np.ndarray, mask: np.ndarray, t_pred: int) -> np.ndarray:
    """Per-slot input channels ``(B*N, 8 + 6N, T_obs + T_pred)``.

    Own channels: x, y (relative to the agent's first observed position in
    the window), v, qw, qz, mask, dx, dy (step to the previous valid frame).
    Per-slot channels: position relative to this agent, v, qw, qz and the
    joint validity. Every entry is built from the current and earlier frames
    only, and padded entries are exactly zero.
    """
    B, N, T, _ = feats.shape
    m = mask > 0
    f = np.where(m[..., None], feats, 0.0)
    mf = m.astype(np.float64)
    step = np.zeros((B, N, T, 2))
    both = m[:, :, 1:] & m[:, :, :-1]
    step[:, :, 1:] = np.where(both[..., None], f[:, :, 1:, :2] - f[:, :, :-1, :2], 0.0)
    first = np.take_along_axis(f[..., :2], np.argmax(m, axis=-1)[..., None, None], axis=2)
    own_xy = np.where(m[..., None], f[..., :2] - first, 0.0)
    own = np.concatenate([own_xy, f[..., 2:], mf[..., None], step], axis=-1)  # B,N,T,8
    joint = m[:, :, None, :] & m[:, None, :, :]  # B,i,j,T
    rel = np.where(joint[..., None], f[:, None, :, :, :2] - f[:, :, None, :, :2], 0.0)  # B,i,j,T,2
    rest = np.where(joint[..., None], f[:, None, :, :, 2:], 0.0)  # B,i,j,T,3
    slots = np.concatenate([rel, rest, joint[..., None].astype(np.float64)], axis=-1)  # B,i,j,T,6
    slots = slots.transpose(0, 1, 2, 4, 3).reshape(B, N, N * SLOT_CHANNELS, T)
    x = np.concatenate([own.transpose(0, 1, 3, 2), slots], axis=2)  # B,N,C,T
    x = np.concatenate([x, np.zeros((B, N, x.shape[2], t_pred))], axis=3)
    return x.reshape(B * N, x.shape[2], T + t_pred)


def anchors(feats: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Last observed (x, y, v, qw, qz) per slot; inactive slots get (0, 0, 0, 1, 0)."""
    B, N, T, _ = feats.shape
    m = mask > 0
    idx = np.where(m.any(-1), T - 1 - np.argmax(m[..., ::-1], axis=-1), 0)
    a = np.take_along_axis(feats, idx[..., None, None], axis=2)[:, :, 0]
    active = m.any(-1)
    default = np.array([0.0, 0.0, 0.0, 1.0, 0.0])
    return np.where(active[..., None], a, default)


# ----------------------------------------------------------------------
# forward
# ----------------------------------------------------------------------


@dataclass
class PredictionBatch:
    """Network outputs for ``B`` windows of ``N`` slots over ``T_pred`` steps."""

    mu: Tensor  # B,N,T,3  (x, y, v)
    log_sigma: Tensor  # B,N,T,3
    rho: Tensor  # B,N,T
    quat: Tensor  # B,N,T,2  (qw, qz), unit norm
    mask_logit: Tensor  # B,N,T
    active: np.ndarray  # B,N  slots holding a real agent

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma.data)

    @property
    def pred_mask(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.mask_logit.data))

    @property
    def binary_mask(self) -> np.ndarray:
        return (self.pred_mask >= 0.5).astype(np.float64)

    def gaussians(self) -> np.ndarray:
        """``(B, N, T, 7)``: mu_x, mu_y, mu_v, sigma_x, sigma_y, sigma_v, rho."""
        return np.concatenate([self.mu.data, self.sigma, self.rho.data[..., None]], axis=-1)

    def flat_params(self) -> Tensor:
        """Differentiable ``(B, N, T, 9)`` tensor; inactive slots are zeroed."""
        full = concat([self.mu, exp(self.log_sigma), self.rho.reshape(*self.rho.shape, 1), self.quat], axis=-1)
        return full * self.active[:, :, None, None].astype(np.float64)


def forward(model: IATCNN, obs, obs_mask=None, return_activations: bool = False):
    """Run the predictor on one window or a batch of windows.

    Reads only the observation (features and mask); nothing from the
    prediction interval enters the computation.
    """
    cfg = model.config
    feats, mask = _as_arrays(obs, obs_mask)
    B, N, T, Fdim = feats.shape
    if (N, T, Fdim) != (cfg.n_max, cfg.t_obs, N_FEATURES) or mask.shape != (B, N, T):
        raise ValueError(f"observation shape {feats.shape} / mask {mask.shape} does not match "
                         f"config (N={cfg.n_max}, T_obs={cfg.t_obs}, F={N_FEATURES})")
    p = model.params
    h = Tensor(encode_inputs(feats, mask, cfg.t_pred))
    acts = []
    for b, dils in enumerate(cfg.block_dilations()):
        inp = h
        for j, d in enumerate(dils):
            h = causal_conv1d(h, p[f"block{b}.conv{j}.w"], d) + p[f"block{b}.conv{j}.b"]
        if cfg.variant == "IA-DResTCNN" and b == 1:
            h = relu(h + inp)
        else:
            h = tanh(h)
        acts.append(h)
    L = cfg.t_obs + cfg.t_pred
    C = cfg.filters[-1]
    top = h[:, :, cfg.t_obs:].transpose(0, 2, 1)  # B*N, T_pred, C
    raw = (top @ p["head.w"] + p["head.b"]).reshape(B, N, cfg.t_pred, OUT_WIDTH)
    mask_logit = (top @ p["mask_head.w"] + p["mask_head.b"]).reshape(B, N, cfg.t_pred)
    anc = anchors(feats, mask)[:, :, None, :]  # B,N,1,5
    mu = raw[..., 0:3] + anc[..., 0:3]
    log_sigma = raw[..., 3:6]
    rho = tanh(raw[..., 6])
    q = raw[..., 7:9] + anc[..., 3:5]
    qn = (q * q).sum(axis=-1, keepdims=True) + 1e-12
    quat = q * qn**-0.5
    pred = PredictionBatch(mu, log_sigma, rho, quat, mask_logit, mask.any(-1))
    if return_activations:
        return pred, [a.data.reshape(B, N, -1, L) for a in acts]
    return pred


# ----------------------------------------------------------------------
# loss
# ----------------------------------------------------------------------


def positional_nll(mu, log_sigma, rho, target_xyv) -> Tensor:
    """Elementwise negative log density of (x, y) under the bivariate Gaussian and of v
    under the independent univariate Gaussian."""
    t = target_xyv
    sx, sy, sv = exp(log_sigma[..., 0]), exp(log_sigma[..., 1]), exp(log_sigma[..., 2])
    dx = (t[..., 0] - mu[..., 0]) / sx
    dy = (t[..., 1] - mu[..., 1]) / sy
    dv = (t[..., 2] - mu[..., 2]) / sv
    one_m = 1.0 - rho * rho
    z = dx * dx + dy * dy - 2.0 * rho * dx * dy
    nll_xy = LOG_2PI + log_sigma[..., 0] + log_sigma[..., 1] + 0.5 * F.log(one_m) + z / (2.0 * one_m)
    nll_v = 0.5 * LOG_2PI + log_sigma[..., 2] + 0.5 * dv * dv
    return nll_xy + nll_v


def _target_arrays(target):
    if isinstance(target, TargetBatch):
        return target.features[None], target.mask[None]
    if isinstance(target, (list, tuple)) and target and isinstance(target[0], TargetBatch):
        return np.stack([t.features for t in target]), np.stack([t.mask for t in target])
    feats, mask = target
    feats, mask = np.asarray(feats, dtype=np.float64), np.asarray(mask, dtype=np.float64)
    if feats.ndim == 3:
        feats, mask = feats[None], mask[None]
    return feats, mask


def loss_terms(pred: PredictionBatch, target) -> tuple[Tensor, Tensor, Tensor]:
    """``(L_p, L_gamma, L_mask)``: masked sums over agents and steps, averaged over windows."""
    tf, tm = _target_arrays(target)
    if tf.shape[:3] != pred.mu.shape[:3] or tm.shape != pred.mask_logit.shape:
        raise ValueError(f"target shape {tf.shape} does not match prediction {pred.mu.shape}")
    if not np.all((tm == 0) | (tm == 1)):
        raise ValueError("target mask must be binary")
    if np.any(~np.isfinite(pred.log_sigma.data)):
        raise FloatingPointError("non-finite sigma reached the loss")
    B = tf.shape[0]
    on = tm > 0
    tf = np.where(on[..., None], tf, 0.0)
    nll = positional_nll(pred.mu, pred.log_sigma, pred.rho, tf[..., 0:3])
    l_p = (nll * tm).sum() * (1.0 / B)
    l_g = (safe_norm(pred.quat - tf[..., 3:5], axis=-1) * tm).sum() * (1.0 / B)
    l_m = F.bce_with_logits(pred.mask_logit, tm).sum() * (1.0 / B)
    return l_p, l_g, l_m


def weighted(term: Tensor, s: Tensor) -> Tensor:
    """``L * exp(-s) + s``."""
    return term * exp(-1.0 * s) + s


def loss(pred: PredictionBatch, target, weights: LossWeights) -> Tensor:
    l_p, l_g, l_m = loss_terms(pred, target)
    return weighted(l_p, weights.s_p) + weighted(l_g, weights.s_g) + weighted(l_m, weights.s_m)


# ----------------------------------------------------------------------
# point estimates
# ----------------------------------------------------------------------


def predict_points(pred: PredictionBatch) -> np.ndarray:
    """``(B, N, T, 4)`` point estimates: x, y, v and yaw in degrees."""
    yaw = np.degrees(2.0 * np.arctan2(pred.quat.data[..., 1], pred.quat.data[..., 0]))
    return np.concatenate([pred.mu.data, yaw[..., None]], axis=-1)


# ----------------------------------------------------------------------
# training
# ----------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 5e-4
    epochs: int = 100
    batch_size: int = 12
    clip: float = 10.0
    seed: int = 0


def train(model: IATCNN, dataset: Sequence[tuple[ObservationBatch, TargetBatch]],
          hp: TrainConfig = TrainConfig(), callback=None) -> list[float]:
    """Adam with global-norm clipping on the weighted loss; returns per-epoch mean loss."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    obs, obs_m, tgt, tgt_m = collate(dataset)
    rng = np.random.default_rng(hp.seed)
    opt = adam(hp.lr)
    params = model.trainable()
    history = []
    n = len(dataset)
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, hp.batch_size):
            idx = order[s : s + hp.batch_size]
            pred = forward(model, obs[idx], obs_m[idx])
            value = loss(pred, (tgt[idx], tgt_m[idx]), model.weights)
            grads = clip_global_norm(grad(value, params), hp.clip)
            optimizer_step(opt, params, grads)
            total += float(value.data) * len(idx)
        history.append(total / n)
        log.info("epoch %d loss %.5f", epoch + 1, history[-1])
        if callback is not None:
            callback(epoch, history[-1])
    return history


def predict_windows(model: IATCNN, dataset, batch_size: int = 64) -> np.ndarray:
    """Point estimates for every window, ``(W, N, T_pred, 4)``."""
    obs, obs_m, _, _ = collate(dataset)
    out = [predict_points(forward(model, obs[s : s + batch_size], obs_m[s : s + batch_size]))
           for s in range(0, len(obs), batch_size)]
    return np.concatenate(out)
