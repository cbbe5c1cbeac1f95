"""Road-crossing predictor fusing motion Gaussians with traffic-light features.

Variants:

* ``ARCP(TLR+MP)`` projects the flattened Gaussian parameters to ``D = H*W*C``,
  reshapes to ``C x H x W``, concatenates channel-wise with the classifier's
  final feature map and classifies through a 512-unit layer.
* ``ARCP(MP)`` / ``ARCP(TLR)`` replace the missing branch with zeros.
* ``NCP`` sees only hard predictions: the one-hot light class and the point
  trajectories, through a two-layer head.
* ``CV+TLR`` is a rule: constant-velocity extrapolation plus the recognized light.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import attenet as tl
from . import iatcnn as mp
from .autodiff import (
    Tensor,
    adam,
    clip_global_norm,
    concat_channels,
    elu,
    exp,
    grad,
    optimizer_step,
    softmax,
    softmax_cross_entropy,
)
from .autodiff.ops import log_softmax
from .labels import CROSSING_CLASSES, CrossingLabel, TrafficLightState, class_set
from .metrics import BinaryReport, positive_class_report
from .synth import (
    CrossingRule,
    IntersectionScene,
    _in_corridor,
    gen_intersection,
    horizon_frames,
    render_signal_patch,
)
from .trajectory import ObservationBatch, TargetBatch, WindowSpec, make_window

log = logging.getLogger(__name__)

VARIANTS = ("ARCP(TLR+MP)", "ARCP(MP)", "ARCP(TLR)", "NCP", "CV+TLR")
LEARNED = VARIANTS[:4]


@dataclass(frozen=True)
class FusionConfig:
    variant: str = "ARCP(TLR+MP)"
    n_agents: int = 4
    t_pred: int = 12
    D: int = 128
    H: int = 2
    W: int = 2
    C: int = 32
    tl_channels: int = 32
    hidden: int = 512
    ncp_hidden: int = 64
    n_tl_classes: int = 3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.D != self.H * self.W * self.C:
            raise ValueError(f"D ({self.D}) must equal H*W*C ({self.H * self.W * self.C})")
        class_set(self.n_tl_classes)

    @property
    def gaussian_width(self) -> int:
        return self.n_agents * self.t_pred * mp.OUT_WIDTH

    @property
    def uses_motion(self) -> bool:
        return self.variant in ("ARCP(TLR+MP)", "ARCP(MP)", "NCP", "CV+TLR")

    @property
    def uses_light(self) -> bool:
        return self.variant in ("ARCP(TLR+MP)", "ARCP(TLR)", "NCP", "CV+TLR")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CrossingSample:
    obs: ObservationBatch
    image: np.ndarray  # H x W x 3
    label: CrossingLabel
    target: TargetBatch | None = None
    light: TrafficLightState | None = None


def crossing_sample(iscene: IntersectionScene, spec: WindowSpec, image_seed: int = 0,
                    image_size: int = 40) -> CrossingSample:
    """Window 0 of a synthetic intersection with a rendered view of its light."""
    w = make_window(iscene.scene, spec, 0)
    if w is None:
        raise ValueError("intersection scene has no observable agent")
    img = render_signal_patch(iscene.light, size=image_size, seed=image_seed)
    return CrossingSample(w[0], img.pixels, iscene.label, w[1], iscene.light)


def intersection_scenes(n: int, seed: int = 0, signalized_fraction: float = 0.5,
                        spec: WindowSpec = WindowSpec(8, 12, 20, 4)) -> list[tuple[int, IntersectionScene]]:
    """``(scene_seed, scene)`` pairs; scene ``k`` uses seed ``seed * 100003 + k``.

    Signalized scenes are spread evenly through the list, so every prefix keeps
    roughly the requested fraction.
    """
    if not 0.0 <= signalized_fraction <= 1.0:
        raise ValueError("signalized_fraction must lie in [0, 1]")
    out = []
    for k in range(n):
        s = seed * 100003 + k
        signalized = math.floor((k + 1) * signalized_fraction) > math.floor(k * signalized_fraction)
        out.append((s, gen_intersection(s, signalized, spec)))
    return out


def gen_crossing_dataset(n: int, seed: int = 0, signalized_fraction: float = 0.5,
                         spec: WindowSpec = WindowSpec(8, 12, 20, 4), image_size: int = 40) -> list[CrossingSample]:
    """Crossing samples for :func:`intersection_scenes`, each image rendered with its scene seed."""
    return [crossing_sample(sc, spec, s, image_size)
            for s, sc in intersection_scenes(n, seed, signalized_fraction, spec)]


def _glorot(rng, n_in, n_out):
    lim = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-lim, lim, (n_in, n_out))


def build_head(config: FusionConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    P: dict[str, np.ndarray] = {}
    if config.variant == "NCP":
        n_in = config.n_tl_classes + config.n_agents * config.t_pred * 4
        P["ncp.w1"] = _glorot(rng, n_in, config.ncp_hidden)
        P["ncp.b1"] = np.zeros(config.ncp_hidden)
        P["ncp.w2"] = _glorot(rng, config.ncp_hidden, 2)
        P["ncp.b2"] = np.zeros(2)
    elif config.variant != "CV+TLR":
        P["traj.w"] = _glorot(rng, config.gaussian_width, config.D)
        P["traj.b"] = np.zeros(config.D)
        n_in = (config.C + config.tl_channels) * config.H * config.W
        P["hidden.w"] = _glorot(rng, n_in, config.hidden)
        P["hidden.b"] = np.zeros(config.hidden)
        P["out.w"] = _glorot(rng, config.hidden, 2)
        P["out.b"] = np.zeros(2)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in P.items()}


def fuse_logits(gaussians, tl_features, config: FusionConfig, params: dict[str, Tensor]) -> Tensor:
    """Crossing logits ``(B, 2)`` for the ARCP variants.

    ``gaussians``: ``(B, N, T, 9)`` or ``(B, N*T*9)``; ``tl_features``: ``(B, C_tl, H, W)``.
    """
    v = config.variant
    if v not in ("ARCP(TLR+MP)", "ARCP(MP)", "ARCP(TLR)"):
        raise ValueError(f"fuse_logits does not handle {v}")
    need_traj = v != "ARCP(TLR)"
    need_tl = v != "ARCP(MP)"
    if need_traj and gaussians is None:
        raise ValueError(f"{v} needs Gaussian parameters")
    if need_tl and tl_features is None:
        raise ValueError(f"{v} needs traffic-light features")
    B = (gaussians if need_traj else tl_features).shape[0]
    if need_traj:
        g = gaussians if isinstance(gaussians, Tensor) else Tensor(gaussians)
        g = g.reshape(B, -1)
        if g.shape[1] != config.gaussian_width:
            raise ValueError(f"expected {config.gaussian_width} Gaussian values per sample, got {g.shape[1]}")
        traj = (g @ params["traj.w"] + params["traj.b"]).reshape(B, config.C, config.H, config.W)
    else:
        traj = Tensor(np.zeros((B, config.C, config.H, config.W)))
    if need_tl:
        f = tl_features if isinstance(tl_features, Tensor) else Tensor(tl_features)
        if f.shape[1:] != (config.tl_channels, config.H, config.W):
            raise ValueError(f"traffic-light features {f.shape[1:]} do not match "
                             f"({config.tl_channels}, {config.H}, {config.W})")
    else:
        f = Tensor(np.zeros((B, config.tl_channels, config.H, config.W)))
    fused = concat_channels(traj, f).reshape(B, -1)
    h = elu(fused @ params["hidden.w"] + params["hidden.b"])
    return h @ params["out.w"] + params["out.b"]


def fuse_forward(gaussians, tl_features, config: FusionConfig, params: dict[str, Tensor]) -> Tensor:
    """Probabilities over {Cross, DontCross}."""
    return softmax(fuse_logits(gaussians, tl_features, config, params))


def ncp_logits(light_probs: np.ndarray, points: np.ndarray, config: FusionConfig, params) -> Tensor:
    """Two-layer head on ``[one_hot(argmax light), flattened (x, y, v, yaw) points]``."""
    B = len(light_probs)
    onehot = np.eye(config.n_tl_classes)[np.argmax(light_probs, axis=1)]
    x = Tensor(np.concatenate([onehot, np.asarray(points).reshape(B, -1)], axis=1))
    h = elu(x @ params["ncp.w1"] + params["ncp.b1"])
    return h @ params["ncp.w2"] + params["ncp.b2"]


# ----------------------------------------------------------------------
# constant velocity baseline
# ----------------------------------------------------------------------


def cv_baseline_predict(obs: ObservationBatch, t_pred: int) -> np.ndarray:
    """Constant-velocity points ``(N, t_pred, 4)``: x, y, v, yaw (degrees).

    The last observed velocity vector (from the last two observed frames) is
    extrapolated; agents seen once keep their position. Empty slots are zero.
    """
    feats, mask = obs.features, obs.mask > 0
    N, T, _ = feats.shape
    out = np.zeros((N, t_pred, 4))
    for i in range(N):
        idx = np.nonzero(mask[i])[0]
        if len(idx) == 0:
            continue
        last = feats[i, idx[-1]]
        vel = np.zeros(2)
        if len(idx) >= 2:
            vel = (last[:2] - feats[i, idx[-2], :2]) / (idx[-1] - idx[-2])
        steps = (T - idx[-1]) + np.arange(t_pred)
        out[i, :, :2] = last[:2] + steps[:, None] * vel
        out[i, :, 2] = last[2] if len(idx) >= 2 else 0.0
        out[i, :, 3] = np.degrees(2 * np.arctan2(last[4], last[3]))
    return out


def cv_tlr_decide(obs: ObservationBatch, light: TrafficLightState, rule: CrossingRule,
                  frame_rate: float) -> CrossingLabel:
    """Red -> DontCross; otherwise DontCross iff a CV-extrapolated agent enters the corridor
    within the horizon (the last observed position included)."""
    if TrafficLightState(light) is TrafficLightState.RED:
        return CrossingLabel.DONT_CROSS
    h = horizon_frames(rule, frame_rate)
    pts = cv_baseline_predict(obs, h)
    active = obs.mask.any(axis=1)
    last = np.zeros((len(active), 2))
    for i in np.nonzero(active)[0]:
        last[i] = obs.features[i, np.nonzero(obs.mask[i])[0][-1], :2]
    inside = _in_corridor(pts[..., :2], rule.corridor).any(axis=1) | _in_corridor(last, rule.corridor)
    return CrossingLabel.DONT_CROSS if np.any(inside & active) else CrossingLabel.CROSS


# ----------------------------------------------------------------------
# the assembled predictor
# ----------------------------------------------------------------------


@dataclass
class ARCP:
    config: FusionConfig
    params: dict[str, Tensor]
    motion: mp.IATCNN | None = None
    light: tl.AtteNet | None = None
    task_weights: dict[str, Tensor] = field(default_factory=lambda: {
        k: Tensor(0.0, requires_grad=True, name=k) for k in ("s_traj", "s_light", "s_cross")})
    rule: CrossingRule = CrossingRule()
    frame_rate: float = 2.5

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {f"head/{k}": p.data for k, p in self.params.items()}
        out.update({f"task/{k}": p.data for k, p in self.task_weights.items()})
        if self.motion is not None:
            out.update({f"motion/{k}": v for k, v in self.motion.named_arrays().items()})
        if self.light is not None:
            out.update({f"light/{k}": v for k, v in self.light.named_arrays().items()})
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            p.data = np.array(arrays[f"head/{k}"], dtype=np.float64).reshape(p.shape)
        for k, p in self.task_weights.items():
            p.data = np.array(arrays[f"task/{k}"], dtype=np.float64).reshape(p.shape)
        for prefix, sub in (("motion/", self.motion), ("light/", self.light)):
            if sub is not None:
                sub.load_arrays({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})

    def head_parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def trainable(self) -> list[Tensor]:
        """Every parameter the joint optimizer updates for this variant."""
        ps = self.head_parameters() + list(self.task_weights.values())
        v = self.config.variant
        if self.motion is not None and v in ("ARCP(TLR+MP)", "ARCP(MP)"):
            ps += self.motion.parameters()
        if self.light is not None and v in ("ARCP(TLR+MP)", "ARCP(TLR)"):
            ps += self.light.parameters()
        return ps


def build_arcp(config: FusionConfig, motion: mp.IATCNN | None = None, light: tl.AtteNet | None = None,
               seed: int = 0, rule: CrossingRule = CrossingRule(), frame_rate: float = 2.5) -> ARCP:
    if config.uses_motion and config.variant != "CV+TLR" and motion is None:
        raise ValueError(f"{config.variant} needs a motion predictor")
    if config.uses_light and light is None:
        raise ValueError(f"{config.variant} needs a traffic-light classifier")
    if motion is not None:
        mc = motion.config
        if (mc.n_max, mc.t_pred) != (config.n_agents, config.t_pred):
            raise ValueError("motion predictor window (n_max, t_pred) does not match the fusion config")
    if light is not None and config.variant != "CV+TLR":
        lc = light.config
        if (lc.widths[-1], lc.feature_size, lc.n_classes) != (config.tl_channels, config.H, config.n_tl_classes):
            raise ValueError("traffic-light feature map does not match the fusion config")
    return ARCP(config, build_head(config, seed), motion, light, rule=rule, frame_rate=frame_rate)


def _batch(samples: Sequence[CrossingSample]):
    obs = np.stack([s.obs.features for s in samples])
    om = np.stack([s.obs.mask for s in samples])
    return obs, om


def _crops(model: ARCP, samples, rng=None) -> np.ndarray:
    size = model.light.config.input_size
    if rng is None:
        return np.stack([tl.center_crop(s.image, size) for s in samples])
    return np.stack([tl.random_crop(s.image, size, rng) for s in samples])


@dataclass
class _Outputs:
    logits: Tensor
    motion_pred: mp.PredictionBatch | None
    light_logits: Tensor | None


def _forward(model: ARCP, samples: Sequence[CrossingSample], train: bool, rng=None) -> _Outputs:
    cfg = model.config
    obs, om = _batch(samples)
    pred = light_logits = None
    if cfg.variant == "NCP":
        pred = mp.forward(model.motion, obs, om)
        probs = tl.forward_classify(model.light, _crops(model, samples))
        return _Outputs(ncp_logits(probs, mp.predict_points(pred), cfg, model.params), None, None)
    gauss = feats = None
    if cfg.variant in ("ARCP(TLR+MP)", "ARCP(MP)"):
        pred = mp.forward(model.motion, obs, om)
        gauss = pred.flat_params()
    if cfg.variant in ("ARCP(TLR+MP)", "ARCP(TLR)"):
        feats = tl.features(model.light, _crops(model, samples, rng if train else None), train)
        light_logits = tl.logits_from_features(model.light, feats, train, rng)
    return _Outputs(fuse_logits(gauss, feats, cfg, model.params), pred, light_logits)


def predict_proba(model: ARCP, samples: Sequence[CrossingSample], batch_size: int = 50) -> np.ndarray:
    """``(B, 2)`` probabilities over (Cross, DontCross)."""
    if model.config.variant == "CV+TLR":
        out = []
        for s in samples:
            light = TrafficLightState.OFF
            if model.light is not None:
                probs = tl.forward_classify(model.light, tl.center_crop(s.image, model.light.config.input_size))
                light = class_set(model.light.config.n_classes)[int(np.argmax(probs))]
            d = cv_tlr_decide(s.obs, light, model.rule, model.frame_rate)
            out.append([1.0, 0.0] if d is CrossingLabel.CROSS else [0.0, 1.0])
        return np.array(out)
    chunks = []
    for s in range(0, len(samples), batch_size):
        z = _forward(model, samples[s : s + batch_size], train=False).logits.data
        chunks.append(np.exp(log_softmax(z)))
    return np.concatenate(chunks)


def task_losses(model: ARCP, samples: Sequence[CrossingSample], out: _Outputs) -> dict[str, Tensor]:
    y = np.array([s.label.index for s in samples])
    losses = {"s_cross": softmax_cross_entropy(out.logits, y)}
    if out.motion_pred is not None and all(s.target is not None for s in samples):
        tgt = (np.stack([s.target.features for s in samples]), np.stack([s.target.mask for s in samples]))
        l_p, l_g, l_m = mp.loss_terms(out.motion_pred, tgt)
        losses["s_traj"] = l_p + l_g + l_m
    if out.light_logits is not None and all(s.light is not None for s in samples):
        classes = class_set(model.light.config.n_classes)
        losses["s_light"] = softmax_cross_entropy(out.light_logits, [classes.index(s.light) for s in samples])
    return losses


def total_loss(losses: dict[str, Tensor], weights: dict[str, Tensor]) -> Tensor:
    """``sum_i L_i * exp(-s_i) + s_i``."""
    total = None
    for k, L in losses.items():
        term = L * exp(-1.0 * weights[k]) + weights[k]
        total = term if total is None else total + term
    return total


@dataclass
class JointTrainConfig:
    lr: float = 5e-5
    epochs: int = 100
    batch_size: int = 10
    clip: float = 10.0
    seed: int = 0


def joint_train(model: ARCP, dataset: Sequence[CrossingSample], hp: JointTrainConfig = JointTrainConfig(),
                callback=None) -> list[float]:
    """One Adam optimizer over the head, the used sub-networks and the task weights."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if model.config.variant == "CV+TLR":
        raise ValueError("CV+TLR has nothing to train")
    if model.motion is not None:
        t_obs = model.motion.config.t_obs
        for s in dataset:
            if s.obs.features.shape[1] != t_obs:
                raise ValueError("window spec of the dataset does not match the motion predictor")
    rng = np.random.default_rng(hp.seed)
    opt = adam(hp.lr)
    params = model.trainable()
    history = []
    n = len(dataset)
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, hp.batch_size):
            batch = [dataset[i] for i in order[s : s + hp.batch_size]]
            out = _forward(model, batch, train=True, rng=rng)
            value = total_loss(task_losses(model, batch, out), model.task_weights)
            grads = clip_global_norm(grad(value, params), hp.clip)
            optimizer_step(opt, params, grads)
            total += float(value.data) * len(batch)
        history.append(total / n)
        log.info("epoch %d loss %.5f", epoch + 1, history[-1])
        if callback is not None:
            callback(epoch, history[-1])
    return history


def eval_crossing(model: ARCP, dataset: Sequence[CrossingSample]) -> BinaryReport:
    """Precision/recall/accuracy for the Safe (Cross) class."""
    probs = predict_proba(model, dataset)
    pred = probs.argmax(axis=1)
    truth = np.array([s.label.index for s in dataset])
    return positive_class_report(pred, truth, positive=CrossingLabel.CROSS.index)
