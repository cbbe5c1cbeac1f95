"""Toy-scale AtteNet traffic-light classifier.

Five residual stages of pre-activation bottleneck units (BN -> ELU before
each convolution, 1x1 -> 3x3 -> 1x1), a squeeze-excitation block with 1x1
convolutions closing every stage, then BN -> ELU, global average pooling,
dropout and a linear layer over the traffic-light classes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import (
    BatchNormState,
    Tensor,
    batchnorm,
    clip_global_norm,
    conv2d,
    dropout,
    elu,
    global_avg_pool,
    grad,
    optimizer_step,
    sgd,
    sigmoid,
    softmax_cross_entropy,
)
from .autodiff.ops import log_softmax
from .labels import TrafficLightState, class_set
from .metrics import ClassificationReport, classification_report

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AtteNetConfig:
    widths: tuple[int, ...] = (16, 32, 64, 128, 256)
    units: tuple[int, ...] = (2, 2, 2, 2, 2)
    se_reduction: int = 4
    n_classes: int = 4
    input_size: int = 32
    dropout: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "units", tuple(int(u) for u in self.units))
        if len(self.widths) != 5 or len(self.units) != 5:
            raise ValueError("AtteNet has exactly five residual stages")
        if min(self.units) < 1 or min(self.widths) < 1:
            raise ValueError("widths and units must be positive")
        for w in self.widths:
            if w % self.se_reduction or w % 4:
                raise ValueError(f"stage width {w} must be divisible by 4 and by the SE reduction")
        class_set(self.n_classes)
        if self.input_size < 1:
            raise ValueError("input_size must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def feature_size(self) -> int:
        s = self.input_size
        for _ in range(4):
            s = (s - 1) // 2 + 1
        return s

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"], d["units"] = list(self.widths), list(self.units)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AtteNetConfig":
        d = dict(d)
        d["widths"], d["units"] = tuple(d["widths"]), tuple(d["units"])
        return cls(**d)


def _glorot(rng, shape) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    fan_out = shape[0] * int(np.prod(shape[2:]))
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, shape)


@dataclass
class AtteNet:
    config: AtteNetConfig
    params: dict[str, Tensor]
    bn: dict[str, BatchNormState]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {k: p.data for k, p in self.params.items()}
        for k, s in self.bn.items():
            out[f"{k}.running_mean"] = s.running_mean
            out[f"{k}.running_var"] = s.running_var
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            p.data = np.array(arrays[k], dtype=np.float64).reshape(p.shape)
        for k, s in self.bn.items():
            s.running_mean = np.array(arrays[f"{k}.running_mean"], dtype=np.float64)
            s.running_var = np.array(arrays[f"{k}.running_var"], dtype=np.float64)

    def unit_names(self) -> list[tuple[str, int, int, int]]:
        """``(prefix, c_in, c_out, stride)`` for every residual unit."""
        out = []
        c_in = self.config.widths[0]
        for s, (w, n) in enumerate(zip(self.config.widths, self.config.units)):
            for u in range(n):
                stride = 2 if (u == 0 and s > 0) else 1
                out.append((f"stage{s}.unit{u}", c_in, w, stride))
                c_in = w
        return out

    def residual_branch_params(self) -> list[str]:
        return [f"{pre}.{k}" for pre, *_ in self.unit_names() for k in ("conv1", "conv2", "conv3")]


def build(config: AtteNetConfig = AtteNetConfig(), seed: int = 0) -> AtteNet:
    rng = np.random.default_rng(seed)
    P: dict[str, Tensor] = {}
    bn: dict[str, BatchNormState] = {}

    def add_bn(name, c):
        P[f"{name}.gamma"] = Tensor(np.ones(c), requires_grad=True)
        P[f"{name}.beta"] = Tensor(np.zeros(c), requires_grad=True)
        bn[name] = BatchNormState.fresh(c)

    w0 = config.widths[0]
    P["stem.w"] = Tensor(_glorot(rng, (w0, 3, 3, 3)), requires_grad=True)
    model = AtteNet(config, P, bn)
    for pre, ci, co, stride in model.unit_names():
        mid = co // 4
        add_bn(f"{pre}.bn1", ci)
        P[f"{pre}.conv1"] = Tensor(_glorot(rng, (mid, ci, 1, 1)), requires_grad=True)
        add_bn(f"{pre}.bn2", mid)
        P[f"{pre}.conv2"] = Tensor(_glorot(rng, (mid, mid, 3, 3)), requires_grad=True)
        add_bn(f"{pre}.bn3", mid)
        P[f"{pre}.conv3"] = Tensor(_glorot(rng, (co, mid, 1, 1)), requires_grad=True)
        if ci != co or stride != 1:
            P[f"{pre}.proj"] = Tensor(_glorot(rng, (co, ci, 1, 1)), requires_grad=True)
    for s, w in enumerate(config.widths):
        r = w // config.se_reduction
        P[f"stage{s}.se.w1"] = Tensor(_glorot(rng, (r, w, 1, 1)), requires_grad=True)
        P[f"stage{s}.se.b1"] = Tensor(np.zeros(r), requires_grad=True)
        P[f"stage{s}.se.w2"] = Tensor(_glorot(rng, (w, r, 1, 1)), requires_grad=True)
        P[f"stage{s}.se.b2"] = Tensor(np.zeros(w), requires_grad=True)
    add_bn("final.bn", config.widths[-1])
    c = config.widths[-1]
    lim = math.sqrt(6.0 / (c + config.n_classes))
    P["fc.w"] = Tensor(rng.uniform(-lim, lim, (c, config.n_classes)), requires_grad=True)
    P["fc.b"] = Tensor(np.zeros(config.n_classes), requires_grad=True)
    for k, p in P.items():
        p.name = k
    return model


# ----------------------------------------------------------------------
# blocks
# ----------------------------------------------------------------------


def se_block(x, w1, b1, w2, b2) -> Tensor:
    """Squeeze (spatial mean) then excite (1x1 conv -> ELU -> 1x1 conv -> sigmoid) and rescale."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    unbatched = x.ndim == 3
    if unbatched:
        x = x.reshape(1, *x.shape)
    B, C = x.shape[:2]
    if w1.shape[1] != C or w2.shape[0] != C:
        raise ValueError(f"SE weights do not match {C} channels")
    z = global_avg_pool(x).reshape(B, C, 1, 1)
    h = elu(conv2d(z, w1, padding=0) + b1.reshape(1, -1, 1, 1))
    gates = sigmoid(conv2d(h, w2, padding=0) + b2.reshape(1, -1, 1, 1))
    out = x * gates
    return out.reshape(*out.shape[1:]) if unbatched else out


def _bn(model: AtteNet, name: str, x, train: bool) -> Tensor:
    P = model.params
    return batchnorm(x, P[f"{name}.gamma"], P[f"{name}.beta"], model.bn[name], train)


def preact_unit(model: AtteNet, prefix: str, x, stride: int, train: bool) -> Tensor:
    """``skip(x) + conv1x1(a(conv3x3(a(conv1x1(a(x))))))`` with ``a = ELU . BN``."""
    P = model.params
    a = elu(_bn(model, f"{prefix}.bn1", x, train))
    skip = conv2d(a, P[f"{prefix}.proj"], stride=stride, padding=0) if f"{prefix}.proj" in P else x
    h = conv2d(a, P[f"{prefix}.conv1"], padding=0)
    h = elu(_bn(model, f"{prefix}.bn2", h, train))
    h = conv2d(h, P[f"{prefix}.conv2"], stride=stride, padding=1)
    h = elu(_bn(model, f"{prefix}.bn3", h, train))
    h = conv2d(h, P[f"{prefix}.conv3"], padding=0)
    return skip + h


def _as_batch(images) -> np.ndarray:
    """``(H, W, 3)`` or ``(B, H, W, 3)`` pixels to ``(B, 3, H, W)``."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    return x.transpose(0, 3, 1, 2)


def features(model: AtteNet, images, train: bool = False) -> Tensor:
    """Final feature map (after the last BN -> ELU), ``(B, C, h, w)``."""
    x = _as_batch(images)
    if x.shape[2:] != (model.config.input_size,) * 2:
        raise ValueError(f"expected {model.config.input_size}x{model.config.input_size} images, got {x.shape[2:]}")
    P = model.params
    h = conv2d(Tensor(x), P["stem.w"], padding=1)
    names = model.unit_names()
    k = 0
    for s, n in enumerate(model.config.units):
        for _ in range(n):
            pre, _, _, stride = names[k]
            h = preact_unit(model, pre, h, stride, train)
            k += 1
        h = se_block(h, P[f"stage{s}.se.w1"], P[f"stage{s}.se.b1"], P[f"stage{s}.se.w2"], P[f"stage{s}.se.b2"])
    return elu(_bn(model, "final.bn", h, train))


def logits_from_features(model: AtteNet, feats: Tensor, train: bool = False, rng=None) -> Tensor:
    pooled = global_avg_pool(feats)
    pooled = dropout(pooled, model.config.dropout, rng, train)
    return pooled @ model.params["fc.w"] + model.params["fc.b"]


def logits(model: AtteNet, images, train: bool = False, rng=None) -> Tensor:
    return logits_from_features(model, features(model, images, train), train, rng)


def forward_classify(model: AtteNet, image) -> np.ndarray:
    """Class probabilities (infer mode); one row per image for batched input."""
    z = logits(model, image).data
    p = np.exp(log_softmax(z))
    return p[0] if np.asarray(image).ndim == 3 else p


# ----------------------------------------------------------------------
# data
# ----------------------------------------------------------------------


def random_crop(pixels: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    H, W = pixels.shape[:2]
    if H < size or W < size:
        raise ValueError(f"cannot crop {size}x{size} from {H}x{W}")
    i = int(rng.integers(0, H - size + 1))
    j = int(rng.integers(0, W - size + 1))
    return pixels[i : i + size, j : j + size]


def center_crop(pixels: np.ndarray, size: int) -> np.ndarray:
    H, W = pixels.shape[:2]
    if H < size or W < size:
        raise ValueError(f"cannot crop {size}x{size} from {H}x{W}")
    i, j = (H - size) // 2, (W - size) // 2
    return pixels[i : i + size, j : j + size]


def label_indices(labels: Sequence, n_classes: int) -> np.ndarray:
    classes = class_set(n_classes)
    out = []
    for lab in labels:
        state = TrafficLightState(lab)
        if state not in classes:
            raise ValueError(f"label {state.value} not in the {n_classes}-class set")
        out.append(classes.index(state))
    return np.array(out, dtype=np.int64)


# ----------------------------------------------------------------------
# training / evaluation
# ----------------------------------------------------------------------


@dataclass
class ClassifierTrainConfig:
    lr: float = 4e-3
    momentum: float = 0.9
    decay_end_factor: float = 2e-4 / 4e-3
    epochs: int = 100
    batch_size: int = 32
    clip: float = 10.0
    seed: int = 0


def train_classifier(model: AtteNet, images: Sequence[np.ndarray], labels: Sequence,
                     hp: ClassifierTrainConfig = ClassifierTrainConfig(), callback=None) -> list[float]:
    """SGD with momentum and polynomial learning-rate decay on random crops."""
    if len(images) == 0:
        raise ValueError("empty dataset")
    y = label_indices(labels, model.config.n_classes)
    rng = np.random.default_rng(hp.seed)
    n = len(images)
    steps = hp.epochs * (-(-n // hp.batch_size))
    opt = sgd(hp.lr, hp.momentum, hp.decay_end_factor, decay_steps=steps)
    params = model.parameters()
    size = model.config.input_size
    history = []
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, hp.batch_size):
            idx = order[s : s + hp.batch_size]
            batch = np.stack([random_crop(images[i], size, rng) for i in idx])
            value = softmax_cross_entropy(logits(model, batch, train=True, rng=rng), y[idx])
            grads = clip_global_norm(grad(value, params), hp.clip)
            optimizer_step(opt, params, grads)
            total += float(value.data) * len(idx)
        history.append(total / n)
        log.info("epoch %d loss %.5f", epoch + 1, history[-1])
        if callback is not None:
            callback(epoch, history[-1])
    return history


def predict_proba(model: AtteNet, images: Sequence[np.ndarray], batch_size: int = 64) -> np.ndarray:
    size = model.config.input_size
    crops = np.stack([center_crop(im, size) for im in images])
    out = [forward_classify(model, crops[s : s + batch_size]) for s in range(0, len(crops), batch_size)]
    return np.concatenate(out)


def eval_classifier(model: AtteNet, images: Sequence[np.ndarray], labels: Sequence) -> ClassificationReport:
    """Center-crop evaluation: accuracy, per-class precision/recall, confusion (rows = predictions)."""
    y = label_indices(labels, model.config.n_classes)
    pred = predict_proba(model, images).argmax(axis=1)
    return classification_report(pred, y, model.config.n_classes)
