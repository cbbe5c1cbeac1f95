"""Trajectory ingestion, robot-relative encoding and masked windowing.

The canonical interchange format is a CSV with header
``frame,agent_id,x,y,v,qw,qz``; yaw is carried as the planar quaternion
``(qw, qz) = (cos(yaw/2), sin(yaw/2))``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

HEADER = ("frame", "agent_id", "x", "y", "v", "qw", "qz")
N_FEATURES = 5


class CanonicalFormatError(ValueError):
    """A canonical trajectory file could not be parsed."""


@dataclass(frozen=True)
class AgentSample:
    frame: int
    x: float
    y: float
    v: float
    qw: float
    qz: float


@dataclass
class AgentTrack:
    """One agent's samples stored column-wise.

    ``states`` has shape (n, 5) with columns ``x, y, v, qw, qz``.
    """

    agent_id: int
    frames: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.states = np.asarray(self.states, dtype=np.float64).reshape(-1, N_FEATURES)
        if len(self.frames) == 0:
            raise ValueError(f"agent {self.agent_id} has no samples")
        if len(self.frames) != len(self.states):
            raise ValueError("frames/states length mismatch")
        if np.any(np.diff(self.frames) <= 0):
            raise ValueError(f"agent {self.agent_id}: frames must be strictly increasing")

    @classmethod
    def from_samples(cls, agent_id: int, samples: Sequence[AgentSample]) -> "AgentTrack":
        frames = [s.frame for s in samples]
        states = [(s.x, s.y, s.v, s.qw, s.qz) for s in samples]
        return cls(agent_id, np.array(frames), np.array(states))

    @property
    def samples(self) -> list[AgentSample]:
        return [AgentSample(int(f), *map(float, s)) for f, s in zip(self.frames, self.states)]

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class Scene:
    tracks: list[AgentTrack]
    frame_rate: float = 2.5
    normalized_quaternions: int = 0

    def __post_init__(self):
        ids = [t.agent_id for t in self.tracks]
        if len(set(ids)) != len(ids):
            raise ValueError("agent ids must be unique within a scene")
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    def frame_range(self) -> tuple[int, int] | None:
        if not self.tracks:
            return None
        return (int(min(t.frames[0] for t in self.tracks)), int(max(t.frames[-1] for t in self.tracks)))

    def track(self, agent_id: int) -> AgentTrack:
        for t in self.tracks:
            if t.agent_id == agent_id:
                return t
        raise KeyError(agent_id)


@dataclass(frozen=True)
class WindowSpec:
    t_obs: int = 8
    t_pred: int = 12
    stride: int = 20
    n_max: int = 32

    def __post_init__(self):
        for name in ("t_obs", "t_pred", "stride", "n_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def length(self) -> int:
        return self.t_obs + self.t_pred


@dataclass
class ObservationBatch:
    """Padded ``N x T_obs x 5`` features with an ``N x T_obs`` validity mask."""

    features: np.ndarray
    mask: np.ndarray
    agent_ids: list[int] = field(default_factory=list)
    start_frame: int = 0

    @property
    def active(self) -> np.ndarray:
        return self.mask.any(axis=-1)


@dataclass
class TargetBatch:
    features: np.ndarray
    mask: np.ndarray


# ----------------------------------------------------------------------
# canonical CSV
# ----------------------------------------------------------------------


def load_canonical(path, frame_rate: float = 2.5) -> Scene:
    """Parse a canonical trajectory CSV.

    Quaternions with a non-unit (but non-zero) norm are normalized and tallied
    in ``Scene.normalized_quaternions``.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    return parse_canonical(text, frame_rate=frame_rate, source=str(path))


def parse_canonical(text: str, frame_rate: float = 2.5, source: str = "<string>") -> Scene:
    reader = csv.reader(io.StringIO(text))
    rows: dict[int, list[tuple[int, tuple[float, ...]]]] = {}
    order: list[int] = []
    fixed = 0
    header_seen = False
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if not header_seen:
            if tuple(c.strip() for c in row) != HEADER:
                raise CanonicalFormatError(f"{source}:{lineno}: expected header {','.join(HEADER)}")
            header_seen = True
            continue
        if len(row) != len(HEADER):
            raise CanonicalFormatError(
                f"{source}:{lineno}: expected {len(HEADER)} fields, got {len(row)}")
        try:
            frame = int(row[0])
            agent = int(row[1])
            x, y, v, qw, qz = (float(c) for c in row[2:])
        except ValueError as exc:
            raise CanonicalFormatError(f"{source}:{lineno}: {exc}") from None
        vals = (x, y, v, qw, qz)
        if not all(math.isfinite(c) for c in vals):
            raise CanonicalFormatError(f"{source}:{lineno}: non-finite value")
        if frame < 0:
            raise CanonicalFormatError(f"{source}:{lineno}: negative frame")
        if v < 0:
            raise CanonicalFormatError(f"{source}:{lineno}: negative speed")
        norm = math.hypot(qw, qz)
        if norm == 0.0:
            raise CanonicalFormatError(f"{source}:{lineno}: zero-norm quaternion")
        if abs(norm - 1.0) > 1e-9:
            qw, qz = qw / norm, qz / norm
            fixed += 1
        track = rows.get(agent)
        if track is None:
            rows[agent] = track = []
            order.append(agent)
        elif frame <= track[-1][0]:
            raise CanonicalFormatError(
                f"{source}:{lineno}: frame {frame} for agent {agent} does not increase")
        track.append((frame, (x, y, v, qw, qz)))
    if not header_seen:
        raise CanonicalFormatError(f"{source}: missing header")
    if fixed:
        log.warning("%s: normalized %d non-unit quaternion(s)", source, fixed)
    tracks = [
        AgentTrack(a, np.array([f for f, _ in rows[a]]), np.array([s for _, s in rows[a]]))
        for a in order
    ]
    return Scene(tracks, frame_rate=frame_rate, normalized_quaternions=fixed)


def format_canonical(scene: Scene) -> str:
    lines = [",".join(HEADER)]
    records = []
    for t in scene.tracks:
        for f, s in zip(t.frames, t.states):
            records.append((int(f), t.agent_id, s))
    records.sort(key=lambda r: (r[0], r[1]))
    for f, a, s in records:
        lines.append(f"{f},{a}," + ",".join(repr(float(c)) for c in s))
    return "\n".join(lines) + "\n"


def save_canonical(scene: Scene, path) -> None:
    Path(path).write_text(format_canonical(scene), encoding="utf-8")


# ----------------------------------------------------------------------
# robot-relative encoding
# ----------------------------------------------------------------------


def _rotate_quat(qw: np.ndarray, qz: np.ndarray, angle: float) -> tuple[np.ndarray, np.ndarray]:
    """Add ``angle`` to the yaw carried by planar quaternions."""
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    w = qw * c - qz * s
    z = qz * c + qw * s
    n = np.hypot(w, z)
    return w / n, z / n


def _transform(scene: Scene, tx: float, ty: float, yaw: float, inverse: bool) -> Scene:
    c, s = math.cos(yaw), math.sin(yaw)
    tracks = []
    for t in scene.tracks:
        st = t.states.copy()
        x, y = t.states[:, 0], t.states[:, 1]
        if not inverse:
            dx, dy = x - tx, y - ty
            st[:, 0] = c * dx + s * dy
            st[:, 1] = -s * dx + c * dy
            st[:, 3], st[:, 4] = _rotate_quat(t.states[:, 3], t.states[:, 4], -yaw)
        else:
            st[:, 0] = c * x - s * y + tx
            st[:, 1] = s * x + c * y + ty
            st[:, 3], st[:, 4] = _rotate_quat(t.states[:, 3], t.states[:, 4], yaw)
        tracks.append(AgentTrack(t.agent_id, t.frames.copy(), st))
    return Scene(tracks, scene.frame_rate, scene.normalized_quaternions)


def encode_relative(scene: Scene, robot_x: float, robot_y: float, robot_yaw: float) -> Scene:
    """Express every agent state in the robot frame (translation, then rotation by -yaw)."""
    if not all(math.isfinite(v) for v in (robot_x, robot_y, robot_yaw)):
        raise ValueError("robot pose must be finite")
    return _transform(scene, robot_x, robot_y, robot_yaw, inverse=False)


def decode_relative(scene: Scene, robot_x: float, robot_y: float, robot_yaw: float) -> Scene:
    """Inverse of :func:`encode_relative`."""
    return _transform(scene, robot_x, robot_y, robot_yaw, inverse=True)


def yaw_to_quat(yaw) -> tuple[np.ndarray, np.ndarray]:
    yaw = np.asarray(yaw, dtype=np.float64)
    return np.cos(yaw / 2), np.sin(yaw / 2)


def quat_to_yaw(qw, qz) -> np.ndarray:
    return 2.0 * np.arctan2(qz, qw)


# ----------------------------------------------------------------------
# windowing
# ----------------------------------------------------------------------


def window_starts(scene: Scene, spec: WindowSpec) -> list[int]:
    fr = scene.frame_range()
    if fr is None:
        return []
    return list(range(fr[0], fr[1] + 1, spec.stride))


def window_scene(scene: Scene, spec: WindowSpec) -> list[tuple[ObservationBatch, TargetBatch]]:
    """Cut a scene into padded observation/target windows.

    An agent enters a window only if it is seen on at least two observation
    frames. Rows are ordered by first detection inside the window (ties by the
    track's first frame, then agent id); beyond ``n_max`` the latest-detected
    agents are dropped. Padded slots carry zeros and mask 0.
    """
    out = []
    for start in window_starts(scene, spec):
        w = make_window(scene, spec, start)
        if w is not None:
            out.append(w)
    return out


def make_window(scene: Scene, spec: WindowSpec, start: int) -> tuple[ObservationBatch, TargetBatch] | None:
    obs_end = start + spec.t_obs
    end = obs_end + spec.t_pred
    chosen = []
    for t in scene.tracks:
        in_obs = (t.frames >= start) & (t.frames < obs_end)
        n_obs = int(in_obs.sum())
        if n_obs < 2:
            continue
        first = int(t.frames[in_obs][0])
        chosen.append((first, int(t.frames[0]), t.agent_id, t))
    if not chosen:
        return None
    chosen.sort(key=lambda c: c[:3])
    chosen = chosen[: spec.n_max]
    N = spec.n_max
    obs = np.zeros((N, spec.t_obs, N_FEATURES))
    obs_mask = np.zeros((N, spec.t_obs))
    tgt = np.zeros((N, spec.t_pred, N_FEATURES))
    tgt_mask = np.zeros((N, spec.t_pred))
    for row, (_, _, _, t) in enumerate(chosen):
        sel = (t.frames >= start) & (t.frames < end)
        for f, s in zip(t.frames[sel], t.states[sel]):
            k = int(f) - start
            if k < spec.t_obs:
                obs[row, k] = s
                obs_mask[row, k] = 1.0
            else:
                tgt[row, k - spec.t_obs] = s
                tgt_mask[row, k - spec.t_obs] = 1.0
    ids = [c[2] for c in chosen]
    return ObservationBatch(obs, obs_mask, ids, start), TargetBatch(tgt, tgt_mask)


def collate(windows: Iterable[tuple[ObservationBatch, TargetBatch]]):
    """Stack windows into ``(obs, obs_mask, tgt, tgt_mask)`` arrays with a leading batch axis."""
    windows = list(windows)
    return (
        np.stack([o.features for o, _ in windows]),
        np.stack([o.mask for o, _ in windows]),
        np.stack([t.features for _, t in windows]),
        np.stack([t.mask for _, t in windows]),
    )
