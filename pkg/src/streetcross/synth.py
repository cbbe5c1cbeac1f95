"""Seeded synthetic scenes: social-forces crowds, constant-velocity traffic,
geometric crossing-safety labels and rendered traffic-light patches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .labels import CrossingLabel, TrafficLightState
from .trajectory import AgentTrack, Scene, WindowSpec, window_starts


@dataclass(frozen=True)
class SFParams:
    v0: float = 1.3  # desired speed, m/s
    tau: float = 0.5  # relaxation time, s
    A: float = 2.0  # repulsion strength, m/s^2
    B: float = 0.3  # repulsion range, m
    dt: float = 0.4  # s per frame
    radius: float = 0.3  # agent radius, m
    slow_radius: float = 1.0  # start braking this close to the goal, m
    max_speed_factor: float = 2.0

    def __post_init__(self):
        for name in ("v0", "tau", "B", "dt", "radius", "slow_radius", "max_speed_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SFParams.{name} must be positive")
        if self.A < 0:
            raise ValueError("SFParams.A must be non-negative")


@dataclass
class LabeledImage:
    pixels: np.ndarray  # H x W x 3 in [0, 1]
    label: TrafficLightState


@dataclass(frozen=True)
class CrossingRule:
    corridor: tuple[float, float, float, float] = (-1.0, 1.0, 1.5, 7.5)  # xmin, xmax, ymin, ymax
    horizon: float = 3.2  # s
    phases: tuple[tuple[int, TrafficLightState], ...] = ()  # empty: unsignalized

    def __post_init__(self):
        x0, x1, y0, y1 = self.corridor
        if not (x1 > x0 and y1 > y0):
            raise ValueError("corridor must have positive area")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    def signal_at(self, frame: int) -> TrafficLightState | None:
        state = None
        for start, s in self.phases:
            if start <= frame:
                state = s
        return state


# ----------------------------------------------------------------------
# social forces
# ----------------------------------------------------------------------


def _yaw_quats(vel: np.ndarray, init_yaw: np.ndarray) -> np.ndarray:
    """Planar quaternions along a (steps, n, 2) velocity history; yaw is held while at rest."""
    steps, n, _ = vel.shape
    q = np.zeros((steps, n, 2))
    yaw = init_yaw.copy()
    for k in range(steps):
        moving = np.hypot(vel[k, :, 0], vel[k, :, 1]) > 1e-9
        yaw = np.where(moving, np.arctan2(vel[k, :, 1], vel[k, :, 0]), yaw)
        q[k, :, 0] = np.cos(yaw / 2)
        q[k, :, 1] = np.sin(yaw / 2)
    return q


def simulate_social_forces(positions, velocities, goals, steps: int, params: SFParams = SFParams(),
                           desired_speeds=None, entry_frames=None) -> tuple[np.ndarray, np.ndarray]:
    """Integrate Helbing-style dynamics with semi-implicit Euler.

    ``dv/dt = (v0 * e_goal - v) / tau + sum_j A * exp((r - d_ij) / B) * n_ij``

    Agents take part (and exert forces) from their entry frame on. Returns
    position and velocity histories of shape (steps, n, 2).
    """
    pos = np.array(positions, dtype=np.float64).reshape(-1, 2)
    vel = np.array(velocities, dtype=np.float64).reshape(-1, 2)
    goals = np.array(goals, dtype=np.float64).reshape(-1, 2)
    n = len(pos)
    v0 = np.full(n, params.v0) if desired_speeds is None else np.asarray(desired_speeds, dtype=np.float64)
    entry = np.zeros(n, dtype=int) if entry_frames is None else np.asarray(entry_frames, dtype=int)
    vmax = params.max_speed_factor * v0
    r = 2 * params.radius
    P = np.zeros((steps, n, 2))
    V = np.zeros((steps, n, 2))
    for k in range(steps):
        active = entry <= k
        P[k], V[k] = pos, np.where(active[:, None], vel, 0.0)
        if k == steps - 1:
            break
        to_goal = goals - pos
        dist = np.hypot(to_goal[:, 0], to_goal[:, 1])
        e = np.divide(to_goal, dist[:, None], out=np.zeros_like(to_goal), where=dist[:, None] > 1e-12)
        desired = e * (v0 * np.minimum(1.0, dist / params.slow_radius))[:, None]
        acc = (desired - vel) / params.tau
        if params.A > 0 and n > 1:
            diff = pos[:, None, :] - pos[None, :, :]
            d = np.hypot(diff[..., 0], diff[..., 1])
            pair = active[:, None] & active[None, :] & ~np.eye(n, dtype=bool)
            nhat = np.divide(diff, d[..., None], out=np.zeros_like(diff), where=d[..., None] > 1e-12)
            mag = np.where(pair, params.A * np.exp((r - d) / params.B), 0.0)
            acc = acc + (mag[..., None] * nhat).sum(axis=1)
        new_vel = vel + params.dt * acc
        speed = np.hypot(new_vel[:, 0], new_vel[:, 1])
        scale = np.minimum(1.0, np.divide(vmax, speed, out=np.ones_like(speed), where=speed > 0))
        new_vel *= scale[:, None]
        vel = np.where(active[:, None], new_vel, vel)
        pos = np.where(active[:, None], pos + params.dt * vel, pos)
    return P, V


def tracks_from_history(P: np.ndarray, V: np.ndarray, entry_frames=None, first_id: int = 0,
                        init_yaw=None) -> list[AgentTrack]:
    steps, n, _ = P.shape
    entry = np.zeros(n, dtype=int) if entry_frames is None else np.asarray(entry_frames, dtype=int)
    if init_yaw is None:
        init_yaw = np.zeros(n)
    q = _yaw_quats(V, np.asarray(init_yaw, dtype=np.float64))
    speed = np.hypot(V[..., 0], V[..., 1])
    tracks = []
    for i in range(n):
        ks = np.arange(entry[i], steps)
        st = np.column_stack([P[ks, i, 0], P[ks, i, 1], speed[ks, i], q[ks, i, 0], q[ks, i, 1]])
        tracks.append(AgentTrack(first_id + i, ks, st))
    return tracks


def gen_social_forces(n_agents: int, steps: int, params: SFParams = SFParams(), seed: int = 0,
                      spawn_radius=(2.5, 4.5), goal_radius: float = 3.5, max_entry: int = 3) -> Scene:
    """Crowd crossing a plaza: agents spawn on a ring and walk to the opposite side.

    Each agent starts heading to its goal at its own desired speed, enters the
    scene at a random early frame, and brakes to a halt at the goal.
    """
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0, 2 * np.pi, n_agents)
    rs = rng.uniform(*spawn_radius, n_agents)
    pos = np.column_stack([rs * np.cos(theta), rs * np.sin(theta)])
    gtheta = theta + np.pi + rng.uniform(-0.4, 0.4, n_agents)
    goals = np.column_stack([goal_radius * np.cos(gtheta), goal_radius * np.sin(gtheta)])
    speeds = params.v0 * rng.uniform(0.8, 1.2, n_agents)
    heading = goals - pos
    heading /= np.hypot(heading[:, 0], heading[:, 1])[:, None]
    vel = heading * speeds[:, None]
    entry = rng.integers(0, max_entry + 1, n_agents)
    entry[rng.integers(n_agents)] = 0
    P, V = simulate_social_forces(pos, vel, goals, steps, params, speeds, entry)
    yaw0 = np.arctan2(heading[:, 1], heading[:, 0])
    return Scene(tracks_from_history(P, V, entry, init_yaw=yaw0), frame_rate=1.0 / params.dt)


# ----------------------------------------------------------------------
# constant velocity
# ----------------------------------------------------------------------


def constant_velocity_track(agent_id: int, start, velocity, steps: int, frame_rate: float = 2.5,
                            first_frame: int = 0) -> AgentTrack:
    start = np.asarray(start, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    t = np.arange(steps) / frame_rate
    xy = start[None, :] + t[:, None] * velocity[None, :]
    speed = float(np.hypot(*velocity))
    yaw = math.atan2(velocity[1], velocity[0]) if speed > 0 else 0.0
    st = np.column_stack([xy, np.full(steps, speed), np.full(steps, math.cos(yaw / 2)),
                          np.full(steps, math.sin(yaw / 2))])
    return AgentTrack(agent_id, np.arange(first_frame, first_frame + steps), st)


def vehicle_track(agent_id: int, start, direction: float, speed: float, steps: int, rng: np.random.Generator,
                  frame_rate: float = 2.5, speed_noise: float = 0.15, lateral_noise: float = 0.03,
                  speed_range=(1.5, 4.5)) -> AgentTrack:
    """Lane-following vehicle along ``direction * x`` whose speed and lateral offset random-walk.

    Per-frame speed changes have standard deviation ``speed_noise`` (m/s) and
    are clipped to ``speed_range``; the lateral offset drifts by
    ``lateral_noise`` (m) per frame.
    """
    dt = 1.0 / frame_rate
    xy = np.empty((steps, 2))
    vel = np.empty((steps, 2))
    p = np.asarray(start, dtype=np.float64).copy()
    for k in range(steps):
        if k:
            speed = float(np.clip(speed + speed_noise * rng.standard_normal(), *speed_range))
        lateral = lateral_noise * rng.standard_normal() * frame_rate if k else 0.0
        v = np.array([direction * speed, lateral])
        if k:
            p = p + dt * v
        xy[k], vel[k] = p, v
    yaw = np.arctan2(vel[:, 1], vel[:, 0])
    st = np.column_stack([xy, np.hypot(vel[:, 0], vel[:, 1]), np.cos(yaw / 2), np.sin(yaw / 2)])
    return AgentTrack(agent_id, np.arange(steps), st)


def gen_constant_velocity(n_agents: int, steps: int, speed_range=(0.5, 1.5), seed: int = 0,
                          frame_rate: float = 2.5, extent: float = 5.0) -> Scene:
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    rng = np.random.default_rng(seed)
    tracks = []
    for i in range(n_agents):
        start = rng.uniform(-extent, extent, 2)
        heading = rng.uniform(-np.pi, np.pi)
        speed = rng.uniform(*speed_range)
        tracks.append(constant_velocity_track(i, start, speed * np.array([math.cos(heading), math.sin(heading)]),
                                              steps, frame_rate))
    return Scene(tracks, frame_rate=frame_rate)


# ----------------------------------------------------------------------
# crossing labels
# ----------------------------------------------------------------------


def _in_corridor(xy: np.ndarray, corridor) -> np.ndarray:
    x0, x1, y0, y1 = corridor
    return (xy[..., 0] >= x0) & (xy[..., 0] <= x1) & (xy[..., 1] >= y0) & (xy[..., 1] <= y1)


def horizon_frames(rule: CrossingRule, frame_rate: float) -> int:
    return int(round(rule.horizon * frame_rate))


def label_window(scene: Scene, rule: CrossingRule, spec: WindowSpec, start: int) -> CrossingLabel:
    """Cross iff the signal is Green (or absent) from window start to the end of the
    horizon and no agent is inside the corridor between the decision frame (last
    observed frame) and the end of the horizon."""
    decision = start + spec.t_obs - 1
    last = decision + horizon_frames(rule, scene.frame_rate)
    if rule.phases:
        for f in range(start, last + 1):
            if rule.signal_at(f) is not TrafficLightState.GREEN:
                return CrossingLabel.DONT_CROSS
    for t in scene.tracks:
        sel = (t.frames >= decision) & (t.frames <= last)
        if np.any(_in_corridor(t.states[sel, :2], rule.corridor)):
            return CrossingLabel.DONT_CROSS
    return CrossingLabel.CROSS


def label_crossing(scene: Scene, rule: CrossingRule, spec: WindowSpec, starts=None):
    """Labels for every window start plus the per-frame signal state (Off when unsignalized)."""
    if starts is None:
        starts = window_starts(scene, spec)
    labels = [(s, label_window(scene, rule, spec, s)) for s in starts]
    fr = scene.frame_range()
    frames = range(fr[0], fr[1] + 1) if fr else range(0)
    states = [(f, rule.signal_at(f) or TrafficLightState.OFF) for f in frames]
    return labels, states


# ----------------------------------------------------------------------
# traffic-light patches
# ----------------------------------------------------------------------

SIGNAL_COLORS = {
    TrafficLightState.RED: (0.9, 0.1, 0.1),
    TrafficLightState.GREEN: (0.1, 0.85, 0.25),
    TrafficLightState.YELLOW: (0.95, 0.8, 0.1),
}


def render_signal_patch(state: TrafficLightState, size: int = 40, noise: float = 0.15, seed: int = 0,
                        margin: int = 8) -> LabeledImage:
    """Coloured disc on a dark housing over a noisy background.

    The disc stays at least ``margin`` pixels plus its radius inside every
    border, so any crop removing at most ``margin`` pixels from a side keeps it whole.
    """
    if size < 16:
        raise ValueError("size must be >= 16")
    state = TrafficLightState(state)
    rng = np.random.default_rng(seed)
    img = 0.35 + noise * rng.standard_normal((size, size, 3))
    radius = max(2.0, size / 8)
    lo, hi = margin + radius + 1, size - margin - radius - 1
    cy, cx = rng.uniform(lo, hi, 2)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    box = (np.abs(yy - cy) <= radius + 2) & (np.abs(xx - cx) <= radius + 2)
    img[box] = 0.08 + 0.03 * rng.standard_normal((int(box.sum()), 3))
    if state is not TrafficLightState.OFF:
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
        img[disc] = np.asarray(SIGNAL_COLORS[state]) + 0.05 * rng.standard_normal((int(disc.sum()), 3))
    return LabeledImage(np.clip(img, 0.0, 1.0), state)


# ----------------------------------------------------------------------
# intersection scenes for the crossing predictor
# ----------------------------------------------------------------------


@dataclass
class IntersectionScene:
    scene: Scene
    rule: CrossingRule
    light: TrafficLightState  # what the camera sees (Off when unsignalized)
    label: CrossingLabel


def gen_intersection(seed: int, signalized: bool, spec: WindowSpec = WindowSpec(8, 12, 20, 4),
                     frame_rate: float = 2.5, rule: CrossingRule = CrossingRule(),
                     lanes=((3.0, 1.0), (6.0, -1.0)), speed_range=(1.5, 4.5)) -> IntersectionScene:
    """Street in front of the robot with straight-driving vehicles on two lanes.

    Traffic danger (some vehicle inside the corridor within the horizon) is
    drawn as a fair coin and vehicles are resampled until they realise it, so
    the traffic component of the label is balanced. Signalized scenes show a
    constant Red or Green light. Vehicles keep to their lane with small speed
    and lateral jitter; the default speeds keep every per-frame step shorter
    than the corridor width so no vehicle jumps over it between frames.
    """
    rng = np.random.default_rng(seed)
    steps = spec.length
    decision = spec.t_obs - 1
    want_danger = bool(rng.integers(2))
    light = TrafficLightState.OFF
    phases: tuple = ()
    if signalized:
        light = TrafficLightState.GREEN if rng.integers(2) else TrafficLightState.RED
        phases = ((0, light),)
    rule = CrossingRule(rule.corridor, rule.horizon, phases)
    h = horizon_frames(rule, frame_rate)
    for _ in range(1000):
        n = int(rng.integers(1, spec.n_max + 1))
        tracks = []
        for i in range(n):
            lane_y, direction = lanes[int(rng.integers(len(lanes)))]
            speed = rng.uniform(*speed_range)
            # x at the decision frame, within reach of the corridor in either sense
            xd = -direction * rng.uniform(-4.0, speed * (h + 6) / frame_rate)
            start = np.array([xd - direction * speed * decision / frame_rate, lane_y])
            tracks.append(vehicle_track(i, start, direction, speed, steps, rng, frame_rate,
                                        speed_range=speed_range))
        scene = Scene(tracks, frame_rate=frame_rate)
        danger = label_window(scene, CrossingRule(rule.corridor, rule.horizon), spec, 0) is CrossingLabel.DONT_CROSS
        if danger == want_danger:
            break
    return IntersectionScene(scene, rule, light, label_window(scene, rule, spec, 0))
