"""Deterministic synthetic racetrack scenes.

Stands in for real sweeps: two parallel track walls around the ego
origin plus rectangular agent boxes moving at constant velocity along
the track.  Every frame is addressed by (spec, t) alone, so frames can
be generated independently and out of order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bev import PointCloud


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    track_half_width: float = 6.0   # wall offset from centerline, meters
    track_length: float = 12.0      # visible wall extent, +/- along x
    wall_height: float = 1.2
    n_agents: int = 2
    agent_speed: float = 0.5        # meters per frame, along +x
    points_per_frame: int = 2000
    noise_sigma: float = 0.02


def _rng(spec: SceneSpec, t: int) -> np.random.Generator:
    # keyed on (seed, t) so frames are independently addressable
    return np.random.default_rng([spec.seed, int(t)])


def agent_center(spec: SceneSpec, agent: int, t: int) -> np.ndarray:
    """Constant-velocity box center at frame t (deterministic per agent)."""
    rng = np.random.default_rng([spec.seed, 9173, agent])
    x0 = rng.uniform(-spec.track_length * 0.8, -spec.track_length * 0.2)
    y0 = rng.uniform(-spec.track_half_width * 0.6, spec.track_half_width * 0.6)
    return np.array([x0 + spec.agent_speed * t, y0, 0.4])


AGENT_BOX = np.array([1.8, 0.9, 0.8])  # length, width, height


def gen_frame(spec: SceneSpec, t: int) -> PointCloud:
    if t < 0:
        raise ValueError(f"frame index must be >= 0, got {t}")
    rng = _rng(spec, t)
    n = spec.points_per_frame
    n_agent_pts = 0 if spec.n_agents == 0 else n // 4
    n_wall = n - n_agent_pts

    xs = rng.uniform(-spec.track_length, spec.track_length, n_wall)
    side = rng.choice([-1.0, 1.0], n_wall)
    ys = side * spec.track_half_width
    zs = rng.uniform(0.0, spec.wall_height, n_wall)
    wall = np.column_stack([xs, ys, zs])

    chunks = [wall]
    if n_agent_pts:
        per = np.array_split(np.arange(n_agent_pts), spec.n_agents)
        for a, idx in enumerate(per):
            k = len(idx)
            center = agent_center(spec, a, t)
            offs = rng.uniform(-0.5, 0.5, (k, 3)) * AGENT_BOX
            offs[:, 2] += AGENT_BOX[2] / 2  # box sits on the ground
            chunks.append(center + offs)
    pts = np.vstack(chunks)
    pts += rng.normal(0.0, spec.noise_sigma, pts.shape)
    intensity = rng.uniform(0.0, 1.0, (pts.shape[0], 1))
    return PointCloud(points=np.hstack([pts, intensity]))


def gen_sequence(spec: SceneSpec, t0: int, t_len: int) -> list:
    if t_len < 1:
        raise ValueError(f"sequence length must be >= 1, got {t_len}")
    return [gen_frame(spec, t) for t in range(t0, t0 + t_len)]
