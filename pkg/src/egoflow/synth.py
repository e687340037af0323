"""Synthetic multi-agent pedestrian scenes watched by a moving ego robot.

A light social-force integrator (goal attraction plus pairwise exponential
repulsion, symplectic Euler) produces the interaction-rich crossings and
followings that make downstream occlusion and identity-switch corruption
meaningful. Parameters are fixed module constants, not learned.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .trajectory import SceneTrack

BEHAVIORS = ("crossing", "following", "pass_by", "static_obstacle_avoid")

MAX_SPEED = 2.5  # m/s hard clamp, keeps clean data under the 2 m/s noise filter
PREFERRED_SPEED = 1.25  # m/s nominal walking speed
GOAL_TAU = 0.5  # s relaxation toward the preferred velocity
GOAL_EPS = 0.3  # m arrival radius; inside it the desired velocity is zero
REPULSION_STRENGTH = 7.0  # m/s^2 at zero separation
REPULSION_DECAY = 0.5  # m exponential decay length of the repulsion force
REPULSION_RANGE = 2.0  # m interaction cutoff; no force beyond this
AREA_PER_AGENT = 3.0  # m^2 feasibility floor for spawning


class SceneSpecError(ValueError):
    """Raised when a scene specification cannot be realized."""


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for one synthetic scene."""

    n_agents: int = 8
    duration_frames: int = 44
    dt: float = 0.4
    arena: tuple[float, float, float, float] = (-8.0, -8.0, 8.0, 8.0)  # xmin, ymin, xmax, ymax
    behavior_mix: dict[str, float] = field(
        default_factory=lambda: {
            "crossing": 0.4,
            "following": 0.2,
            "pass_by": 0.25,
            "static_obstacle_avoid": 0.15,
        }
    )
    seed: int = 0

    def __post_init__(self):
        if self.n_agents < 2:
            raise SceneSpecError("need the ego plus at least one pedestrian")
        if self.duration_frames < 20:
            raise SceneSpecError("scene must cover one full 8+12 frame window")
        if self.dt <= 0:
            raise SceneSpecError(f"dt must be positive, got {self.dt}")
        xmin, ymin, xmax, ymax = self.arena
        if xmax <= xmin or ymax <= ymin:
            raise SceneSpecError(f"degenerate arena {self.arena}")
        unknown = set(self.behavior_mix) - set(BEHAVIORS)
        if unknown:
            raise SceneSpecError(f"unknown behaviors {sorted(unknown)}")
        if any(w < 0 for w in self.behavior_mix.values()):
            raise SceneSpecError("behavior weights must be non-negative")
        if sum(self.behavior_mix.values()) <= 0:
            raise SceneSpecError("behavior weights must not all be zero")

    @property
    def arena_size(self) -> tuple[float, float]:
        xmin, ymin, xmax, ymax = self.arena
        return xmax - xmin, ymax - ymin


@dataclass(frozen=True)
class CleanScene:
    """Ground-truth world: pedestrian tracks plus the ego track."""

    tracks: list[SceneTrack]
    ego_track: SceneTrack
    spec: SceneSpec | None = None

    @property
    def n_frames(self) -> int:
        return self.ego_track.n_frames

    @property
    def dt(self) -> float:
        return self.ego_track.dt

    def all_positions(self, frame: int) -> np.ndarray:
        """(A, 2) positions at one frame, ego last."""
        rows = [t.positions[frame] for t in self.tracks]
        rows.append(self.ego_track.positions[frame])
        return np.asarray(rows, dtype=np.float64)


def social_step(
    positions: np.ndarray,
    velocities: np.ndarray,
    goals: np.ndarray,
    dt: float,
    preferred_speed: np.ndarray | float = PREFERRED_SPEED,
) -> tuple[np.ndarray, np.ndarray]:
    """One symplectic-Euler step of the social-force dynamics.

    Goal force relaxes each agent toward its preferred velocity; pairwise
    repulsion decays exponentially with distance (range REPULSION_RANGE).
    Speeds are clamped to MAX_SPEED.
    """
    pos = np.asarray(positions, dtype=np.float64)
    vel = np.asarray(velocities, dtype=np.float64)
    goals = np.asarray(goals, dtype=np.float64)
    pref = np.broadcast_to(np.asarray(preferred_speed, dtype=np.float64), pos.shape[:1])

    to_goal = goals - pos
    dist = np.linalg.norm(to_goal, axis=1)
    desired = np.zeros_like(pos)
    far = dist > GOAL_EPS
    desired[far] = to_goal[far] / dist[far, None] * pref[far, None]
    force = (desired - vel) / GOAL_TAU

    diff = pos[:, None, :] - pos[None, :, :]
    sep = np.linalg.norm(diff, axis=2)
    np.fill_diagonal(sep, np.inf)
    magnitude = REPULSION_STRENGTH * np.exp(-sep / REPULSION_DECAY)
    magnitude[sep > REPULSION_RANGE] = 0.0
    away = diff / np.maximum(sep, 1e-9)[:, :, None]
    force = force + np.sum(magnitude[:, :, None] * away, axis=1)

    new_vel = vel + force * dt
    speed = np.linalg.norm(new_vel, axis=1)
    over = speed > MAX_SPEED
    new_vel[over] *= (MAX_SPEED / speed[over])[:, None]
    return pos + new_vel * dt, new_vel


def _behavior_counts(mix: dict[str, float], n: int, rng: np.random.Generator) -> list[str]:
    """Assign n pedestrians to behaviors by largest remainder of the weights."""
    weights = np.array([mix.get(b, 0.0) for b in BEHAVIORS], dtype=np.float64)
    weights = weights / weights.sum()
    raw = weights * n
    counts = np.floor(raw).astype(int)
    # crossing agents come in pairs; the remainder goes to the largest fractions
    for _ in range(n - counts.sum()):
        frac = raw - counts
        counts[int(np.argmax(frac))] += 1
        raw = raw - 1e-9  # stable tiebreak on repeated remainders
    if mix.get("crossing", 0.0) > 0 and counts[0] < 2 and n >= 2:
        counts[0] = 2
        while counts.sum() > n:
            donor = int(np.argmax(counts[1:])) + 1
            counts[donor] -= 1
    if counts[0] % 2 == 1:
        counts[0] -= 1
        counts[2] += 1
    labels: list[str] = []
    for b, c in zip(BEHAVIORS, counts):
        labels.extend([b] * c)
    rng.shuffle(labels)
    return labels


def _edge_point(spec: SceneSpec, rng: np.random.Generator, side: int, margin: float = 0.8) -> np.ndarray:
    """Random point on one arena side (0=left, 1=right, 2=bottom, 3=top)."""
    xmin, ymin, xmax, ymax = spec.arena
    u = rng.uniform(0.25, 0.75)
    if side == 0:
        return np.array([xmin + margin, ymin + u * (ymax - ymin)])
    if side == 1:
        return np.array([xmax - margin, ymin + u * (ymax - ymin)])
    if side == 2:
        return np.array([xmin + u * (xmax - xmin), ymin + margin])
    return np.array([xmin + u * (xmax - xmin), ymax - margin])


def generate_scene(spec: SceneSpec) -> CleanScene:
    """Simulate one scene deterministically from its seed.

    When the behavior mix gives crossing positive weight, at least one
    pedestrian pair meets within 0.8 m near the arena center, which is
    what later triggers identity switches under corruption; spawn layouts
    whose avoidance maneuvers dodge the meeting are redrawn.
    """
    w, h = spec.arena_size
    if w * h < AREA_PER_AGENT * spec.n_agents:
        raise SceneSpecError(
            f"arena {w:.1f}x{h:.1f} m too small for {spec.n_agents} agents "
            f"(need >= {AREA_PER_AGENT} m^2 each)"
        )
    rng = np.random.default_rng(spec.seed)
    need_crossing = spec.behavior_mix.get("crossing", 0.0) > 0 and spec.n_agents >= 3
    scene = _generate_once(spec, rng)
    for _ in range(12):
        if not need_crossing or has_crossing_event(scene):
            break
        scene = _generate_once(spec, rng)
    return scene


def _generate_once(spec: SceneSpec, rng: np.random.Generator) -> CleanScene:
    w, h = spec.arena_size
    xmin, ymin, xmax, ymax = spec.arena
    n_ped = spec.n_agents - 1

    starts = np.zeros((spec.n_agents, 2))
    goals = np.zeros((spec.n_agents, 2))
    pref = np.full(spec.n_agents, PREFERRED_SPEED)

    # the ego creeps forward behind the crowd; pedestrian endpoints are
    # sampled in a wedge around its forward axis so the camera cone covers
    # most of the action for most of the scene
    ego_side = int(rng.integers(0, 4))
    starts[-1] = _edge_point(spec, rng, ego_side)
    far_point = _edge_point(spec, rng, ego_side ^ 1)
    axis = far_point - starts[-1]
    length = np.linalg.norm(axis)
    fwd = axis / length
    goals[-1] = starts[-1] + 0.25 * length * fwd
    pref[-1] = 0.7
    anchor = goals[-1]
    ego_angle = np.arctan2(fwd[1], fwd[0])
    r_max = 0.68 * length

    def wedge_point(r: float, bearing_deg: float) -> np.ndarray:
        ang = ego_angle + np.deg2rad(bearing_deg)
        p = anchor + r * np.array([np.cos(ang), np.sin(ang)])
        return np.clip(p, [xmin + 0.6, ymin + 0.6], [xmax - 0.6, ymax - 0.6])

    labels = _behavior_counts(spec.behavior_mix, n_ped, rng)
    crossing_ids = [i for i, b in enumerate(labels) if b == "crossing"]
    # pair up crossing agents: same radius and speed so they meet mid-wedge,
    # with lateral approach legs short enough to stay inside the cone
    for a, b in zip(crossing_ids[0::2], crossing_ids[1::2]):
        meet = wedge_point(rng.uniform(0.55, 0.85) * r_max, rng.uniform(-14, 14))
        radius = 2.2
        sign = 1.0 if rng.random() < 0.5 else -1.0
        theta = ego_angle + sign * rng.uniform(np.deg2rad(55), np.deg2rad(125))
        sep_angle = np.pi / 2 + rng.uniform(-0.3, 0.3)
        for agent, ang in ((a, theta), (b, theta + sep_angle)):
            offset = np.array([np.cos(ang), np.sin(ang)]) * radius
            jitter = rng.normal(0, 0.15, size=2)
            starts[agent] = meet + offset + jitter
            goals[agent] = meet - 0.7 * offset + jitter
            pref[agent] = rng.uniform(1.1, 1.4)

    def stage_lane(toward_ego: bool) -> tuple[np.ndarray, np.ndarray]:
        """A lateral walk across the wedge, or counter-flow toward the ego."""
        if toward_ego:
            b0, b1 = rng.uniform(-14, 14), rng.uniform(-14, 14)
            r0, r1 = rng.uniform(0.75, 0.95) * r_max, rng.uniform(0.35, 0.5) * r_max
        else:
            side = 1.0 if rng.random() < 0.5 else -1.0
            b0, b1 = side * rng.uniform(26, 50), -side * rng.uniform(26, 50)
            r0, r1 = rng.uniform(0.4, 0.8) * r_max, rng.uniform(0.4, 0.8) * r_max
        return wedge_point(r0, b0), wedge_point(r1, b1)

    leader = None
    for i, b in enumerate(labels):
        if b == "crossing":
            continue
        if b == "following":
            if leader is None or labels[leader] != "following":
                starts[i], goals[i] = stage_lane(toward_ego=rng.random() < 0.5)
                pref[i] = rng.uniform(1.0, 1.3)
                leader = i
            else:
                direction = goals[leader] - starts[leader]
                direction /= max(np.linalg.norm(direction), 1e-9)
                starts[i] = starts[leader] - direction * rng.uniform(1.2, 1.8)
                goals[i] = goals[leader]
                pref[i] = pref[leader]
                leader = None
        elif b == "pass_by":
            starts[i], goals[i] = stage_lane(toward_ego=rng.random() < 0.4)
            pref[i] = rng.uniform(0.9, 1.4)
        else:  # static_obstacle_avoid: alternate standing people and walkers
            if rng.random() < 0.5:
                spot = wedge_point(rng.uniform(0.35, 0.8) * r_max, rng.uniform(-16, 16))
                # keep standing people clear of already placed starts
                for _ in range(20):
                    if np.linalg.norm(starts[:i] - spot, axis=1).min(initial=np.inf) > 1.5:
                        break
                    spot = wedge_point(rng.uniform(0.35, 0.8) * r_max, rng.uniform(-16, 16))
                starts[i] = spot
                goals[i] = spot
                pref[i] = 0.0
            else:
                starts[i], goals[i] = stage_lane(toward_ego=False)
                pref[i] = rng.uniform(0.9, 1.2)

    # push apart any overlapping spawn points
    for _ in range(24):
        diff = starts[:, None, :] - starts[None, :, :]
        sep = np.linalg.norm(diff, axis=2)
        np.fill_diagonal(sep, np.inf)
        i, j = np.unravel_index(int(np.argmin(sep)), sep.shape)
        if sep[i, j] >= 1.0:
            break
        gap = diff[i, j] / max(sep[i, j], 1e-6)
        starts[i] += gap * (1.0 - sep[i, j]) / 2
        starts[j] -= gap * (1.0 - sep[i, j]) / 2

    # walking agents start already at their preferred velocity
    vel = np.zeros_like(starts)
    to_goal = goals - starts
    dist = np.linalg.norm(to_goal, axis=1)
    moving = dist > GOAL_EPS
    vel[moving] = to_goal[moving] / dist[moving, None] * pref[moving, None]

    # sub-stepped integration keeps the strong close-range forces smooth
    substeps = 4
    pos = starts.copy()
    frames = [pos.copy()]
    for _ in range(spec.duration_frames - 1):
        for _ in range(substeps):
            pos, vel = social_step(pos, vel, goals, spec.dt / substeps, preferred_speed=pref)
        frames.append(pos.copy())
    stacked = np.stack(frames, axis=1)  # (A, F, 2)

    tracks = [
        SceneTrack(agent_id=i, positions=stacked[i], t0=0, dt=spec.dt)
        for i in range(n_ped)
    ]
    ego = SceneTrack(agent_id=n_ped, positions=stacked[-1], t0=0, dt=spec.dt)
    return CleanScene(tracks=tracks, ego_track=ego, spec=spec)


def min_pairwise_distance(scene: CleanScene) -> float:
    """Smallest distance between any two agents over all frames."""
    best = np.inf
    for f in range(scene.n_frames):
        pts = scene.all_positions(f)
        diff = pts[:, None, :] - pts[None, :, :]
        sep = np.linalg.norm(diff, axis=2)
        np.fill_diagonal(sep, np.inf)
        best = min(best, float(sep.min()))
    return best


def has_crossing_event(scene: CleanScene, threshold: float = 0.8) -> bool:
    """True when some pedestrian pair approaches within threshold meters."""
    n = len(scene.tracks)
    for i in range(n):
        for j in range(i + 1, n):
            gap = np.linalg.norm(
                scene.tracks[i].positions - scene.tracks[j].positions, axis=1
            )
            if gap.min() <= threshold:
                return True
    return False


def scene_to_record(scene_id: int, scene: CleanScene) -> dict:
    """Newline-delimited JSON record for one scene, ego last."""
    agents = [
        {"id": t.agent_id, "t0": t.t0, "xy": t.positions.tolist()}
        for t in scene.tracks
    ]
    agents.append(
        {
            "id": scene.ego_track.agent_id,
            "t0": scene.ego_track.t0,
            "xy": scene.ego_track.positions.tolist(),
        }
    )
    return {
        "scene_id": scene_id,
        "dt": scene.dt,
        "agents": agents,
        "ego_id": scene.ego_track.agent_id,
    }


def record_to_scene(record: dict) -> CleanScene:
    dt = float(record["dt"])
    ego_id = record["ego_id"]
    tracks = []
    ego = None
    for a in record["agents"]:
        track = SceneTrack(
            agent_id=int(a["id"]),
            positions=np.asarray(a["xy"], dtype=np.float64),
            t0=int(a["t0"]),
            dt=dt,
        )
        if a["id"] == ego_id:
            ego = track
        else:
            tracks.append(track)
    if ego is None:
        raise ValueError(f"scene {record.get('scene_id')} has no ego track")
    return CleanScene(tracks=tracks, ego_track=ego, spec=None)


def write_scenes(path: str | Path, scenes: list[tuple[int, CleanScene]]) -> None:
    with open(path, "w") as fh:
        for scene_id, scene in scenes:
            fh.write(json.dumps(scene_to_record(scene_id, scene)) + "\n")


def read_scenes(path: str | Path) -> list[tuple[int, CleanScene]]:
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            out.append((int(record["scene_id"]), record_to_scene(record)))
    return out
