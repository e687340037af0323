"""Ego-view corruption of clean scenes.

Reproduces the five first-person failure modes on synthetic ground truth:
occlusion by nearer bodies, field-of-view exits, identity switches at close
crossings, range-dependent localization error standing in for perspective
distortion, and a shared odometry drift random walk. The geometric ray and
cone tests replace the pixel-count visibility rule of real segmentation
masks; the binary role of that threshold is preserved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .synth import CleanScene
from .trajectory import ObservedHistory, interleave


@dataclass(frozen=True)
class NoiseProfile:
    """Corruption strengths; all lengths in meters."""

    fov_deg: float = 90.0
    occlusion_radius: float = 0.3  # body radius blocking the view ray
    id_switch_dist: float = 0.5  # close-approach distance that can swap tracks
    base_sigma: float = 0.05  # localization noise floor
    range_sigma_per_m: float = 0.02  # extra noise std per meter of range
    drift_sigma: float = 0.01  # per-step std of the shared ego drift walk
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.fov_deg <= 360:
            raise ValueError(f"fov_deg must be in (0, 360], got {self.fov_deg}")
        for name in ("occlusion_radius", "id_switch_dist", "base_sigma",
                     "range_sigma_per_m", "drift_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class AgentCorruption:
    """Per-agent corruption tallies for one scene."""

    occluded_frames: int = 0
    out_of_fov_frames: int = 0
    id_switch_events: int = 0
    mean_loc_error: float = 0.0  # meters, over frames marked visible


@dataclass
class CorruptionReport:
    per_agent: dict[int, AgentCorruption] = field(default_factory=dict)
    invisible_rate: float = 0.0  # fraction of non-ego agent-frames masked out
    history_mse: float = 0.0  # m^2 vs clean, over all non-ego agent-frames as fed


def ego_headings(ego_positions: np.ndarray) -> np.ndarray:
    """Unit forward direction per frame; holds the last heading when stopped."""
    diffs = np.diff(ego_positions, axis=0)
    headings = np.zeros_like(ego_positions)
    current = np.array([1.0, 0.0])
    for f in range(ego_positions.shape[0]):
        step = diffs[min(f, diffs.shape[0] - 1)] if diffs.shape[0] else np.zeros(2)
        norm = np.linalg.norm(step)
        if norm > 1e-9:
            current = step / norm
        headings[f] = current
    return headings


def _visibility_frame(
    points: np.ndarray,
    ego_pos: np.ndarray,
    heading: np.ndarray,
    profile: NoiseProfile,
) -> tuple[np.ndarray, np.ndarray]:
    """Visibility of non-ego points plus which failures were FOV exits.

    A point is invisible when it lies outside the ego-centered cone or when
    the sight ray passes within occlusion_radius of a nearer body (any
    other pedestrian, seen or not, blocks physically).
    """
    n = points.shape[0]
    rel = points - ego_pos
    ranges = np.linalg.norm(rel, axis=1)

    in_fov = np.ones(n, dtype=bool)
    if profile.fov_deg < 360:
        cos_half = np.cos(np.deg2rad(profile.fov_deg) / 2)
        dots = rel @ heading
        # points at the ego position count as inside the cone
        in_fov = (dots >= cos_half * ranges) | (ranges < 1e-9)

    visible = in_fov.copy()
    for a in range(n):
        if not visible[a] or ranges[a] < 1e-9:
            continue
        ray = rel[a] / ranges[a]
        for b in range(n):
            if b == a:
                continue
            proj = rel[b] @ ray
            if not 0.0 < proj < ranges[a]:
                continue
            perp = np.linalg.norm(rel[b] - proj * ray)
            if perp < profile.occlusion_radius:
                visible[a] = False
                break
    return visible, in_fov


def visibility(scene: CleanScene, frame: int, profile: NoiseProfile) -> np.ndarray:
    """Binary visibility over agents (ego last, always 1) at one frame."""
    if not 0 <= frame < scene.n_frames:
        raise ValueError(f"frame {frame} outside scene span {scene.n_frames}")
    pts = scene.all_positions(frame)
    headings = ego_headings(scene.ego_track.positions)
    vis, _ = _visibility_frame(pts[:-1], pts[-1], headings[frame], profile)
    return np.concatenate([vis.astype(np.float64), [1.0]])


def fill_invisible(points: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Fill masked frames: linear interior interpolation, nearest at edges."""
    out = np.array(points, dtype=np.float64, copy=True)
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return np.zeros_like(out)
    missing = np.flatnonzero(~valid.astype(bool))
    for c in (0, 1):
        out[missing, c] = np.interp(missing, idx, out[idx, c])
    return out


def corrupt_scene(
    scene: CleanScene, profile: NoiseProfile
) -> tuple[ObservedHistory, CorruptionReport]:
    """Render the whole scene as the ego would have tracked it.

    Returns a scene-spanning ObservedHistory (rows ordered like the clean
    pedestrian tracks, ego last) whose masked-out frames already carry
    interpolated values, plus the corruption tallies. The benchmark
    builder cuts observation windows out of this matrix later.
    """
    rng = np.random.default_rng(profile.seed)
    n_ped = len(scene.tracks)
    frames = scene.n_frames
    clean = np.stack([t.positions for t in scene.tracks], axis=0) if n_ped else np.zeros((0, frames, 2))
    ego = scene.ego_track.positions
    headings = ego_headings(ego)

    observed = np.zeros((n_ped, frames, 2))
    mask = np.zeros((n_ped, frames))
    fov_flags = np.zeros((n_ped, frames), dtype=bool)

    # source[a] = which physical pedestrian identity a is currently tracking
    source = np.arange(n_ped)
    in_contact: set[tuple[int, int]] = set()
    switch_counts = np.zeros(n_ped, dtype=int)
    drift = np.zeros(2)

    for f in range(frames):
        pts = clean[:, f, :]
        vis, in_fov = _visibility_frame(pts, ego[f], headings[f], profile)
        drift = drift + rng.normal(0.0, profile.drift_sigma, size=2)

        # close approaches between visible pedestrians may swap their tracks
        contacts: set[tuple[int, int]] = set()
        for i in range(n_ped):
            for j in range(i + 1, n_ped):
                if np.linalg.norm(pts[i] - pts[j]) < profile.id_switch_dist:
                    contacts.add((i, j))
        for pair in sorted(contacts):
            i, j = pair
            if pair in in_contact or not (vis[i] and vis[j]):
                continue
            if rng.random() < 0.5:
                ai = int(np.flatnonzero(source == i)[0])
                aj = int(np.flatnonzero(source == j)[0])
                source[ai], source[aj] = source[aj], source[ai]
                switch_counts[ai] += 1
                switch_counts[aj] += 1
        in_contact = contacts

        noise = rng.normal(0.0, 1.0, size=(n_ped, 2))
        for a in range(n_ped):
            s = source[a]
            if not vis[s]:
                if in_fov[s]:
                    fov_flags[a, f] = False
                else:
                    fov_flags[a, f] = True
                continue
            mask[a, f] = 1.0
            sigma = profile.base_sigma + profile.range_sigma_per_m * np.linalg.norm(
                pts[s] - ego[f]
            )
            observed[a, f] = pts[s] + drift + sigma * noise[a]

    per_agent: dict[int, AgentCorruption] = {}
    sq_err_sum, n_cells = 0.0, 0
    for a in range(n_ped):
        valid = mask[a].astype(bool)
        observed[a] = fill_invisible(observed[a], mask[a])
        err = np.linalg.norm(observed[a] - clean[a], axis=1)
        agent_id = scene.tracks[a].agent_id
        per_agent[agent_id] = AgentCorruption(
            occluded_frames=int(np.sum(~valid & ~fov_flags[a])),
            out_of_fov_frames=int(np.sum(fov_flags[a])),
            id_switch_events=int(switch_counts[a]),
            mean_loc_error=float(err[valid].mean()) if valid.any() else 0.0,
        )
        sq_err_sum += float((err**2).sum())
        n_cells += frames

    values = np.concatenate(
        [interleave(observed), interleave(ego)[None, :]], axis=0
    )
    full_mask = np.concatenate([mask, np.ones((1, frames))], axis=0)
    history = ObservedHistory(values=values, mask=full_mask, ego_index=n_ped)
    report = CorruptionReport(
        per_agent=per_agent,
        invisible_rate=float(1.0 - mask.mean()) if n_ped else 0.0,
        history_mse=sq_err_sum / n_cells if n_cells else 0.0,
    )
    return history, report


def apply_speed_filter(
    positions: np.ndarray,
    visible: np.ndarray,
    dt: float,
    speed_limit: float = 2.0,
) -> np.ndarray:
    """Drop frames implying implausible motion.

    A frame is invalid when the speed implied from the previous valid frame
    reaches speed_limit; invisible frames are invalid and never become the
    reference. The result is the visibility mask AND-ed with plausibility.
    """
    pts = np.asarray(positions, dtype=np.float64)
    vis = np.asarray(visible).astype(bool)
    valid = np.zeros(pts.shape[0])
    last = -1
    for f in range(pts.shape[0]):
        if not vis[f]:
            continue
        if last >= 0:
            speed = np.linalg.norm(pts[f] - pts[last]) / ((f - last) * dt)
            if speed >= speed_limit:
                continue
        valid[f] = 1.0
        last = f
    return valid


def corrupted_to_record(
    scene_id: int, dt: float, ego_id: int, history: ObservedHistory, agent_ids: list[int]
) -> dict:
    """NDJSON record mirroring the clean-scene schema plus mask arrays."""
    pts = history.points()
    agents = []
    for row, agent_id in enumerate(agent_ids):
        agents.append(
            {
                "id": agent_id,
                "t0": 0,
                "xy": pts[row].tolist(),
                "mask": history.mask[row].astype(int).tolist(),
            }
        )
    return {"scene_id": scene_id, "dt": dt, "agents": agents, "ego_id": ego_id}


def record_to_corrupted(record: dict) -> tuple[int, ObservedHistory, list[int]]:
    ego_id = record["ego_id"]
    rows = [a for a in record["agents"] if a["id"] != ego_id]
    rows += [a for a in record["agents"] if a["id"] == ego_id]
    values = np.stack([interleave(np.asarray(a["xy"], dtype=np.float64)) for a in rows])
    mask = np.stack([np.asarray(a["mask"], dtype=np.float64) for a in rows])
    history = ObservedHistory(values=values, mask=mask, ego_index=len(rows) - 1)
    return int(record["scene_id"]), history, [a["id"] for a in rows]


def report_to_dict(report: CorruptionReport) -> dict:
    return {
        "invisible_rate": report.invisible_rate,
        "history_mse": report.history_mse,
        "per_agent": {
            str(k): {
                "occluded_frames": v.occluded_frames,
                "out_of_fov_frames": v.out_of_fov_frames,
                "id_switch_events": v.id_switch_events,
                "mean_loc_error": v.mean_loc_error,
            }
            for k, v in sorted(report.per_agent.items())
        },
    }


def corruption_summary(reports: Iterable[CorruptionReport]) -> dict:
    """Scene-set aggregates in the style of a dataset statistics table."""
    reports = list(reports)
    if not reports:
        return {"scenes": 0, "invisible_rate": 0.0, "history_mse": 0.0, "id_switches": 0}
    switches = sum(
        a.id_switch_events for r in reports for a in r.per_agent.values()
    )
    return {
        "scenes": len(reports),
        "invisible_rate": float(np.mean([r.invisible_rate for r in reports])),
        "history_mse": float(np.mean([r.history_mse for r in reports])),
        "id_switches": int(switches // 2),  # each swap tallied on both tracks
    }
