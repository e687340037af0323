"""Benchmark construction: align, filter, window, split, and shard samples.

The pipeline takes (noisy observations, clean tracks) pairs per scene,
re-associates observed tracks to ground truth with a weighted-cost
assignment, cuts stride-1 sliding windows of 8 observation + 12 prediction
frames, keeps agents with at least three plausible observation frames,
splits chronologically by scene, and normalizes everything into the ego
frame with one dataset-level scale.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .noise import apply_speed_filter, fill_invisible
from .trajectory import (
    NormRecord,
    ObservedHistory,
    deinterleave,
    interleave,
    normalize,
)

log = logging.getLogger(__name__)

T_PAST = 8
T_FUTURE = 12
MIN_VALID_FRAMES = 3
SPEED_LIMIT = 2.0  # m/s plausibility threshold
MAX_DERIVATIVE_GAP = 2  # frames; longer gaps are excluded from vel/acc terms
SHARD_VERSION = 1
SPLITS = ("train", "val", "test")


class ShardError(ValueError):
    """Raised on malformed shard files or incompatible headers."""


@dataclass(frozen=True)
class MatchWeights:
    """Weighted-MSE coefficients for track association."""

    pos: float = 1.0
    vel: float = 0.5
    acc: float = 0.25


@dataclass
class BenchmarkSample:
    """One aligned (noisy history, clean past, clean future) triple."""

    history: ObservedHistory
    past_clean: np.ndarray  # (A, 2*T_PAST)
    future_clean: np.ndarray  # (A, 2*T_FUTURE)
    norm: NormRecord
    scene_id: int
    window_start: int
    split: str
    agent_ids: list[int] = field(default_factory=list)  # gt ids, ego last


def validate_sample(s: BenchmarkSample, t_past: int = T_PAST, t_future: int = T_FUTURE) -> None:
    a = s.history.n_agents
    if s.history.n_frames != t_past:
        raise ValueError(f"history spans {s.history.n_frames} frames, want {t_past}")
    if s.past_clean.shape != (a, 2 * t_past):
        raise ValueError(f"past_clean shape {s.past_clean.shape}")
    if s.future_clean.shape != (a, 2 * t_future):
        raise ValueError(f"future_clean shape {s.future_clean.shape}")
    if s.history.ego_index != a - 1:
        raise ValueError("ego row must be last")
    if s.split not in SPLITS:
        raise ValueError(f"unknown split {s.split!r}")
    non_ego = s.history.mask[:-1]
    if non_ego.shape[0] and (non_ego.sum(axis=1) < MIN_VALID_FRAMES).any():
        raise ValueError("non-ego agent with fewer than 3 valid frames")
    if len(s.agent_ids) != a:
        raise ValueError("agent_ids must cover every row")
    if not (np.isfinite(s.past_clean).all() and np.isfinite(s.future_clean).all()):
        raise ValueError("non-finite clean coordinates")


def _derivative_samples(
    points: np.ndarray, frames: np.ndarray, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """First and second differences over valid frames.

    Velocities come from consecutive valid-frame pairs no more than
    MAX_DERIVATIVE_GAP apart; accelerations from adjacent velocity pairs
    sharing a frame. Gaps beyond the cap would amplify interpolation error,
    so they contribute nothing.
    """
    vels, v_frames = [], []
    for k in range(len(frames) - 1):
        gap = frames[k + 1] - frames[k]
        if gap <= MAX_DERIVATIVE_GAP:
            vels.append((points[k + 1] - points[k]) / (gap * dt))
            v_frames.append((frames[k], frames[k + 1]))
    accs = []
    for k in range(len(vels) - 1):
        if v_frames[k][1] == v_frames[k + 1][0]:
            span = 0.5 * (v_frames[k + 1][1] - v_frames[k][0]) * dt
            accs.append((vels[k + 1] - vels[k]) / span)
    return (
        np.asarray(vels) if vels else np.zeros((0, 2)),
        np.asarray(accs) if accs else np.zeros((0, 2)),
    )


def track_pair_cost(
    obs_points: np.ndarray,
    obs_valid: np.ndarray,
    gt_points: np.ndarray,
    dt: float,
    weights: MatchWeights = MatchWeights(),
) -> float:
    """Overlap-normalized weighted MSE between one observed and one gt track.

    Costs use only valid observed frames; pairs with fewer than two
    overlapping frames are unmatchable (infinite cost). Position, velocity,
    and acceleration terms are each averaged over their own sample counts.
    """
    frames = np.flatnonzero(np.asarray(obs_valid).astype(bool))
    frames = frames[frames < gt_points.shape[0]]
    if frames.size < 2:
        return float("inf")
    obs = obs_points[frames]
    gt = gt_points[frames]
    cost = weights.pos * float(np.mean(np.sum((obs - gt) ** 2, axis=1)))
    obs_v, obs_a = _derivative_samples(obs, frames, dt)
    gt_v, gt_a = _derivative_samples(gt, frames, dt)
    if len(obs_v):
        cost += weights.vel * float(np.mean(np.sum((obs_v - gt_v) ** 2, axis=1)))
    if len(obs_a):
        cost += weights.acc * float(np.mean(np.sum((obs_a - gt_a) ** 2, axis=1)))
    return cost


def match_tracks(
    observed: list[tuple[np.ndarray, np.ndarray]],
    ground_truth: list[np.ndarray],
    dt: float,
    weights: MatchWeights = MatchWeights(),
) -> dict[int, int]:
    """Minimum-total-cost injective assignment observed index -> gt index.

    Observed tracks without any feasible partner are dropped (logged);
    an everywhere-infeasible problem yields an empty assignment.
    """
    n_obs, n_gt = len(observed), len(ground_truth)
    if n_obs == 0 or n_gt == 0:
        return {}
    cost = np.zeros((n_obs, n_gt))
    for i, (pts, valid) in enumerate(observed):
        for j, gt in enumerate(ground_truth):
            cost[i, j] = track_pair_cost(pts, valid, gt, dt, weights)
    feasible = np.isfinite(cost)
    filled = np.where(feasible, cost, 1e12)
    rows, cols = linear_sum_assignment(filled)
    assignment = {}
    for i, j in zip(rows, cols):
        if feasible[i, j]:
            assignment[int(i)] = int(j)
        else:
            log.info("dropping observed track %d: no feasible ground-truth partner", i)
    return assignment


@dataclass
class ScenePairing:
    """One scene's observations aligned to ground truth, pre-windowing."""

    scene_id: int
    dt: float
    observed_points: np.ndarray  # (n_obs, F, 2) as fed (filled)
    observed_mask: np.ndarray  # (n_obs, F) visibility
    gt_points: np.ndarray  # (n_gt, F, 2)
    gt_ids: list[int]
    ego_points: np.ndarray  # (F, 2) clean
    assignment: dict[int, int]  # observed index -> gt index
    validity: np.ndarray = None  # (n_obs, F) visibility AND speed plausibility

    def __post_init__(self):
        if self.validity is None:
            rows = [
                apply_speed_filter(self.observed_points[i], self.observed_mask[i], self.dt, SPEED_LIMIT)
                for i in range(self.observed_points.shape[0])
            ]
            self.validity = (
                np.stack(rows) if rows else np.zeros_like(self.observed_mask)
            )


def pair_scene(
    scene_id: int,
    observed: ObservedHistory,
    gt_points: np.ndarray,
    gt_ids: list[int],
    dt: float,
    weights: MatchWeights = MatchWeights(),
) -> ScenePairing:
    """Associate one corrupted scene with its clean tracks."""
    obs_pts = observed.points()[:-1]  # drop the ego row; it needs no matching
    obs_mask = observed.mask[:-1]
    pairs = [(obs_pts[i], obs_mask[i]) for i in range(obs_pts.shape[0])]
    assignment = match_tracks(pairs, list(gt_points), dt, weights)
    return ScenePairing(
        scene_id=scene_id,
        dt=dt,
        observed_points=obs_pts,
        observed_mask=obs_mask,
        gt_points=gt_points,
        gt_ids=gt_ids,
        ego_points=observed.points()[-1],
        assignment=assignment,
    )


def window_samples(
    pairing: ScenePairing,
    t_past: int = T_PAST,
    t_future: int = T_FUTURE,
    stride: int = 1,
    min_valid: int = MIN_VALID_FRAMES,
) -> list[BenchmarkSample]:
    """Cut stride-1 sliding windows out of an aligned scene.

    A window survives when at least one matched non-ego agent has
    min_valid plausible observation frames inside it and the clean future
    is fully present; surviving agents get their missing observation frames
    refilled from in-window frames only (linear interior, nearest at the
    edges). Split tags and normalization are applied later.
    """
    frames = pairing.ego_points.shape[0]
    window = t_past + t_future
    samples = []
    for start in range(0, frames - window + 1, stride):
        rows_values, rows_mask, past_rows, future_rows, ids = [], [], [], [], []
        for obs_idx in sorted(pairing.assignment):
            gt_idx = pairing.assignment[obs_idx]
            valid = pairing.validity[obs_idx, start : start + t_past]
            if valid.sum() < min_valid:
                continue
            gt = pairing.gt_points[gt_idx, start : start + window]
            if gt.shape[0] < window or not np.isfinite(gt).all():
                continue
            obs = fill_invisible(
                pairing.observed_points[obs_idx, start : start + t_past], valid
            )
            rows_values.append(interleave(obs))
            rows_mask.append(valid)
            past_rows.append(interleave(gt[:t_past]))
            future_rows.append(interleave(gt[t_past:]))
            ids.append(pairing.gt_ids[gt_idx])
        if not rows_values:
            continue
        ego = pairing.ego_points[start : start + window]
        rows_values.append(interleave(ego[:t_past]))
        rows_mask.append(np.ones(t_past))
        past_rows.append(interleave(ego[:t_past]))
        future_rows.append(interleave(ego[t_past:]))
        ids.append(-1)  # ego sentinel id
        history = ObservedHistory(
            values=np.stack(rows_values),
            mask=np.stack(rows_mask),
            ego_index=len(rows_values) - 1,
        )
        samples.append(
            BenchmarkSample(
                history=history,
                past_clean=np.stack(past_rows),
                future_clean=np.stack(future_rows),
                norm=NormRecord(origin=(0.0, 0.0), scale=1.0),
                scene_id=pairing.scene_id,
                window_start=start,
                split="train",
                agent_ids=ids,
            )
        )
    return samples


def split_chronological(samples: list[BenchmarkSample]) -> list[BenchmarkSample]:
    """Tag samples train/val/test at 70/10/20 with boundaries between scenes.

    Scene ids carry the global temporal order. Boundaries are chosen
    greedily at the cumulative counts closest to the exact proportions, and
    every split keeps at least one scene.
    """
    scene_ids = sorted({s.scene_id for s in samples})
    if len(scene_ids) < 3:
        raise ValueError(
            f"need at least 3 scenes to split chronologically, got {len(scene_ids)}"
        )
    counts = {sid: 0 for sid in scene_ids}
    for s in samples:
        counts[s.scene_id] += 1
    cumulative = np.cumsum([counts[sid] for sid in scene_ids])
    total = cumulative[-1]

    # boundary b = number of leading scenes in the split; at least one scene
    # must remain for each later split
    n = len(scene_ids)
    b1_candidates = range(1, n - 1)
    b1 = min(b1_candidates, key=lambda b: (abs(cumulative[b - 1] - 0.7 * total), b))
    b2_candidates = range(b1 + 1, n)
    b2 = min(b2_candidates, key=lambda b: (abs(cumulative[b - 1] - 0.8 * total), b))

    split_of = {}
    for k, sid in enumerate(scene_ids):
        split_of[sid] = "train" if k < b1 else ("val" if k < b2 else "test")
    return [replace(s, split=split_of[s.scene_id]) for s in samples]


def training_scale(samples: list[BenchmarkSample]) -> float:
    """Std of ego-centered clean coordinates over the train split.

    One global scalar keeps metric errors interpretable after
    denormalization; the per-sample translation is the ego's last
    observed position.
    """
    devs = []
    for s in samples:
        if s.split != "train":
            continue
        origin = deinterleave(s.history.values[s.history.ego_index])[-1]
        devs.append(deinterleave(s.past_clean) - origin)
        devs.append(deinterleave(s.future_clean) - origin)
    if not devs:
        raise ValueError("no train-split samples to compute the scale from")
    flat = np.concatenate([d.ravel() for d in devs])
    return float(max(flat.std(), 1e-6))


def normalize_samples(samples: list[BenchmarkSample], scale: float) -> list[BenchmarkSample]:
    out = []
    for s in samples:
        history, past, future, norm = normalize(s.history, s.past_clean, s.future_clean, scale)
        out.append(
            replace(s, history=history, past_clean=past, future_clean=future, norm=norm)
        )
    return out


def build_benchmark(
    scenes: list[tuple[int, "CleanScene"]],
    corrupted: list[tuple[int, ObservedHistory]],
    weights: MatchWeights = MatchWeights(),
    t_past: int = T_PAST,
    t_future: int = T_FUTURE,
    stride: int = 1,
    min_valid: int = MIN_VALID_FRAMES,
) -> tuple[dict[str, list[BenchmarkSample]], float]:
    """Full pipeline: associate, window, split, normalize.

    Returns normalized samples keyed by split plus the dataset scale.
    """
    observed_by_id = dict(corrupted)
    all_samples: list[BenchmarkSample] = []
    for scene_id, scene in scenes:
        history = observed_by_id.get(scene_id)
        if history is None:
            raise ValueError(f"scene {scene_id} has no corrupted counterpart")
        gt_points = np.stack([t.positions for t in scene.tracks]) if scene.tracks else np.zeros((0, scene.n_frames, 2))
        pairing = pair_scene(
            scene_id,
            history,
            gt_points,
            [t.agent_id for t in scene.tracks],
            scene.dt,
            weights,
        )
        all_samples.extend(
            window_samples(pairing, t_past, t_future, stride, min_valid)
        )
    tagged = split_chronological(all_samples)
    scale = training_scale(tagged)
    normed = normalize_samples(tagged, scale)
    shards = {name: [s for s in normed if s.split == name] for name in SPLITS}
    return shards, scale


def sample_to_record(s: BenchmarkSample) -> dict:
    return {
        "scene_id": s.scene_id,
        "window_start": s.window_start,
        "split": s.split,
        "agent_ids": s.agent_ids,
        "norm": {"origin": list(s.norm.origin), "scale": s.norm.scale},
        "history": {"values": s.history.values.tolist(), "mask": s.history.mask.tolist()},
        "past": s.past_clean.tolist(),
        "future": s.future_clean.tolist(),
    }


def record_to_sample(record: dict) -> BenchmarkSample:
    history = ObservedHistory(
        values=np.asarray(record["history"]["values"], dtype=np.float64),
        mask=np.asarray(record["history"]["mask"], dtype=np.float64),
        ego_index=len(record["agent_ids"]) - 1,
    )
    sample = BenchmarkSample(
        history=history,
        past_clean=np.asarray(record["past"], dtype=np.float64),
        future_clean=np.asarray(record["future"], dtype=np.float64),
        norm=NormRecord(
            origin=tuple(record["norm"]["origin"]), scale=record["norm"]["scale"]
        ),
        scene_id=int(record["scene_id"]),
        window_start=int(record["window_start"]),
        split=record["split"],
        agent_ids=list(record["agent_ids"]),
    )
    validate_sample(sample)
    return sample


def _write_record(fh, payload: dict) -> None:
    blob = json.dumps(payload, sort_keys=True).encode()
    fh.write(struct.pack(">I", len(blob)))
    fh.write(blob)


def _read_record(fh) -> dict | None:
    prefix = fh.read(4)
    if not prefix:
        return None
    if len(prefix) != 4:
        raise ShardError("truncated length prefix")
    (n,) = struct.unpack(">I", prefix)
    blob = fh.read(n)
    if len(blob) != n:
        raise ShardError("truncated record body")
    return json.loads(blob)


def write_shard(
    path,
    samples: list[BenchmarkSample],
    dt: float,
    scale: float,
    data_fingerprint: str = "",
    t_past: int = T_PAST,
    t_future: int = T_FUTURE,
) -> None:
    """Length-prefixed JSON records behind a shard header."""
    for s in samples:
        validate_sample(s, t_past, t_future)
    header = {
        "version": SHARD_VERSION,
        "t_past": t_past,
        "t_future": t_future,
        "dt": dt,
        "count": len(samples),
        "scale": scale,
        "data_fingerprint": data_fingerprint,
    }
    with open(path, "wb") as fh:
        _write_record(fh, header)
        for s in samples:
            _write_record(fh, sample_to_record(s))


def read_shard(path) -> tuple[dict, list[BenchmarkSample]]:
    with open(path, "rb") as fh:
        header = _read_record(fh)
        if header is None or header.get("version") != SHARD_VERSION:
            raise ShardError(f"{path}: bad or missing shard header")
        samples = []
        while True:
            record = _read_record(fh)
            if record is None:
                break
            samples.append(record_to_sample(record))
    if len(samples) != header["count"]:
        raise ShardError(
            f"{path}: header says {header['count']} samples, found {len(samples)}"
        )
    return header, samples


def shard_stats(header: dict, samples: list[BenchmarkSample]) -> dict:
    """Dataset-statistics aggregates in the style of a benchmark table."""
    n_agents = 0
    masked = 0
    cells = 0
    sq_err = 0.0
    for s in samples:
        non_ego = slice(0, s.history.n_agents - 1)
        mask = s.history.mask[non_ego]
        n_agents += mask.shape[0]
        masked += int((1 - mask).sum())
        cells += mask.size
        obs = deinterleave(s.history.values[non_ego]) * s.norm.scale
        clean = deinterleave(s.past_clean[non_ego]) * s.norm.scale
        sq_err += float(np.sum((obs - clean) ** 2))
    return {
        "samples": len(samples),
        "agent_rows": n_agents,
        "noisy_rate": masked / cells if cells else 0.0,
        "history_mse": sq_err / (n_agents * header["t_past"]) if n_agents else 0.0,
        "dt": header["dt"],
        "scale": header["scale"],
    }
