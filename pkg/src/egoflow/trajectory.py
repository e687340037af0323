"""Trajectory containers, coordinate conventions, and normalization.

Every matrix of positions keeps (x, y) interleaved along the time axis: a
track of T steps occupies 2T columns as [x0, y0, x1, y1, ...]. Visibility
masks have one column per step, so a value matrix always has exactly twice
as many columns as its mask.

Frames a sensor missed never carry NaNs; they hold interpolated positions
and the mask is the single source of truth for what was actually observed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def interleave(points: np.ndarray) -> np.ndarray:
    """Flatten (..., T, 2) points into (..., 2T) interleaved columns."""
    pts = np.asarray(points, dtype=np.float64)
    return pts.reshape(*pts.shape[:-2], -1)


def deinterleave(values: np.ndarray) -> np.ndarray:
    """Expand (..., 2T) interleaved columns into (..., T, 2) points."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.shape[-1] % 2:
        raise ValueError(f"interleaved width must be even, got {vals.shape[-1]}")
    return vals.reshape(*vals.shape[:-1], -1, 2)


@dataclass(frozen=True)
class SceneTrack:
    """World-frame position sequence of one agent.

    positions: (T, 2) meters; t0: index of the first frame; dt: seconds
    between frames.
    """

    agent_id: int
    positions: np.ndarray
    t0: int
    dt: float

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] == 0:
            raise ValueError(f"positions must be non-empty (T, 2), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError(f"track {self.agent_id} has non-finite positions")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "positions", pos)

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def t_end(self) -> int:
        """One past the last frame index covered by this track."""
        return self.t0 + self.n_frames


@dataclass(frozen=True)
class ObservedHistory:
    """Noisy observation matrix plus its visibility mask.

    values: (A, 2T) meters, ego row last by convention; mask: (A, T) in
    {0, 1}. The ego row is always fully observed. Masked-out entries hold
    interpolated (finite) values rather than sentinels.
    """

    values: np.ndarray
    mask: np.ndarray
    ego_index: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.mask)
        if vals.ndim != 2 or mask.ndim != 2:
            raise ValueError("values and mask must be 2-D")
        a, w = vals.shape
        if a < 1 or w < 2 or mask.shape[0] != a or w != 2 * mask.shape[1]:
            raise ValueError(
                f"values {vals.shape} incompatible with mask {mask.shape}"
            )
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask must be binary")
        if not 0 <= self.ego_index < a:
            raise ValueError(f"ego_index {self.ego_index} out of range for A={a}")
        if not np.all(mask[self.ego_index] == 1):
            raise ValueError("ego row must be fully visible")
        if not np.all(np.isfinite(vals)):
            raise ValueError("observed values must be finite everywhere")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "mask", mask.astype(np.float64))

    @property
    def n_agents(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.mask.shape[1]

    def points(self) -> np.ndarray:
        """Values as (A, T, 2) points."""
        return deinterleave(self.values)


@dataclass(frozen=True)
class NormRecord:
    """Affine map p -> (p - origin) / scale applied to one sample."""

    origin: tuple[float, float]
    scale: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.origin)):
            raise ValueError(f"non-finite origin {self.origin}")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be positive, got {self.scale}")


def normalize_values(values: np.ndarray, norm: NormRecord) -> np.ndarray:
    """Apply (p - origin) / scale to an (..., 2T) interleaved matrix."""
    pts = deinterleave(values)
    out = (pts - np.asarray(norm.origin, dtype=np.float64)) / norm.scale
    return interleave(out)


def denormalize_values(values: np.ndarray, norm: NormRecord) -> np.ndarray:
    """Exact inverse of :func:`normalize_values`."""
    pts = deinterleave(values)
    out = pts * norm.scale + np.asarray(norm.origin, dtype=np.float64)
    return interleave(out)


def normalize(
    history: ObservedHistory,
    past: np.ndarray,
    future: np.ndarray,
    scale: float,
) -> tuple[ObservedHistory, np.ndarray, np.ndarray, NormRecord]:
    """Express a sample in the ego frame: one shared origin and scale.

    The origin is the ego agent's last observed position; the scale is a
    dataset-level scalar chosen by the benchmark builder. Interpolated
    (masked-out) entries transform like any other value.
    """
    ego_last = history.values[history.ego_index, -2:]
    if not np.all(np.isfinite(ego_last)):
        raise ValueError("ego position at the last observed step is not finite")
    norm = NormRecord(origin=(float(ego_last[0]), float(ego_last[1])), scale=float(scale))
    normed = ObservedHistory(
        values=normalize_values(history.values, norm),
        mask=history.mask.copy(),
        ego_index=history.ego_index,
    )
    return (
        normed,
        normalize_values(np.asarray(past, dtype=np.float64), norm),
        normalize_values(np.asarray(future, dtype=np.float64), norm),
        norm,
    )


def to_displacements(absolute: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Per-step differences of an (..., 2T) matrix.

    output[k] = absolute[k] - absolute[k-1] with absolute[-1] := reference,
    so step 0 is the offset from the reference point (the last observed
    position when encoding futures). Inverted exactly by
    :func:`from_displacements`.
    """
    pts = deinterleave(absolute)
    ref = np.asarray(reference, dtype=np.float64)[..., None, :]
    prev = np.concatenate([ref, pts[..., :-1, :]], axis=-2)
    return interleave(pts - prev)


def from_displacements(relative: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Cumulative-sum inverse of :func:`to_displacements`."""
    ref = np.asarray(reference, dtype=np.float64)
    if not np.all(np.isfinite(ref)):
        raise ValueError("reference point must be finite")
    steps = deinterleave(relative)
    return interleave(np.cumsum(steps, axis=-2) + ref[..., None, :])
