"""Flow-matching core shared by both streams.

Linear interpolants between noise and data, flow-time samplers, the Euler
sampler over endpoint predictions, and the winner-takes-all multi-candidate
loss with its mode-selection cross entropy.

The network is parameterized to output clean endpoints; the transport
velocity at time t is recovered as (endpoint - state) / (1 - t), which
keeps the K-candidate classification well defined at every step and makes
the final step an analytic jump to the last endpoint prediction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from scipy.special import ndtri


@dataclass(frozen=True)
class FlowTimes:
    """Independently drawn flow times for the two streams."""

    t: float  # history stream
    t_prime: float  # future stream

    def __post_init__(self):
        if not (0 <= self.t <= 1 and 0 <= self.t_prime <= 1):
            raise ValueError(f"flow times outside [0, 1]: {self}")


@dataclass
class CandidateSet:
    """K trajectory hypotheses and their selection logits.

    trajectories: (..., K, A, 2T); logits: (..., K, A);
    stream tags which decoder produced them.
    """

    trajectories: torch.Tensor
    logits: torch.Tensor
    stream: str = "future"


def interpolate(x0, x1, t):
    """Affine path (1 - t) * x0 + t * x1; exact at both endpoints."""
    return (1 - t) * x0 + t * x1


def sample_time(
    scheduler: str,
    rng: np.random.Generator,
    size=None,
    mu: float = 0.0,
    sigma: float = 1.0,
):
    """Draw flow times in the open interval (0, 1).

    'uniform' draws flat; 'logit_normal' squashes a normal draw through the
    sigmoid, concentrating supervision at intermediate times.
    """
    if scheduler == "uniform":
        u = rng.random(size)
    elif scheduler == "logit_normal":
        if sigma <= 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        z = rng.normal(mu, sigma, size)
        u = 1.0 / (1.0 + np.exp(-z))
    else:
        raise ValueError(f"unknown time scheduler {scheduler!r}")
    eps = np.finfo(np.float64).tiny
    return np.clip(u, eps, 1.0 - 1e-12)


def sample_flow_times(
    scheduler: str, rng: np.random.Generator, mu: float = 0.0, sigma: float = 1.0
) -> FlowTimes:
    """Independent draws for the history and future streams."""
    t = float(sample_time(scheduler, rng, mu=mu, sigma=sigma))
    t_prime = float(sample_time(scheduler, rng, mu=mu, sigma=sigma))
    return FlowTimes(t=t, t_prime=t_prime)


def time_grid(
    steps: int,
    grid: str = "logit_normal",
    mu: float = 0.0,
    sigma: float = 1.0,
    clip: tuple[float, float] = (1e-3, 0.95),
) -> np.ndarray:
    """Integration times [0, t_1, ..., t_{steps-1}, 1] for `steps` model calls.

    Interior points are logit-normal quantiles (or uniform), clipped away
    from 1 so the velocity recovery never divides by zero; the last segment
    is the analytic jump to t = 1.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    levels = np.arange(1, steps) / steps
    if grid == "logit_normal":
        interior = 1.0 / (1.0 + np.exp(-(mu + sigma * ndtri(levels))))
    elif grid == "uniform":
        interior = levels
    else:
        raise ValueError(f"unknown sampling grid {grid!r}")
    interior = np.clip(interior, clip[0], clip[1])
    return np.concatenate([[0.0], np.maximum.accumulate(interior), [1.0]])


def euler_sample(
    model_fn: Callable[[torch.Tensor, float, object], CandidateSet],
    shape: tuple[int, ...],
    steps: int,
    rng: np.random.Generator,
    condition=None,
    grid: str = "logit_normal",
    dtype: torch.dtype = torch.float32,
) -> CandidateSet:
    """Integrate candidates from standard-normal noise to clean endpoints.

    model_fn(state, t, condition) predicts clean endpoints and logits for
    every candidate at grid time t; each candidate advances with the
    velocity implied by its own endpoint. With one step this returns the
    model's one-shot prediction exactly.
    """
    times = time_grid(steps, grid=grid)
    state = torch.from_numpy(rng.standard_normal(shape)).to(dtype)
    logits = None
    stream = "future"
    with torch.no_grad():
        for i in range(len(times) - 1):
            t_i, t_next = float(times[i]), float(times[i + 1])
            out = model_fn(state, t_i, condition)
            endpoints = out.trajectories.to(dtype)
            if t_next >= 1.0:
                state = endpoints
            else:
                state = state + (t_next - t_i) * (endpoints - state) / (1.0 - t_i)
            logits = out.logits
            stream = out.stream
    return CandidateSet(trajectories=state, logits=logits, stream=stream)


def wta_loss(
    candidates: CandidateSet,
    target: torch.Tensor,
    per_agent: bool = True,
    winner_only: bool = True,
    agent_mask: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Winner-takes-all regression plus mode-selection cross entropy.

    Per agent (or per scene when per_agent is False) the best candidate
    j* = argmin_j ||traj_j - target||^2 takes the squared-error term, and
    the logits are trained to identify it. Gradients reach only the winning
    candidate and the logits; ties go to the lowest index. Setting
    winner_only False averages the regression over all K instead (the
    mean-all variant).

    target: (..., A, 2T); agent_mask: (..., A) with 1 for real agents.
    Returns (scalar loss averaged over real agents, winner indices (..., A)).
    """
    trajs = candidates.trajectories
    logits = candidates.logits
    sq = ((trajs - target.unsqueeze(-3)) ** 2).sum(dim=-1)  # (..., K, A)
    if per_agent:
        winners = sq.argmin(dim=-2)  # (..., A)
    else:
        scene = sq.sum(dim=-1).argmin(dim=-1)  # (...,)
        winners = scene.unsqueeze(-1).expand(sq.shape[:-2] + sq.shape[-1:])
    winner_sq = sq.gather(-2, winners.unsqueeze(-2)).squeeze(-2)  # (..., A)
    reg = winner_sq if winner_only else sq.mean(dim=-2)
    ce = -torch.log_softmax(logits, dim=-2).gather(-2, winners.unsqueeze(-2)).squeeze(-2)
    per_agent_loss = reg + ce
    if agent_mask is not None:
        mask = agent_mask.to(per_agent_loss.dtype)
        loss = (per_agent_loss * mask).sum() / mask.sum().clamp_min(1.0)
    else:
        loss = per_agent_loss.mean()
    return loss, winners


def total_loss(l_recon, l_pred, lambda_recon: float = 1.0, lambda_pred: float = 1.0):
    """Weighted sum of the two stream losses."""
    if lambda_recon < 0 or lambda_pred < 0:
        raise ValueError("loss weights must be non-negative")
    return lambda_recon * l_recon + lambda_pred * l_pred
