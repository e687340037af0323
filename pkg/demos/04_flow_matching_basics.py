"""Flow-matching mechanics on toy problems, no network involved.

Covers the linear interpolant, the logit-normal time scheduler, the Euler
sampler driven by endpoint predictions (exact for oracle endpoints, first
order for a genuine vector field), and the winner-takes-all loss.

    python3 demos/04_flow_matching_basics.py
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from egoflow.flow import CandidateSet, euler_sample, interpolate, sample_time, time_grid, wta_loss

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)
rng = np.random.default_rng(0)

# 1. the interpolant is exact at both endpoints
x0 = torch.randn(4)
x1 = torch.randn(4)
assert torch.equal(interpolate(x0, x1, 0.0), x0)
assert torch.equal(interpolate(x0, x1, 1.0), x1)
print("interpolant endpoints are exact")

# 2. logit-normal times concentrate supervision mid-flow
draws = sample_time("logit_normal", rng, size=200_000)
print(f"logit-normal draws: median {np.median(draws):.3f}, all inside (0, 1)")

# 3. with a model that already knows the answer, any step count is exact
target = torch.randn(3, 2, 8)


def oracle(state, t, cond):
    return CandidateSet(trajectories=target.clone(), logits=torch.zeros(3, 2))


for steps in (1, 10):
    out = euler_sample(oracle, tuple(target.shape), steps, np.random.default_rng(1))
    print(f"oracle endpoints, {steps:2d} steps: max error {(out.trajectories - target).abs().max():.2e}")

# 4. for the field v = a x the exact flow is x0 e^{a t}; Euler converges ~1/steps
a = 0.8
errors = {}
for steps in (2, 5, 10, 20, 50):
    def head(state, t, cond):
        return CandidateSet(trajectories=state * (1 + a * (1 - t)), logits=torch.zeros(1, 1))

    out = euler_sample(head, (1, 1, 2), steps, np.random.default_rng(2), grid="uniform", dtype=torch.float64)
    x_start = torch.from_numpy(np.random.default_rng(2).standard_normal((1, 1, 2)))
    errors[steps] = float((out.trajectories - x_start * np.exp(a)).abs().max())
print("euler error by steps:", {k: f"{v:.1e}" for k, v in errors.items()})

fig, axes = plt.subplots(1, 3, figsize=(14, 4))
axes[0].hist(draws, bins=80, density=True)
axes[0].set_title("logit-normal(0,1) flow times")
axes[1].plot(time_grid(10), np.zeros(11), "o-")
axes[1].set_title("10-step sampling grid (quantiles + final jump)")
axes[1].set_yticks([])
axes[2].loglog(list(errors), list(errors.values()), "o-")
ref = np.array(list(errors), dtype=float)
axes[2].loglog(ref, errors[2] * ref[0] / ref, "--", label="~1/steps")
axes[2].set_xlabel("steps")
axes[2].set_title("euler error, v = 0.8 x")
axes[2].legend()
fig.tight_layout()
fig.savefig(out_dir / "flow_basics.png", dpi=120)
print(f"wrote {out_dir / 'flow_basics.png'}")

# 5. winner-takes-all: only the best candidate is regressed, the logits
# learn to point at it
trajs = torch.randn(4, 1, 8)
target_row = trajs[2] + 0.01
loss, winners = wta_loss(CandidateSet(trajs, torch.zeros(4, 1)), target_row)
print(f"wta winner index: {winners.tolist()} (loss {loss.item():.4f})")
