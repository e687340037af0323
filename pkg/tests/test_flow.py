import numpy as np
import pytest
import torch

from egoflow.flow import (
    CandidateSet,
    FlowTimes,
    euler_sample,
    interpolate,
    sample_flow_times,
    sample_time,
    time_grid,
    total_loss,
    wta_loss,
)


class TestInterpolate:
    def test_endpoints_exact(self):
        rng = np.random.default_rng(0)
        x0 = torch.from_numpy(rng.normal(size=(4, 6)))
        x1 = torch.from_numpy(rng.normal(size=(4, 6)))
        assert torch.equal(interpolate(x0, x1, 0.0), x0)
        assert torch.equal(interpolate(x0, x1, 1.0), x1)
        assert (interpolate(x0, x1, 0.0) - x0).abs().max() < 1e-12

    def test_midpoint_from_zero(self):
        x1 = torch.randn(3, 5)
        mid = interpolate(torch.zeros_like(x1), x1, 0.5)
        assert torch.allclose(mid, x1 / 2)

    def test_works_on_numpy(self):
        x0, x1 = np.zeros(4), np.ones(4)
        np.testing.assert_allclose(interpolate(x0, x1, 0.25), np.full(4, 0.25))


class TestTimeSampling:
    def test_logit_normal_median(self):
        rng = np.random.default_rng(0)
        draws = sample_time("logit_normal", rng, size=100_000)
        assert abs(np.median(draws) - 0.5) < 0.02
        assert draws.min() > 0 and draws.max() < 1

    def test_uniform_mean(self):
        rng = np.random.default_rng(1)
        draws = sample_time("uniform", rng, size=100_000)
        assert abs(draws.mean() - 0.5) < 0.01
        assert draws.min() > 0 and draws.max() < 1

    def test_rejects_bad_scheduler(self):
        with pytest.raises(ValueError):
            sample_time("cosine", np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_time("logit_normal", np.random.default_rng(0), sigma=0.0)

    def test_flow_times_independent_draws(self):
        rng = np.random.default_rng(2)
        pairs = [sample_flow_times("uniform", rng) for _ in range(2000)]
        t = np.array([p.t for p in pairs])
        tp = np.array([p.t_prime for p in pairs])
        assert abs(np.corrcoef(t, tp)[0, 1]) < 0.05
        with pytest.raises(ValueError):
            FlowTimes(t=1.2, t_prime=0.5)


class TestTimeGrid:
    def test_single_step_is_direct_jump(self):
        np.testing.assert_array_equal(time_grid(1), [0.0, 1.0])

    def test_monotone_and_clipped(self):
        for grid in ("logit_normal", "uniform"):
            ts = time_grid(10, grid=grid)
            assert ts[0] == 0.0 and ts[-1] == 1.0
            assert np.all(np.diff(ts) >= 0)
            assert ts[-2] <= 0.95

    def test_rejects_zero_steps(self):
        with pytest.raises(ValueError):
            time_grid(0)


class TestEulerSampler:
    def test_true_endpoint_oracle_exact(self):
        rng = np.random.default_rng(3)
        y1 = torch.from_numpy(rng.normal(size=(5, 3, 24))).float()
        logits = torch.zeros(5, 3)

        def oracle(state, t, cond):
            return CandidateSet(trajectories=y1.clone(), logits=logits)

        for steps in (1, 2, 10):
            out = euler_sample(oracle, (5, 3, 24), steps, np.random.default_rng(4))
            assert (out.trajectories - y1).abs().max().item() < 1e-6

    def test_one_step_is_one_shot_prediction(self):
        rng = np.random.default_rng(5)
        pred = torch.from_numpy(rng.normal(size=(2, 1, 8))).float()

        def model(state, t, cond):
            assert t == 0.0
            return CandidateSet(trajectories=pred, logits=torch.zeros(2, 1))

        out = euler_sample(model, (2, 1, 8), 1, np.random.default_rng(6))
        assert torch.equal(out.trajectories, pred)

    def test_constant_field_linear_convergence(self):
        # endpoint head x * (1 + a (1 - t)) encodes the field v = a x, whose
        # exact flow is x0 * e^{a t}; Euler error should shrink ~ 1/steps
        a = 0.8
        errs = {}
        for steps in (2, 10, 50):
            def fn(state, t, cond):
                return CandidateSet(
                    trajectories=state * (1 + a * (1 - t)), logits=torch.zeros(1, 1)
                )

            out = euler_sample(
                fn, (1, 1, 4), steps, np.random.default_rng(42),
                grid="uniform", dtype=torch.float64,
            )
            x0 = torch.from_numpy(np.random.default_rng(42).standard_normal((1, 1, 4)))
            errs[steps] = (out.trajectories - x0 * np.exp(a)).abs().max().item()
        assert errs[2] > errs[10] > errs[50]
        assert 3.0 < errs[2] / errs[10] < 7.0
        assert 3.0 < errs[10] / errs[50] < 7.0

    def test_condition_passthrough_and_logits(self):
        seen = []

        def fn(state, t, cond):
            seen.append(cond)
            return CandidateSet(
                trajectories=torch.zeros_like(state), logits=torch.full((4, 2), t)
            )

        out = euler_sample(fn, (4, 2, 6), 3, np.random.default_rng(0), condition="ctx")
        assert all(c == "ctx" for c in seen)
        # logits come from the last call
        assert out.logits.max().item() == pytest.approx(time_grid(3)[-2])


class TestWtaLoss:
    def test_single_candidate_has_zero_ce(self):
        trajs = torch.randn(1, 3, 8)
        target = torch.randn(3, 8)
        loss, winners = wta_loss(CandidateSet(trajs, torch.ones(1, 3)), target)
        manual = ((trajs[0] - target) ** 2).sum(-1).mean()
        assert torch.allclose(loss, manual)
        assert winners.tolist() == [0, 0, 0]

    def test_exact_candidate_wins_with_ce_residual(self):
        trajs = torch.randn(2, 2, 8)
        target = trajs[0].clone()
        logits = torch.tensor([[0.3, -0.2], [1.0, 0.4]])
        loss, winners = wta_loss(CandidateSet(trajs, logits), target)
        assert winners.tolist() == [0, 0]
        ce = -torch.log_softmax(logits, dim=0)[0]
        assert torch.allclose(loss, ce.mean())

    def test_matches_exhaustive_scan_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            k, a, w = 5, int(rng.integers(1, 4)), 2 * int(rng.integers(1, 5))
            trajs = torch.from_numpy(rng.normal(size=(k, a, w)))
            target = torch.from_numpy(rng.normal(size=(a, w)))
            logits = torch.from_numpy(rng.normal(size=(k, a)))
            _, winners = wta_loss(CandidateSet(trajs, logits), target)
            sq = ((trajs - target.unsqueeze(0)) ** 2).sum(-1)
            for agent in range(a):
                best = min(range(k), key=lambda j: float(sq[j, agent]))
                assert winners[agent].item() == best

    def test_tie_goes_to_lowest_index(self):
        trajs = torch.zeros(3, 1, 4)
        target = torch.zeros(1, 4)
        _, winners = wta_loss(CandidateSet(trajs, torch.zeros(3, 1)), target)
        assert winners.tolist() == [0]

    def test_gradients_flow_only_through_winner_and_logits(self):
        trajs = torch.randn(4, 3, 8, requires_grad=True)
        logits = torch.randn(4, 3, requires_grad=True)
        target = trajs.detach()[1] + 0.05
        loss, winners = wta_loss(CandidateSet(trajs, logits), target)
        loss.backward()
        assert winners.tolist() == [1, 1, 1]
        grads = trajs.grad.abs().sum(dim=(1, 2))
        assert grads[1] > 0 and grads[[0, 2, 3]].max() == 0
        assert logits.grad.abs().min() > 0

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        trajs = torch.from_numpy(rng.normal(size=(5, 2, 6)))
        logits = torch.from_numpy(rng.normal(size=(5, 2)))
        target = torch.from_numpy(rng.normal(size=(2, 6)))
        loss, _ = wta_loss(CandidateSet(trajs, logits), target)
        perm = torch.randperm(5)
        loss_p, _ = wta_loss(CandidateSet(trajs[perm], logits[perm]), target)
        assert torch.allclose(loss, loss_p)

    def test_scene_level_winner(self):
        trajs = torch.randn(3, 2, 6)
        target = trajs[2] + 0.01
        _, winners = wta_loss(
            CandidateSet(trajs, torch.zeros(3, 2)), target, per_agent=False
        )
        assert winners.unique().tolist() == [2]

    def test_mean_all_variant(self):
        trajs = torch.randn(3, 1, 4)
        target = torch.zeros(1, 4)
        loss, _ = wta_loss(
            CandidateSet(trajs, torch.zeros(3, 1)), target, winner_only=False
        )
        reg = ((trajs - target) ** 2).sum(-1).mean()
        ce = -torch.log_softmax(torch.zeros(3, 1), dim=0)[0, 0]
        assert torch.allclose(loss, reg + ce)

    def test_agent_mask_excludes_padding(self):
        trajs = torch.randn(2, 3, 4)
        target = torch.randn(3, 4)
        mask = torch.tensor([1.0, 1.0, 0.0])
        loss, _ = wta_loss(CandidateSet(trajs, torch.zeros(2, 3)), target, agent_mask=mask)
        loss_full, _ = wta_loss(
            CandidateSet(trajs[:, :2], torch.zeros(2, 2)), target[:2]
        )
        assert torch.allclose(loss, loss_full)


class TestTotalLoss:
    def test_weight_arithmetic(self):
        assert total_loss(0.3, 0.7, 1.0, 1.0) == pytest.approx(1.0)
        assert total_loss(0.3, 0.7, 0.0, 2.0) == pytest.approx(1.4)

    def test_rejects_negative_weights(self):
        with pytest.raises(ValueError):
            total_loss(0.1, 0.1, -1.0, 1.0)

    def test_gradient_is_weighted_sum(self):
        # central differences on a scalar composition
        x = torch.tensor([0.4], dtype=torch.float64, requires_grad=True)

        def parts(v):
            return v**2, torch.sin(v)

        l1, l2 = parts(x)
        total = total_loss(l1, l2, 0.7, 1.3)
        total.backward()
        eps = 1e-6
        fd = []
        for delta in (eps, -eps):
            a, b = parts(torch.tensor([0.4 + delta], dtype=torch.float64))
            fd.append(float(total_loss(a, b, 0.7, 1.3)))
        fd_grad = (fd[0] - fd[1]) / (2 * eps)
        assert abs(fd_grad - x.grad.item()) < 1e-6
