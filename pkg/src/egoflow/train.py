"""Training loop, sampling-based evaluation, baselines, and ablations."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .bench import BenchmarkSample
from .flow import CandidateSet, euler_sample, interpolate, sample_time, total_loss, wta_loss
from .metrics import EVAL_KS, EvalReport, MetricAccumulator
from .model import DualStreamFlowNet, ModelConfig

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; carries the offending batch."""

    def __init__(self, step: int, batch_ids: list):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.batch_ids = batch_ids


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 64
    latent_dim: int = 128
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_epochs: int = 5
    k: int = 20
    lambda_recon: float = 1.0
    lambda_pred: float = 1.0
    seed: int = 0
    grad_clip: float = 1.0
    time_sampler: str = "logit_normal"
    time_mu: float = 0.0
    time_sigma: float = 1.0
    wta: bool = True  # winner-takes-all regression vs mean over all K
    per_agent_wta: bool = True
    heads: int = 4
    ffn_mult: int = 2
    k2k_layers: int = 2
    dec_layers: int = 4
    max_agents: int = 16
    activation: str = "gelu"
    social_interaction: bool = True
    anchor_modulation: bool = True
    shared_encoder: bool = True
    val_every: int = 1
    eval_steps: int = 10
    sample_grid: str = "logit_normal"

    def model_config(self, t_past: int, t_future: int) -> ModelConfig:
        return ModelConfig(
            t_past=t_past,
            t_future=t_future,
            latent_dim=self.latent_dim,
            heads=self.heads,
            ffn_mult=self.ffn_mult,
            k2k_layers=self.k2k_layers,
            dec_layers=self.dec_layers,
            k=self.k,
            max_agents=self.max_agents,
            activation=self.activation,
            social_interaction=self.social_interaction,
            anchor_modulation=self.anchor_modulation,
            shared_encoder=self.shared_encoder,
        )


@dataclass
class Batch:
    values: torch.Tensor  # (B, A, 2*t_past) normalized observations
    mask: torch.Tensor  # (B, A, t_past) validity
    past: torch.Tensor  # (B, A, 2*t_past) clean, normalized
    future_disp: torch.Tensor  # (B, A, 2*t_future) displacement targets
    future_abs: torch.Tensor  # (B, A, 2*t_future) clean, normalized
    reference: torch.Tensor  # (B, A, 2) last observed position per agent
    pad: torch.Tensor  # (B, A) True at padded rows
    non_ego: torch.Tensor  # (B, A) True at real non-ego rows
    sample_ids: list = field(default_factory=list)

    @property
    def agents(self) -> torch.Tensor:
        return ~self.pad


def _displacements(absolute: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    pts = absolute.reshape(*absolute.shape[:-1], -1, 2)
    prev = torch.cat([reference.unsqueeze(-2), pts[..., :-1, :]], dim=-2)
    return (pts - prev).reshape(absolute.shape)


def _from_displacements(relative: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    steps = relative.reshape(*relative.shape[:-1], -1, 2)
    return (steps.cumsum(dim=-2) + reference.unsqueeze(-2)).reshape(relative.shape)


def collate(samples: list[BenchmarkSample], dtype=torch.float32) -> Batch:
    """Pad a list of samples to a common agent count."""
    b = len(samples)
    a_max = max(s.history.n_agents for s in samples)
    t_past = samples[0].history.n_frames
    t_future = samples[0].future_clean.shape[1] // 2
    values = torch.zeros(b, a_max, 2 * t_past, dtype=dtype)
    mask = torch.zeros(b, a_max, t_past, dtype=dtype)
    past = torch.zeros(b, a_max, 2 * t_past, dtype=dtype)
    future = torch.zeros(b, a_max, 2 * t_future, dtype=dtype)
    pad = torch.ones(b, a_max, dtype=torch.bool)
    non_ego = torch.zeros(b, a_max, dtype=torch.bool)
    for i, s in enumerate(samples):
        a = s.history.n_agents
        values[i, :a] = torch.from_numpy(s.history.values).to(dtype)
        mask[i, :a] = torch.from_numpy(s.history.mask).to(dtype)
        past[i, :a] = torch.from_numpy(s.past_clean).to(dtype)
        future[i, :a] = torch.from_numpy(s.future_clean).to(dtype)
        pad[i, :a] = False
        non_ego[i, : a - 1] = True
    reference = values.reshape(b, a_max, t_past, 2)[:, :, -1, :]
    return Batch(
        values=values,
        mask=mask,
        past=past,
        future_disp=_displacements(future, reference),
        future_abs=future,
        reference=reference,
        pad=pad,
        non_ego=non_ego,
        sample_ids=[(s.scene_id, s.window_start) for s in samples],
    )


def _lr_lambda(total_steps: int, warmup_steps: int):
    def fn(step: int) -> float:
        if warmup_steps > 0 and step < warmup_steps:
            return (step + 1) / warmup_steps
        span = max(total_steps - warmup_steps, 1)
        progress = min((step - warmup_steps) / span, 1.0)
        return 0.5 * (1.0 + np.cos(np.pi * progress))

    return fn


@dataclass
class TrainResult:
    model: DualStreamFlowNet
    curves: list[dict]
    best_epoch: int
    best_val: float
    scale: float


def train(
    train_samples: list[BenchmarkSample],
    val_samples: list[BenchmarkSample],
    cfg: TrainConfig,
    scale: float,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Optimize both streams jointly; keep the best-validation checkpoint.

    Per step the two flow times are drawn independently, the history stream
    denoises absolute clean coordinates, and the future stream denoises
    displacement targets anchored at each agent's last observed position.
    """
    if not train_samples:
        raise ValueError("empty training set")
    t_past = train_samples[0].history.n_frames
    t_future = train_samples[0].future_clean.shape[1] // 2
    model = DualStreamFlowNet(cfg.model_config(t_past, t_future), seed=cfg.seed)
    model.train()

    optim = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    steps_per_epoch = max(1, (len(train_samples) + cfg.batch_size - 1) // cfg.batch_size)
    schedule = torch.optim.lr_scheduler.LambdaLR(
        optim, _lr_lambda(cfg.epochs * steps_per_epoch, cfg.warmup_epochs * steps_per_epoch)
    )
    time_rng = np.random.default_rng(cfg.seed + 1)
    order_rng = np.random.default_rng(cfg.seed + 2)
    noise_gen = torch.Generator().manual_seed(cfg.seed + 3)

    curves: list[dict] = []
    best_val = float("inf")
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    best_epoch = -1
    step = 0
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(train_samples))
        epoch_loss = epoch_rec = epoch_pred = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            batch = collate([train_samples[i] for i in order[lo : lo + cfg.batch_size]])
            b = batch.values.shape[0]
            t = torch.from_numpy(
                sample_time(cfg.time_sampler, time_rng, b, cfg.time_mu, cfg.time_sigma)
            ).float()
            t_prime = torch.from_numpy(
                sample_time(cfg.time_sampler, time_rng, b, cfg.time_mu, cfg.time_sigma)
            ).float()

            h_pred = model.encode(batch.values, batch.mask, batch.pad)
            anchors = model.anchor_pair(h_pred, batch.pad)
            agents = batch.agents

            l_pred_t = None
            y0 = torch.randn(batch.future_disp.shape, generator=noise_gen)
            y_t = interpolate(y0, batch.future_disp, t_prime[:, None, None])
            pred = model.decode("future", h_pred, y_t, t_prime, anchors, batch.pad)
            l_pred_t, _ = wta_loss(
                pred, batch.future_disp, cfg.per_agent_wta, cfg.wta, agents
            )

            if cfg.lambda_recon != 0.0:
                h_rec = model.encode_recon(batch.values, batch.mask, batch.pad)
                x0 = torch.randn(batch.past.shape, generator=noise_gen)
                x_t = interpolate(x0, batch.past, t[:, None, None])
                rec = model.decode("history", h_rec, x_t, t, None, batch.pad)
                l_rec_t, _ = wta_loss(rec, batch.past, cfg.per_agent_wta, cfg.wta, agents)
            else:
                l_rec_t = torch.zeros(())

            loss = total_loss(l_rec_t, l_pred_t, cfg.lambda_recon, cfg.lambda_pred)
            if not torch.isfinite(loss):
                if out_dir is not None:
                    Path(out_dir).mkdir(parents=True, exist_ok=True)
                    (Path(out_dir) / "replay_batch.json").write_text(
                        json.dumps({"step": step, "batch": batch.sample_ids})
                    )
                raise TrainingDiverged(step, batch.sample_ids)

            optim.zero_grad(set_to_none=True)
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optim.step()
            schedule.step()
            step += 1
            epoch_loss += loss.item() * b
            epoch_rec += float(l_rec_t.detach()) * b
            epoch_pred += float(l_pred_t.detach()) * b

        entry = {
            "epoch": epoch,
            "loss": epoch_loss / len(train_samples),
            "recon": epoch_rec / len(train_samples),
            "pred": epoch_pred / len(train_samples),
            "lr": schedule.get_last_lr()[0],
        }
        if val_samples and (epoch % cfg.val_every == 0 or epoch == cfg.epochs - 1):
            report = evaluate(
                model,
                val_samples,
                scale,
                k=cfg.k,
                steps=cfg.eval_steps,
                seed=cfg.seed + 4,
                ks=(min(cfg.k, 20),),
                grid=cfg.sample_grid,
            )
            entry["val_min_ade"] = report.min_ade[min(cfg.k, 20)]
            if entry["val_min_ade"] < best_val:
                best_val = entry["val_min_ade"]
                best_state = {k: v.clone() for k, v in model.state_dict().items()}
                best_epoch = epoch
            model.train()
        curves.append(entry)

    if best_epoch >= 0:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(
        model=model,
        curves=curves,
        best_epoch=best_epoch,
        best_val=best_val,
        scale=scale,
    )


def evaluate(
    model: DualStreamFlowNet,
    samples: list[BenchmarkSample],
    scale: float,
    k: int = 20,
    steps: int = 10,
    seed: int = 0,
    ks: tuple[int, ...] = EVAL_KS,
    grid: str = "logit_normal",
    batch_size: int = 64,
    config_fingerprint: str = "",
    data_fingerprint: str = "",
) -> EvalReport:
    """Sample K futures per agent and score best-of-K errors in meters.

    Only the encoder, the anchors, and the future decoder run; the history
    reconstruction decoder stays idle at inference. Errors are computed
    over non-ego agents, per agent, after undoing the normalization (scale
    only: displacement errors are translation invariant).
    """
    if not samples:
        raise ValueError("empty evaluation set")
    ks = tuple(kk for kk in ks if kk <= k)
    model.eval()
    rng = np.random.default_rng(seed)
    acc = MetricAccumulator(ks)
    t_future = samples[0].future_clean.shape[1] // 2
    for lo in range(0, len(samples), batch_size):
        batch = collate(samples[lo : lo + batch_size])
        b, a_max = batch.pad.shape
        with torch.no_grad():
            h_enc = model.encode(batch.values, batch.mask, batch.pad)
            anchors = model.anchor_pair(h_enc, batch.pad)

            def model_fn(state, t, cond):
                return model.decode(
                    "future",
                    h_enc,
                    state,
                    torch.full((b,), t, dtype=state.dtype),
                    anchors,
                    batch.pad,
                    k=k,
                )

            out = euler_sample(
                model_fn, (b, k, a_max, 2 * t_future), steps, rng, grid=grid
            )
            cand_abs = _from_displacements(
                out.trajectories, batch.reference.unsqueeze(1).expand(b, k, a_max, 2)
            )
        cand = cand_abs.reshape(b, k, a_max, t_future, 2).numpy() * scale
        truth = batch.future_abs.reshape(b, a_max, t_future, 2).numpy() * scale
        logits = out.logits.numpy()  # (B, K, A)
        non_ego = batch.non_ego.numpy()
        for i in range(b):
            for agent in np.flatnonzero(non_ego[i]):
                acc.add_agent(cand[i, :, agent], truth[i, agent], logits[i, :, agent])
        acc.n_samples += b
    return acc.report(
        config_fingerprint=config_fingerprint,
        data_fingerprint=data_fingerprint,
        sampler={"k": k, "steps": steps, "seed": seed, "grid": grid},
    )


def baseline_cv(history_points: np.ndarray, validity: np.ndarray, t_future: int) -> np.ndarray:
    """Constant-velocity extrapolation from the last valid observation.

    history_points: (T, 2); validity: (T,). With fewer than two valid
    frames the last valid position is held. Returns (t_future, 2).
    """
    valid = np.flatnonzero(np.asarray(validity).astype(bool))
    t_past = history_points.shape[0]
    if valid.size == 0:
        anchor, vel, last = np.zeros(2), np.zeros(2), t_past - 1
    elif valid.size == 1:
        anchor, vel, last = history_points[valid[-1]], np.zeros(2), valid[-1]
    else:
        i, j = valid[-1], valid[-2]
        anchor = history_points[i]
        vel = (history_points[i] - history_points[j]) / (i - j)
        last = i
    steps = np.arange(1, t_future + 1) + (t_past - 1 - last)
    return anchor[None] + steps[:, None] * vel[None]


def evaluate_cv(
    samples: list[BenchmarkSample], scale: float, ks: tuple[int, ...] = (1,)
) -> EvalReport:
    """Constant-velocity reference scored with the same metric pipeline."""
    acc = MetricAccumulator(ks)
    for s in samples:
        t_future = s.future_clean.shape[1] // 2
        pts = s.history.points()
        truth = s.future_clean.reshape(-1, t_future, 2)
        for agent in range(s.history.n_agents - 1):
            pred = baseline_cv(pts[agent], s.history.mask[agent], t_future)
            acc.add_agent(
                pred[None] * scale, truth[agent] * scale, np.zeros(1)
            )
        acc.n_samples += 1
    return acc.report(sampler={"baseline": "constant_velocity"})


ABLATION_ROWS = (
    {"name": "SI", "social_interaction": True, "anchor_modulation": False, "shared_encoder": False},
    {"name": "SI+EA", "social_interaction": True, "anchor_modulation": True, "shared_encoder": False},
    {"name": "SI+EA+SE", "social_interaction": True, "anchor_modulation": True, "shared_encoder": True},
)


def ablate(
    train_samples: list[BenchmarkSample],
    val_samples: list[BenchmarkSample],
    test_samples: list[BenchmarkSample],
    cfg: TrainConfig,
    scale: float,
    seeds: tuple[int, ...] = (0,),
    ks: tuple[int, ...] = (1, 5, 10),
) -> list[dict]:
    """Re-train the component grid and evaluate each row.

    Rows mirror the component study: social attention only, plus anchor
    modulation, plus the shared encoder. Metrics are averaged over seeds.
    """
    rows = []
    for spec in ABLATION_ROWS:
        per_seed = []
        for seed in seeds:
            run_cfg = replace(
                cfg,
                seed=seed,
                social_interaction=spec["social_interaction"],
                anchor_modulation=spec["anchor_modulation"],
                shared_encoder=spec["shared_encoder"],
            )
            result = train(train_samples, val_samples, run_cfg, scale)
            report = evaluate(
                result.model,
                test_samples,
                scale,
                k=run_cfg.k,
                steps=run_cfg.eval_steps,
                seed=run_cfg.seed + 5,
                ks=ks,
                grid=run_cfg.sample_grid,
            )
            per_seed.append(report)
        rows.append(
            {
                "name": spec["name"],
                "components": {
                    "SI": spec["social_interaction"],
                    "EA": spec["anchor_modulation"],
                    "SE": spec["shared_encoder"],
                },
                "seeds": list(seeds),
                "min_ade": {
                    str(kk): float(np.mean([r.min_ade[kk] for r in per_seed])) for kk in ks
                },
                "min_fde": {
                    str(kk): float(np.mean([r.min_fde[kk] for r in per_seed])) for kk in ks
                },
                "per_seed": [json.loads(r.to_json()) for r in per_seed],
            }
        )
    return rows
