"""Dual-stream flow network.

A shared contextual encoder embeds the noisy history and visibility mask
per agent and mixes agents with self-attention; an anchor distiller
condenses the encoding into agent-level and scene-level intent summaries;
two structurally identical decoders turn interpolated states into K
candidate trajectories with selection logits. Only the future decoder is
modulated by the anchors (feature-wise affine); the history decoder runs
with the modulation parameters pinned to zero and is never used at
inference.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .flow import CandidateSet

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Raised when a checkpoint cannot be loaded safely."""


@dataclass(frozen=True)
class ModelConfig:
    t_past: int = 8
    t_future: int = 12
    latent_dim: int = 128
    heads: int = 4
    ffn_mult: int = 2
    k2k_layers: int = 2
    dec_layers: int = 4
    k: int = 20
    max_agents: int = 16
    activation: str = "gelu"
    agent_position: bool = True
    # ablation switches: social attention in the encoder, anchor modulation
    # of the future stream, one encoder shared by both streams
    social_interaction: bool = True
    anchor_modulation: bool = True
    shared_encoder: bool = True

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _activation(name: str) -> nn.Module:
    table = {"gelu": nn.GELU, "relu": nn.ReLU, "tanh": nn.Tanh, "silu": nn.SiLU}
    if name not in table:
        raise ValueError(f"unknown activation {name!r}")
    return table[name]()


def mlp(d_in: int, d_out: int, hidden: int | None = None, activation: str = "gelu") -> nn.Sequential:
    hidden = hidden or max(d_in, d_out)
    return nn.Sequential(
        nn.Linear(d_in, hidden), _activation(activation), nn.Linear(hidden, d_out)
    )


def film_modulate(z: torch.Tensor, beta: torch.Tensor, gamma: torch.Tensor) -> torch.Tensor:
    """Feature-wise affine conditioning: (1 + gamma) * z + beta."""
    return (1 + gamma) * z + beta


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Classic log-spaced sin/cos features of a scalar time in [0, 1]."""
    half = dim // 2
    freqs = torch.exp(
        torch.arange(half, dtype=t.dtype, device=t.device)
        * (-math.log(10000.0) / max(half - 1, 1))
    )
    angles = t.unsqueeze(-1) * freqs * 1000.0
    emb = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb


def _zero_padded(x: torch.Tensor, pad: torch.Tensor | None) -> torch.Tensor:
    if pad is None:
        return x
    return x.masked_fill(pad.unsqueeze(-1), 0.0)


class SelfAttentionBlock(nn.Module):
    """Pre-norm multi-head self-attention over the second-to-last axis."""

    def __init__(self, dim: int, heads: int, ffn_mult: int, activation: str):
        super().__init__()
        if dim % heads:
            raise ValueError(f"latent dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_mult * dim),
            _activation(activation),
            nn.Linear(ffn_mult * dim, dim),
        )

    def forward(self, x: torch.Tensor, pad: torch.Tensor | None = None) -> torch.Tensor:
        # x: (..., N, D); pad: (..., N), True at padded slots
        *lead, n, d = x.shape
        hd = d // self.heads
        q, k, v = self.qkv(self.norm1(x)).chunk(3, dim=-1)

        def split(h):
            return h.reshape(*lead, n, self.heads, hd).transpose(-3, -2)

        q, k, v = split(q), split(k), split(v)  # (..., heads, N, hd)
        scores = q @ k.transpose(-2, -1) / math.sqrt(hd)
        if pad is not None:
            blocked = pad.unsqueeze(-2).unsqueeze(-3)  # (..., 1, 1, N) keys
            scores = scores.masked_fill(blocked, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(-3, -2).reshape(*lead, n, d)
        x = x + self.proj(out)
        x = x + self.ffn(self.norm2(x))
        return _zero_padded(x, pad)


class HistoryEncoder(nn.Module):
    """Shared contextual encoding of the noisy history.

    Per agent the flattened positions and mask are projected to the latent
    width, one attention layer mixes social context, a learnable per-slot
    embedding (ego slot distinct) is added, and a second attention layer
    refines the scene representation.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.latent_dim
        self.in_proj = mlp(3 * cfg.t_past, d, hidden=d, activation=cfg.activation)
        self.social = SelfAttentionBlock(d, cfg.heads, cfg.ffn_mult, cfg.activation)
        self.slot_embed = nn.Parameter(torch.randn(cfg.max_agents, d) * 0.02)
        self.refine = SelfAttentionBlock(d, cfg.heads, cfg.ffn_mult, cfg.activation)

    def forward(
        self,
        values: torch.Tensor,  # (B, A, 2*t_past)
        mask: torch.Tensor,  # (B, A, t_past)
        pad: torch.Tensor | None = None,  # (B, A) True at padded slots
    ) -> torch.Tensor:
        b, a, _ = values.shape
        if a > self.cfg.max_agents:
            raise ValueError(f"{a} agents exceed padding capacity {self.cfg.max_agents}")
        x = self.in_proj(torch.cat([values, mask], dim=-1))
        x = _zero_padded(x, pad)
        if self.cfg.social_interaction:
            x = self.social(x, pad)
        if self.cfg.agent_position:
            x = x + self._slot_rows(b, a, pad, values.device)
        x = self.refine(x, pad)
        return _zero_padded(x, pad)

    def _slot_rows(
        self, b: int, a: int, pad: torch.Tensor | None, device
    ) -> torch.Tensor:
        # the ego is the last real row of each sample and gets the reserved
        # final slot of the table; other agents take their row index
        idx = torch.arange(a, device=device).unsqueeze(0).expand(b, a).clone()
        if pad is None:
            ego_at = torch.full((b,), a - 1, dtype=torch.long, device=device)
        else:
            ego_at = (~pad).sum(dim=1) - 1
        idx[torch.arange(b, device=device), ego_at] = self.cfg.max_agents - 1
        return self.slot_embed[idx]


class AnchorDistiller(nn.Module):
    """Agent-level and scene-level intent summaries of the encoding."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.latent_dim
        self.agent_norm = nn.LayerNorm(d)
        self.agent_mlp = mlp(d, d, activation=cfg.activation)
        self.scene_norm = nn.LayerNorm(d)
        self.scene_mlp = mlp(d, d, activation=cfg.activation)
        self.film = mlp(d, 2 * d, activation=cfg.activation)

    def forward(
        self, h_enc: torch.Tensor, pad: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        agent = self.agent_mlp(self.agent_norm(h_enc))  # (B, A, D)
        if pad is None:
            mean = agent.mean(dim=-2)
        else:
            keep = (~pad).to(agent.dtype).unsqueeze(-1)
            mean = (agent * keep).sum(dim=-2) / keep.sum(dim=-2).clamp_min(1.0)
        scene = self.scene_mlp(self.scene_norm(mean))  # (B, D)
        return agent, scene

    def film_params(
        self, agent: torch.Tensor, scene: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        beta, gamma = self.film(agent + scene.unsqueeze(-2)).chunk(2, dim=-1)
        return beta, gamma


class CandidateDecoder(nn.Module):
    """Turn an interpolated state into K candidate endpoint trajectories.

    The encoding, a time embedding, and the projected state fuse into one
    hidden row per (candidate, agent); learned mode embeddings make the K
    replicas distinct; candidates interact through K-to-K attention, then
    four modulated attention layers mix agents. Heads emit trajectories and
    per-agent selection logits.
    """

    def __init__(self, cfg: ModelConfig, horizon: int):
        super().__init__()
        self.cfg = cfg
        self.horizon = horizon
        d = cfg.latent_dim
        self.state_proj = nn.Linear(2 * horizon, d)
        self.time_mlp = mlp(d, d, activation=cfg.activation)
        self.fuse = nn.Linear(3 * d, d)
        # candidates must start well separated or the winner-takes-all
        # assignment churns and every mode collapses onto the blurred mean
        self.mode_embed = nn.Parameter(torch.randn(cfg.k, d) * 0.5)
        self.k2k = nn.ModuleList(
            SelfAttentionBlock(d, cfg.heads, cfg.ffn_mult, cfg.activation)
            for _ in range(cfg.k2k_layers)
        )
        self.agent_layers = nn.ModuleList(
            SelfAttentionBlock(d, cfg.heads, cfg.ffn_mult, cfg.activation)
            for _ in range(cfg.dec_layers)
        )
        self.out_norm = nn.LayerNorm(d)
        self.head = mlp(d, 2 * horizon, hidden=d, activation=cfg.activation)
        self.logit_head = nn.Linear(d, 1)

    def forward(
        self,
        h_enc: torch.Tensor,  # (B, A, D)
        state: torch.Tensor,  # (B, A, 2H) shared or (B, K, A, 2H) per candidate
        t: torch.Tensor,  # (B,)
        film: tuple[torch.Tensor, torch.Tensor] | None,  # (beta, gamma) (B, A, D)
        pad: torch.Tensor | None = None,  # (B, A)
        k: int | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        cfg = self.cfg
        k = cfg.k if k is None else k
        if not 1 <= k <= cfg.k:
            raise ValueError(f"k={k} outside 1..{cfg.k}")
        b, a, d = h_enc.shape
        if state.dim() == 3:
            state = state.unsqueeze(1).expand(b, k, a, 2 * self.horizon)
        elif state.shape[1] != k:
            raise ValueError(f"state carries {state.shape[1]} candidates, want {k}")

        t_emb = self.time_mlp(sinusoidal_embedding(t.to(h_enc.dtype), d))  # (B, D)
        fused = self.fuse(
            torch.cat(
                [
                    h_enc.unsqueeze(1).expand(b, k, a, d),
                    t_emb[:, None, None, :].expand(b, k, a, d),
                    self.state_proj(state),
                ],
                dim=-1,
            )
        )
        h = fused + self.mode_embed[:k][None, :, None, :]

        pad_k = pad.unsqueeze(1).expand(b, k, a) if pad is not None else None
        for blk in self.k2k:  # tokens = candidates, per agent
            h = blk(h.transpose(1, 2), None).transpose(1, 2)
        if film is None:
            beta = torch.zeros_like(h_enc)
            gamma = torch.zeros_like(h_enc)
        else:
            beta, gamma = film
        beta = beta.unsqueeze(1)
        gamma = gamma.unsqueeze(1)
        for blk in self.agent_layers:  # tokens = agents, per candidate
            h = film_modulate(h, beta, gamma)
            h = blk(h, pad_k)
        h = self.out_norm(h)
        traj = self.head(h)  # (B, K, A, 2H)
        logits = self.logit_head(h).squeeze(-1)  # (B, K, A)
        if pad is not None:
            traj = traj.masked_fill(pad[:, None, :, None], 0.0)
            logits = logits.masked_fill(pad[:, None, :], 0.0)
        return traj, logits


class DualStreamFlowNet(nn.Module):
    """Encoder, anchor distiller, and twin decoders under one seed."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.encoder = HistoryEncoder(cfg)
            self.encoder_recon = None if cfg.shared_encoder else HistoryEncoder(cfg)
            self.anchors = AnchorDistiller(cfg)
            self.future_decoder = CandidateDecoder(cfg, cfg.t_future)
            self.history_decoder = CandidateDecoder(cfg, cfg.t_past)

    def encode(self, values, mask, pad=None) -> torch.Tensor:
        """Prediction-stream encoding (also the anchors' source)."""
        return self.encoder(values, mask, pad)

    def encode_recon(self, values, mask, pad=None) -> torch.Tensor:
        """Reconstruction-stream encoding; the same tensor when shared."""
        enc = self.encoder if self.cfg.shared_encoder else self.encoder_recon
        return enc(values, mask, pad)

    def anchor_pair(self, h_enc, pad=None) -> tuple[torch.Tensor, torch.Tensor]:
        return self.anchors(h_enc, pad)

    def decode(
        self,
        stream: str,
        h_enc: torch.Tensor,
        state: torch.Tensor,
        t: torch.Tensor,
        anchors: tuple[torch.Tensor, torch.Tensor] | None,
        pad: torch.Tensor | None = None,
        k: int | None = None,
    ) -> CandidateSet:
        """Run one decoder; the history stream never sees the anchors.

        With anchor modulation ablated, the future stream runs the same
        zero-parameter modulation arithmetic as the history stream.
        """
        if stream == "future":
            if anchors is None:
                raise ValueError("future stream requires anchors")
            film = None
            if self.cfg.anchor_modulation:
                film = self.anchors.film_params(*anchors)
            traj, logits = self.future_decoder(h_enc, state, t, film, pad, k)
        elif stream == "history":
            traj, logits = self.history_decoder(h_enc, state, t, None, pad, k)
        else:
            raise ValueError(f"unknown stream {stream!r}")
        return CandidateSet(trajectories=traj, logits=logits, stream=stream)

    def parameter_groups(self) -> dict[str, list[str]]:
        groups: dict[str, list[str]] = {}
        for name, _ in self.named_parameters():
            groups.setdefault(name.split(".")[0], []).append(name)
        return groups


def save_checkpoint(path, model: DualStreamFlowNet, meta: dict | None = None) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.cfg),
        "fingerprint": model.cfg.fingerprint(),
        "meta": dict(meta or {}),
        "state_dict": model.state_dict(),
    }
    torch.save(payload, path)


def load_checkpoint(
    path, expect_fingerprint: str | None = None, expect_data_fingerprint: str | None = None
) -> tuple[DualStreamFlowNet, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version")
    if expect_fingerprint and payload["fingerprint"] != expect_fingerprint:
        raise CheckpointError(
            f"{path}: model fingerprint {payload['fingerprint']} != expected {expect_fingerprint}"
        )
    meta = payload.get("meta", {})
    if expect_data_fingerprint and meta.get("data_fingerprint") != expect_data_fingerprint:
        raise CheckpointError(
            f"{path}: checkpoint was trained on data {meta.get('data_fingerprint')}, "
            f"refusing to evaluate against {expect_data_fingerprint}"
        )
    model = DualStreamFlowNet(ModelConfig(**payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, meta
