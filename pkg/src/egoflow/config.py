"""Hierarchical run configuration with strict key validation.

One config file drives the whole pipeline; every key has a default below,
unknown keys are errors (drift protection), and the canonical-JSON hash of
the resolved config fingerprints artifacts. The data fingerprint covers
only the sections that determine shard content, so a retrained model can
still be checked against the shards it saw.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import yaml

from .bench import MatchWeights
from .noise import NoiseProfile
from .synth import SceneSpec
from .train import TrainConfig


class ConfigError(ValueError):
    """Unknown keys or unusable values in a run configuration."""


DEFAULTS: dict = {
    "seed": 0,
    "out": "runs/default",
    "synth": {
        "n_scenes": 90,
        "n_agents": 8,
        "duration_frames": 44,
        "dt": 0.4,
        "arena": [-8.0, -8.0, 8.0, 8.0],
        "behavior_mix": {
            "crossing": 0.4,
            "following": 0.2,
            "pass_by": 0.25,
            "static_obstacle_avoid": 0.15,
        },
    },
    "noise": {
        "fov_deg": 90.0,
        "occlusion_radius": 0.3,
        "id_switch_dist": 0.5,
        "base_sigma": 0.05,
        "range_sigma_per_m": 0.02,
        "drift_sigma": 0.01,
    },
    "bench": {
        "weights": {"pos": 1.0, "vel": 0.5, "acc": 0.25},
        "stride": 1,
    },
    "train": {
        "epochs": 150,
        "batch_size": 64,
        "latent_dim": 128,
        "lr": 0.001,
        "weight_decay": 0.01,
        "warmup_epochs": 5,
        "k": 20,
        "lambda_recon": 1.0,
        "lambda_pred": 1.0,
        "grad_clip": 1.0,
        "time_sampler": "logit_normal",
        "time_mu": 0.0,
        "time_sigma": 1.0,
        "wta": True,
        "per_agent_wta": True,
        "heads": 4,
        "ffn_mult": 2,
        "k2k_layers": 2,
        "dec_layers": 4,
        "max_agents": 16,
        "activation": "gelu",
        "val_every": 1,
        "ablations": {
            "social_interaction": True,
            "anchor_modulation": True,
            "shared_encoder": True,
        },
    },
    "eval": {
        "k": 20,
        "steps": 10,
        "grid": "logit_normal",
    },
    "ablate": {
        "seeds": [0, 1, 2],
        "ks": [1, 5, 10],
    },
}


def _merge(defaults: dict, user: dict, path: str, unknown: list[str]) -> dict:
    out = {}
    for key, base in defaults.items():
        if isinstance(base, dict):
            sub = user.get(key, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"{path}{key}: expected a mapping")
            out[key] = _merge(base, sub, f"{path}{key}.", unknown)
        else:
            out[key] = user.get(key, base)
    for key in user:
        if key not in defaults:
            unknown.append(f"{path}{key}")
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Resolve a config file over the defaults; reject unknown keys."""
    user: dict = {}
    if path is not None:
        text = Path(path).read_text()
        user = yaml.safe_load(text) or {}
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    unknown: list[str] = []
    cfg = _merge(DEFAULTS, user, "", unknown)
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(sorted(unknown)))
    for key, value in (overrides or {}).items():
        node = cfg
        *parents, leaf = key.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    return cfg


def fingerprint(cfg: dict) -> str:
    """Content hash of a config tree, stable under key reordering."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def data_fingerprint(cfg: dict) -> str:
    """Hash of everything that determines shard bytes."""
    subset = {
        "seed": cfg["seed"],
        "synth": cfg["synth"],
        "noise": cfg["noise"],
        "bench": cfg["bench"],
    }
    return fingerprint(subset)


def scene_spec(cfg: dict, scene_seed: int) -> SceneSpec:
    s = cfg["synth"]
    return SceneSpec(
        n_agents=int(s["n_agents"]),
        duration_frames=int(s["duration_frames"]),
        dt=float(s["dt"]),
        arena=tuple(float(v) for v in s["arena"]),
        behavior_mix=dict(s["behavior_mix"]),
        seed=scene_seed,
    )


def noise_profile(cfg: dict, seed: int) -> NoiseProfile:
    n = cfg["noise"]
    return NoiseProfile(
        fov_deg=float(n["fov_deg"]),
        occlusion_radius=float(n["occlusion_radius"]),
        id_switch_dist=float(n["id_switch_dist"]),
        base_sigma=float(n["base_sigma"]),
        range_sigma_per_m=float(n["range_sigma_per_m"]),
        drift_sigma=float(n["drift_sigma"]),
        seed=seed,
    )


def match_weights(cfg: dict) -> MatchWeights:
    w = cfg["bench"]["weights"]
    return MatchWeights(pos=float(w["pos"]), vel=float(w["vel"]), acc=float(w["acc"]))


def train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    ab = t["ablations"]
    return TrainConfig(
        epochs=int(t["epochs"]),
        batch_size=int(t["batch_size"]),
        latent_dim=int(t["latent_dim"]),
        lr=float(t["lr"]),
        weight_decay=float(t["weight_decay"]),
        warmup_epochs=int(t["warmup_epochs"]),
        k=int(t["k"]),
        lambda_recon=float(t["lambda_recon"]),
        lambda_pred=float(t["lambda_pred"]),
        seed=int(cfg["seed"]),
        grad_clip=float(t["grad_clip"]),
        time_sampler=str(t["time_sampler"]),
        time_mu=float(t["time_mu"]),
        time_sigma=float(t["time_sigma"]),
        wta=bool(t["wta"]),
        per_agent_wta=bool(t["per_agent_wta"]),
        heads=int(t["heads"]),
        ffn_mult=int(t["ffn_mult"]),
        k2k_layers=int(t["k2k_layers"]),
        dec_layers=int(t["dec_layers"]),
        max_agents=int(t["max_agents"]),
        activation=str(t["activation"]),
        social_interaction=bool(ab["social_interaction"]),
        anchor_modulation=bool(ab["anchor_modulation"]),
        shared_encoder=bool(ab["shared_encoder"]),
        val_every=int(t["val_every"]),
        eval_steps=int(cfg["eval"]["steps"]),
        sample_grid=str(cfg["eval"]["grid"]),
    )
