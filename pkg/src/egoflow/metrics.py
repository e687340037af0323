"""Displacement-error metrics over candidate sets and report containers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

EVAL_KS = (1, 5, 10, 20)


def ade_fde(candidates: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average and final displacement error per candidate.

    candidates: (K, T, 2); truth: (T, 2). Returns two (K,) arrays of meters.
    """
    d = np.linalg.norm(candidates - truth[None], axis=-1)  # (K, T)
    return d.mean(axis=1), d[:, -1]


def min_ade_fde(
    candidates: np.ndarray,
    truth: np.ndarray,
    logits: np.ndarray,
    ks: tuple[int, ...] = EVAL_KS,
) -> tuple[dict[int, float], dict[int, float]]:
    """Best-of-K errors for nested top-K subsets ranked by logit.

    The K candidates are ordered by descending logit (ties by index), so
    the top-k sets are nested and both metrics are non-increasing in k.
    """
    ade, fde = ade_fde(candidates, truth)
    order = np.lexsort((np.arange(len(logits)), -logits))
    ade, fde = ade[order], fde[order]
    out_ade, out_fde = {}, {}
    for k in ks:
        k_eff = min(k, len(ade))
        out_ade[k] = float(ade[:k_eff].min())
        out_fde[k] = float(fde[:k_eff].min())
    return out_ade, out_fde


@dataclass
class EvalReport:
    """Aggregated best-of-K metrics in meters."""

    min_ade: dict[int, float]
    min_fde: dict[int, float]
    n_samples: int
    n_agents: int
    config_fingerprint: str = ""
    data_fingerprint: str = ""
    sampler: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.min_fde.items():
            if v < 0:
                raise ValueError(f"negative minFDE@{k}")

    def to_json(self) -> str:
        payload = {
            "min_ade": {str(k): v for k, v in sorted(self.min_ade.items())},
            "min_fde": {str(k): v for k, v in sorted(self.min_fde.items())},
            "n_samples": self.n_samples,
            "n_agents": self.n_agents,
            "config_fingerprint": self.config_fingerprint,
            "data_fingerprint": self.data_fingerprint,
            "sampler": self.sampler,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        raw = json.loads(text)
        return cls(
            min_ade={int(k): v for k, v in raw["min_ade"].items()},
            min_fde={int(k): v for k, v in raw["min_fde"].items()},
            n_samples=raw["n_samples"],
            n_agents=raw["n_agents"],
            config_fingerprint=raw.get("config_fingerprint", ""),
            data_fingerprint=raw.get("data_fingerprint", ""),
            sampler=raw.get("sampler", {}),
        )


class MetricAccumulator:
    """Streaming per-agent mean of best-of-K errors."""

    def __init__(self, ks: tuple[int, ...] = EVAL_KS):
        self.ks = ks
        self.sums_ade = {k: 0.0 for k in ks}
        self.sums_fde = {k: 0.0 for k in ks}
        self.n_agents = 0
        self.n_samples = 0

    def add_agent(self, candidates: np.ndarray, truth: np.ndarray, logits: np.ndarray) -> None:
        ade, fde = min_ade_fde(candidates, truth, logits, self.ks)
        for k in self.ks:
            self.sums_ade[k] += ade[k]
            self.sums_fde[k] += fde[k]
        self.n_agents += 1

    def report(self, **meta) -> EvalReport:
        if self.n_agents == 0:
            raise ValueError("no agents were accumulated")
        return EvalReport(
            min_ade={k: self.sums_ade[k] / self.n_agents for k in self.ks},
            min_fde={k: self.sums_fde[k] / self.n_agents for k in self.ks},
            n_agents=self.n_agents,
            n_samples=self.n_samples,
            **meta,
        )
