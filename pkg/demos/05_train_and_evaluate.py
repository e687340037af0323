"""Train the dual-stream model on a small benchmark and evaluate it.

A deliberately small run (a few minutes on CPU): 30 scenes, a narrow
latent width, and a short schedule, compared against the constant-velocity
baseline. For real runs use the CLI (`egoflow synth/corrupt/build/train/
eval`) with a config file.

    python3 demos/05_train_and_evaluate.py
"""

import time
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from egoflow.bench import build_benchmark
from egoflow.noise import NoiseProfile, corrupt_scene
from egoflow.synth import SceneSpec, generate_scene
from egoflow.train import TrainConfig, evaluate, evaluate_cv, train

torch.set_num_threads(2)
out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

scenes, corrupted = [], []
for seed in range(30):
    scene = generate_scene(SceneSpec(seed=seed))
    history, _ = corrupt_scene(scene, NoiseProfile(seed=seed + 1))
    scenes.append((seed, scene))
    corrupted.append((seed, history))
shards, scale = build_benchmark(scenes, corrupted)
print({k: len(v) for k, v in shards.items()}, f"scale {scale:.2f} m")

cfg = TrainConfig(
    epochs=10,
    batch_size=64,
    latent_dim=64,
    k=10,
    warmup_epochs=2,
    val_every=2,
    eval_steps=10,
)
start = time.time()
result = train(shards["train"], shards["val"], cfg, scale)
print(f"trained {cfg.epochs} epochs in {time.time() - start:.0f} s; "
      f"best val minADE@10 {result.best_val:.3f} m at epoch {result.best_epoch}")

report = evaluate(result.model, shards["test"], scale, k=10, steps=10, seed=99, ks=(1, 5, 10))
cv = evaluate_cv(shards["test"], scale, ks=(1,))
print("test metrics (meters):")
for k in (1, 5, 10):
    print(f"  minADE@{k:<2} {report.min_ade[k]:.3f}   minFDE@{k:<2} {report.min_fde[k]:.3f}")
print(f"  constant-velocity ADE {cv.min_ade[1]:.3f}   FDE {cv.min_fde[1]:.3f}")

fig, ax = plt.subplots(figsize=(7, 4))
ax.plot([e["epoch"] for e in result.curves], [e["loss"] for e in result.curves], label="train loss")
val = [(e["epoch"], e["val_min_ade"]) for e in result.curves if "val_min_ade" in e]
ax.plot(*zip(*val), marker="o", label="val minADE@10 (m)")
ax.axhline(cv.min_ade[1], ls="--", c="gray", label="CV baseline ADE")
ax.set_xlabel("epoch")
ax.legend()
fig.tight_layout()
fig.savefig(out_dir / "training.png", dpi=120)
print(f"wrote {out_dir / 'training.png'}")
