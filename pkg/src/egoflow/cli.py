"""Pipeline entry point: synth, corrupt, build, train, eval, ablate, report.

Every command is idempotent for a fixed config and seed, records a run
manifest next to its outputs, and exits with a fixed code per failure
class: 0 success, 1 runtime failure, 2 missing input, 3 invalid config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

VERSION = "0.1.0"

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_MISSING_INPUT = 2
EXIT_BAD_CONFIG = 3


class MissingInputError(FileNotFoundError):
    pass


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingInputError(str(path))
    return path


def _write_manifest(
    out_dir: Path,
    command: str,
    cfg: dict,
    args,
    artifacts: list[str],
    wall_clock: float,
    partial: bool = False,
) -> None:
    from .config import fingerprint

    overrides = {
        k: getattr(args, k)
        for k in ("seed", "out", "k", "steps")
        if getattr(args, k, None) is not None
    }
    manifest = {
        "version": VERSION,
        "command": command,
        "config_path": args.config,
        "config_fingerprint": fingerprint(cfg),
        "seed": cfg["seed"],
        "overrides": overrides,
        "artifacts": sorted(artifacts),
        "wall_clock_s": round(wall_clock, 3),
        "partial": partial,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"manifest_{command}.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def _scene_seed(base: int, scene_id: int, stream: int) -> int:
    return int(
        np.random.SeedSequence([base, stream, scene_id]).generate_state(1)[0]
    )


def cmd_synth(cfg: dict, args, out: Path) -> list[str]:
    from .config import scene_spec
    from .synth import generate_scene, write_scenes

    scenes = []
    for scene_id in range(int(cfg["synth"]["n_scenes"])):
        spec = scene_spec(cfg, _scene_seed(cfg["seed"], scene_id, 1))
        scenes.append((scene_id, generate_scene(spec)))
    out.mkdir(parents=True, exist_ok=True)
    path = out / "scenes.ndjson"
    write_scenes(path, scenes)
    print(f"wrote {len(scenes)} scenes -> {path}")
    return [str(path)]


def cmd_corrupt(cfg: dict, args, out: Path) -> list[str]:
    from .config import noise_profile
    from .noise import (
        corrupt_scene,
        corrupted_to_record,
        corruption_summary,
        report_to_dict,
    )
    from .synth import read_scenes

    scenes = read_scenes(_require(out / "scenes.ndjson"))
    out_path = out / "corrupted.ndjson"
    reports = {}
    with open(out_path, "w") as fh:
        for scene_id, scene in scenes:
            profile = noise_profile(cfg, _scene_seed(cfg["seed"], scene_id, 2))
            history, report = corrupt_scene(scene, profile)
            ids = [t.agent_id for t in scene.tracks] + [scene.ego_track.agent_id]
            record = corrupted_to_record(
                scene_id, scene.dt, scene.ego_track.agent_id, history, ids
            )
            fh.write(json.dumps(record) + "\n")
            reports[scene_id] = report
    summary = corruption_summary(reports.values())
    report_path = out / "corruption_report.json"
    report_path.write_text(
        json.dumps(
            {
                "summary": summary,
                "scenes": {str(k): report_to_dict(v) for k, v in sorted(reports.items())},
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    print(
        "corrupted %d scenes: invisible rate %.3f, history MSE %.3f m^2"
        % (summary["scenes"], summary["invisible_rate"], summary["history_mse"])
    )
    return [str(out_path), str(report_path)]


def cmd_build(cfg: dict, args, out: Path) -> list[str]:
    from .bench import build_benchmark, read_shard, shard_stats, write_shard
    from .config import data_fingerprint, match_weights
    from .noise import record_to_corrupted
    from .synth import read_scenes

    scenes = read_scenes(_require(out / "scenes.ndjson"))
    corrupted = []
    with open(_require(out / "corrupted.ndjson")) as fh:
        for line in fh:
            if line.strip():
                scene_id, history, _ = record_to_corrupted(json.loads(line))
                corrupted.append((scene_id, history))
    shards, scale = build_benchmark(
        scenes,
        corrupted,
        weights=match_weights(cfg),
        stride=int(cfg["bench"]["stride"]),
    )
    dt = float(cfg["synth"]["dt"])
    fp = data_fingerprint(cfg)
    shard_dir = out / "shards"
    shard_dir.mkdir(parents=True, exist_ok=True)
    artifacts = []
    stats = {}
    for split, samples in shards.items():
        path = shard_dir / f"{split}.shard"
        write_shard(path, samples, dt, scale, fp)
        header, back = read_shard(path)  # validate on write+read
        stats[split] = shard_stats(header, back)
        artifacts.append(str(path))
    stats_path = out / "stats.json"
    stats_path.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    artifacts.append(str(stats_path))
    print(f"{'split':<8}{'samples':>9}{'agents':>9}{'noisy rate':>12}{'hist MSE':>10}")
    for split in ("train", "val", "test"):
        s = stats[split]
        print(
            f"{split:<8}{s['samples']:>9}{s['agent_rows']:>9}"
            f"{s['noisy_rate']:>12.3f}{s['history_mse']:>10.3f}"
        )
    return artifacts


def _load_shards(out: Path, names=("train", "val", "test")):
    from .bench import read_shard

    headers, shards = {}, {}
    for name in names:
        headers[name], shards[name] = read_shard(_require(out / "shards" / f"{name}.shard"))
    return headers, shards


def cmd_train(cfg: dict, args, out: Path) -> list[str]:
    from .config import data_fingerprint, fingerprint, train_config
    from .model import save_checkpoint
    from .train import train

    headers, shards = _load_shards(out)
    fp = data_fingerprint(cfg)
    if headers["train"]["data_fingerprint"] not in ("", fp):
        raise RuntimeError(
            f"shards were built from config {headers['train']['data_fingerprint']}, "
            f"current config is {fp}"
        )
    result = train(
        shards["train"], shards["val"], train_config(cfg), headers["train"]["scale"], out
    )
    ckpt = out / "checkpoint.pt"
    save_checkpoint(
        ckpt,
        result.model,
        meta={
            "config_fingerprint": fingerprint(cfg),
            "data_fingerprint": fp,
            "scale": result.scale,
            "best_epoch": result.best_epoch,
            "best_val_min_ade": result.best_val,
        },
    )
    curves = out / "curves.json"
    curves.write_text(json.dumps(result.curves, indent=2, sort_keys=True) + "\n")
    print(
        f"trained {len(result.curves)} epochs; best val minADE@{min(train_config(cfg).k, 20)} "
        f"= {result.best_val:.3f} m (epoch {result.best_epoch})"
    )
    return [str(ckpt), str(curves)]


def cmd_eval(cfg: dict, args, out: Path) -> list[str]:
    from .config import data_fingerprint, fingerprint
    from .model import load_checkpoint
    from .train import evaluate

    headers, shards = _load_shards(out, names=("test",))
    model, meta = load_checkpoint(
        _require(out / "checkpoint.pt"),
        expect_data_fingerprint=data_fingerprint(cfg),
    )
    k = int(args.k if args.k is not None else cfg["eval"]["k"])
    steps = int(args.steps if args.steps is not None else cfg["eval"]["steps"])
    report = evaluate(
        model,
        shards["test"],
        meta["scale"],
        k=k,
        steps=steps,
        seed=cfg["seed"] + 1000,
        grid=cfg["eval"]["grid"],
        config_fingerprint=fingerprint(cfg),
        data_fingerprint=meta["data_fingerprint"],
    )
    path = out / "eval_report.json"
    path.write_text(report.to_json() + "\n")
    ks = sorted(report.min_ade)
    print("k        " + "".join(f"{k:>12}" for k in ks))
    print("minADE   " + "".join(f"{report.min_ade[k]:>12.3f}" for k in ks))
    print("minFDE   " + "".join(f"{report.min_fde[k]:>12.3f}" for k in ks))
    return [str(path)]


def cmd_ablate(cfg: dict, args, out: Path) -> list[str]:
    from .config import train_config
    from .train import ablate

    headers, shards = _load_shards(out)
    rows = ablate(
        shards["train"],
        shards["val"],
        shards["test"],
        train_config(cfg),
        headers["train"]["scale"],
        seeds=tuple(int(s) for s in cfg["ablate"]["seeds"]),
        ks=tuple(int(k) for k in cfg["ablate"]["ks"]),
    )
    path = out / "ablation.json"
    path.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    print(_ablation_table(rows))
    return [str(path)]


def _ablation_table(rows: list[dict]) -> str:
    ks = sorted(int(k) for k in rows[0]["min_ade"])
    lines = [
        f"{'model':<10}{'SI':>4}{'EA':>4}{'SE':>4}"
        + "".join(f"{'ADE/FDE@' + str(k):>16}" for k in ks)
    ]
    for row in rows:
        c = row["components"]
        cells = "".join(
            f"{row['min_ade'][str(k)]:.2f}/{row['min_fde'][str(k)]:.2f}".rjust(16)
            for k in ks
        )
        lines.append(
            f"{row['name']:<10}"
            + "".join(" yes" if c[x] else "  no" for x in ("SI", "EA", "SE"))
            + cells
        )
    return "\n".join(lines)


def cmd_report(cfg: dict, args, out: Path) -> list[str]:
    artifacts = []
    for raw in args.inputs or []:
        path = _require(Path(raw))
        payload = json.loads(path.read_text())
        print(f"== {path}")
        if isinstance(payload, list) and payload and "components" in payload[0]:
            print(_ablation_table(payload))
        elif isinstance(payload, dict) and "min_ade" in payload:
            ks = sorted(int(k) for k in payload["min_ade"])
            print("k        " + "".join(f"{k:>12}" for k in ks))
            print(
                "minADE   "
                + "".join(f"{payload['min_ade'][str(k)]:>12.3f}" for k in ks)
            )
            print(
                "minFDE   "
                + "".join(f"{payload['min_fde'][str(k)]:>12.3f}" for k in ks)
            )
        else:
            print(json.dumps(payload, indent=2, sort_keys=True)[:2000])
        if args.plots:
            artifacts.extend(_plot(path, payload, out))
    return artifacts


def _plot(path: Path, payload, out: Path) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out.mkdir(parents=True, exist_ok=True)
    target = out / (path.stem + ".png")
    fig, ax = plt.subplots(figsize=(6, 4))
    if isinstance(payload, list) and payload and "epoch" in payload[0]:
        ax.plot([e["epoch"] for e in payload], [e["loss"] for e in payload], label="loss")
        if "val_min_ade" in payload[-1]:
            pts = [(e["epoch"], e["val_min_ade"]) for e in payload if "val_min_ade" in e]
            ax.plot(*zip(*pts), label="val minADE")
        ax.set_xlabel("epoch")
        ax.legend()
    elif isinstance(payload, list) and payload and "components" in payload[0]:
        ks = sorted(int(k) for k in payload[0]["min_ade"])
        for row in payload:
            ax.plot(ks, [row["min_ade"][str(k)] for k in ks], marker="o", label=row["name"])
        ax.set_xlabel("k")
        ax.set_ylabel("minADE (m)")
        ax.legend()
    elif isinstance(payload, dict) and "min_ade" in payload:
        ks = sorted(int(k) for k in payload["min_ade"])
        ax.plot(ks, [payload["min_ade"][str(k)] for k in ks], marker="o", label="minADE")
        ax.plot(ks, [payload["min_fde"][str(k)] for k in ks], marker="s", label="minFDE")
        ax.set_xlabel("k")
        ax.set_ylabel("meters")
        ax.legend()
    fig.tight_layout()
    fig.savefig(target, dpi=120)
    plt.close(fig)
    return [str(target)]


COMMANDS = {
    "synth": cmd_synth,
    "corrupt": cmd_corrupt,
    "build": cmd_build,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="egoflow",
        description="Synthetic ego-noise trajectory benchmark and dual-stream flow forecaster",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="YAML run config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", type=str, default=None, help="override output directory")
        if name == "eval":
            p.add_argument("--k", type=int, default=None, help="candidates per agent")
            p.add_argument("--steps", type=int, default=None, help="sampler steps")
        if name == "report":
            p.add_argument("inputs", nargs="*", help="report/curve JSON files")
            p.add_argument("--plots", action="store_true", help="write PNG plots")
    return parser


def main(argv=None) -> int:
    from .config import ConfigError, load_config

    args = build_parser().parse_args(argv)
    threads = os.environ.get("EGOFLOW_THREADS")
    if threads:
        import torch

        torch.set_num_threads(max(1, int(threads)))

    try:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out"] = args.out
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT

    out = Path(cfg["out"])
    started = time.monotonic()
    try:
        artifacts = COMMANDS[args.command](cfg, args, out)
    except MissingInputError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except Exception as exc:  # noqa: BLE001 - map to the exit-code contract
        print(f"error: {exc}", file=sys.stderr)
        _write_manifest(
            out, args.command, cfg, args, [], time.monotonic() - started, partial=True
        )
        return EXIT_RUNTIME
    _write_manifest(out, args.command, cfg, args, artifacts, time.monotonic() - started)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
