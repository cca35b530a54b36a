"""Command-line entry point.

Subcommands: make-toy, order, train, gen, eval, count-params. Every command is
deterministic given the config's seeds; validation failures exit nonzero with
a single-line diagnostic. The LFS_THREADS environment variable caps worker
parallelism.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import torch

from . import checkpoint, images, metrics, toydata
from .config import ConfigError, RunConfig, parse_config
from .left import ShapeError, layer_param_count, param_count
from .lifelong import (
    DistanceMatrix,
    ModulatorRegistry,
    TaskSpec,
    UnknownTaskError,
    distance_matrix_from_folders,
    order_tasks,
    train_task,
)
from .nets import count_weights, init_generator, modulated_layer_specs


def _apply_thread_cap() -> None:
    cap = os.environ.get("LFS_THREADS")
    if cap:
        torch.set_num_threads(max(1, min(torch.get_num_threads(), int(cap))))


def _load_config(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, str] = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    return parse_config(args.config, overrides)


def _discover_tasks(data_dir: Path) -> dict[str, Path]:
    if not data_dir.is_dir():
        raise ConfigError(f"data_dir does not exist: {data_dir}")
    tasks = {p.name: p for p in sorted(data_dir.iterdir()) if p.is_dir()}
    if not tasks:
        raise ConfigError(f"no task directories in {data_dir}")
    return tasks


def _load_task(task_id: str, path: Path, resolution: int) -> TaskSpec:
    return TaskSpec(task_id=task_id, images=images.load_image_dir(path), resolution=resolution)


def cmd_make_toy(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = Path(args.out) if args.out else cfg.data_dir
    dirs = toydata.make_toy_tasks(
        out, n_tasks=args.n, k=cfg["shots"], seed=cfg["seed"], resolution=cfg["target_resolution"]
    )
    for d in dirs:
        print(d)
    return 0


def cmd_order(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    if cfg["distance_matrix"]:
        matrix = DistanceMatrix.from_csv(cfg["distance_matrix"])
    else:
        tasks = _discover_tasks(cfg.data_dir)
        folders = {tid: images.load_image_dir(p) for tid, p in tasks.items()}
        matrix = distance_matrix_from_folders(folders, cfg.make_distance())
    source = cfg["source_domain"]
    if not source:
        raise ConfigError("ordering needs source_domain in the config")
    for task_id in order_tasks(matrix, source):
        print(task_id)
    return 0


def _task_sequence(cfg: RunConfig, tasks: dict[str, Path]) -> list[str]:
    if cfg["task_order"]:
        missing = [t for t in cfg["task_order"] if t not in tasks]
        if missing:
            raise ConfigError(f"task_order names unknown tasks: {missing}")
        return list(cfg["task_order"])
    return sorted(tasks)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    gen_cfg = cfg.generator
    weights = init_generator(gen_cfg, cfg["base_seed"])
    tasks = _discover_tasks(cfg.data_dir)
    out_dir = Path(args.out) if args.out else cfg.out_dir
    registry = ModulatorRegistry(out_dir / "modulators")
    log_dir = out_dir / "logs"
    train_cfg = cfg.train
    for position, task_id in enumerate(_task_sequence(cfg, tasks)):
        task = _load_task(task_id, tasks[task_id], gen_cfg.target_resolution)
        task_cfg = dataclasses.replace(train_cfg, seed=train_cfg.seed + position)
        mods, log = train_task(weights, gen_cfg, task, task_cfg, dist=cfg.make_distance())
        path = registry.save(mods)
        log.to_csv(log_dir / f"{task_id}.csv")
        print(f"trained {task_id}: {mods.n_params()} modulator params -> {path}")
    return 0


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    gen_cfg = cfg.generator
    weights = init_generator(gen_cfg, cfg["base_seed"])
    registry = ModulatorRegistry(cfg.out_dir / "modulators")
    from .lifelong import generate_for_task

    imgs = generate_for_task(weights, gen_cfg, registry, args.task, cfg["seed"], args.n)
    out = Path(args.out) if args.out else cfg.out_dir / "gen" / args.task
    for i in range(imgs.shape[0]):
        images.save_png(out / f"img{i:04d}.png", imgs[i])
    if imgs.shape[0] > 0:
        images.save_image_grid(out / "grid.png", imgs)
    print(f"wrote {imgs.shape[0]} images to {out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    gen_cfg = cfg.generator
    weights = init_generator(gen_cfg, cfg["base_seed"])
    registry = ModulatorRegistry(cfg.out_dir / "modulators")
    tasks = _discover_tasks(cfg.data_dir)
    if args.task not in tasks:
        raise UnknownTaskError(f"unknown task {args.task!r}; have {sorted(tasks)}")
    anchors = images.load_image_dir(tasks[args.task])
    dist = cfg.make_distance()
    from .lifelong import generate_for_task

    div = generate_for_task(
        weights, gen_cfg, registry, args.task, cfg["seed"], cfg["eval_diversity_samples"]
    )
    assignment = metrics.assign_clusters(div, anchors, dist)
    fre = generate_for_task(
        weights, gen_cfg, registry, args.task, cfg["seed"] + 1, cfg["eval_frechet_samples"]
    )
    report = {
        "b_lpips": metrics.b_lpips(assignment, dist),
        "i_lpips": metrics.i_lpips(assignment, dist),
        "frechet_distance": metrics.frechet_embedding_distance(
            anchors, fre, metrics.DownsampledEmbedding()
        ),
    }
    print(metrics.format_report(report))
    out = Path(args.out) if args.out else cfg.out_dir
    metrics.append_metrics_csv(out / "metrics.csv", args.task, report)
    return 0


def cmd_count_params(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    gen_cfg = cfg.generator
    specs = modulated_layer_specs(gen_cfg)
    rank, with_bias = cfg["rank"], cfg["with_bias"]
    total = param_count(list(specs.values()), rank, with_bias).total
    base_total = count_weights(init_generator(gen_cfg, cfg["base_seed"]))
    for name, dims in specs.items():
        print(f"{name}: {layer_param_count(dims, rank, with_bias)}")
    print(f"total_modulator_params={total}")
    print(f"base_generator_params={base_total}")
    print(f"percent_of_base={100.0 * total / base_total:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lfsgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, with_task: bool = False, with_n: int | None = None):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        if with_task:
            p.add_argument("--task", required=True, help="task id")
        if with_n is not None:
            p.add_argument("-n", type=int, default=with_n, help="count")

    p = sub.add_parser("make-toy", help="render deterministic toy task directories")
    common(p, with_n=3)
    p.set_defaults(fn=cmd_make_toy)

    p = sub.add_parser("order", help="print the greedy most-distant-next task sequence")
    common(p)
    p.set_defaults(fn=cmd_order)

    p = sub.add_parser("train", help="train the lifelong sequence, one modulator set per task")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("gen", help="generate PNGs and a grid for a stored task")
    common(p, with_task=True, with_n=16)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("eval", help="diversity and Frechet metrics for a stored task")
    common(p, with_task=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("count-params", help="modulator parameter budget vs the base generator")
    common(p)
    p.set_defaults(fn=cmd_count_params)
    return parser


def main(argv: list[str] | None = None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (
        ConfigError,
        ShapeError,
        UnknownTaskError,
        checkpoint.CheckpointError,
        FileNotFoundError,
        ValueError,
    ) as e:
        msg = str(e).strip().splitlines()[0] if str(e).strip() else e.__class__.__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
