"""Command-line experiment runner: prepare, train, ablate, report."""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import data as datamod
from .config import (DEFAULT_ABLATION_VARIANTS, VARIANTS, ConfigError, RunConfig,
                     apply_overrides, apply_profile, apply_variant, parse_noise_arg)

log = logging.getLogger("labelsift")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--profile", help="named profile (desk, paper-cifar10, paper-cifar100)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--out", help="output directory")


def _build_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.profile:
        cfg = apply_profile(cfg, args.profile)
    if getattr(args, "ablation", None):
        cfg = apply_variant(cfg, args.ablation)
    if args.overrides:
        cfg = apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    return cfg


def cmd_prepare(args) -> int:
    kind, rate, noise_file = parse_noise_arg(args.noise)
    out = Path(args.out)
    if args.dataset == "synthetic":
        train, test = datamod.make_synthetic_dataset(
            args.num_classes, args.n_train, args.n_test,
            args.modes, args.pixel_noise, seed=args.seed)
    else:
        train = datamod.load_cifar10_dir(args.data_dir, "train", args.num_classes)
        test = datamod.load_cifar10_dir(args.data_dir, "test", args.num_classes)
        if args.n_train:
            train = datamod.balanced_subset(train, args.n_train, args.seed)
    if args.imbalance > 1.0:
        train = datamod.make_imbalanced(train, datamod.ImbalanceSpec(args.imbalance, args.seed + 1))
    mapping = None
    if kind == "asym":
        mapping = dict(datamod.DEFAULT_ASYM_MAPPING)
        mapping = {c: mapping.get(c, c) for c in range(args.num_classes)}
        if args.asym_map:
            for pair in args.asym_map.split(","):
                src, dst = pair.split(":")
                mapping[int(src)] = int(dst)
    spec = datamod.NoiseSpec(kind, rate, mapping, args.seed + 2, noise_file or None)
    train = datamod.apply_noise(train, spec)
    datamod.save_bundle(train, out / "train")
    datamod.save_bundle(test, out / "test")
    manifest = {
        "noise": args.noise, "seed": args.seed, "imbalance": args.imbalance,
        "dataset": args.dataset, "n_train": len(train), "n_test": len(test),
        "train_sha256": train.content_hash(), "test_sha256": test.content_hash(),
    }
    (out / "prepare.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"prepared {len(train)} train / {len(test)} test samples at {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _build_config(args)
    cfg.validate()
    from .runner import run
    result = run(cfg)
    print(json.dumps(result.summary, sort_keys=True, indent=2))
    return 0


def _run_one(payload: tuple[dict, int]) -> str:
    cfg_dict, threads = payload
    import torch

    torch.set_num_threads(threads)
    from .runner import run

    cfg = RunConfig.from_dict(cfg_dict)
    run(cfg)
    return cfg.out_dir


def cmd_ablate(args) -> int:
    base = _build_config(args)
    variants = args.variants.split(",") if args.variants else list(DEFAULT_ABLATION_VARIANTS)
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown ablation variants: {unknown}")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [base.seed]
    out_root = Path(base.out_dir)

    jobs = []
    for variant in variants:
        for seed in seeds:
            cfg = apply_variant(base, variant)
            cfg = dataclasses.replace(cfg, seed=seed,
                                      out_dir=str(out_root / f"{variant}-s{seed}"))
            cfg.validate()
            jobs.append(cfg)

    if args.jobs > 1:
        threads = max(1, args.threads_per_job)
        payloads = [(dataclasses.asdict(cfg), threads) for cfg in jobs]
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for done in pool.map(_run_one, payloads):
                print(f"finished {done}")
    else:
        from .runner import run
        for cfg in jobs:
            run(cfg)
            print(f"finished {cfg.out_dir}")

    from .reporting import compare_runs
    table = compare_runs([cfg.out_dir for cfg in jobs], out_root)
    print(f"wrote {table}")
    return 0


def cmd_report(args) -> int:
    from .reporting import compare_runs, emit_reports
    run_dirs = [Path(d) for d in args.run_dirs]
    missing = [d for d in run_dirs if not (d / "metrics.csv").exists()]
    if missing:
        raise ConfigError(f"no metrics.csv under: {[str(d) for d in missing]}")
    for d in run_dirs:
        emit_reports(d)
    if len(run_dirs) > 1 or args.out:
        table = compare_runs(run_dirs, args.out or run_dirs[0].parent)
        print(f"wrote {table}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelsift",
                                     description="Noisy-label training experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="materialize a noisy dataset to disk")
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", default="synthetic", choices=["synthetic", "cifar10-bin"])
    p.add_argument("--data-dir", default="", help="CIFAR binary batch directory")
    p.add_argument("--noise", default="none", help="sym:R | asym:R | file:PATH | none")
    p.add_argument("--asym-map", default="", help="class mapping like 9:1,2:0")
    p.add_argument("--imbalance", type=float, default=1.0, help="imbalance factor kappa")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--n-train", type=int, default=5000)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--num-classes", type=int, default=10)
    p.add_argument("--modes", type=int, default=3, help="synthetic prototype modes per class")
    p.add_argument("--pixel-noise", type=float, default=25.0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="run one training configuration")
    _add_config_args(p)
    p.add_argument("--ablation", help=f"named variant: {', '.join(VARIANTS)}")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run the ablation variant matrix")
    _add_config_args(p)
    p.add_argument("--variants", default="", help="comma-separated variant names")
    p.add_argument("--seeds", default="", help="comma-separated seeds")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p.add_argument("--threads-per-job", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render figures/tables from run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default="", help="directory for the comparison table")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
