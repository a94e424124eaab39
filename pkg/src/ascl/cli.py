"""Command-line entry point.

Subcommands: train, evaluate, attack, divergence, selection-stats, sweep,
make-data. Exit codes: 0 ok, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .attacks import AttackConfig, attack_by_name, robust_accuracy
from .config import RunConfig, _parse_value, config_from_dict, parse_config_file
from .data import Dataset, dataset_to_csv, load_dataset, make_blobs, make_two_moons, save_dataset
from .divergence import divergence_sweep, write_divergence_csv
from .errors import ConfigError
from .losses import STRATEGIES, selection_stats
from .models import load_model, snapshot_from_predictions
from .training import evaluate, sweep, train, write_sweep_csv


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_run_overrides(p):
    # every RunConfig key doubles as a --key flag (dashes for underscores)
    import dataclasses

    from .config import RunConfig as RC
    for f in dataclasses.fields(RC):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None)


def _run_config(args) -> RunConfig:
    base = parse_config_file(args.config) if args.config else RunConfig()
    overrides = {}
    import dataclasses
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            overrides[f.name] = _parse_value(f.name, v)
    return config_from_dict(overrides, base=base)


def _attack_cfg(args) -> AttackConfig:
    return AttackConfig(epsilon=args.eps, eta=args.eta, steps=args.steps,
                        random_init=not args.no_random_init)


def build_parser():
    parser = _Parser(prog="ascl")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config and/or flags")
    p.add_argument("--config", default=None)
    _add_run_overrides(p)

    p = sub.add_parser("evaluate", help="robust accuracy of a checkpoint under attacks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--attack", default="pgd", help="comma list from none,pgd,mpgd")
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--eta", type=float, default=0.0125)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--no-random-init", action="store_true")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("attack", help="attack a dataset, report accuracy, optionally save it")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--attack", default="pgd", choices=("pgd", "mpgd"))
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--eta", type=float, default=0.0125)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--no-random-init", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write attacked features as a dataset file")

    p = sub.add_parser("divergence", help="divergence/accuracy table over an epsilon grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--eps-grid", required=True, help="comma list, e.g. 0,0.02,0.05")
    p.add_argument("--eta", type=float, default=0.0125)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--no-random-init", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="csv path (default stdout)")

    p = sub.add_parser("selection-stats", help="mean positive/negative counts per strategy")
    p.add_argument("--strategy", default="global", choices=STRATEGIES)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep", help="grid of runs over strategy and loss weights")
    p.add_argument("--config", default=None)
    p.add_argument("--strategies", default="global")
    p.add_argument("--lambda-scl-grid", default="1")
    p.add_argument("--lambda-vat-grid", default="2")
    p.add_argument("--sweep-epochs", type=int, default=None)
    p.add_argument("--out", default=None, help="summary csv path (default stdout)")
    _add_run_overrides(p)

    p = sub.add_parser("make-data", help="generate and save a synthetic dataset")
    p.add_argument("--kind", required=True, choices=("blobs", "moons"))
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="bin", choices=("bin", "csv"))
    p.add_argument("--split", default="train", choices=("train", "test"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--dims", type=int, default=16)
    p.add_argument("--spread", type=float, default=0.08)
    p.add_argument("--size", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.1)
    return parser


def _cmd_train(args):
    result = train(_run_config(args), quiet=False)
    final = result.summary["final"]
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics: {result.metrics_path}")
    print(f"nat_acc={final['nat_acc']:.4f}"
          + (f" rob_acc={final['rob_acc']:.4f}" if final["rob_acc"] is not None else ""))
    return 0


def _cmd_evaluate(args):
    model = load_model(args.checkpoint)
    ds = load_dataset(args.data)
    attacks = tuple(a.strip() for a in args.attack.split(","))
    rows = evaluate(model, ds, _attack_cfg(args), attacks=attacks, seed=args.seed)
    for name, row in rows:
        print(f"attack={name} nat_acc={row.nat_acc:.4f} rob_acc={row.rob_acc:.4f}")
    return 0


def _cmd_attack(args):
    model = load_model(args.checkpoint)
    ds = load_dataset(args.data)
    cfg = _attack_cfg(args)
    fn = attack_by_name(args.attack)
    x_adv = fn(model, ds.features, ds.labels, cfg, seed=args.seed)
    acc = robust_accuracy(model, ds.features, ds.labels, args.attack, cfg, seed=args.seed)
    print(f"attack={args.attack} eps={cfg.epsilon:g} rob_acc={acc:.4f}")
    if args.out:
        save_dataset(Dataset(x_adv, ds.labels, ds.num_classes,
                             name=ds.name + "_adv", split=ds.split), args.out)
        print(f"wrote {args.out}")
    return 0


def _cmd_divergence(args):
    model = load_model(args.checkpoint)
    ds = load_dataset(args.data)
    grid = [float(v) for v in args.eps_grid.split(",")]
    base = AttackConfig(epsilon=max(grid) or 0.05, eta=args.eta, steps=args.steps,
                        random_init=not args.no_random_init)
    rows = divergence_sweep(model, ds, grid, base, seed=args.seed)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_divergence_csv(rows, fh)
        print(f"wrote {args.out}")
    else:
        write_divergence_csv(rows, sys.stdout)
    return 0


def _cmd_selection_stats(args):
    rng = np.random.default_rng(args.seed)
    pos, neg = [], []
    for _ in range(args.trials):
        labels = rng.integers(0, args.classes, size=args.batch_size)
        snap = None
        if args.strategy != "global":
            snap = snapshot_from_predictions(
                rng.integers(0, args.classes, size=args.batch_size),
                rng.integers(0, args.classes, size=args.batch_size),
                args.classes)
        p, n = selection_stats(args.strategy, labels, snap)
        pos.append(p)
        neg.append(n)
    print(f"strategy={args.strategy} trials={args.trials} "
          f"mean_pos={np.mean(pos):.2f} mean_neg={np.mean(neg):.2f}")
    return 0


def _cmd_sweep(args):
    cfg = _run_config(args)
    rows = sweep(cfg,
                 strategies=[s.strip() for s in args.strategies.split(",")],
                 scl_grid=[float(v) for v in args.lambda_scl_grid.split(",")],
                 vat_grid=[float(v) for v in args.lambda_vat_grid.split(",")],
                 epochs=args.sweep_epochs)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_sweep_csv(rows, fh)
        print(f"wrote {args.out}")
    else:
        write_sweep_csv(rows, sys.stdout)
    return 0


def _cmd_make_data(args):
    if args.kind == "blobs":
        ds = make_blobs(args.classes, args.per_class, args.dims, args.spread,
                        args.seed, split=args.split)
    else:
        ds = make_two_moons(args.size, args.noise, args.seed, split=args.split)
    if args.format == "bin":
        save_dataset(ds, args.out)
    else:
        dataset_to_csv(ds, args.out)
    print(f"wrote {args.out} ({len(ds)} samples, {ds.dim} dims, {ds.num_classes} classes)")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "attack": _cmd_attack,
    "divergence": _cmd_divergence,
    "selection-stats": _cmd_selection_stats,
    "sweep": _cmd_sweep,
    "make-data": _cmd_make_data,
}


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
