"""Command-line entry point: analyze, gen-data, train, eval, gradcheck.

Exit codes: 0 success, 1 I/O error, 2 invalid input, 3 numerical failure,
4 gradient-check failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import analysis, suites
from .backbone import build_mini_net, load_net
from .checkpoint import CheckpointFormatError
from .gsm import GateMode
from .runtime import thread_limit
from .synth import SyntheticTaskSpec, generate, read_dataset, write_dataset
from .tensor import ShapeError
from .trainer import EvalOptions, NonFiniteError, TrainConfig, evaluate, train

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_NUMERIC, EXIT_GRADCHECK = 0, 1, 2, 3, 4

GATES = {
    "learned-tanh": ("tanh", GateMode.LEARNED),
    "learned-sigmoid": ("sigmoid", GateMode.LEARNED),
    "frozen-zero": ("tanh", GateMode.FORCED_ZERO),
}


class GradcheckFailed(Exception):
    pass


def _spec_text(arg: str) -> str:
    path = Path(arg)
    if path.is_file():
        return path.read_text(encoding="utf-8")
    name = path.name[:-5] if path.name.endswith(".spec") else path.name
    if str(path) in (name, path.name):
        try:
            return analysis.shipped_spec(name)
        except FileNotFoundError:
            pass
    raise FileNotFoundError(f"no such spec file: {arg}")


def cmd_analyze(args) -> int:
    spec = analysis.parse_archspec(_spec_text(args.spec))
    sys.stdout.write(analysis.report(spec, args.frames).render(args.format))
    return EXIT_OK


def cmd_gen_data(args) -> int:
    spec = SyntheticTaskSpec(
        task=args.task.replace("-", "_"),
        frames=args.frames,
        size=args.size,
        object_size=args.object_size,
        noise=args.noise,
        per_class=args.per_class,
        seed=args.seed,
    )
    ds = generate(spec)
    write_dataset(ds, args.out)
    n_train = int(ds.is_train.sum())
    print(f"wrote {len(ds)} samples to {args.out}: {n_train} train, {len(ds) - n_train} test")
    print("mean " + " ".join(f"{v:.6f}" for v in ds.mean) + "  std " + " ".join(f"{v:.6f}" for v in ds.std))
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    values = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        known = {f.name for f in fields(TrainConfig)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"unknown config keys {unknown}")
        values.update(raw)
    cfg = TrainConfig(**values)
    overrides = {
        "base_lr": args.lr, "momentum": args.momentum, "epochs": args.epochs,
        "warmup_epochs": args.warmup, "batch_size": args.batch_size, "dropout_rate": args.dropout,
    }
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return replace(cfg, seed=args.seed, deterministic=args.deterministic)


def cmd_train(args) -> int:
    cfg = _train_config(args)
    cfg.validate()
    ds = read_dataset(args.data)
    classes = int(ds.labels.max()) + 1
    activation, mode = GATES[args.gate]
    net = build_mini_net(num_classes=classes, frames=ds.clips.shape[2], seed=args.seed,
                         in_channels=ds.clips.shape[1], gate_activation=activation,
                         dropout_rate=cfg.dropout_rate, width=args.width)
    net.gate_mode = mode
    metrics_path = Path(args.metrics) if args.metrics else Path(str(args.out) + ".metrics.tsv")
    result = train(net, ds, cfg, checkpoint=args.out,
                   log=lambda row: print(row.tsv(), flush=True))
    metrics_path.write_text(result.metrics_tsv())
    final = result.metrics[-1].eval_acc if result.metrics else float("nan")
    print(f"checkpoint {args.out}; metrics {metrics_path}; final eval accuracy {final:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    options = EvalOptions.parse(args.frame_order)
    net = load_net(args.ckpt)
    ds = read_dataset(args.data)
    if args.split != "all":
        ds = ds.subset(args.split == "train")
    if ds.clips.shape[1] != net.in_channels or ds.clips.shape[2] != net.frames:
        raise ShapeError(
            f"dataset clips are {ds.clips.shape[1:]}, network expects {net.in_channels} channels x {net.frames} frames"
        )
    if ds.labels.max() >= net.num_classes:
        raise ShapeError(f"dataset has label {ds.labels.max()}, network has {net.num_classes} classes")
    res = evaluate(net, ds, options)
    print(f"frame_order\t{args.frame_order}")
    print(f"accuracy\t{res.accuracy!r}")
    for k, acc in enumerate(res.per_class):
        print(f"class_{k}_accuracy\t{float(acc)!r}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    reports = suites.run_suite(args.scope, seed=args.seed, eps=args.eps, tol=args.tol,
                               instances=args.instances, inject_fault=args.inject_fault)
    for r in reports:
        print(r)
    failed = [r for r in reports if not r.passed]
    if failed:
        raise GradcheckFailed(
            "; ".join(f"{r.name} max rel err {r.max_rel_error:.3e}" for r in failed)
        )
    return EXIT_OK


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsmnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="parameter and FLOP report for an architecture spec")
    p.add_argument("spec", help="spec file, or the name of a bundled spec (bn_inception_gsm, ...)")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--format", choices=("table", "tsv"), default="table")
    _common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gen-data", help="write a synthetic order-sensitive video dataset")
    p.add_argument("--task", choices=("direction", "grow-shrink", "grow_shrink"), default="direction")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--object-size", type=int, default=6)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--per-class", type=int, default=500)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a MiniGsmNet on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--gate", choices=tuple(GATES), default="learned-tanh")
    p.add_argument("--config", help="JSON file with TrainConfig fields; flags override it")
    p.add_argument("--epochs", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--metrics", help="metrics TSV path (default: CHECKPOINT.metrics.tsv)")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with a chosen frame order")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--frame-order", default="natural", help="natural, reversed, permute:SEED or an explicit permute:I,J,...")
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.add_argument("--scope", choices=suites.SCOPES, default="primitives")
    p.add_argument("--eps", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--inject-fault", action="store_true", help="corrupt every gradient to test the harness")
    _common(p)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with thread_limit(args.deterministic):
            return args.func(args)
    except GradcheckFailed as exc:
        print(f"gradcheck failed: {exc}", file=sys.stderr)
        return EXIT_GRADCHECK
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (analysis.ArchSpecError, CheckpointFormatError, ShapeError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
