"""Command line entry point: ``gmss <command> ...``.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint, gradcheck
from .data import (BENCHMARK_SPLIT, as_arrays, benchmark_spec, dataset_paths, gen_synthetic,
                   load_dataset, load_spec, write_dataset)
from .errors import ConfigError, GmssError
from .graph import load_montage, scaled_laplacian
from .model import GmssModel
from .puzzles import select_permutations
from .trainer import (SPLIT_PRESETS, Fold, Metrics, Setup, SplitSpec, TrainConfig, dumps_stable, evaluate,
                      linear_probe, make_splits, run_protocol, train)

log = logging.getLogger("gmss")

TRACE_VERSION = 1
PROTOCOLS = ("none", "subject_dependent", "loso")
SPLIT_KEYS = ("train_trials", "test_trials")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """TrainConfig fields plus the subject-dependent trial split."""

    train: TrainConfig
    train_trials: int | None = None
    test_trials: int | None = None

    @classmethod
    def build(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        doc = {}
        if path is not None:
            try:
                doc = json.loads(Path(path).read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
            if not isinstance(doc, dict):
                raise ConfigError(f"{path}: config must be a JSON object")
        doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
        split = {k: doc.pop(k) for k in SPLIT_KEYS if k in doc}
        return cls(TrainConfig.from_dict(doc), **split)

    def echo(self) -> dict:
        out = self.train.to_dict()
        out.update({k: getattr(self, k) for k in SPLIT_KEYS if getattr(self, k) is not None})
        return out


def resolve_seed(flag: int | None) -> int | None:
    """--seed, then $GMSS_SEED, then the config file (None defers to it)."""
    if flag is not None:
        return flag
    env = os.environ.get("GMSS_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"GMSS_SEED={env!r} is not an integer") from None
    return None


def _config(args, **extra) -> RunConfig:
    overrides = {"seed": resolve_seed(getattr(args, "seed", None)), **extra}
    return RunConfig.build(args.config, overrides)


def _load_data(path):
    manifest, records = load_dataset(path)
    return manifest, as_arrays(records)


def _split_spec(protocol: str, manifest, cfg: RunConfig) -> SplitSpec:
    if protocol == "loso":
        return SplitSpec("loso")
    if cfg.train_trials is not None or cfg.test_trials is not None:
        return SplitSpec(protocol, cfg.train_trials, cfg.test_trials)
    presets = dict(SPLIT_PRESETS)
    presets[benchmark_spec().name] = BENCHMARK_SPLIT
    key = manifest.name.lower()
    if key not in presets:
        raise ConfigError(f"no trial split for dataset {manifest.name!r}; set train_trials/test_trials in the config")
    return SplitSpec(protocol, *presets[key])


def _folds(protocol: str, manifest, data, cfg: RunConfig, fold: str | None) -> list[Fold]:
    if protocol == "none":
        everything = np.arange(len(data))
        folds = [Fold("all", everything, everything)]
    else:
        folds = make_splits(data, _split_spec(protocol, manifest, cfg))
    if fold is None:
        return folds
    for i, f in enumerate(folds):
        if fold in (f.fold_id, str(i)):
            return [f]
    raise UsageError(f"no fold {fold!r}; available: {', '.join(f.fold_id for f in folds)}")


def _setup(cfg: TrainConfig, args) -> Setup:
    return Setup.default(cfg, args.montage, args.partition)


def _write(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text + "\n")
    os.replace(tmp, path)


# --- commands -----------------------------------------------------------------

def cmd_gen_synth(args) -> int:
    spec = benchmark_spec() if args.benchmark else load_spec(args.spec)
    manifest, records = gen_synthetic(spec)
    write_dataset(records, manifest, args.out)
    json_path, bin_path = dataset_paths(args.out)
    print(dumps_stable({"records": len(records), "manifest": str(json_path), "payload": str(bin_path)}))
    return 0


def cmd_gen_perms(args) -> int:
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    pset = select_permutations(args.m, args.k, args.seed, pool=args.pool)
    pset.save(args.out)
    print(dumps_stable({"m": pset.m, "k": pset.k, "seed": args.seed, "out": str(args.out)}))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args, mode=args.mode, epochs=args.epochs)
    manifest, data = _load_data(args.data)
    fold = _folds(args.protocol, manifest, data, cfg, args.fold)
    if len(fold) != 1:
        raise UsageError(f"protocol {args.protocol} has {len(fold)} folds; pick one with --fold")
    subset = data.take(fold[0].train)
    model, trace = train(subset, cfg.train, setup=_setup(cfg.train, args), n_classes=manifest.n_classes)
    checkpoint.save(model.state_dict(), args.out)
    doc = {
        "format_version": TRACE_VERSION,
        "mode": cfg.train.mode,
        "seed": cfg.train.seed,
        "protocol": args.protocol,
        "fold": fold[0].fold_id,
        "n_train": len(subset),
        "config_echo": cfg.echo(),
        "trace": trace,
    }
    trace_path = args.trace or Path(str(args.out) + ".trace.json")
    _write(trace_path, dumps_stable(doc))
    print(dumps_stable({"checkpoint": str(args.out), "trace": str(trace_path), "epochs": len(trace),
                        "final": trace[-1]}))
    return 0


def _load_model(path) -> GmssModel:
    return GmssModel.from_state_dict(checkpoint.load(path))


def cmd_probe(args) -> int:
    cfg = _config(args, mode="unsupervised")
    manifest, data = _load_data(args.data)
    base = checkpoint.load(args.ckpt)
    SL = scaled_laplacian(load_montage(args.montage))
    results = []
    model = None
    for fold in _folds(args.protocol, manifest, data, cfg, args.fold):
        model = GmssModel.from_state_dict(base)
        results.append(linear_probe(model, data.take(fold.train), data.take(fold.test), cfg.train, SL,
                                    manifest.n_classes, fold.fold_id))
    if args.save_ckpt and model is not None:
        checkpoint.save(model.state_dict(), args.save_ckpt)
    metrics = Metrics(args.protocol, "unsupervised", results, cfg.echo(), cfg.train.seed)
    _write(args.out, metrics.to_json(args.timing))
    print(dumps_stable({"mean_acc": metrics.mean_acc, "std_acc": metrics.std_acc, "out": str(args.out)}))
    return 0


def cmd_eval(args) -> int:
    model = _load_model(args.ckpt)
    mode = "unsupervised" if model.probe is not None else "supervised"
    cfg = _config(args, mode=mode)
    manifest, data = _load_data(args.data)
    SL = scaled_laplacian(load_montage(args.montage))
    results = [evaluate(model, data.take(f.test), SL, fold_id=f.fold_id, n_classes=manifest.n_classes)
               for f in _folds(args.protocol, manifest, data, cfg, args.fold)]
    metrics = Metrics(args.protocol, mode, results, cfg.echo(), cfg.train.seed)
    _write(args.out, metrics.to_json(args.timing))
    print(dumps_stable({"mean_acc": metrics.mean_acc, "std_acc": metrics.std_acc, "out": str(args.out)}))
    return 0


def cmd_run(args) -> int:
    """Train and score a fresh model on every fold of a protocol."""
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    cfg = _config(args, mode=args.mode, epochs=args.epochs)
    manifest, data = _load_data(args.data)
    metrics = run_protocol(data, _split_spec(args.protocol, manifest, cfg), cfg.train, manifest.n_classes,
                           jobs=args.jobs)
    metrics.config_echo = cfg.echo()
    _write(args.out, metrics.to_json(args.timing))
    print(dumps_stable({"mean_acc": metrics.mean_acc, "std_acc": metrics.std_acc, "out": str(args.out)}))
    return 0


def cmd_gradcheck(args) -> int:
    seed = resolve_seed(args.seed)
    report = gradcheck.run(seed or 0, tolerance=args.tolerance, fault=args.inject_fault)
    text = dumps_stable(report)
    if args.out:
        _write(args.out, text)
    print(text)
    return 0 if report["passed"] else 1


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmss", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic dataset container")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", type=Path, help="SyntheticSpec JSON file")
    src.add_argument("--benchmark", action="store_true", help="the frozen 3-class benchmark")
    p.add_argument("--out", type=Path, required=True, help="dataset base path (.json/.bin added)")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("gen-perms", help="write a permutation set")
    p.add_argument("--m", type=int, choices=(5, 10), required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--pool", type=int, default=1000)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen_perms)

    def common(p, mode=False):
        p.add_argument("--data", type=Path, required=True)
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--montage", type=Path)
        p.add_argument("--partition", type=Path)
        if mode:
            p.add_argument("--mode", choices=("supervised", "unsupervised"))
            p.add_argument("--epochs", type=int)

    p = sub.add_parser("train", help="optimise the multitask objective, write checkpoint and trace")
    common(p, mode=True)
    p.add_argument("--protocol", choices=PROTOCOLS, default="none")
    p.add_argument("--fold")
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--trace", type=Path, help="trace JSON (default <out>.trace.json)")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("probe", cmd_probe, "fit a linear probe on a frozen extractor"),
                                 ("eval", cmd_eval, "score a checkpoint")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--ckpt", type=Path, required=True)
        p.add_argument("--protocol", choices=PROTOCOLS, required=True)
        p.add_argument("--fold")
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--timing", action="store_true", help="record wall-clock seconds (breaks byte identity)")
        if name == "probe":
            p.add_argument("--save-ckpt", type=Path, help="write the checkpoint with the last fold's probe")
        p.set_defaults(func=func)

    p = sub.add_parser("run", help="train and score one model per fold")
    common(p, mode=True)
    p.add_argument("--protocol", choices=PROTOCOLS[1:], required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--timing", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the full loss")
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--inject-fault", metavar="OP", help="corrupt the backward rule of OP (negative control)")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"gmss {args.command}: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"gmss {args.command}: {exc}", file=sys.stderr)
        return 2
    except (GmssError, ArithmeticError) as exc:
        print(f"gmss {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
