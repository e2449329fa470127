"""Command-line front-end: ``run``, ``variance-check``, ``alloc-check``, ``gen-data``.

Exit codes: 0 success, 1 runtime failure or failed check, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import checks
from .config import ConfigError, ExperimentConfig, load_config
from .instances import random_instance
from .pipeline import RoundRecord, StreamTrainer, final_accuracy, rounds_to_target
from .stream import MixtureSpec, NoiseSpec, generate, write_stream_csv
from .variance_lab import GuardError

log = logging.getLogger("streamsel")

METRIC_COLUMNS = ["round", "strategy", "variance_closed_form", "train_loss", "test_acc",
                  "seq_time", "pipe_time", "batch_hist"]


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_metrics(path: Path, records: list[RoundRecord], n_classes: int):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in records:
            w.writerow([r.round, r.strategy, repr(r.variance_closed_form), repr(r.train_loss),
                        repr(r.test_acc), repr(r.seq_time), repr(r.pipe_time),
                        r.hist_string(n_classes)])


def _time_at(records, n):
    if n is None:
        return None, None
    r = records[n - 1]
    return r.seq_time, r.pipe_time


def cmd_run(cfg: ExperimentConfig, out: Path, dump_plan: bool = False) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    targets = {}
    for seed in cfg.seeds:
        results = {}
        for strategy in cfg.strategy:
            trainer = StreamTrainer(cfg, strategy, seed)
            records = trainer.run(dump_plans=dump_plan)
            results[strategy] = records
            write_metrics(out / f"metrics_{strategy}_seed{seed}.csv", records, trainer.n_classes)
            if dump_plan:
                _write_json(out / f"plans_{strategy}_seed{seed}.json", trainer.plans)
            log.info("seed %d %s: final acc %.4f", seed, strategy,
                     final_accuracy(records, cfg.final_window))
        target = final_accuracy(results["rs"], cfg.final_window) if "rs" in results else None
        targets[str(seed)] = target
        for strategy, records in results.items():
            n = rounds_to_target(records, target) if target is not None else None
            seq_t, pipe_t = _time_at(records, n)
            runs.append({
                "seed": seed, "strategy": strategy,
                "final_acc": final_accuracy(records, cfg.final_window),
                "last_acc": records[-1].test_acc,
                "rounds": len(records),
                "rounds_to_target": n,
                "seq_time_to_target": seq_t, "pipe_time_to_target": pipe_t,
                "seq_time_total": records[-1].seq_time, "pipe_time_total": records[-1].pipe_time,
            })
    aggregate = {}
    for strategy in cfg.strategy:
        rows = [r for r in runs if r["strategy"] == strategy]
        reached = [r["rounds_to_target"] for r in rows]
        aggregate[strategy] = {
            "mean_final_acc": sum(r["final_acc"] for r in rows) / len(rows),
            "mean_rounds_to_target": (sum(reached) / len(reached)
                                      if reached and None not in reached else None),
        }
    summary = {"config": {k: v for k, v in asdict(cfg).items() if k != "out"},
               "targets": targets, "runs": runs, "aggregate": aggregate}
    _write_json(out / "summary.json", summary)
    return summary


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--seed", type=int, help="override the seed(s)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--dump-plan", action="store_true", help="write per-round selection plans as JSON")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamsel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train over the stream for each strategy and seed")
    _common(p)

    for name, help_ in (("variance-check", "closed form vs Monte-Carlo, identity and allocation checks"),
                        ("alloc-check", "C-IS allocation vs exhaustive integer search")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--classes", type=int, default=3)
        p.add_argument("--per-class", type=int, default=8)
        p.add_argument("--dim", type=int, default=6)
        p.add_argument("--batch", type=int, default=6)
        p.add_argument("--perturb-alloc", action="store_true")
        if name == "variance-check":
            p.add_argument("--draws", type=int, default=100_000)

    p = sub.add_parser("gen-data", help="materialise a synthetic stream as CSV")
    _common(p)
    p.add_argument("--kind", choices=["synthetic"], default="synthetic")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--classes", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--sep", type=float)
    p.add_argument("--spread", type=str, help="comma-separated per-class std-devs")
    p.add_argument("--noise", choices=["none", "feature", "label"])
    p.add_argument("--noise-fraction", type=float)
    p.add_argument("--noise-sigma", type=float)
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    if args.seed is not None:
        cfg = replace(cfg, seeds=[args.seed])
    return cfg


def _instance_args(args):
    for key in ("classes", "per_class", "dim", "batch"):
        if getattr(args, key) < 1:
            raise ConfigError(f"--{key.replace('_', '-')}", "must be >= 1")


def _gen_data(args, cfg: ExperimentConfig) -> Path:
    spread = [float(v) for v in args.spread.split(",")] if args.spread else list(cfg.class_spread)
    n_classes = args.classes if args.classes is not None else cfg.n_classes
    if args.classes is not None and not args.spread and len(spread) != n_classes:
        spread = [spread[0]]
    mix = MixtureSpec(args.dim or cfg.dim, n_classes,
                      cfg.class_sep if args.sep is None else args.sep, spread, cfg.seeds[0])
    try:
        mix.spread_vector()
    except ValueError as exc:
        raise ConfigError("--spread", str(exc)) from None
    if args.n < 1:
        raise ConfigError("--n", "must be >= 1")
    try:
        noise = NoiseSpec(args.noise or cfg.noise,
                          cfg.noise_fraction if args.noise_fraction is None else args.noise_fraction,
                          cfg.noise_sigma if args.noise_sigma is None else args.noise_sigma)
    except ValueError as exc:
        raise ConfigError("--noise", str(exc)) from None
    X, y = generate(mix, args.n, cfg.seeds[0], noise)
    out = args.out or Path(cfg.out)
    path = out if out.suffix == ".csv" else out / "stream.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_stream_csv(path, X, y)
    return path


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _load(args)
        out = args.out or Path(cfg.out)
        if args.command == "run":
            summary = cmd_run(cfg, out, args.dump_plan)
            print(json.dumps(summary["aggregate"], indent=2, sort_keys=True))
            return 0
        if args.command == "gen-data":
            print(_gen_data(args, cfg))
            return 0
        _instance_args(args)
        seed = args.seed if args.seed is not None else 42
        if args.command == "variance-check":
            report = checks.variance_check(seed, args.classes, args.per_class, args.dim,
                                           args.batch, args.draws, args.perturb_alloc)
            name = "variance_check.json"
        else:
            labels, grads = random_instance(seed, args.classes, args.per_class, args.dim)
            report = checks.allocation_report(labels, grads, args.batch, seed=seed,
                                              perturb=args.perturb_alloc)
            report["instance"] = {"seed": seed, "classes": args.classes,
                                  "per_class": args.per_class, "dim": args.dim,
                                  "batch_size": args.batch}
            name = "alloc_check.json"
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / name, report)
        print(json.dumps(report, indent=2, sort_keys=True))
        return 0 if report["ok"] else 1
    except (ConfigError, GuardError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
