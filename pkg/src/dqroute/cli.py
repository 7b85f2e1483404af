"""Command-line entry point and the ablation harness.

    dqroute train    --config cfg.json --out runs/a
    dqroute ablate   --plan modules --seeds 1,2,3 --jobs 2 --out runs/abl
    dqroute eval     --model runs/a/model.json --data test.csv --spec runs/a/config.json
    dqroute gen-data --C 20 --IR 100 --Nmax 500 --out data.csv
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import RunConfig, load_config
from .datagen import CSVFormatError, ConfigError, generate, load_csv, make_spec, write_csv
from .moe import load_checkpoint
from .trainer import METRICS_HEADER, TrainingAborted, evaluate, train

log = logging.getLogger("dqroute")

LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
SUMMARY_FIELDS = ("acc_all", "acc_many", "acc_med", "acc_few")


@dataclass(frozen=True)
class AblationPlan:
    name: str
    cells: dict  # cell name -> RunConfig overrides
    seeds: tuple = (1, 2, 3)

    def resolve(self, base):
        """Every (cell, seed, config) of the sweep; configs differ from ``base`` only in swept fields."""
        return [(cell, seed, base.with_overrides(**overrides, seed=seed))
                for cell, overrides in self.cells.items() for seed in self.seeds]


PLAN_CELLS = {
    "ratio": {f"alpha_{a:g}": {"alpha": a} for a in (0.0, 0.25, 0.5, 0.75, 1.0)},
    "modules": {
        "baseline": {"enable_difficulty": False, "enable_moe": False},
        "ood_only": {"enable_difficulty": False, "enable_moe": True},
        "difficulty_only": {"enable_difficulty": True, "enable_moe": False},
        "full": {"enable_difficulty": True, "enable_moe": True},
    },
    "ood_loss": {v: {"ood_loss": v} for v in ("bce", "entropy", "focal", "margin")},
}


def make_plan(name, seeds=(1, 2, 3)):
    if name not in PLAN_CELLS:
        raise ConfigError(f"unknown plan {name!r}; expected one of {', '.join(PLAN_CELLS)}")
    return AblationPlan(name, PLAN_CELLS[name], tuple(seeds))


def _run_one(job):
    config_dict, out_dir = job
    train(RunConfig.from_dict(config_dict), out_dir)
    return out_dir


def run_plan(plan, base, out_dir, jobs=1):
    """Train every cell of ``plan`` under ``out_dir/<cell>/seed_<n>``; returns run directories."""
    out_dir = Path(out_dir)
    work = [(cfg.to_dict(), str(out_dir / cell / f"seed_{seed}")) for cell, seed, cfg in plan.resolve(base)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_run_one, work))
    else:
        done = [_run_one(job) for job in work]
    return [Path(d) for d in done]


def final_metrics(run_dir):
    """Last metrics row of a run as a dict of floats, or None if absent/incomplete."""
    path = Path(run_dir) / "metrics.csv"
    if not path.is_file():
        return None
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0] != METRICS_HEADER:
        return None
    try:
        return {k: float(v) for k, v in zip(rows[0], rows[-1])}
    except ValueError:
        return None


def summarize(run_dirs, out_path):
    """Aggregate final-epoch accuracies per cell (the run directory's parent name).

    Returns the list of directories whose metrics were missing; their rows
    are skipped. Nothing is written when ``run_dirs`` is empty.
    """
    run_dirs = [Path(d) for d in run_dirs]
    if not run_dirs:
        raise ConfigError("no run directories to summarize")
    groups, missing = {}, []
    for d in run_dirs:
        m = final_metrics(d)
        if m is None:
            missing.append(d)
            continue
        groups.setdefault(d.parent.name, []).append(m)

    header = ["cell", "n_seeds"] + [f"{k}_{s}" for k in SUMMARY_FIELDS for s in ("mean", "std")]
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for cell, rows in groups.items():
            out = [cell, len(rows)]
            for k in SUMMARY_FIELDS:
                vals = [r[k] for r in rows]
                if any(math.isnan(v) for v in vals):
                    out += ["nan", "nan"]
                else:
                    out += [repr(statistics.fmean(vals)), repr(statistics.pstdev(vals))]
            w.writerow(out)
    return missing


def _seeds(text):
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def build_parser():
    p = argparse.ArgumentParser(prog="dqroute", description="Difficulty-weighted, confidence-routed experts "
                                "on synthetic long-tailed data.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)

    a = sub.add_parser("ablate", help="run one of the fixed ablation plans")
    a.add_argument("--plan", required=True, choices=sorted(PLAN_CELLS))
    a.add_argument("--config", help="base config (defaults when omitted)")
    a.add_argument("--seeds", type=_seeds, default=(1, 2, 3))
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a labelled CSV")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--spec", required=True, help="config.json of the run that produced the model")

    g = sub.add_parser("gen-data", help="write a synthetic long-tailed dataset as CSV")
    g.add_argument("--C", type=int, required=True)
    g.add_argument("--IR", type=float, required=True)
    g.add_argument("--Nmax", type=int, required=True)
    g.add_argument("--d", type=int, default=16)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--split", choices=("train", "probe", "test"), default="train")
    g.add_argument("--out", required=True)
    return p


def _cmd_train(args):
    result = train(load_config(args.config), args.out)
    print(json.dumps({k: getattr(result.final, k) for k in SUMMARY_FIELDS}))
    return 0


def _cmd_ablate(args):
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    base = load_config(args.config) if args.config else RunConfig()
    plan = make_plan(args.plan, args.seeds)
    dirs = run_plan(plan, base, args.out, args.jobs)
    missing = summarize(dirs, Path(args.out) / "summary.csv")
    for d in missing:
        print(f"missing metrics: {d}", file=sys.stderr)
    log.info("wrote %s", Path(args.out) / "summary.csv")
    return 1 if missing else 0


def _cmd_eval(args):
    config = load_config(args.spec)
    bank, _ = load_checkpoint(args.model)
    spec = make_spec(config.num_classes, config.imbalance_ratio, config.max_count, config.tau_m, config.tau_t)
    data = load_csv(args.data, num_classes=config.num_classes, split="test")
    if data.features.shape[1] != bank.dim:
        raise ConfigError(f"data has {data.features.shape[1]} features, model expects {bank.dim}")
    acc = evaluate(bank, data, spec, config.enable_moe)
    print(json.dumps({k: acc[k] for k in SUMMARY_FIELDS}))
    return 0


def _cmd_gen_data(args):
    spec = make_spec(args.C, args.IR, args.Nmax)
    splits = dict(zip(("train", "probe", "test"), generate(spec, args.d, args.seed, 20, 100)))
    write_csv(splits[args.split], args.out)
    return 0


COMMANDS = {"train": _cmd_train, "ablate": _cmd_ablate, "eval": _cmd_eval, "gen-data": _cmd_gen_data}


def main(argv=None):
    level = os.environ.get("DQROUTE_LOG", "info").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.INFO), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print("invalid configuration:", file=sys.stderr)
        for p in exc.problems:
            print(f"  - {p}", file=sys.stderr)
        return 2
    except (CSVFormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
