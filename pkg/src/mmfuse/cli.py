"""Command-line surface: train, ablate, gradcheck, curves, synth.

Every command reads an optional flat config file plus flag overrides and
writes machine-readable JSON next to human tables on stdout. Wall-clock
numbers live in dedicated timing fields so re-runs with identical seeds
produce byte-identical results elsewhere.

Exit codes: 0 success, 2 configuration error, 3 training divergence.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .checks import run_all_gradchecks
from .config import (
    ABLATION_GRID,
    ExperimentConfig,
    apply_preset,
    normalize_grid_name,
    parse_config_file,
    set_value,
)
from .data import generate_synthetic, read_container, split_dataset, write_container
from .errors import ConfigError, MMFuseError, TrainingDiverged
from .metrics import aggregate_cycles
from .model import Model, evaluate, make_optimizers
from .training import fit

GRADCHECK_TOLERANCE = 1e-4


def _load_experiment(args):
    exp = ExperimentConfig()
    if getattr(args, "preset", None):
        apply_preset(exp, args.preset)
    if getattr(args, "config", None):
        parse_config_file(args.config, exp)
    for key in ("seed", "cycles", "data", "out"):
        value = getattr(args, key, None)
        if value is not None:
            set_value(exp, key, value if isinstance(value, str) else str(value))
    return exp


def _load_records(exp):
    if not exp.data:
        raise ConfigError("no dataset given; pass --data or set 'data' in the config file")
    records = read_container(exp.data)
    print(f"loaded {len(records)} records from {exp.data}")
    return records


def _report_dict(report):
    return report.as_dict()


def _print_table(rows, title):
    print(title)
    print(f"{'system':<28} {'micro':>7} {'macro':>7} {'weighted':>9} {'samples':>8}")
    for name, report in rows:
        print(
            f"{name:<28} {report.micro:>7.3f} {report.macro:>7.3f}"
            f" {report.weighted:>9.3f} {report.samples:>8.3f}"
        )


def _run_cycles(exp, records, run_dir, tag="train"):
    """Seeded independent cycles; returns (document, aggregate_report)."""
    model_seed_base = exp.seed
    cycle_docs = []
    reports = []
    timing = {"cycle_seconds": []}
    run_dir.mkdir(parents=True, exist_ok=True)
    for cycle in range(exp.cycles):
        seed = model_seed_base + cycle
        started = time.perf_counter()
        split = split_dataset(records, seed, train_frac=exp.train_frac, val_frac=exp.val_frac)
        model = Model(exp.model_config(), seed)
        log_path = run_dir / f"{tag}-cycle{cycle}-epochs.jsonl"

        def log_row(row, path=log_path):
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row.as_dict(), sort_keys=True) + "\n")

        result = fit(model, records, split, exp.train_config(), on_epoch=log_row)
        report = evaluate(
            model, records, split.test, threshold=exp.threshold, batch_size=exp.batch_size
        )
        ckpt_path = run_dir / f"{tag}-cycle{cycle}.ckpt"
        save_checkpoint(ckpt_path, model, epoch=result.best_epoch)
        reports.append(report)
        timing["cycle_seconds"].append(time.perf_counter() - started)
        cycle_docs.append(
            {
                "seed": seed,
                "best_epoch": result.best_epoch,
                "best_val_weighted_f1": result.best_val_weighted_f1,
                "epochs": [
                    {k: v for k, v in row.as_dict().items() if k != "wall_clock"}
                    for row in result.rows
                ],
                "report": _report_dict(report),
                "checkpoint": ckpt_path.name,
            }
        )
    aggregate = aggregate_cycles(reports)
    document = {
        "config": exp.as_dict(),
        "cycles": cycle_docs,
        "aggregate": _report_dict(aggregate),
        "timing": timing,
    }
    return document, aggregate


def cmd_train(args):
    exp = _load_experiment(args)
    records = _load_records(exp)
    run_dir = Path(exp.out) / (args.name or "train")
    document, aggregate = _run_cycles(exp, records, run_dir)
    results_path = run_dir / "results.json"
    with open(results_path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, sort_keys=True, indent=1)
    _print_table([(exp.variant, aggregate)], f"aggregate over {exp.cycles} cycles")
    print(f"results written to {results_path}")
    return 0


def cmd_ablate(args):
    exp = _load_experiment(args)
    records = _load_records(exp)
    names = [normalize_grid_name(n) for n in args.grid]
    run_dir = Path(exp.out) / (args.name or "ablation")
    run_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    table = []
    for name in names:
        row_exp = ExperimentConfig(**exp.as_dict())
        for key, value in ABLATION_GRID[name].items():
            setattr(row_exp, key, value)
        document, aggregate = _run_cycles(row_exp, records, run_dir, tag=name)
        rows.append({"name": name, "overrides": ABLATION_GRID[name], "run": document})
        table.append((name, aggregate))
    results_path = run_dir / "ablation.json"
    with open(results_path, "w", encoding="utf-8") as fh:
        json.dump({"rows": rows}, fh, sort_keys=True, indent=1)
    _print_table(table, f"ablation grid, mean over {exp.cycles} cycles")
    print(f"results written to {results_path}")
    return 0


def cmd_gradcheck(args):
    started = time.perf_counter()
    results = run_all_gradchecks(seed=args.seed)
    failures = 0
    for name in sorted(results):
        err = results[name]
        ok = err < GRADCHECK_TOLERANCE
        failures += 0 if ok else 1
        print(f"{name:<40} {err:12.3e}  {'ok' if ok else 'FAIL'}")
    elapsed = time.perf_counter() - started
    print(f"{len(results)} checks, {failures} failures, {elapsed:.1f}s")
    return 0 if failures == 0 else 1


CURVE_ABLATIONS = {
    "none": {},
    "no_batchnorm": {"use_batchnorm": False},
    "no_maxnorm": {"use_maxnorm": False},
    "no_both": {"use_batchnorm": False, "use_maxnorm": False},
}


def cmd_curves(args):
    exp = _load_experiment(args)
    for key, value in CURVE_ABLATIONS[args.ablation].items():
        setattr(exp, key, value)
    records = _load_records(exp)
    split = split_dataset(records, exp.seed, train_frac=exp.train_frac, val_frac=exp.val_frac)
    model = Model(exp.model_config(), exp.seed)
    result = fit(model, records, split, exp.train_config(), restore_best=False)
    cut = result.best_epoch + 2  # rows through best + 1 epoch
    run_dir = Path(exp.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    csv_path = run_dir / f"curves-{args.ablation}.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_weighted_f1\n")
        for row in result.rows[:cut]:
            fh.write(f"{row.epoch},{row.total!r},{row.val_weighted_f1!r}\n")
    print(f"curve written to {csv_path} (best epoch {result.best_epoch})")
    return 0


def cmd_synth(args):
    rates = np.full(23, args.rate) if args.rate is not None else None
    records = generate_synthetic(args.seed, args.n, args.noise, label_rates=rates)
    write_container(args.out, records)
    labels = np.stack([r.labels for r in records])
    print(f"wrote {len(records)} records to {args.out}")
    print("per-class positives:", " ".join(str(int(c)) for c in labels.sum(axis=0)))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mmfuse",
        description="Dual-objective bimodal classification harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--preset", help="pm-mo-paper, gmu-paper, or pm-mo-1024")
        p.add_argument("--seed", type=int, help="base seed; cycle i uses seed + i")
        p.add_argument("--cycles", type=int, help="number of independent cycles")
        p.add_argument("--data", help="path to an MMT1 container")
        p.add_argument("--out", help="output directory")
        p.add_argument("--name", help="run directory name")

    p_train = sub.add_parser("train", help="train and test over seeded cycles")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_ablate = sub.add_parser("ablate", help="run the estimator/penalty grid")
    common(p_ablate)
    p_ablate.add_argument(
        "--grid",
        nargs="+",
        default=list(ABLATION_GRID),
        help="row names; defaults to the full eight-row grid",
    )
    p_ablate.set_defaults(func=cmd_ablate)

    p_grad = sub.add_parser("gradcheck", help="finite-difference checks for every op")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_curves = sub.add_parser("curves", help="per-epoch validation curve CSV")
    common(p_curves)
    p_curves.add_argument("--ablation", choices=sorted(CURVE_ABLATIONS), default="none")
    p_curves.set_defaults(func=cmd_curves)

    p_synth = sub.add_parser("synth", help="write a synthetic MMT1 container")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--n", type=int, required=True)
    p_synth.add_argument("--noise", type=float, default=0.1)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--rate", type=float, help="uniform per-class positive rate")
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except MMFuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
