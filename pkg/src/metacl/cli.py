"""Command-line entry point.

Subcommands: run, sweep, grid, ablate, report. Configuration comes from an
optional ``--config`` file overlaid with repeatable ``--set KEY=VALUE`` flags;
``--seed``/``--seeds`` and ``--out`` are shortcuts for the matching keys.
Exit code 0 on success, 2 on any validation or runtime error.
"""

import argparse
import json
import sys

from .config import RunConfig, apply_overrides, load_config
from .errors import ConfigurationError
from .experiments import (
    GRID_SPACE,
    ablate,
    execute_run,
    grid,
    mean_std,
    report,
    run_dir_name,
    sweep,
)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="metacl",
        description="Adversarial continual-learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="single seed shortcut")
        p.add_argument("--seeds", help="comma-separated seed list")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key")

    p_run = sub.add_parser("run", help="train one method over all seeds")
    add_common(p_run)

    p_sweep = sub.add_parser("sweep", help="sweep one axis")
    add_common(p_sweep)
    p_sweep.add_argument("--axis", choices=("memory", "lambda"),
                         required=True)
    p_sweep.add_argument("--values", help="comma-separated axis values")

    p_grid = sub.add_parser("grid",
                            help="hyperparameter grid on the first 3 tasks")
    add_common(p_grid)
    p_grid.add_argument("--space", help="JSON {axis: [values]} restriction")

    p_ablate = sub.add_parser("ablate", help="run ablations full, A, B, C")
    add_common(p_ablate)
    p_ablate.add_argument("--modes", default="full,A,B,C",
                          help="comma-separated ablation modes")

    p_report = sub.add_parser("report", help="aggregate records in a directory")
    p_report.add_argument("--out", required=True,
                          help="directory holding record.json files")
    return parser


def assemble_config(args):
    config = load_config(args.config) if args.config else RunConfig()
    config = apply_overrides(config, args.overrides)
    pairs = []
    if args.seeds is not None:
        pairs.append(f"seeds=[{args.seeds}]")
    if args.seed is not None:
        pairs.append(f"seeds=[{args.seed}]")
    if args.out is not None:
        pairs.append(f"out_dir={args.out}")
    return apply_overrides(config, pairs)


def summarize(records, out):
    acc_m, acc_s = mean_std(r.final_acc for r in records)
    fm_m, fm_s = mean_std(r.final_fm for r in records)
    first = records[0]
    print(f"{first.method}-{first.ablation}: {len(records)} seed(s)  "
          f"ACC {acc_m:.4f}±{acc_s:.4f}  FM {fm_m:.4f}±{fm_s:.4f}", file=out)


def cmd_run(args, out):
    config = assemble_config(args)
    records = execute_run(config)
    print(f"run dir: {config.out_dir}/{run_dir_name(config)}", file=out)
    summarize(records, out)
    return 0


def cmd_sweep(args, out):
    config = assemble_config(args)
    values = None
    if args.values:
        values = [json.loads(v) for v in args.values.split(",")]
    table = sweep(config, args.axis, values=values)
    for value, records in table.items():
        acc_m, _ = mean_std(r.final_acc for r in records)
        fm_m, _ = mean_std(r.final_fm for r in records)
        print(f"{args.axis}={value}: ACC {acc_m:.4f}  FM {fm_m:.4f}", file=out)
    print(f"table: {config.out_dir}/sweep-{args.axis}.csv", file=out)
    return 0


def cmd_grid(args, out):
    config = assemble_config(args)
    space = None
    if args.space:
        try:
            space = json.loads(args.space)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"--space is not valid JSON: {exc}")
        if not isinstance(space, dict):
            raise ConfigurationError("--space must be a JSON object")
    best, rows = grid(config, space=space)
    print(f"{len(rows)} combinations over "
          f"{sorted((space or GRID_SPACE))}", file=out)
    print(f"best: {json.dumps(best, sort_keys=True)}", file=out)
    print(f"table: {config.out_dir}/grid.csv", file=out)
    return 0


def cmd_ablate(args, out):
    config = assemble_config(args)
    modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
    table = ablate(config, modes=modes)
    for mode, records in table.items():
        acc_m, _ = mean_std(r.final_acc for r in records)
        fm_m, _ = mean_std(r.final_fm for r in records)
        print(f"ablation {mode}: ACC {acc_m:.4f}  FM {fm_m:.4f}", file=out)
    print(f"table: {config.out_dir}/ablations.csv", file=out)
    return 0


def cmd_report(args, out):
    text, _rows = report(args.out)
    print(text, file=out)
    return 0


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "grid": cmd_grid,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv=None, out=None, err=None):
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, out)
    except Exception as exc:
        print(f"error: {exc}", file=err)
        return 2


if __name__ == "__main__":
    sys.exit(main())
