"""Command-line front end.

Exit codes: 0 success, 2 config error, 3 check failure.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from .config import CflSpec, FedAvgSpec, FedProxSpec, algorithm_label, replace_fields
from .engine import run_experiment
from .errors import ConfigError
from .harness import (
    CHECK_PASS_RATE,
    DEFAULT_LR_GRID,
    DEFAULT_SWEEP_SEEDS,
    emit_csv,
    load_config,
    lr_sweep,
    preset,
    resolve_out_path,
    summary_line,
    theorem1_check,
    write_partition_manifest,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3


def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cflsim",
        description="Federated simulation over drifting client objectives.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="CSV output path")

    p_preset = sub.add_parser("preset", help="run one of the named benchmark settings")
    p_preset.add_argument("name")
    p_preset.add_argument(
        "--algorithm",
        choices=("fedavg", "fedprox", "cfl"),
        default="cfl",
        help="swap the algorithm while keeping the setting",
    )
    p_preset.add_argument("--out", help="CSV output path")

    p_sweep = sub.add_parser("sweep", help="learning-rate sweep over seeds")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--lrs", help="comma-separated learning rates")
    p_sweep.add_argument("--seeds", help="comma-separated seeds")
    p_sweep.add_argument("--out", help="CSV output path for the sweep table")

    p_check = sub.add_parser("check", help="numeric checks")
    p_check.add_argument("what", choices=("theorem1",))
    p_check.add_argument("config")
    p_check.add_argument("--replicates", type=int, default=200)

    p_part = sub.add_parser("partition", help="write the config's data partition manifest")
    p_part.add_argument("config")
    p_part.add_argument("--out", help="manifest output path")
    return parser


def _run_records(cfg, out: Optional[str]) -> int:
    records = run_experiment(cfg)
    path = out or f"{cfg.name}-{algorithm_label(cfg.algorithm)}.csv"
    emit_csv(records, resolve_out_path(path))
    print(summary_line(cfg, records))
    return EXIT_OK


def _cmd_run(args) -> int:
    return _run_records(load_config(args.config), args.out)


def _cmd_preset(args) -> int:
    cfg = preset(args.name)
    if args.algorithm == "fedavg":
        cfg = replace_fields(cfg, algorithm=FedAvgSpec())
    elif args.algorithm == "fedprox":
        cfg = replace_fields(cfg, algorithm=FedProxSpec())
    return _run_records(cfg, args.out)


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    lrs = _float_list(args.lrs) if args.lrs else list(DEFAULT_LR_GRID)
    seeds = _int_list(args.seeds) if args.seeds else list(DEFAULT_SWEEP_SEEDS)
    result = lr_sweep(cfg, lrs, seeds)
    for row in result.rows:
        print(
            f"lr={row.lr!r} mean_final_loss={row.mean_final_loss!r} "
            f"divergence_fraction={row.divergence_fraction!r}"
        )
    print(f"best_lr={result.best_lr!r}")
    if args.out:
        lines = ["lr,mean_final_loss,divergence_fraction"]
        for row in result.rows:
            lines.append(
                f"{row.lr!r},{row.mean_final_loss!r},{row.divergence_fraction!r}"
            )
        with open(resolve_out_path(args.out), "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def _cmd_check(args) -> int:
    cfg = load_config(args.config)
    report = theorem1_check(cfg, replicates=args.replicates)
    print(
        f"status={report.status} rate={report.satisfaction_rate!r} "
        f"rounds={report.rounds} eta={report.eta!r} eta_bound={report.eta_bound!r}"
    )
    print(report.message)
    if report.status == "skipped":
        return EXIT_OK
    return EXIT_OK if report.satisfaction_rate >= CHECK_PASS_RATE else EXIT_CHECK


def _cmd_partition(args) -> int:
    cfg = load_config(args.config)
    path = args.out or f"{cfg.name}-partition.txt"
    manifest = write_partition_manifest(cfg, resolve_out_path(path))
    items = len(manifest.all_items())
    print(
        f"clients={manifest.n_clients} subsets_per_client={manifest.subsets_per_client} "
        f"items={items}"
    )
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "preset": _cmd_preset,
        "sweep": _cmd_sweep,
        "check": _cmd_check,
        "partition": _cmd_partition,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
