"""Command-line entry point: run one scenario or sweep a grid."""

from __future__ import annotations

import argparse
import sys

from .runner import run_to_dir
from .scenario import load_scenario
from .sweep import load_sweep, sweep_to_dir


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ctsim",
        description="Concurrent-transmission multi-robot coordination simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a single scenario")
    run_p.add_argument("--scenario", required=True, help="scenario file")
    run_p.add_argument("--seed", type=int, default=None, help="override the seed")
    run_p.add_argument("--out", required=True, help="output directory")

    sweep_p = sub.add_parser("sweep", help="run a parameter sweep")
    sweep_p.add_argument("--spec", required=True, help="sweep spec file")
    sweep_p.add_argument("--out", required=True, help="output directory")
    sweep_p.add_argument("--jobs", type=int, default=1,
                         help="parallel workers (across cells only)")
    sweep_p.add_argument("--full", action="store_true",
                         help="use full_duration_s instead of the desk-scale duration")

    args = parser.parse_args(argv)

    if args.command == "run":
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            scenario.seed = args.seed
            scenario.validate()
        report = run_to_dir(scenario, args.out)
        pid = report.mean_pid_err()
        trx = report.mean_trx_err()
        print(f"run complete: nodes={len(report.nodes)}"
              f" pid_err={'n/a' if pid is None else f'{pid:.2f}%'}"
              f" trx_err={'n/a' if trx is None else f'{trx:.2f}%'}"
              f" sync_mean={'n/a' if report.sync_mean_ms is None else f'{report.sync_mean_ms:.2f}ms'}")
        return 0

    spec = load_sweep(args.spec)
    total = spec.cell_count() * spec.repetitions
    print(f"sweep: {spec.cell_count()} cells x {spec.repetitions} repetitions "
          f"= {total} runs")
    result = sweep_to_dir(spec, args.out, jobs=args.jobs, full=args.full)
    print(f"sweep complete: {len(result.reports)} runs ok, "
          f"{len(result.failures)} failed; outputs in {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
