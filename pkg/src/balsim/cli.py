"""Command line entry point: validate scenarios, run pipelines, report runs."""
from __future__ import annotations

import argparse
import sys

from .model import validate_dataset
from .pipeline import EXIT_OK, EXIT_VALIDATION, NAMED_PIPELINES, PipelineSpec, run
from .report import report
from .scenario import load_scenario


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="balsim",
                                     description="balancing-market simulation engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a pipeline on a scenario")
    p_run.add_argument("scenario")
    p_run.add_argument("--pipeline", choices=sorted(NAMED_PIPELINES), default="markets")
    p_run.add_argument("--market", choices=["RR", "mFRR"], default=None)
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--out", default="out")
    p_run.add_argument("--no-combinatorial", action="store_true",
                       help="formulate single-step orders only")

    p_rep = sub.add_parser("report", help="summarize a run directory")
    p_rep.add_argument("run_dir")
    p_rep.add_argument("--plot", action="store_true")

    p_val = sub.add_parser("validate", help="check a scenario file")
    p_val.add_argument("scenario")

    args = parser.parse_args(argv)

    if args.command == "run":
        spec = PipelineSpec.named(args.pipeline, seed=args.seed, output_dir=args.out,
                                  combinatorial=not args.no_combinatorial)
        return run(spec, args.scenario, market_override=args.market)

    if args.command == "report":
        status = report(args.run_dir, plot=args.plot)
        for table, state in status.items():
            print(f"{table}: {state}")
        return EXIT_OK

    if args.command == "validate":
        try:
            _, _, ds = load_scenario(args.scenario)
        except (KeyError, ValueError) as exc:
            print(f"scenario error: {exc}")
            return EXIT_VALIDATION
        violations = validate_dataset(ds)
        for v in violations:
            print(v)
        if violations:
            return EXIT_VALIDATION
        print("ok")
        return EXIT_OK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
