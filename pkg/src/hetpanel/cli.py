"""Command-line entry point.

    hetpanel run CONFIG [--stage S] [--k K] [--c C] [--grid 2,3x0.1,0.25]
                        [--estimator ols|ppml|tobit] [--reps R] [--seed S] [--out DIR]
    hetpanel report DIR
    hetpanel demo DIR [--fields N] [--reps R] [--seed S]

Exit codes: 0 success, 1 invalid input or configuration, 2 estimation failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .exceptions import EstimationError, HetPanelError
from .pipeline import STAGES, emit_report, load_config, run_pipeline, run_stage
from .synthgen import write_demo_inputs

EXIT_OK, EXIT_VALIDATION, EXIT_ESTIMATION = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetpanel", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the pipeline or one stage")
    run.add_argument("config")
    run.add_argument("--stage", choices=STAGES)
    run.add_argument("--k", type=int)
    run.add_argument("--c", type=float)
    run.add_argument("--grid", help="K values x c values, e.g. 2,3x0.1,0.25")
    run.add_argument("--estimator", choices=("ols", "ppml", "tobit"))
    run.add_argument("--reps", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="artifact directory (overrides the config)")

    rep = sub.add_parser("report", help="summarize an artifact directory")
    rep.add_argument("directory")
    rep.add_argument("-o", "--output", help="write the report here instead of stdout")

    demo = sub.add_parser("demo", help="write synthetic inputs and a config")
    demo.add_argument("directory")
    demo.add_argument("--fields", type=int, default=60)
    demo.add_argument("--reps", type=int, default=50)
    demo.add_argument("--seed", type=int, default=0)
    return parser


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, EstimationError):
        return EXIT_ESTIMATION
    return EXIT_VALIDATION


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    stage = None
    try:
        if args.command == "demo":
            path = write_demo_inputs(args.directory, n_fields=args.fields, reps=args.reps, seed=args.seed)
            print(path)
            return EXIT_OK
        if args.command == "report":
            text = emit_report(args.directory)
            if args.output:
                with open(args.output, "w", encoding="utf-8") as fh:
                    fh.write(text + "\n")
            else:
                print(text)
            return EXIT_OK
        cfg = load_config(
            args.config,
            k=args.k,
            c=args.c,
            grid=args.grid,
            estimator=args.estimator,
            reps=args.reps,
            seed=args.seed,
            output=args.out,
        )
        if args.stage:
            stage = args.stage
            run_stage(cfg, args.stage)
        else:
            run_pipeline(cfg)
        print(cfg.output)
        return EXIT_OK
    except (HetPanelError, ValueError, FileNotFoundError) as exc:
        stage = getattr(exc, "stage", stage)
        where = f"stage {stage} failed" if stage else "error"
        print(f"{where}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
