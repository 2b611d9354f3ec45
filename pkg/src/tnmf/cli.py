"""Command-line entry point: ``tnmf {factorize,recognize,grid,synth,inspect}``.

Exit codes: 0 success, 1 usage error, 2 input/parse error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as exp
from .errors import (
    DatasetError,
    DomainError,
    NumericalError,
    ParameterError,
    PGMError,
    PlanError,
    ShapeError,
)
from .factorization import ALGORITHMS, PenaltyConfig, SolverConfig, run, zellner_g_preset
from .recognition import METRICS, build_matrix, load_dataset, save_dataset
from .toeplitz import KINDS

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolution(text):
    try:
        return exp.parse_resolution(text)
    except (ParameterError, ValueError):
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}")


def _add_penalty_args(p):
    p.add_argument("--algorithm", choices=sorted(ALGORITHMS), default="nmf")
    p.add_argument("--rank", "-k", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=None,
                   help="defaults to 1 - alpha for penalised algorithms")
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--kind", choices=KINDS, default="geometric",
                   help="Toeplitz structure for tnmf")
    p.add_argument("--g", type=float, default=None)
    p.add_argument("--g-preset", choices=["max-n-p2"], default=None,
                   help="use g = max(n, p^2) computed from the training matrix")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--check-every", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tnmf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("factorize", help="factorize one matrix or dataset")
    p.add_argument("--input", required=True,
                   help="matrix (.npy, .csv, whitespace text) or dataset directory/manifest")
    p.add_argument("--resize", type=_resolution, default=None)
    _add_penalty_args(p)
    p.add_argument("--out", default=None, help="write W, H and cost history to this .npz")

    p = sub.add_parser("recognize", help="train and evaluate one replication")
    p.add_argument("--input", required=True, help="dataset directory or manifest")
    p.add_argument("--train-per-subject", type=int, default=5)
    p.add_argument("--resize", type=_resolution, default=None)
    p.add_argument("--metric", choices=METRICS, default="cosine")
    p.add_argument("--replication", type=int, default=0)
    _add_penalty_args(p)
    p.add_argument("--out", default=None)

    p = sub.add_parser("grid", help="run a replicated parameter sweep")
    p.add_argument("--plan", required=True)
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)

    p = sub.add_parser("synth", help="write a synthetic parts dataset as PGM files")
    p.add_argument("--n-parts", type=int, default=8)
    p.add_argument("--part-size", type=int, default=16)
    p.add_argument("--subjects", type=int, default=8)
    p.add_argument("--images-per-subject", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("inspect", help="summarize a results file")
    p.add_argument("results")
    p.add_argument("--argmax", action="store_true", help="only the best setting per rank")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out", default=None)
    return parser


def _load_matrix(path: str, resize) -> np.ndarray:
    p = Path(path)
    if p.is_dir() or p.suffix.lower() in (".manifest", ".lst"):
        return build_matrix(load_dataset(p, resize=resize))
    try:
        if p.suffix.lower() == ".npy":
            return np.load(p)
        delimiter = "," if p.suffix.lower() == ".csv" else None
        return np.loadtxt(p, delimiter=delimiter, ndmin=2)
    except OSError as e:
        raise DatasetError(f"{p}: {e.strerror or e}") from e
    except ValueError as e:
        raise DatasetError(f"{p}: {e}") from e


def _penalty(args, x_shape=None) -> PenaltyConfig:
    family = exp.family_of(args.algorithm)
    if family == "none":
        return PenaltyConfig()
    beta = 1.0 - args.alpha if args.beta is None else args.beta
    g = args.g
    if args.g_preset:
        if x_shape is None:
            raise ParameterError("--g-preset needs the training matrix shape")
        g = zellner_g_preset(*x_shape)
    return PenaltyConfig(family=family, alpha=args.alpha, beta=beta, g=g,
                         toeplitz_kind=args.kind, rho=args.rho, nu=args.nu)


def _solver(args) -> SolverConfig:
    return SolverConfig(max_iters=args.max_iters, rel_tol=args.tol,
                        check_every=args.check_every, seed=args.seed)


def cmd_factorize(args) -> int:
    x = _load_matrix(args.input, args.resize)
    config = _penalty(args, x.shape)
    model = run(x, args.rank, config, _solver(args))
    residual = float(np.linalg.norm(x - model.w @ model.h) / max(np.linalg.norm(x), 1e-300))
    summary = {
        "n": x.shape[0], "p": x.shape[1], "k": args.rank,
        "algorithm": args.algorithm, "alpha": config.alpha, "beta": config.beta,
        "rho": config.rho if config.family == "toeplitz" else None,
        "g": config.g, "iterations": model.iterations_run,
        "final_cost": model.cost_history[-1], "relative_residual": residual,
        "clamp_warnings": model.clamp_count,
    }
    if args.out:
        np.savez(args.out, W=model.w, H=model.h, cost_history=np.array(model.cost_history))
    json.dump(summary, sys.stdout, indent=1)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_recognize(args) -> int:
    dataset = load_dataset(args.input, resize=args.resize)
    n = dataset.images[0].pixels.size
    p = args.train_per_subject * len(dataset.subjects())
    config = _penalty(args, (n, p))
    plan = exp.ExperimentPlan(
        dataset_path=args.input, dataset_name=dataset.name, algorithm=args.algorithm,
        ranks=(args.rank,), replications=args.replication + 1, base_seed=args.seed,
        train_per_subject=args.train_per_subject, target_resolution=args.resize,
        solver=_solver(args), metric=args.metric, toeplitz_kind=args.kind, nu=args.nu,
    )
    setting = exp.Setting(
        args.rank, config.alpha, config.beta,
        config.rho if config.family == "toeplitz" else None,
        config.g if config.family == "zellner" else None,
    )
    record = exp.run_replication(plan, setting, args.replication, dataset)
    exp.emit([record], args.out)
    return EXIT_OK


def cmd_grid(args) -> int:
    plan = exp.load_plan(args.plan)
    if args.replications is not None:
        plan = dataclasses.replace(plan, replications=args.replications)
    out = args.out or plan.output_path
    if out and out != "-":
        Path(out).parent.mkdir(parents=True, exist_ok=True)
    records = exp.run_grid(plan, jobs=args.jobs)
    exp.emit(records, out)
    failures = exp.count_failures(records)
    print(f"{len(records)} cells, {failures} failed", file=sys.stderr)
    _, best = exp.aggregate(records)
    for row in best:
        print(f"best k={row.k}: alpha={row.alpha:g} beta={row.beta:g} rho={row.rho} "
              f"g={row.g} mean_accuracy={row.mean_accuracy:.4f} (n={row.replications})",
              file=sys.stderr)
    return EXIT_NUMERICAL if failures else EXIT_OK


def cmd_synth(args) -> int:
    ds = exp.generate_synthetic_parts(args.n_parts, args.part_size, args.subjects,
                                      args.images_per_subject, args.noise, args.seed)
    written = save_dataset(ds, args.out)
    print(f"wrote {len(written)} images for {len(ds.subjects())} subjects to {args.out}",
          file=sys.stderr)
    return EXIT_OK


def cmd_inspect(args) -> int:
    records = exp.read_records(args.results)
    summary, best = exp.aggregate(records)
    exp.emit(best if args.argmax else summary, args.out, format=args.format,
             fields=[f.name for f in dataclasses.fields(exp.SummaryRow)])
    return EXIT_OK


COMMANDS = {
    "factorize": cmd_factorize,
    "recognize": cmd_recognize,
    "grid": cmd_grid,
    "synth": cmd_synth,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericalError as e:
        print(f"tnmf: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ParameterError as e:
        print(f"tnmf: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, PGMError, PlanError, DomainError, ShapeError, OSError) as e:
        print(f"tnmf: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
