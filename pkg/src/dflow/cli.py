"""Command-line interface.

``dflow run CONFIG`` executes a full experiment config.  The other
subcommands build a one-task config from flags and run it the same way::

    dflow check --space path:16 --functional '{"type": "graph_p_energy", "p": 3}'
    dflow evolve --space path:16 --functional @energy.json --t 1 --steps 200 --csv
    dflow capacity --space path:8 --functional '{"type": "quadratic"}' --set 0 --set 0,1
    dflow reconstruct --space path:10 --functional @robin.json --base @neumann.json
    dflow sandwich --space path:16 --upper @N.json --middle @R.json --lower @D.json

Exit codes: 0 every task passed, 1 some task failed its check, 2 the config
or arguments were invalid, 3 a solver failed to converge.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, DflowError
from .experiments import EXIT_CONFIG, EXIT_SOLVER, load_config, parse_config, run

__all__ = ["main", "build_parser"]


def _json_arg(text: str, what: str):
    """Parse an inline JSON value or ``@file``."""
    where = what
    if text.startswith("@"):
        path = Path(text[1:])
        where = f"{what} ({path})"
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read file: {exc.strerror}", where) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, f"{where}, line {exc.lineno}, column {exc.colno}") from None


def _space_arg(text: str):
    if text.startswith("{") or text.startswith("@"):
        return _json_arg(text, "--space")
    return text


def _common(p: argparse.ArgumentParser, *, space: bool = True):
    if space:
        p.add_argument("--space", required=True,
                       help="space file, inline JSON, @file, or shorthand like path:16 / cycle:8")
    p.add_argument("--out", default=None, help="report directory (default: reports)")
    p.add_argument("--seed", type=int, default=None, help="override DFLOW_SEED and the config seed")
    p.add_argument("--name", default=None, help="task name used for the report file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dflow", description="Dirichlet-form flows on finite graphs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("check", help="lattice and perturbation inequalities")
    _common(p)
    p.add_argument("--functional", required=True)
    p.add_argument("--base", default=None)
    p.add_argument("--checks", default="submodular,alpha_truncation",
                   help="comma-separated: submodular, alpha_truncation, abs, barthelemy, locality, cone_monotone")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--sampler", default="uniform", choices=["uniform", "gaussian", "nonnegative"])
    p.add_argument("--tol", type=float, default=1e-10)

    p = sub.add_parser("evolve", help="implicit-Euler gradient flow")
    _common(p)
    p.add_argument("--functional", required=True)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--initial", default="random", help="JSON list, 'ones', 'random' or JSON object")
    p.add_argument("--csv", action="store_true", help="also write the trajectory as CSV")
    p.add_argument("--tol", type=float, default=1e-8)

    p = sub.add_parser("capacity", help="norm-capacity of vertex sets")
    _common(p)
    p.add_argument("--functional", required=True)
    p.add_argument("--set", action="append", required=True, dest="sets",
                   help="comma-separated vertices; repeat for several sets")
    p.add_argument("--tol", type=float, default=1e-9)

    p = sub.add_parser("reconstruct", help="recover the perturbation integrand")
    _common(p)
    p.add_argument("--functional", required=True)
    p.add_argument("--base", default=None)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--ladder", type=int, default=20)
    p.add_argument("--degree", type=float, default=2.0)
    p.add_argument("--targets", default="uniform", choices=["uniform", "gaussian", "nonnegative"])
    p.add_argument("--export", action="store_true", help="include the reconstructed integrand in the report")

    p = sub.add_parser("sandwich", help="two-sided flow comparison")
    _common(p)
    p.add_argument("--upper", required=True)
    p.add_argument("--middle", required=True)
    p.add_argument("--lower", required=True)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--initial", default="random")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--tol", type=float, default=1e-8)
    return parser


def _initial_arg(text: str):
    if text in ("random", "ones"):
        return text
    return _json_arg(text, "--initial")


def _config_from_args(args) -> dict:
    funcs: dict = {}
    task: dict = {"type": args.command}
    if args.name:
        task["name"] = args.name
    for flag, key in (("functional", "F"), ("base", "E"), ("upper", "N"), ("middle", "R"), ("lower", "D")):
        text = getattr(args, flag, None)
        if text is not None:
            funcs[key] = _json_arg(text, f"--{flag}")
            task["functional" if flag == "functional" else flag] = key
    cmd = args.command
    if cmd == "check":
        task.update(checks=[c.strip() for c in args.checks.split(",") if c.strip()],
                    samples=args.samples, sampler=args.sampler, tol=args.tol)
    elif cmd == "evolve":
        task.update(t=args.t, steps=args.steps, initial=_initial_arg(args.initial), csv=args.csv, tol=args.tol)
    elif cmd == "capacity":
        try:
            task["sets"] = [[int(v) for v in s.split(",") if v.strip()] for s in args.sets]
        except ValueError:
            raise ConfigError("expected comma-separated integers", "--set") from None
        task["tol"] = args.tol
    elif cmd == "reconstruct":
        task.update(count=args.count, ladder=args.ladder, degree=args.degree, targets=args.targets,
                    export=args.export)
    elif cmd == "sandwich":
        task.update(t=args.t, steps=args.steps, initial=_initial_arg(args.initial), count=args.count,
                    tol=args.tol)
    return {"schema_version": 1, "space": _space_arg(args.space), "functionals": funcs, "tasks": [task]}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            workers = args.workers
            if workers is not None and workers < 1:
                raise ConfigError("must be a positive integer", "--workers")
        else:
            cfg = parse_config(_config_from_args(args))
            workers = None
        return run(cfg, seed=args.seed, workers=workers, out_dir=args.out)
    except ConfigError as exc:
        print(f"dflow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DflowError as exc:
        print(f"dflow: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
