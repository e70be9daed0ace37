"""Config-driven experiments: validation, task execution and reports.

A config is one JSON object::

    {
      "schema_version": 1,
      "seed": 0,
      "output_dir": "reports",
      "workers": 1,
      "space": "space.json" | {"generator": "path", "n": 16} | {"n": ..., "masses": ...},
      "functionals": {"E": {...}, "F": {...}},
      "tasks": [{"type": "check" | "evolve" | "dominate" | "capacity"
                         | "reconstruct" | "sandwich", ...}, ...]
    }

Each task writes ``<output_dir>/<index>-<name>.json`` atomically.  Reports
are deterministic for fixed seeds except for the ``timestamp`` field.
"""

from __future__ import annotations

import datetime as _dt
import itertools
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import properties as P
from ._json import dumps, write_atomic
from .capacity import check_capacity_lemmas, normcap
from .errors import ConfigError, ProxConvergenceError, ValidationError
from .forms.functionals import FunctionalSpec, evaluate, functional_from_dict, perturbation
from .rieszmarkov import (PsiOracle, check_measure_lemmas, ladder, reconstruct_signed,
                          verify_representation)
from .semigroup import check_trajectory_domination, evolve
from .space import FiniteSpace

__all__ = [
    "SCHEMA_VERSION",
    "EXIT_OK",
    "EXIT_FAIL",
    "EXIT_CONFIG",
    "EXIT_SOLVER",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "parse_space",
    "SandwichReport",
    "sandwich",
    "run_task",
    "run",
]

SCHEMA_VERSION = 1
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
TASK_TYPES = ("check", "evolve", "dominate", "capacity", "reconstruct", "sandwich")


# -- sandwich -------------------------------------------------------------
@dataclass
class SandwichReport:
    """Worst violations of the two-sided comparison ``G ≼ F ≼ E``.

    ``upper`` is the worst of ``|R_t(±u0)| − min(N_t(u0), −N_t(−u0))`` and
    ``lower`` the worst of ``|D_t(±u0)| − min(R_t(u0), −R_t(−u0))`` over all
    steps and vertices, where ``N, R, D`` are the flows of ``E``, ``F_mid``
    and ``G_low``.
    """

    upper: float
    lower: float
    tol: float
    steps: int
    trajectories: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return self.upper <= self.tol and self.lower <= self.tol

    @property
    def ordering_gap(self) -> float:
        """Worst of ``D(u0) − R(u0)`` and ``R(u0) − N(u0)`` (one-sided ordering on ``u0 >= 0``)."""
        N, R, D = (self.trajectories[k].states for k in ("N+", "R+", "D+"))
        return float(max(np.max(D - R), np.max(R - N)))

    def to_dict(self) -> dict:
        return {"upper": self.upper, "lower": self.lower, "tol": self.tol, "steps": self.steps,
                "passed": self.passed, "ordering_gap": self.ordering_gap}


def sandwich(E: FunctionalSpec, F_mid: FunctionalSpec, G_low: FunctionalSpec, u0, t: float = 1.0,
             steps: int = 100, tol: float = 1e-8, prox_tol: float = 1e-12) -> SandwichReport:
    """Evolve the three flows from ``u0 >= 0`` and ``−u0`` and check both dominations."""
    u0 = np.asarray(u0, dtype=float)
    if np.any(u0 < 0):
        raise ValidationError("sandwich needs nonnegative initial data")
    trajs = {}
    for key, F in (("N", E), ("R", F_mid), ("D", G_low)):
        for sign, tag in ((1, "+"), (-1, "-")):
            trajs[key + tag] = evolve(F, sign * u0, t, steps, prox_tol)
    st = {k: v.states for k, v in trajs.items()}
    upper_env = np.minimum(st["N+"], -st["N-"])
    mid_env = np.minimum(st["R+"], -st["R-"])
    upper = max(np.max(np.abs(st["R+"]) - upper_env), np.max(np.abs(st["R-"]) - upper_env))
    lower = max(np.max(np.abs(st["D+"]) - mid_env), np.max(np.abs(st["D-"]) - mid_env))
    return SandwichReport(float(upper), float(lower), float(tol), int(steps), trajs)


# -- config parsing -----------------------------------------------------
@dataclass
class ExperimentConfig:
    space: FiniteSpace
    functionals: dict
    tasks: list
    seed: int = 0
    output_dir: Path = Path("reports")
    workers: int = 1
    source: Path | None = None


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"missing required field {key!r}", where)
    return d[key]


def _num(d: dict, key: str, where: str, default=None, positive=True, integer=False):
    if key not in d:
        if default is None:
            raise ConfigError(f"missing required field {key!r}", where)
        return default
    x = d[key]
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"expected a number, got {x!r}", f"{where}.{key}")
    if integer and int(x) != x:
        raise ConfigError(f"expected an integer, got {x!r}", f"{where}.{key}")
    if positive and not x > 0:
        raise ConfigError(f"must be positive, got {x!r}", f"{where}.{key}")
    return int(x) if integer else float(x)


def parse_space(spec, base_dir: Path | None = None, where: str = "space") -> FiniteSpace:
    """Space from a file path, ``"path:16"``-style shorthand, generator dict or inline dict."""
    try:
        if isinstance(spec, str):
            if ":" in spec and spec.split(":", 1)[0] in ("path", "cycle"):
                kind, n = spec.split(":", 1)
                return getattr(FiniteSpace, kind)(int(n))
            p = Path(spec)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            try:
                return FiniteSpace.load(p)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"space file {p}: {exc.msg}", f"line {exc.lineno}, column {exc.colno}") from None
            except OSError as exc:
                raise ConfigError(f"cannot read space file: {exc.strerror}", where) from None
        if isinstance(spec, dict) and "generator" in spec:
            kind = spec["generator"]
            if kind not in ("path", "cycle"):
                raise ConfigError(f"unknown generator {kind!r}", f"{where}.generator")
            kw = {k: v for k, v in spec.items() if k in ("weight", "mass", "boundary")}
            if kind == "cycle":
                kw.pop("boundary", None)
            return getattr(FiniteSpace, kind)(int(_need(spec, "n", where)), **kw)
        if isinstance(spec, dict):
            return FiniteSpace.from_dict(spec)
    except (ValidationError, ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), where) from None
    raise ConfigError("expected a file path, shorthand string or object", where)


def parse_config(data: Any, source: Path | None = None) -> ExperimentConfig:
    """Validate a decoded config; errors name the offending field path."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object", "$")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})",
                          "schema_version")
    known = {"schema_version", "seed", "output_dir", "workers", "space", "functionals", "tasks"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown fields {unknown}", "$")
    base_dir = source.parent if source else None
    space = parse_space(_need(data, "space", "$"), base_dir)
    funcs_raw = data.get("functionals", {})
    if not isinstance(funcs_raw, dict):
        raise ConfigError("expected an object of named functionals", "functionals")
    functionals = {}
    for name, spec in funcs_raw.items():
        try:
            functionals[name] = functional_from_dict(spec, space)
        except (ValidationError, ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc), f"functionals.{name}") from None
    tasks = data.get("tasks")
    if not isinstance(tasks, list) or not tasks:
        raise ConfigError("expected a non-empty list of tasks", "tasks")
    names = set()
    for i, task in enumerate(tasks):
        where = f"tasks[{i}]"
        if not isinstance(task, dict):
            raise ConfigError("task must be an object", where)
        kind = _need(task, "type", where)
        if kind not in TASK_TYPES:
            raise ConfigError(f"unknown task type {kind!r}; expected one of {list(TASK_TYPES)}", f"{where}.type")
        name = task.get("name", f"{kind}{i}")
        if name in names:
            raise ConfigError(f"duplicate task name {name!r}", f"{where}.name")
        names.add(name)
        for key in ("functional", "base", "upper", "middle", "lower"):
            if key in task and task[key] not in functionals:
                raise ConfigError(f"unknown functional {task[key]!r}", f"{where}.{key}")
        for key in ("tol", "t", "prox_tol"):
            if key in task:
                _num(task, key, where)
        for key in ("steps", "samples", "ladder", "count"):
            if key in task:
                _num(task, key, where, integer=True)
        _validate_task(kind, task, where, space)
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}", "seed")
    workers = data.get("workers", 1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        raise ConfigError(f"workers must be a positive integer, got {workers!r}", "workers")
    out = Path(data.get("output_dir", "reports"))
    if base_dir is not None and not out.is_absolute():
        out = base_dir / out
    return ExperimentConfig(space, functionals, tasks, seed, out, workers, source)


_REQUIRED = {
    "check": ("functional",),
    "evolve": ("functional",),
    "dominate": ("functional", "base"),
    "capacity": ("functional", "sets"),
    "reconstruct": ("functional",),
    "sandwich": ("upper", "middle", "lower"),
}
_CHECKS = ("submodular", "alpha_truncation", "abs", "barthelemy", "locality", "cone_monotone")


def _validate_task(kind, task, where, space):
    for key in _REQUIRED[kind]:
        _need(task, key, where)
    if kind == "check":
        checks = task.get("checks", ["submodular", "alpha_truncation"])
        if not isinstance(checks, list) or not checks:
            raise ConfigError("expected a non-empty list", f"{where}.checks")
        for j, c in enumerate(checks):
            if c not in _CHECKS:
                raise ConfigError(f"unknown check {c!r}; expected one of {list(_CHECKS)}", f"{where}.checks[{j}]")
            if c in ("barthelemy", "cone_monotone") and "base" not in task:
                raise ConfigError(f"check {c!r} needs a 'base' functional", f"{where}.base")
    if kind == "capacity":
        sets = task["sets"]
        if not isinstance(sets, list):
            raise ConfigError("expected a list of vertex lists", f"{where}.sets")
        for j, s in enumerate(sets):
            if not isinstance(s, list) or any(not isinstance(v, int) or not 0 <= v < space.n for v in s):
                raise ConfigError(f"expected vertex indices in [0, {space.n})", f"{where}.sets[{j}]")
    if "initial" in task:
        _initial(task["initial"], space, np.random.default_rng(0), f"{where}.initial")


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, f"line {exc.lineno}, column {exc.colno}") from None
    return parse_config(data, path)


def _initial(spec, space: FiniteSpace, rng, where="initial", nonnegative=False) -> np.ndarray:
    n = space.n
    if spec is None or spec == "random":
        spec = {"random": "nonnegative" if nonnegative else "uniform"}
    if spec == "ones":
        return np.ones(n)
    if isinstance(spec, list):
        if len(spec) != n or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in spec):
            raise ConfigError(f"expected {n} numbers", where)
        return np.asarray(spec, dtype=float)
    if isinstance(spec, dict) and "random" in spec:
        kind = spec["random"]
        scale = float(spec.get("scale", 1.0))
        if kind == "uniform":
            return rng.uniform(-scale, scale, n)
        if kind == "nonnegative":
            return rng.uniform(0, scale, n)
        if kind == "gaussian":
            return scale * rng.standard_normal(n)
        raise ConfigError(f"unknown random kind {kind!r}", f"{where}.random")
    if isinstance(spec, dict) and "bump" in spec:
        v = spec["bump"]
        if not isinstance(v, int) or not 0 <= v < n:
            raise ConfigError(f"bump vertex must be in [0, {n})", f"{where}.bump")
        u = np.zeros(n)
        u[v] = float(spec.get("height", 1.0))
        return u
    raise ConfigError("expected a list, 'ones', 'random', {'random': kind} or {'bump': vertex}", where)


# -- tasks ------------------------------------------------------------------
def _task_check(cfg, task, rng, seed):
    F = cfg.functionals[task["functional"]]
    E = cfg.functionals.get(task.get("base"))
    tol = float(task.get("tol", 1e-10))
    sampler = P.Sampler(cfg.space, seed=seed, count=int(task.get("samples", 200)),
                        kind=task.get("sampler", "uniform"))
    reports = []
    for name in task.get("checks", ["submodular", "alpha_truncation"]):
        if name == "submodular":
            r = P.check_submodular(F, sampler, tol)
        elif name == "alpha_truncation":
            r = P.check_alpha_truncation(F, sampler, task.get("alphas", (0.1, 1.0, 10.0)), tol)
        elif name == "abs":
            r = P.check_abs_inequality(F, sampler, tol)
        elif name == "barthelemy":
            r = P.check_barthelemy(F, E, sampler, tol)
        elif name == "locality":
            r = P.check_locality(perturbation(F, E) if E is not None else F, sampler, tol)
        else:
            r = P.check_cone_monotone(perturbation(F, E), sampler, tol)
        reports.append(r)
    return all(r.passed for r in reports), {"checks": [r.to_dict() for r in reports]}, \
        "; ".join(f"{r.name}={r.worst:+.2e}" if r.worst is not None else f"{r.name}=n/a" for r in reports)


def _task_evolve(cfg, task, rng, seed):
    F = cfg.functionals[task["functional"]]
    u0 = _initial(task.get("initial"), cfg.space, rng)
    t = float(task.get("t", 1.0))
    steps = int(task.get("steps", 100))
    tr = evolve(F, u0, t, steps, float(task.get("prox_tol", 1e-12)))
    tol = float(task.get("tol", 1e-8))
    energies = tr.energies(F)
    dissipation = float(np.max(np.diff(energies), initial=0.0))
    checks = {"energy_increase": dissipation}
    passed = dissipation <= tol * max(1.0, abs(float(energies[0])))
    if F.is_symmetric:
        norms = tr.l2_norms()
        checks["l2_increase"] = float(np.max(np.diff(norms), initial=0.0))
        passed &= checks["l2_increase"] <= tol * max(1.0, float(norms[0]))
    if "expect_ratio" in task:
        target = float(task["expect_ratio"])
        rtol = float(task.get("ratio_tol", 1e-3))
        nz = np.abs(u0) > 0
        ratio = tr.states[-1][nz] / u0[nz]
        checks["ratio_error"] = float(np.max(np.abs(ratio - target), initial=0.0))
        passed &= checks["ratio_error"] <= rtol
    if task.get("csv"):
        out = cfg.output_dir / f"{task['_file']}.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        write_atomic(out, tr.to_csv())
        checks["csv"] = out.name
    body = {"checks": checks, "final": tr.states[-1].tolist(), "initial": tr.states[0].tolist(),
            "metadata": tr.metadata}
    summary = ", ".join(f"{k}={v:.2e}" for k, v in checks.items() if isinstance(v, float))
    return bool(passed), body, summary


def _task_dominate(cfg, task, rng, seed):
    F = cfg.functionals[task["functional"]]
    E = cfg.functionals[task["base"]]
    t = float(task.get("t", 1.0))
    steps = int(task.get("steps", 50))
    tol = task.get("tol")
    count = int(task.get("count", 1))
    expect = bool(task.get("expect_dominated", True))
    worst = -math.inf
    details = []
    for k in range(count):
        u0 = _initial(task.get("initial"), cfg.space, rng)
        S = evolve(F, u0, t, steps, float(task.get("prox_tol", 1e-12)))
        T = evolve(E, np.abs(u0), t, steps, float(task.get("prox_tol", 1e-12)))
        rep = check_trajectory_domination(S, T, tol)
        worst = max(worst, rep.violation)
        details.append(rep.to_dict())
    bart = P.check_barthelemy(F, E, P.Sampler(cfg.space, seed=seed, count=int(task.get("samples", 200))),
                              float(task.get("check_tol", 1e-10)))
    dominated = all(d["passed"] for d in details)
    passed = dominated if expect else not dominated
    body = {"domination": details, "worst_violation": worst, "barthelemy": bart.to_dict(),
            "expect_dominated": expect}
    return passed, body, f"violation={worst:+.2e}, barthelemy={'pass' if bart.passed else 'fail'}"


def _task_capacity(cfg, task, rng, seed):
    E = cfg.functionals[task["functional"]]
    tol = float(task.get("tol", 1e-9))
    sets = [sorted(set(s)) for s in task["sets"]]
    results = [normcap(E, s, tol).to_dict() for s in sets]
    pairs = list(itertools.combinations(sets, 2))
    lem = check_capacity_lemmas(E, pairs, [sets] if len(sets) > 1 else [], tol)
    return lem.passed, {"capacities": results, "lemmas": lem.to_dict()}, \
        f"{len(sets)} sets, lemma slack {max(lem.subadditivity, lem.monotonicity, lem.union_subadditivity):+.2e}"


def _task_reconstruct(cfg, task, rng, seed):
    F = cfg.functionals[task["functional"]]
    E = cfg.functionals.get(task.get("base"))
    psi = perturbation(F, E) if E is not None else (lambda u: evaluate(F, u))
    n = cfg.space.n
    m = int(task.get("ladder", 20))
    q = float(task.get("degree", 2.0))
    count = int(task.get("count", 20))
    kind = task.get("targets", "uniform")
    targets = [_initial({"random": kind}, cfg.space, rng) for _ in range(count)]
    glued = reconstruct_signed(psi, n, targets, m)
    lam = ladder(m, include_one=False)[-1]
    rep = verify_representation(psi, glued, targets, 1 - lam ** q, float(task.get("tol", 1e-12)))
    plus = PsiOracle(lambda f: psi(f), n)
    fams = [(rng.choice(n, max(1, n // 3), replace=False).tolist(),
             rng.choice(n, max(1, n // 2), replace=False).tolist()) for _ in range(10)]
    lemmas = check_measure_lemmas(plus, np.abs(targets[0]), fams, tol=float(task.get("tol", 1e-12)))
    body = {"representation": rep.to_dict(), "measure_lemmas": lemmas.to_dict(),
            "reconstruction": glued.to_dict() if task.get("export", False) else None}
    return rep.passed and lemmas.passed, body, \
        f"worst={rep.worst:.2e}, excess={rep.worst_excess:+.2e}, lemmas={lemmas.worst:+.2e}"


def _task_sandwich(cfg, task, rng, seed):
    N = cfg.functionals[task["upper"]]
    R = cfg.functionals[task["middle"]]
    D = cfg.functionals[task["lower"]]
    count = int(task.get("count", 1))
    tol = float(task.get("tol", 1e-8))
    reps = []
    for _ in range(count):
        u0 = np.abs(_initial(task.get("initial"), cfg.space, rng, nonnegative=True))
        reps.append(sandwich(N, R, D, u0, float(task.get("t", 1.0)), int(task.get("steps", 100)), tol,
                             float(task.get("prox_tol", 1e-12))))
    upper = max(r.upper for r in reps)
    lower = max(r.lower for r in reps)
    body = {"runs": [r.to_dict() for r in reps], "upper": upper, "lower": lower}
    return all(r.passed for r in reps), body, f"upper={upper:+.2e}, lower={lower:+.2e}"


_TASKS: dict[str, Callable] = {
    "check": _task_check,
    "evolve": _task_evolve,
    "dominate": _task_dominate,
    "capacity": _task_capacity,
    "reconstruct": _task_reconstruct,
    "sandwich": _task_sandwich,
}


@dataclass
class TaskOutcome:
    index: int
    name: str
    kind: str
    status: str  # "pass" | "fail" | "solver-error"
    summary: str
    report_path: Path | None


def run_task(cfg: ExperimentConfig, index: int, task: dict, seed: int) -> TaskOutcome:
    name = task.get("name", f"{task['type']}{index}")
    task = dict(task, _file=f"{index:02d}-{name}")
    task_seed = int(task.get("seed", seed + index))
    rng = np.random.default_rng(task_seed)
    report = {"task": name, "type": task["type"], "index": index, "seed": task_seed,
              "params": {k: v for k, v in task.items() if not k.startswith("_")},
              "space": cfg.space.key}
    try:
        passed, body, summary = _TASKS[task["type"]](cfg, task, rng, task_seed)
        status = "pass" if passed else "fail"
        report.update(body)
    except ProxConvergenceError as exc:
        status, summary = "solver-error", f"{exc} (gap {exc.gap:.2e})"
        report["error"] = {"message": str(exc), "gap": exc.gap, "iterations": exc.iterations,
                           "step": exc.step}
    report["status"] = status
    report["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    path = cfg.output_dir / f"{task['_file']}.json"
    write_atomic(path, dumps(report) + "\n")
    return TaskOutcome(index, name, task["type"], status, summary, path)


def resolve_seed(cfg_seed: int, cli_seed: int | None = None) -> int:
    """Seed precedence: command line, then ``DFLOW_SEED``, then the config."""
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get("DFLOW_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"DFLOW_SEED must be an integer, got {env!r}", "DFLOW_SEED") from None
    return cfg_seed


def run(cfg: ExperimentConfig, seed: int | None = None, workers: int | None = None,
        out_dir: str | Path | None = None, stream=None) -> int:
    """Run every task; print a summary table and return the exit code."""
    stream = stream or sys.stdout
    if out_dir is not None:
        cfg.output_dir = Path(out_dir)
    seed = resolve_seed(cfg.seed, seed)
    workers = workers or cfg.workers
    jobs = list(enumerate(cfg.tasks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda it: run_task(cfg, it[0], it[1], seed), jobs))
    else:
        outcomes = [run_task(cfg, i, t, seed) for i, t in jobs]
    print(f"{'task':<24s} {'type':<12s} {'status':<13s} summary", file=stream)
    for o in outcomes:
        print(f"{o.name:<24s} {o.kind:<12s} {o.status.upper():<13s} {o.summary}", file=stream)
    if any(o.status == "solver-error" for o in outcomes):
        return EXIT_SOLVER
    if any(o.status == "fail" for o in outcomes):
        return EXIT_FAIL
    return EXIT_OK
