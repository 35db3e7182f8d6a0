"""Experiment orchestration: single solves, method comparisons, convergence
sweeps and CPU-time tables, with flat-file records."""
from __future__ import annotations

import csv
import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .assembly import assemble_system, discretize, residual_history
from .greedy import Diagnostics, LowRankSolution, SolverConfig, greedy_solve
from .norms import ReferenceFrame, error_h1hm1, error_l2h1, fit_convergence_slope
from .problems import SeparatedParabolicProblem, get_problem

SCHEMA_VERSION = 1

# full-scale grids; also the reference grids of the convergence sweeps
DEFAULT_LEVELS = {
    "heat-manufactured": (6, 13),
    "time-diffusion": (6, 13),
    "advection-diffusion": (5, 10),
}
SWEEPS = {
    ("heat-manufactured", "space"): [2, 3, 4],
    ("heat-manufactured", "time"): list(range(4, 12)),
    ("time-diffusion", "space"): [2, 3, 4],
    ("time-diffusion", "time"): list(range(4, 11)),
    ("advection-diffusion", "space"): [2, 3, 4],
    ("advection-diffusion", "time"): list(range(4, 9)),
}


# --- serialization -----------------------------------------------------------

def _encode(obj):
    """JSON text with floats at 17 significant digits (exact round trip)."""
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x) or math.isinf(x):
            return json.dumps(str(x))
        text = format(x, ".17g")
        # keep integral floats (and -0.0) floats on the way back in
        return text if any(c in text for c in ".en") else text + ".0"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


@dataclass
class RunRecord:
    problem: str
    method: int
    nh_exp: int
    nk_exp: int
    N_h: int
    N_k: int
    config: Dict
    rows: List[Dict] = field(default_factory=list)
    status: str = ""
    rank: int = 0
    errors: Dict = field(default_factory=dict)
    space_solves: int = 0
    wall_time: float = 0.0
    seed: int = 0
    pg_refine: int = 1
    version: str = __version__
    schema_version: int = SCHEMA_VERSION

    def summary(self):
        out = asdict(self)
        out.pop("rows")
        return out

    def to_lines(self):
        lines = [_encode({"type": "iteration", **row}) for row in self.rows]
        lines.append(_encode({"type": "summary", **self.summary()}))
        return lines

    @classmethod
    def from_lines(cls, lines):
        rows, summary = [], None
        for line in lines:
            if not line.strip():
                continue
            item = json.loads(line)
            kind = item.pop("type", None)
            if kind == "iteration":
                rows.append(item)
            elif kind == "summary":
                summary = item
            else:
                raise ValueError(f"unknown record line type {kind!r}")
        if summary is None:
            raise ValueError("record has no summary line")
        if summary.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {summary.get('schema_version')}")
        return cls(rows=rows, **summary)

    def write(self, path, fmt="json"):
        with open(path, "w", newline="") as fh:
            if fmt == "json":
                fh.write("\n".join(self.to_lines()) + "\n")
            elif fmt == "csv":
                write_csv(fh, self.rows)
            else:
                raise ValueError(f"unknown format {fmt!r}")

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            return cls.from_lines(fh.read().splitlines())

    def __eq__(self, other):
        return isinstance(other, RunRecord) and self.to_lines() == other.to_lines()


def write_csv(fh, rows, fieldnames=None):
    if not rows:
        return
    fieldnames = fieldnames or list(rows[0])
    writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (format(v, ".17g") if isinstance(v, float) else v)
                         for k, v in row.items()})


# --- runs --------------------------------------------------------------------

@dataclass
class Run:
    record: RunRecord
    solution: LowRankSolution
    diagnostics: Diagnostics
    system: object


def resolve_problem(case: Optional[str] = None, problem: Optional[SeparatedParabolicProblem] = None):
    if problem is not None:
        return problem
    if case is None:
        raise ValueError("either a case name or a problem is required")
    return get_problem(case)


def exact_reference(problem, space_level, time_level):
    """Interpolated exact solution when the problem has one."""
    if problem.exact is None:
        return None
    return ReferenceFrame.from_exact(problem.exact, space_level, time_level, problem.T)


def solution_errors(sol, ref: ReferenceFrame, levels):
    return {"l2h1": float(error_l2h1(sol, ref, *levels)),
            "h1hm1": float(error_h1hm1(sol, ref, *levels))}


def solve_case(problem, method, nh_exp, nk_exp, cfg: SolverConfig = None, pg_refine=1,
               discretization=None, with_errors=True):
    """Assemble, solve and (for manufactured problems) measure errors against the
    exact-solution interpolant on the same grid."""
    cfg = cfg or SolverConfig()
    sd, td = discretization or discretize(problem, nh_exp, nk_exp, pg_refine)
    system = assemble_system(method, problem, sd, td)
    t0 = time.perf_counter()
    sol, diag = greedy_solve(system, cfg)
    wall = time.perf_counter() - t0
    errors = {}
    if with_errors and problem.exact is not None:
        errors = solution_errors(sol, exact_reference(problem, nh_exp, nk_exp), (nh_exp, nk_exp))
    record = RunRecord(
        problem=problem.name, method=method, nh_exp=nh_exp, nk_exp=nk_exp,
        N_h=sd.n, N_k=td.n, config=cfg.to_dict(), rows=[asdict(r) for r in diag.rows],
        status=diag.status, rank=sol.rank, errors=errors, space_solves=diag.space_solves,
        wall_time=wall, seed=cfg.seed, pg_refine=pg_refine)
    return Run(record, sol, diag, system)


# --- method comparison ------------------------------------------------------

@dataclass
class ComparisonRecord:
    problem: str
    nh_exp: int
    nk_exp: int
    curves: Dict[int, List[float]]
    iterations: Dict[int, int]
    space_solves: Dict[int, int]
    violations: List[int]

    @property
    def final(self):
        return {m: c[-1] for m, c in self.curves.items()}

    def ordering_fraction(self):
        """Share of iterations ``m >= 1`` (common to all curves) with ``r_1 <= min(r_2, r_3)``."""
        n = min(len(c) for c in self.curves.values()) - 1
        if n <= 0:
            return 1.0
        return 1.0 - len(self.violations) / n

    def rows(self):
        n = max(len(c) for c in self.curves.values())
        out = []
        for m in range(n):
            row = {"iteration": m}
            for i, c in self.curves.items():
                row[f"r{i}"] = c[m] if m < len(c) else ""
            out.append(row)
        return out


def compare_methods(problem, nh_exp, nk_exp, cfg: SolverConfig = None, methods=(1, 2, 3),
                    pg_refine=1):
    """``r_i^m``: relative Method-1 residual of the iterates of method ``i``."""
    cfg = cfg or SolverConfig()
    disc = discretize(problem, nh_exp, nk_exp, pg_refine)
    sys1 = assemble_system(1, problem, *disc)
    runs, curves = {}, {}
    for m in methods:
        run = solve_case(problem, m, nh_exp, nk_exp, cfg, pg_refine, discretization=disc,
                         with_errors=False)
        runs[m] = run
        curves[m] = [float(r) for r in residual_history(sys1, run.solution)]
    violations = []
    if 1 in curves and len(curves) > 1:
        others = [c for i, c in curves.items() if i != 1]
        n = min(len(c) for c in curves.values())
        for k in range(1, n):
            if curves[1][k] > min(c[k] for c in others):
                violations.append(k)
    rec = ComparisonRecord(problem.name, nh_exp, nk_exp, curves,
                           {m: r.solution.rank for m, r in runs.items()},
                           {m: r.diagnostics.space_solves for m, r in runs.items()}, violations)
    return rec, runs


# --- convergence sweeps ------------------------------------------------------

@dataclass
class ConvergenceResult:
    problem: str
    axis: str
    method: int
    levels: List[int]
    parameters: List[float]
    l2h1: List[float]
    h1hm1: List[float]
    fit_levels: List[int]
    slope_l2h1: float
    slope_h1hm1: float

    def rows(self):
        return [{"method": self.method, "axis": self.axis, "level": l, "parameter": p,
                 "l2h1": a, "h1hm1": b}
                for l, p, a, b in zip(self.levels, self.parameters, self.l2h1, self.h1hm1)]


def convergence_study(problem, axis, method, levels=None, reference_levels=None,
                      cfg: SolverConfig = None, fit_last=None, reference=None):
    """Errors along a space or time refinement sweep with the other level fixed.

    The reference lives on ``reference_levels`` (the full-scale grid by
    default). Space sweeps compare with the exact-solution interpolant when
    one exists; otherwise, and for all time sweeps, with the solution computed
    there by the same method, which keeps the fixed space resolution from
    putting a floor under time errors. ``fit_last`` restricts the slope fit to
    the finest sweep points; time sweeps default to the finest three, since
    the oscillatory benchmark data is unresolved on the coarse steps.
    """
    if axis not in ("space", "time"):
        raise ValueError("axis must be 'space' or 'time'")
    cfg = cfg or SolverConfig()
    levels = list(levels if levels is not None else SWEEPS[(problem.name, axis)])
    ref_s, ref_t = reference_levels or DEFAULT_LEVELS[problem.name]
    if fit_last is None and axis == "time":
        fit_last = 3
    n_fit = len(levels) if fit_last is None else min(len(levels), fit_last)
    if n_fit < 3:
        raise ValueError("a convergence sweep needs at least three levels")
    if reference is None and axis == "space":
        reference = exact_reference(problem, ref_s, ref_t)
    if reference is None:
        ref_run = solve_case(problem, method, ref_s, ref_t, cfg, with_errors=False)
        reference = ReferenceFrame.from_solution(ref_run.solution, ref_s, ref_t, problem.T)
    params, e1, e2 = [], [], []
    for lev in levels:
        sl, tl = (lev, ref_t) if axis == "space" else (ref_s, lev)
        run = solve_case(problem, method, sl, tl, cfg, with_errors=False)
        errs = solution_errors(run.solution, reference, (sl, tl))
        params.append(2.0 ** -lev * (problem.T if axis == "time" else 1.0))
        e1.append(errs["l2h1"])
        e2.append(errs["h1hm1"])
    s1 = fit_convergence_slope(list(zip(params, e1))[-n_fit:])
    s2 = fit_convergence_slope(list(zip(params, e2))[-n_fit:])
    return ConvergenceResult(problem.name, axis, method, levels, params, e1, e2,
                             levels[-n_fit:], s1, s2)


# --- CPU table ----------------------------------------------------------------

def cpu_table(problem, nh_exp, nk_exp, methods=(1, 2, 3), repetitions=21, base_seed=0,
              cfg: SolverConfig = None):
    """Median wall time per method over seeds ``base_seed + r``, and ratios to the first."""
    cfg = cfg or SolverConfig()
    disc = discretize(problem, nh_exp, nk_exp)
    times = {m: [] for m in methods}
    for r in range(repetitions):
        for m in methods:
            run_cfg = SolverConfig(**{**cfg.to_dict(), "seed": base_seed + r})
            sys = assemble_system(m, problem, *disc)
            t0 = time.perf_counter()
            greedy_solve(sys, run_cfg)
            times[m].append(time.perf_counter() - t0)
    medians = {m: statistics.median(t) for m, t in times.items()}
    base = medians[methods[0]]
    return {m: {"median_time": medians[m], "ratio": medians[m] / base} for m in methods}
