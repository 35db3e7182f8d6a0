"""Greedy rank-one construction ``u^m = Σ_{n<=m} v_n ⊗ s_n`` with alternating
minimization for each rank-one correction."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .assembly import MinResSystem, Residual, reduce_to_space, reduce_to_time
from .linalg import (ConvergenceError, GramAccumulator, SeparatedVector, SpdFactorization,
                     gram_norm_sq, pcg_solve, solve_sym_tridiagonal)


@dataclass
class SolverConfig:
    eps_greedy: float = 1e-5
    eps_alt: float = 5e-2
    max_rank: int = 200
    max_alt_sweeps: int = 50
    seed: int = 0
    cg_tol: float = 1e-10
    cg_maxiter: Optional[int] = None
    # "auto": direct sparse solve when the space operator is explicit (Method 3)
    space_solver: str = "auto"

    def __post_init__(self):
        if not 0 < self.eps_greedy < 1:
            raise ValueError("eps_greedy must lie in (0, 1)")
        if not 0 < self.eps_alt < 1:
            raise ValueError("eps_alt must lie in (0, 1)")
        if self.max_rank < 0 or self.max_alt_sweeps < 1:
            raise ValueError("max_rank >= 0 and max_alt_sweeps >= 1 required")
        if self.space_solver not in ("auto", "pcg"):
            raise ValueError("space_solver must be 'auto' or 'pcg'")

    def to_dict(self):
        return asdict(self)


class LowRankSolution(SeparatedVector):
    """Greedy iterate; column ``n`` holds the ``n``-th rank-one term."""

    def truncated(self, m):
        return LowRankSolution(self.space[:, :m], self.time[:, :m])


@dataclass
class IterationRecord:
    iteration: int
    residual: float
    residual_pde: float
    residual_ic: float
    sweeps: int
    objective: float
    increment_xnorm: float
    solution_xnorm: float
    stagnation_ratio: float
    space_solves: int
    pcg_iterations: int
    wall_time: float


@dataclass
class Diagnostics:
    rows: List[IterationRecord] = field(default_factory=list)
    objective_trace: List[float] = field(default_factory=list)
    status: str = "running"
    sweep_caps: int = 0

    @property
    def space_solves(self):
        return self.rows[-1].space_solves if self.rows else 0

    @property
    def total_sweeps(self):
        return sum(r.sweeps for r in self.rows)

    def column(self, name):
        return [getattr(r, name) for r in self.rows]


def xnorm_sq(u: SeparatedVector, sys: MinResSystem) -> float:
    """Discrete X-norm: ``L2(I;H1_0)`` + ``M^-2`` · dual time-derivative + ``1/α`` · terminal L2."""
    return sum(c * gram_norm_sq(u, Ws, Wt) for Ws, Wt, c in sys.xnorm_components)


def _rank_one_xnorm_sq(v, s, sys):
    total = 0.0
    for Ws, Wt, c in sys.xnorm_components:
        wv = Ws.apply(v) if hasattr(Ws, "apply") else Ws @ v
        total += c * float(v @ wv) * float(s @ (Wt @ s))
    return max(total, 0.0)


@dataclass
class AlsResult:
    v: np.ndarray
    s: np.ndarray
    sweeps: int
    objective_change: float
    products: list
    trace: list
    space_solves: int
    pcg_iterations: int
    capped: bool


def _solve_space(sub, cfg, x0, nh):
    if sub.matrix is not None and cfg.space_solver == "auto":
        return SpdFactorization(sub.matrix).solve(sub.rhs), 0
    maxiter = cfg.cg_maxiter if cfg.cg_maxiter is not None else 2 * nh
    return pcg_solve(sub.apply, sub.rhs, sub.precond, cfg.cg_tol, maxiter, x0=x0)


def initial_time_factor(sys: MinResSystem, rng):
    s = rng.uniform(0.0, 1.0, sys.time.n)
    return s / np.sqrt(s @ (sys.time.M @ s))


def als_rank_one(sys: MinResSystem, residual: Residual, cfg: SolverConfig, rng,
                 context="") -> AlsResult:
    """Alternate space and time minimizations from a random time factor.

    After each time solve ``s`` is rescaled to unit ``M_k``-norm and the
    magnitude moved into ``v``; the rank-one tensor is unchanged.
    """
    nh = sys.space.n
    Mk = sys.time.M
    s = initial_time_factor(sys, rng)
    v = None
    prev = None
    trace = []
    solves = pcg_its = 0
    dJ = 0.0
    products = None
    capped = True
    for sweep in range(1, cfg.max_alt_sweeps + 1):
        sub = reduce_to_space(sys, residual, s)
        try:
            v, its = _solve_space(sub, cfg, v, nh)
        except ConvergenceError as exc:
            raise ConvergenceError(f"{context}sweep {sweep}: space solve failed: {exc}",
                                   exc.residual, exc.iterations) from exc
        solves += 1
        pcg_its += its
        if not np.any(v):
            return AlsResult(v, s, sweep, 0.0, None, trace, solves, pcg_its, False)
        T, rhs_t, products = reduce_to_time(sys, residual, v)
        trace.append(0.5 * float(s @ (T @ s)) - float(v @ sub.rhs))
        s = solve_sym_tridiagonal(T, rhs_t)
        dJ = 0.5 * float(s @ (T @ s)) - float(s @ rhs_t)
        trace.append(dJ)
        nrm = np.sqrt(max(float(s @ (Mk @ s)), 0.0))
        if nrm == 0.0:
            return AlsResult(np.zeros(nh), s, sweep, 0.0, None, trace, solves, pcg_its, False)
        s = s / nrm
        v = v * nrm
        products = [nrm * p for p in products]
        if prev is not None:
            diff = SeparatedVector(np.column_stack([v, -prev[0]]), np.column_stack([s, prev[1]]))
            num = xnorm_sq(diff, sys)
            den = _rank_one_xnorm_sq(v, s, sys)
            if den > 0 and np.sqrt(num / den) < cfg.eps_alt:
                capped = False
                break
        prev = (v.copy(), s.copy())
    return AlsResult(v, s, sweep, dJ, products, trace, solves, pcg_its, capped)


def greedy_solve(sys: MinResSystem, cfg: SolverConfig = None, callback=None):
    """Run the greedy algorithm; returns ``(LowRankSolution, Diagnostics)``.

    Stops when ``‖v_m ⊗ s_m‖_X / ‖u_m‖_X < eps_greedy`` (status
    ``"converged"``), at ``max_rank`` (``"max_rank"``), or when a correction
    vanishes (``"stagnated"``).
    """
    cfg = cfg or SolverConfig()
    nh, nk = sys.shape
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    diag = Diagnostics()
    residual = Residual(sys)
    V, S = [], []
    if residual.g_norm_sq == 0.0:
        diag.status = "converged"
        return LowRankSolution(np.zeros((nh, 0)), np.zeros((nk, 0))), diag

    unorm = GramAccumulator(nh, nk, components=sys.xnorm_components)
    objective = 0.0
    solves = pcg_total = 0
    t0 = time.perf_counter()
    diag.objective_trace.append(objective)
    diag.status = "max_rank"
    for m in range(1, cfg.max_rank + 1):
        als = als_rank_one(sys, residual, cfg, rng, context=f"greedy iteration {m}, ")
        solves += als.space_solves
        pcg_total += als.pcg_iterations
        diag.objective_trace.extend(objective + t for t in als.trace)
        if als.products is None or not np.any(als.v) or not np.any(als.s):
            diag.status = "stagnated"
            break
        diag.sweep_caps += int(als.capped)
        v, s = als.v, als.s
        V.append(v)
        S.append(s)
        residual.subtract(v, s, als.products)
        unorm.append(v, s)
        objective += als.objective_change
        inc = np.sqrt(_rank_one_xnorm_sq(v, s, sys))
        total = np.sqrt(unorm.norm_sq())
        ratio = inc / total if total >= 1e-300 else 1.0
        r, r_pde, r_ic = residual.relative()
        diag.rows.append(IterationRecord(
            m, r, r_pde, r_ic, als.sweeps, objective, inc, total, ratio, solves, pcg_total,
            time.perf_counter() - t0))
        if callback is not None:
            callback(m, v, s, diag.rows[-1])
        if ratio < cfg.eps_greedy:
            diag.status = "converged"
            break
    sol = LowRankSolution(np.column_stack(V) if V else np.zeros((nh, 0)),
                          np.column_stack(S) if S else np.zeros((nk, 0)))
    return sol, diag
