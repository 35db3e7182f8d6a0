"""Kronecker-sum systems ``B u = g`` of the three discrete minimal-residual
formulations and their reduction to the space and time subproblems of the
alternating minimization.

Method 1 measures the residual in the space semi-discrete test space with the
``H^1_0`` inner product (``D_h^{-1}`` weighting). Method 2 uses a fully discrete
Petrov-Galerkin test space with piecewise constants in time. Method 3 keeps
the semi-discrete test space but weights it with the Euclidean inner product.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from .linalg import (GramAccumulator, KroneckerSumOperator, SeparatedVector, SpaceFactor,
                     SpdFactorization, Tridiagonal, as_csr)
from .problems import SeparatedParabolicProblem
from .space import QuadMesh, SpaceDiscretization
from .temporal import TimeDiscretization, TimeGrid


def discretize(problem: SeparatedParabolicProblem, nh_level: int, nk_level: int,
               pg_refine: int = 1):
    mesh = QuadMesh.from_level(nh_level)
    grid = TimeGrid.from_level(nk_level, problem.T)
    sd = SpaceDiscretization.build(mesh, problem.operators, problem.sources, problem.u0)
    td = TimeDiscretization.build(grid, problem.mus, problem.lams, pg_refine)
    return sd, td


@dataclass
class MinResSystem:
    method: int
    B: KroneckerSumOperator
    g: SeparatedVector
    g_tags: List[str]
    space: SpaceDiscretization
    time: TimeDiscretization
    alpha: float = 1.0
    M: float = 1.0
    stiffness_factor: Optional[SpdFactorization] = None
    xnorm_components: list = field(default_factory=list)

    @property
    def shape(self):
        return self.space.n, self.time.n

    @property
    def uses_stiffness_inverse(self):
        return self.stiffness_factor is not None

    def dense(self):
        """Materialized ``(B, g)``; for small-instance oracles only."""
        return self.B.to_dense(), self.g.ravel()


def _is_stiffness(A, D):
    diff = as_csr(A - D)
    return diff.nnz == 0


def _time_blocks(method, td: TimeDiscretization, P):
    if method in (1, 3):
        return td.D, td.Ep, td.Mpp
    Dt = td.pg_reduce(td.EPG, td.EPG)
    Et = [td.pg_reduce(td.MPG[p], td.EPG) for p in range(P)]
    Mt = [[td.pg_reduce(td.MPG[p], td.MPG[q]) for q in range(P)] for p in range(P)]
    return Dt, Et, Mt


def _time_vectors(method, td: TimeDiscretization, P, Q):
    if method in (1, 3):
        return td.ek, td.dk
    # the derivative pairing acts on the L2 projection of λ onto the P0 test space
    et = [td.pg_reduce_vector(td.EPG, td.dP[q]) for q in range(Q)]
    dt = [[td.pg_reduce_vector(td.MPG[p], td.dP[q]) for q in range(Q)] for p in range(P)]
    return et, dt


def assemble_system(method: int, problem: SeparatedParabolicProblem,
                    sd: SpaceDiscretization, td: TimeDiscretization) -> MinResSystem:
    if method not in (1, 2, 3):
        raise ValueError(f"method must be 1, 2 or 3, got {method}")
    P, Q = problem.P, problem.Q
    if len(sd.operators) != P or len(sd.loads) != Q or len(td.Ep) != P or len(td.ek) != Q:
        raise ValueError("discretizations do not match the problem's separated form")
    nh, nk = sd.n, td.n
    Mh, Dh, A = sd.mass, sd.stiffness, sd.operators
    for mat in [Mh, Dh, *A]:
        if mat.shape != (nh, nh):
            raise ValueError("dimension mismatch in space matrices")

    if method == 3:
        Dfac = None
        is_D = [False] * P
    else:
        Dfac = sd.stiffness_factor
        # A_p = D_h lets D_h^{-1} cancel exactly
        is_D = [_is_stiffness(Ap, Dh) for Ap in A]

    def factor(left, right, left_is_D=False, right_is_D=False):
        """Space factor ``leftᵀ W right`` with ``W = D_h^{-1}`` or the identity."""
        if Dfac is None:
            return SpaceFactor(as_csr(left.T @ right))
        if left_is_D:
            return SpaceFactor(right)
        if right_is_D:
            return SpaceFactor(as_csr(left.T))
        return SpaceFactor(right, left=left, middle=Dfac)

    Dt, Et, Mt = _time_blocks(method, td, P)
    B = KroneckerSumOperator(n_space=nh, n_time=nk)
    B.add(factor(Mh, Mh), Dt, kind="dt")
    for p in range(P):
        B.add(factor(A[p], Mh, left_is_D=is_D[p]), Et[p], kind="cross")
        B.add(factor(Mh, A[p], right_is_D=is_D[p]), Et[p].T, kind="cross")
    for p in range(P):
        for q in range(P):
            if is_D[p] and is_D[q]:
                S = SpaceFactor(Dh)
            else:
                S = factor(A[p], A[q], left_is_D=is_D[p], right_is_D=is_D[q])
            B.add(S, Mt[p][q], kind="pp" if p == q else "pq")
    B.add(SpaceFactor(Mh), td.O, weight=problem.alpha, tag="ic", kind="ic")

    et, dt = _time_vectors(method, td, P, Q)
    cols_s, cols_t, tags = [], [], []

    def weighted(load, left):
        if Dfac is None:
            return left.T @ load
        return left.T @ Dfac.solve(load)

    for q in range(Q):
        cols_s.append(weighted(sd.loads[q], Mh))
        cols_t.append(et[q])
        tags.append("pde")
    for p in range(P):
        for q in range(Q):
            cols_s.append(sd.loads[q] if is_D[p] else weighted(sd.loads[q], A[p]))
            cols_t.append(dt[p][q])
            tags.append("pde")
    cols_s.append(problem.alpha * sd.initial)
    cols_t.append(td.ik)
    tags.append("ic")
    g = SeparatedVector(np.column_stack(cols_s), np.column_stack(cols_t))

    if Dfac is not None:
        dual = SpaceFactor(Mh, left=Mh, middle=Dfac)
    else:
        dual = SpaceFactor(as_csr(Mh @ Mh))
    xnorm = [(Dh, td.M, 1.0), (dual, td.D, problem.M ** -2), (Mh, td.terminal, 1.0 / problem.alpha)]
    return MinResSystem(method, B, g, tags, sd, td, problem.alpha, problem.M, Dfac, xnorm)


def assemble_method1(problem, sd, td):
    return assemble_system(1, problem, sd, td)


def assemble_method2(problem, sd, td):
    return assemble_system(2, problem, sd, td)


def assemble_method3(problem, sd, td):
    return assemble_system(3, problem, sd, td)


def build_system(problem, method, nh_level, nk_level, pg_refine=1):
    sd, td = discretize(problem, nh_level, nk_level, pg_refine)
    return assemble_system(method, problem, sd, td)


# --- residual bookkeeping --------------------------------------------------

class Residual:
    """Factored residual ``g - B u`` with running Euclidean Gram matrices."""

    def __init__(self, sys: MinResSystem):
        self.sys = sys
        nh, nk = sys.shape
        self.acc = GramAccumulator(nh, nk, capacity=max(64, 2 * sys.g.rank))
        for j, tag in enumerate(sys.g_tags):
            self.acc.append(sys.g.space[:, j], sys.g.time[:, j], tag=tag)
        self.g_norm_sq = self.acc.norm_sq()

    def subtract(self, v, s, space_products=None):
        """Account for a new rank-one term ``v ⊗ s`` of the iterate."""
        B = self.sys.B
        if space_products is None:
            space_products = B.space_products(v)
        for term, sv in zip(B.terms, space_products):
            self.acc.append(-sv, term.time @ s, tag=term.tag)

    @property
    def space(self):
        return self.acc.space

    @property
    def time(self):
        return self.acc.time

    def relative(self):
        """``(‖r‖, ‖r_pde‖, ‖r_ic‖) / ‖g‖``."""
        if self.g_norm_sq == 0.0:
            raise ZeroDivisionError("right-hand side is zero")
        gn = np.sqrt(self.g_norm_sq)
        return (np.sqrt(self.acc.norm_sq()) / gn,
                np.sqrt(self.acc.norm_sq(["pde"])) / gn,
                np.sqrt(self.acc.norm_sq(["ic"])) / gn)


def residual_l2(sys: MinResSystem, u: SeparatedVector):
    """Relative Euclidean residual of ``u`` and its pde / initial-condition split."""
    if u.shape != sys.shape:
        raise ValueError("dimension mismatch")
    res = Residual(sys)
    if res.g_norm_sq == 0.0:
        raise ZeroDivisionError("right-hand side is zero")
    if u.rank:
        res.subtract(u.space, u.time)
    return res.relative()


def residual_history(sys: MinResSystem, u: SeparatedVector):
    """Relative residuals in ``sys`` of the partial sums ``Σ_{n<=m} v_n ⊗ s_n``, m = 0..rank."""
    res = Residual(sys)
    out = [res.relative()[0]]
    for j in range(u.rank):
        res.subtract(u.space[:, j], u.time[:, j])
        out.append(res.relative()[0])
    return out


# --- subproblem reductions --------------------------------------------------

@dataclass
class SpaceSubproblem:
    apply: object
    rhs: np.ndarray
    precond: object
    matrix: Optional[sp.csr_matrix] = None   # explicit form when no implicit inverse


def reduce_to_space(sys: MinResSystem, residual, s) -> SpaceSubproblem:
    """``min_v`` of the energy at ``u + v ⊗ s``: ``(Σ_r (sᵀT_r s) S_r) v = R_s (R_tᵀ s)``."""
    s = np.asarray(s, dtype=float)
    if not np.any(s):
        raise ValueError("zero time factor")
    coefs = [t.weight * float(s @ (t.time @ s)) for t in sys.B.terms]
    explicit = sys.B.explicit_combination(coefs)
    groups = {}
    gamma = 0.0
    for t, c in zip(sys.B.terms, coefs):
        S = t.space
        if t.kind == "pp":
            gamma += c
        if S.middle is not None:
            key = (id(S.left), id(S.middle))
            groups.setdefault(key, (S.left_t, S.middle, []))[2].append((c, S.right))
    group_list = list(groups.values())

    def apply(v):
        out = explicit @ v if explicit is not None else np.zeros_like(v)
        for leftT, middle, parts in group_list:
            w = parts[0][0] * (parts[0][1] @ v)
            for c, R in parts[1:]:
                w += c * (R @ v)
            w = middle.solve(w)
            out = out + (w if leftT is None else leftT @ w)
        return out

    rhs = residual.space @ (residual.time.T @ s)
    if sys.stiffness_factor is not None:
        Dfac = sys.stiffness_factor
        gamma = gamma if gamma > 0 else 1.0

        def precond(r):
            return Dfac.solve(r) / gamma
        matrix = explicit if not group_list else None
    else:
        diag = explicit.diagonal()

        def precond(r):
            return r / diag
        matrix = explicit
    return SpaceSubproblem(apply, rhs, precond, matrix)


def space_coefficients(sys: MinResSystem, v, products=None):
    """``weight_r · vᵀ S_r v`` for every term (shares the middle solves)."""
    if products is None:
        products = sys.B.space_products(v)
    return [float(v @ pv) for pv in products], products


def reduce_to_time(sys: MinResSystem, residual, v, products=None):
    """``min_s`` of the energy at ``u + v ⊗ s``: tridiagonal ``(Σ_r (vᵀS_r v) T_r) s = R_t (R_sᵀ v)``.

    Returns ``(T, rhs, products)`` with ``T`` a :class:`Tridiagonal` and ``products``
    the ``weight_r S_r v``.
    """
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        raise ValueError("zero space factor")
    coefs, products = space_coefficients(sys, v, products)
    T = Tridiagonal(np.tensordot(coefs, sys.B.time_bands(), axes=1))
    rhs = residual.time @ (residual.space.T @ v)
    return T, rhs, products
