"""P1 trial / P0 test time discretization of I = (0, T) on uniform grids.

Nodal basis functions are ordered chronologically, ``phi_1`` is the hat at
``t = 0`` (index 0 here), which makes ``O_k`` and ``i_k`` the first unit
vector/matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Sequence

import numpy as np
import scipy.sparse as sp

from .linalg import as_csr

GAUSS_POINTS = 5
# sub-element width for quadrature of oscillatory time data on coarse grids
QUAD_RESOLUTION = 2.0 ** -13


@dataclass(frozen=True)
class TimeGrid:
    N: int
    T: float = 1.0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("need at least one time element")

    @classmethod
    def from_level(cls, level, T=1.0):
        return cls(2 ** level, T)

    @property
    def level(self):
        return int(round(np.log2(self.N)))

    @property
    def tau(self):
        return self.T / self.N

    @property
    def n_dofs(self):
        return self.N + 1

    @property
    def nodes(self):
        return np.linspace(0.0, self.T, self.N + 1)

    def refine(self):
        return TimeGrid(2 * self.N, self.T)


def _rule(width, resolution=QUAD_RESOLUTION):
    """Composite Gauss rule on [0, 1] with sub-intervals no wider than ``resolution / width``."""
    sub = max(1, int(np.ceil(width / resolution - 1e-9)))
    xg, wg = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    xg, wg = 0.5 * (xg + 1), 0.5 * wg
    s = (np.arange(sub)[:, None] + xg[None, :]).ravel() / sub
    w = np.tile(wg, sub) / sub
    return s, w


def _evaluate(func, t):
    return np.broadcast_to(np.asarray(func(t), dtype=float), t.shape)


def _tridiag(N, local):
    """Assemble per-element 2x2 blocks ``local[e, a, b]`` on nodes (e, e+1)."""
    e = np.arange(N)
    rows = np.concatenate([e, e, e + 1, e + 1])
    cols = np.concatenate([e, e + 1, e, e + 1])
    vals = np.concatenate([local[:, 0, 0], local[:, 0, 1], local[:, 1, 0], local[:, 1, 1]])
    return as_csr(sp.coo_matrix((vals, (rows, cols)), shape=(N + 1, N + 1)))


def assemble_p1_matrices(grid: TimeGrid):
    """Return ``(D_k, M_k, O_k, E_k)`` in closed form."""
    N, tau = grid.N, grid.tau
    ones = np.ones(N)
    D = _tridiag(N, np.einsum("e,ab->eab", ones, np.array([[1, -1], [-1, 1]]) / tau))
    M = _tridiag(N, np.einsum("e,ab->eab", ones, np.array([[2, 1], [1, 2]]) * tau / 6))
    # (E)_lm = ∫ phi_m' phi_l
    E = _tridiag(N, np.einsum("e,ab->eab", ones, np.array([[-1, 1], [-1, 1]]) / 2))
    O = as_csr(sp.coo_matrix(([1.0], ([0], [0])), shape=(N + 1, N + 1)))
    return D, M, O, E


def _element_quadrature(grid: TimeGrid):
    s, w = _rule(grid.tau)
    t = (np.arange(grid.N)[:, None] + s[None, :]) * grid.tau
    return t, s, w * grid.tau


def assemble_weighted_matrices(grid: TimeGrid, mus: Sequence[Callable]):
    """Return ``(Mpp, Ep)`` with ``Mpp[p][p']`` and ``Ep[p]`` sparse tridiagonal."""
    t, s, w = _element_quadrature(grid)
    N = np.stack([1 - s, s], axis=1)
    dN = np.array([-1.0, 1.0]) / grid.tau
    vals = [_evaluate(mu, t) for mu in mus]
    P = len(mus)
    Mpp = [[None] * P for _ in range(P)]
    for p in range(P):
        for q in range(p, P):
            local = np.einsum("eq,q,qa,qb->eab", vals[p] * vals[q], w, N, N)
            Mpp[p][q] = Mpp[q][p] = _tridiag(grid.N, local)
    Ep = []
    for p in range(P):
        local = np.einsum("eq,q,qa,b->eab", vals[p], w, N, dN)
        Ep.append(_tridiag(grid.N, local))
    return Mpp, Ep


def _test_elements(grid: TimeGrid, refine: int):
    """Test element endpoints and the trial element containing each."""
    NP = grid.N * refine
    a = np.arange(NP) * grid.T / NP
    b = a + grid.T / NP
    e = np.arange(NP) // refine
    return a, b, e


def assemble_pg_blocks(grid: TimeGrid, mus: Sequence[Callable], refine: int = 1):
    """P0 test space on the trial grid (``refine=1``) or a ``refine``-times finer grid.

    Returns ``(M_P, E_PG, [M_PG_p])``; ``M_P`` is diagonal, the others are
    ``N_P x N_k``.
    """
    a, b, e = _test_elements(grid, refine)
    NP = a.size
    width = grid.T / NP
    MP = sp.diags(np.full(NP, width), format="csr")

    def phi(node, t):
        return np.clip(1.0 - np.abs(t / grid.tau - node), 0.0, None)

    rows = np.concatenate([np.arange(NP), np.arange(NP)])
    cols = np.concatenate([e, e + 1])
    eval_end = np.concatenate([phi(e, b) - phi(e, a), phi(e + 1, b) - phi(e + 1, a)])
    EPG = as_csr(sp.coo_matrix((eval_end, (rows, cols)), shape=(NP, grid.n_dofs)))

    s, w = _rule(width)
    t = a[:, None] + s[None, :] * width
    w = w * width
    MPG = []
    for mu in mus:
        m = _evaluate(mu, t)
        left = ((m * phi(e[:, None], t)) @ w)
        right = ((m * phi(e[:, None] + 1, t)) @ w)
        MPG.append(as_csr(sp.coo_matrix((np.concatenate([left, right]), (rows, cols)),
                                        shape=(NP, grid.n_dofs))))
    return MP, EPG, MPG


def assemble_time_vectors(grid: TimeGrid, lams: Sequence[Callable], mus: Sequence[Callable],
                          refine: int = 1):
    """Return ``(e_k[q], d_k[p][q], i_k, eP[q], dP[q])``.

    ``eP`` pairs ``λ`` with derivatives of piecewise-constant test functions,
    which vanish elementwise; it is returned as zeros.
    """
    t, s, w = _element_quadrature(grid)
    N = np.stack([1 - s, s], axis=1)
    dN = np.array([-1.0, 1.0]) / grid.tau
    e_idx = np.arange(grid.N)

    def scatter(local):
        out = np.zeros(grid.n_dofs)
        np.add.at(out, e_idx, local[:, 0])
        np.add.at(out, e_idx + 1, local[:, 1])
        return out

    lam_vals = [_evaluate(lam, t) for lam in lams]
    mu_vals = [_evaluate(mu, t) for mu in mus]
    ek = [scatter(np.einsum("eq,q,a->ea", lv, w, dN)) for lv in lam_vals]
    dk = [[scatter(np.einsum("eq,q,qa->ea", mv * lv, w, N)) for lv in lam_vals]
          for mv in mu_vals]
    ik = np.zeros(grid.n_dofs)
    ik[0] = 1.0

    a, b, _ = _test_elements(grid, refine)
    width = grid.T / a.size
    sp_, wp = _rule(width)
    tp = a[:, None] + sp_[None, :] * width
    eP = [np.zeros(a.size) for _ in lams]
    dP = [_evaluate(lam, tp) @ (wp * width) for lam in lams]
    return ek, dk, ik, eP, dP


def prolong_time(s, coarse: TimeGrid, fine: TimeGrid):
    """P1 nodal interpolation onto the doubled grid."""
    if fine.N != 2 * coarse.N or fine.T != coarse.T:
        raise ValueError("fine grid must be the dyadic refinement of the coarse grid")
    return time_prolongation_matrix(coarse, fine) @ s


def time_prolongation_matrix(coarse: TimeGrid, fine: TimeGrid):
    if fine.N % coarse.N or fine.T != coarse.T:
        raise ValueError(f"grid {fine.N} is not a dyadic refinement of {coarse.N}")
    P = sp.identity(coarse.n_dofs, format="csr")
    N = coarse.N
    while N < fine.N:
        c = np.arange(N + 1)
        m = np.arange(N)
        rows = np.concatenate([2 * c, 2 * m + 1, 2 * m + 1])
        cols = np.concatenate([c, m, m + 1])
        vals = np.concatenate([np.ones(N + 1), np.full(N, 0.5), np.full(N, 0.5)])
        P1 = sp.csr_matrix((vals, (rows, cols)), shape=(2 * N + 1, N + 1))
        P = as_csr(P1 @ P)
        N *= 2
    return P


@dataclass
class TimeDiscretization:
    grid: TimeGrid
    D: sp.csr_matrix
    M: sp.csr_matrix
    O: sp.csr_matrix
    E: sp.csr_matrix
    Mpp: List[List[sp.csr_matrix]] = field(default_factory=list)
    Ep: List[sp.csr_matrix] = field(default_factory=list)
    MP: sp.csr_matrix = None
    EPG: sp.csr_matrix = None
    MPG: List[sp.csr_matrix] = field(default_factory=list)
    ek: List[np.ndarray] = field(default_factory=list)
    dk: List[List[np.ndarray]] = field(default_factory=list)
    ik: np.ndarray = None
    eP: List[np.ndarray] = field(default_factory=list)
    dP: List[np.ndarray] = field(default_factory=list)
    pg_refine: int = 1

    @classmethod
    def build(cls, grid: TimeGrid, mus=(), lams=(), pg_refine=1):
        D, M, O, E = assemble_p1_matrices(grid)
        Mpp, Ep = assemble_weighted_matrices(grid, mus)
        MP, EPG, MPG = assemble_pg_blocks(grid, mus, pg_refine)
        ek, dk, ik, eP, dP = assemble_time_vectors(grid, lams, mus, pg_refine)
        return cls(grid, D, M, O, E, Mpp, Ep, MP, EPG, MPG, ek, dk, ik, eP, dP, pg_refine)

    @property
    def n(self):
        return self.grid.n_dofs

    @property
    def terminal(self):
        """``e_N e_Nᵀ``: the point evaluation at ``t = T``."""
        n = self.grid.n_dofs
        return as_csr(sp.coo_matrix(([1.0], ([n - 1], [n - 1])), shape=(n, n)))

    def pg_reduce(self, left, right):
        """``leftᵀ M_P^{-1} right`` for PG blocks (M_P is diagonal)."""
        inv = sp.diags(1.0 / self.MP.diagonal())
        return as_csr(left.T @ inv @ right)

    def pg_reduce_vector(self, left, vec):
        return left.T @ (vec / self.MP.diagonal())
