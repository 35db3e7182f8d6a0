"""Q1 finite elements on uniform square meshes of the unit square.

Homogeneous Dirichlet conditions are built in: only interior lattice nodes
carry unknowns. Interior node ``(i, j)``, ``1 <= i, j <= n-1``, located at
``(i h, j h)``, has index ``(j-1)(n-1) + (i-1)`` (x runs fastest).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp

from .linalg import SpdFactorization, as_csr

GAUSS_POINTS = 5
# sub-cell width used for quadrature of non-polynomial data on coarse meshes
QUAD_RESOLUTION = 1.0 / 64


@dataclass(frozen=True)
class QuadMesh:
    n: int

    def __post_init__(self):
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError(f"cells per side must be a power of two >= 2, got {self.n}")

    @classmethod
    def from_level(cls, level):
        return cls(2 ** level)

    @property
    def level(self):
        return int(round(np.log2(self.n)))

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def n_dofs(self):
        return (self.n - 1) ** 2

    def index(self, i, j):
        return (j - 1) * (self.n - 1) + (i - 1)

    def node_coordinates(self):
        t = np.arange(1, self.n) * self.h
        X, Y = np.meshgrid(t, t)  # rows follow y, columns follow x
        return X.ravel(), Y.ravel()

    def refine(self):
        return QuadMesh(2 * self.n)


def _mass_1d(n, h):
    m = n - 1
    return sp.diags([np.full(m - 1, h / 6), np.full(m, 4 * h / 6), np.full(m - 1, h / 6)],
                    [-1, 0, 1], format="csr")


def _stiffness_1d(n, h):
    m = n - 1
    return sp.diags([np.full(m - 1, -1 / h), np.full(m, 2 / h), np.full(m - 1, -1 / h)],
                    [-1, 0, 1], format="csr")


def assemble_mass(mesh: QuadMesh):
    """``(M_h)_ij = ∫ ψ_j ψ_i``; exact tensor-product form of the Q1 element assembly."""
    M1 = _mass_1d(mesh.n, mesh.h)
    return as_csr(sp.kron(M1, M1))


def assemble_stiffness(mesh: QuadMesh):
    """``(D_h)_ij = ∫ ∇ψ_j · ∇ψ_i``."""
    M1 = _mass_1d(mesh.n, mesh.h)
    K1 = _stiffness_1d(mesh.n, mesh.h)
    return as_csr(sp.kron(M1, K1) + sp.kron(K1, M1))


def _rule_1d(sub):
    xg, wg = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    xg, wg = 0.5 * (xg + 1), 0.5 * wg
    pts = (np.arange(sub)[:, None] + xg[None, :]).ravel() / sub
    wts = np.tile(wg, sub) / sub
    return pts, wts


def _cell_rule(mesh: QuadMesh, resolution=QUAD_RESOLUTION):
    sub = max(1, int(np.ceil(mesh.h / resolution - 1e-12)))
    p, w = _rule_1d(sub)
    xi, eta = np.meshgrid(p, p, indexing="ij")
    W = np.outer(w, w).ravel()
    xi, eta = xi.ravel(), eta.ravel()
    # counterclockwise local numbering: (0,0), (1,0), (1,1), (0,1)
    N = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=1)
    dxi = np.stack([-(1 - eta), 1 - eta, eta, -eta], axis=1)
    deta = np.stack([-(1 - xi), -xi, xi, 1 - xi], axis=1)
    return xi, eta, W, N, dxi, deta


def _cells(mesh: QuadMesh):
    ci, cj = np.meshgrid(np.arange(mesh.n), np.arange(mesh.n), indexing="ij")
    ci, cj = ci.ravel(), cj.ravel()
    gi = np.stack([ci, ci + 1, ci + 1, ci], axis=1)
    gj = np.stack([cj, cj, cj + 1, cj + 1], axis=1)
    interior = (gi >= 1) & (gi <= mesh.n - 1) & (gj >= 1) & (gj <= mesh.n - 1)
    dof = np.where(interior, (gj - 1) * (mesh.n - 1) + (gi - 1), -1)
    return ci, cj, dof


def _quad_points(mesh, ci, cj, xi, eta):
    X = (ci[:, None] + xi[None, :]) * mesh.h
    Y = (cj[:, None] + eta[None, :]) * mesh.h
    return X, Y


def _scatter_matrix(mesh, dof, local):
    rows = np.repeat(dof, 4, axis=1)
    cols = np.tile(dof, (1, 4))
    vals = local.reshape(local.shape[0], 16)
    keep = (rows >= 0) & (cols >= 0)
    N = mesh.n_dofs
    return as_csr(sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(N, N)))


def assemble_advection(mesh: QuadMesh, velocity: Callable):
    """``C_ij = ∫ (c · ∇ψ_j) ψ_i`` with ``velocity(x, y) -> (cx, cy)``."""
    xi, eta, W, N, dxi, deta = _cell_rule(mesh)
    ci, cj, dof = _cells(mesh)
    X, Y = _quad_points(mesh, ci, cj, xi, eta)
    cx, cy = velocity(X, Y)
    cx = np.broadcast_to(np.asarray(cx, dtype=float), X.shape)
    cy = np.broadcast_to(np.asarray(cy, dtype=float), X.shape)
    # |cell| / h from the Jacobian and the 1/h of the gradient
    local = mesh.h * (np.einsum("cq,q,qa,qb->cab", cx, W, N, dxi)
                      + np.einsum("cq,q,qa,qb->cab", cy, W, N, deta))
    return _scatter_matrix(mesh, dof, local)


def assemble_load(mesh: QuadMesh, f: Callable):
    """``b_i = ∫ f ψ_i`` by composite 5x5 Gauss quadrature."""
    xi, eta, W, N, _, _ = _cell_rule(mesh)
    ci, cj, dof = _cells(mesh)
    X, Y = _quad_points(mesh, ci, cj, xi, eta)
    F = np.broadcast_to(np.asarray(f(X, Y), dtype=float), X.shape)
    local = mesh.h ** 2 * np.einsum("cq,q,qa->ca", F, W, N)
    keep = dof >= 0
    return np.bincount(dof[keep], weights=local[keep], minlength=mesh.n_dofs)


def interpolate(mesh: QuadMesh, func: Callable):
    X, Y = mesh.node_coordinates()
    return np.broadcast_to(np.asarray(func(X, Y), dtype=float), X.shape).copy()


def _prolong_1d(n):
    # coarse interior c -> fine 2c (weight 1) and 2c +- 1 (weight 1/2)
    c = np.arange(1, n)
    rows = np.concatenate([2 * c, 2 * c - 1, 2 * c + 1]) - 1
    cols = np.concatenate([c, c, c]) - 1
    vals = np.concatenate([np.ones(n - 1), np.full(n - 1, 0.5), np.full(n - 1, 0.5)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * n - 1, n - 1))


def prolongation_matrix(coarse: QuadMesh, fine: QuadMesh):
    if fine.n % coarse.n:
        raise ValueError(f"mesh {fine.n} is not a dyadic refinement of {coarse.n}")
    P = sp.identity(coarse.n_dofs, format="csr")
    n = coarse.n
    while n < fine.n:
        P1 = _prolong_1d(n)
        P = as_csr(sp.kron(P1, P1) @ P)
        n *= 2
    return P


def prolong_space(v, coarse: QuadMesh, fine: QuadMesh):
    """Nodal Q1 interpolation of ``v`` onto a refined mesh (exact for nested spaces)."""
    if fine.n != 2 * coarse.n:
        raise ValueError("fine mesh must have exactly doubled resolution")
    return prolongation_matrix(coarse, fine) @ v


@dataclass
class SpaceDiscretization:
    mesh: QuadMesh
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    operators: List[sp.csr_matrix] = field(default_factory=list)
    loads: List[np.ndarray] = field(default_factory=list)
    initial: Optional[np.ndarray] = None

    @classmethod
    def build(cls, mesh: QuadMesh, operators=(), loads=(), u0=None):
        disc = cls(mesh, assemble_mass(mesh), assemble_stiffness(mesh))
        disc.operators = [as_csr(b(mesh, disc)) if callable(b) else as_csr(b) for b in operators]
        disc.loads = [assemble_load(mesh, f) for f in loads]
        disc.initial = (np.zeros(mesh.n_dofs) if u0 is None else project_initial(disc, u0))
        return disc

    @property
    def n(self):
        return self.mesh.n_dofs

    @cached_property
    def stiffness_factor(self) -> SpdFactorization:
        return SpdFactorization(self.stiffness)

    @cached_property
    def mass_factor(self) -> SpdFactorization:
        return SpdFactorization(self.mass)


def project_initial(disc: SpaceDiscretization, u0: Callable):
    """Moments ``∫ u0 ψ_i`` (the right-hand side of the L2 projection)."""
    return assemble_load(disc.mesh, u0)


def l2_projection(disc: SpaceDiscretization, moments):
    return disc.mass_factor.solve(moments)
