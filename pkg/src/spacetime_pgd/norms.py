"""Normalized errors in ``L2(I;H1_0)`` and ``H1(I;H^-1)`` against a reference
solution on a dyadically finer space-time grid."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, Tuple

import numpy as np

from .linalg import SeparatedVector, SpaceFactor, SpdFactorization, gram_norm_sq
from .problems import ManufacturedSolution
from .space import QuadMesh, assemble_mass, assemble_stiffness, interpolate, prolongation_matrix
from .temporal import TimeGrid, assemble_p1_matrices, time_prolongation_matrix


@dataclass
class ReferenceFrame:
    mesh: QuadMesh
    grid: TimeGrid
    solution: SeparatedVector

    def __post_init__(self):
        if self.solution.shape != (self.mesh.n_dofs, self.grid.n_dofs):
            raise ValueError("reference solution does not live on the reference grid")
        self.Mh = assemble_mass(self.mesh)
        self.Dh = assemble_stiffness(self.mesh)
        self.Dk, self.Mk, _, _ = assemble_p1_matrices(self.grid)

    @classmethod
    def from_exact(cls, exact: ManufacturedSolution, space_level=7, time_level=13, T=1.0):
        """Nodal interpolant of each separated term of ``exact``."""
        mesh, grid = QuadMesh.from_level(space_level), TimeGrid.from_level(time_level, T)
        V = np.column_stack([c * interpolate(mesh, w) for c, w in zip(exact.coefficients, exact.space)])
        S = np.column_stack([np.asarray(s(grid.nodes), float) for s in exact.time])
        return cls(mesh, grid, SeparatedVector(V, S))

    @classmethod
    def from_solution(cls, u: SeparatedVector, space_level, time_level, T=1.0):
        return cls(QuadMesh.from_level(space_level), TimeGrid.from_level(time_level, T), u)

    @property
    def levels(self):
        return self.mesh.level, self.grid.level

    @cached_property
    def stiffness_factor(self):
        return SpdFactorization(self.Dh)

    @cached_property
    def dual_weight(self):
        """``M_h D_h^{-1} M_h`` as an implicit factor."""
        return SpaceFactor(self.Mh, left=self.Mh, middle=self.stiffness_factor)

    @cached_property
    def reference_norms(self):
        return (np.sqrt(self.l2h1_sq(self.solution)), np.sqrt(self.h1hm1_sq(self.solution)))

    def prolong(self, u: SeparatedVector, space_level, time_level):
        if space_level > self.mesh.level or time_level > self.grid.level:
            raise ValueError(f"levels ({space_level}, {time_level}) exceed the reference "
                             f"levels {self.levels}")
        coarse_mesh = QuadMesh.from_level(space_level)
        coarse_grid = TimeGrid.from_level(time_level, self.grid.T)
        if u.shape != (coarse_mesh.n_dofs, coarse_grid.n_dofs):
            raise ValueError("solution shape does not match the stated levels")
        Ps = prolongation_matrix(coarse_mesh, self.mesh)
        Pt = time_prolongation_matrix(coarse_grid, self.grid)
        return SeparatedVector(Ps @ u.space, Pt @ u.time)

    def l2h1_sq(self, x):
        return gram_norm_sq(x, self.Dh, self.Mk)

    def h1hm1_sq(self, x):
        return gram_norm_sq(x, self.dual_weight, self.Dk)

    def difference(self, u, space_level=None, time_level=None):
        sl = self.mesh.level if space_level is None else space_level
        tl = self.grid.level if time_level is None else time_level
        return self.prolong(u, sl, tl) - self.solution


def error_l2h1(u: SeparatedVector, ref: ReferenceFrame, space_level=None, time_level=None):
    """``‖u - u_ref‖ / ‖u_ref‖`` in ``L2(I;H1_0)``; ``u`` lives on the given levels."""
    e = ref.difference(u, space_level, time_level)
    return np.sqrt(ref.l2h1_sq(e)) / ref.reference_norms[0]


def error_h1hm1(u: SeparatedVector, ref: ReferenceFrame, space_level=None, time_level=None):
    """Same as :func:`error_l2h1` for ``‖∂t ·‖_{L2(I;H^-1)}`` with the discrete dual norm."""
    e = ref.difference(u, space_level, time_level)
    return np.sqrt(ref.h1hm1_sq(e)) / ref.reference_norms[1]


def fit_convergence_slope(pairs: Sequence[Tuple[float, float]]) -> float:
    """Least-squares slope of ``log(error)`` against ``log(parameter)``."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ValueError("need at least three (parameter, error) pairs")
    p, e = np.array(pairs, dtype=float).T
    if np.any(p <= 0) or np.any(e <= 0):
        raise ValueError("parameters and errors must be positive")
    x = np.log(p)
    if np.ptp(x) == 0:
        raise ValueError("degenerate abscissae")
    return float(np.polyfit(x, np.log(e), 1)[0])
