"""Parabolic problems in separated form and the three benchmark cases.

A problem is ``∂t u + Σ_p μ_p(t) A_p u = Σ_q λ_q(t) f_q`` on the unit square
with homogeneous Dirichlet data and ``u(0) = u0``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .space import QuadMesh, assemble_advection, assemble_mass, assemble_stiffness

PI = np.pi


@dataclass(frozen=True)
class ManufacturedSolution:
    """``u(x, y, t) = Σ_n coef_n w_n(x, y) σ_n(t)``."""

    coefficients: tuple
    space: tuple
    time: tuple

    def __call__(self, x, y, t):
        return eval_exact(self, x, y, t)

    @property
    def rank(self):
        return len(self.coefficients)


def eval_exact(ms: ManufacturedSolution, x, y, t):
    x, y, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float),
                                  np.asarray(t, float))
    out = np.zeros(x.shape)
    for c, w, s in zip(ms.coefficients, ms.space, ms.time):
        out = out + c * w(x, y) * s(t)
    return out


@dataclass
class SeparatedParabolicProblem:
    name: str
    operators: List[Callable]          # builder(mesh, disc) -> sparse A_p
    mus: List[Callable]
    lams: List[Callable] = field(default_factory=list)
    sources: List[Callable] = field(default_factory=list)
    u0: Optional[Callable] = None
    T: float = 1.0
    alpha: float = 1.0
    M: float = 1.0
    exact: Optional[ManufacturedSolution] = None

    def __post_init__(self):
        if len(self.operators) < 1 or len(self.operators) != len(self.mus):
            raise ValueError("need P >= 1 operators with one time function each")
        if len(self.lams) != len(self.sources):
            raise ValueError("source terms need one time and one space function each")
        if self.alpha <= 0 or self.M <= 0:
            raise ValueError("alpha and M must be positive")

    @property
    def P(self):
        return len(self.operators)

    @property
    def Q(self):
        return len(self.sources)


def _const(c):
    return lambda t: np.full(np.shape(t), float(c))


def _laplacian(mesh, disc=None):
    return disc.stiffness if disc is not None else assemble_stiffness(mesh)


def rotation_velocity(x, y):
    return 2 * PI * (0.5 - y), 2 * PI * (x - 0.5)


def gaussian_bump(x, y):
    return np.exp(-((x - 2 / 3) ** 2 + (y - 0.5) ** 2) / 0.07 ** 2)


def _sinsin(k, amp=1.0):
    return lambda x, y: amp * np.sin(PI * k * x) * np.sin(PI * k * y)


def make_case1():
    """Heat equation with a rank-10 manufactured solution."""
    coefs, spaces, times, lams, sources = [], [], [], [], []
    for n in range(1, 11):
        w = n ** -4.0
        coefs.append(w)
        spaces.append(_sinsin(n))
        times.append(lambda t, n=n: np.sin(PI * n ** 3 * t))
        lams.append(lambda t, n=n: PI * n ** 3 * np.cos(PI * n ** 3 * t))
        sources.append(_sinsin(n, w))
        lams.append(lambda t, n=n: np.sin(PI * n ** 3 * t))
        sources.append(_sinsin(n, 2 * PI ** 2 * n ** 2 * w))
    exact = ManufacturedSolution(tuple(coefs), tuple(spaces), tuple(times))
    problem = SeparatedParabolicProblem(
        "heat-manufactured", [_laplacian], [_const(1.0)], lams, sources,
        u0=None, exact=exact)
    return problem, exact


def make_case2():
    """Time-oscillating diffusion ``μ(t) = sin(100πt) + 2``, ``f = 1``."""
    return SeparatedParabolicProblem(
        "time-diffusion", [_laplacian], [lambda t: np.sin(100 * PI * t) + 2.0],
        [_const(1.0)], [lambda x, y: np.ones(np.shape(x))], u0=None, M=3.0)


def _advection_diffusion(mesh, disc=None):
    D = _laplacian(mesh, disc)
    return 0.1 * D + assemble_advection(mesh, rotation_velocity)


def make_case3():
    """Rotating advection-diffusion of a Gaussian bump, no source."""
    return SeparatedParabolicProblem(
        "advection-diffusion", [_advection_diffusion], [_const(1.0)],
        u0=gaussian_bump)


CASES = {
    "heat-manufactured": lambda: make_case1()[0],
    "time-diffusion": make_case2,
    "advection-diffusion": make_case3,
}


def get_problem(name) -> SeparatedParabolicProblem:
    try:
        return CASES[name]()
    except KeyError:
        raise KeyError(f"unknown case {name!r}; choose from {sorted(CASES)}") from None


# --- file-based custom problems -------------------------------------------

def _time_function(spec):
    kind = spec.get("type", "constant")
    if kind == "constant":
        return _const(spec.get("value", 1.0))
    if kind in ("sin", "cos"):
        amp = float(spec.get("amplitude", 1.0))
        freq = float(spec.get("frequency", 1.0))
        phase = float(spec.get("phase", 0.0))
        offset = float(spec.get("offset", 0.0))
        fn = np.sin if kind == "sin" else np.cos
        return lambda t: amp * fn(freq * np.asarray(t) + phase) + offset
    raise ValueError(f"unknown time function type {kind!r}")


def _space_function(spec):
    kind = spec.get("type", "constant")
    amp = float(spec.get("amplitude", spec.get("value", 1.0)))
    if kind == "zero":
        return lambda x, y: np.zeros(np.shape(x))
    if kind == "constant":
        return lambda x, y: np.full(np.shape(x), amp)
    if kind == "sinsin":
        kx, ky = float(spec.get("kx", 1)), float(spec.get("ky", spec.get("kx", 1)))
        return lambda x, y: amp * np.sin(PI * kx * x) * np.sin(PI * ky * y)
    if kind == "gaussian":
        cx, cy = spec.get("center", [0.5, 0.5])
        width = float(spec.get("width", 0.1))
        return lambda x, y: amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / width ** 2)
    raise ValueError(f"unknown space function type {kind!r}")


def _velocity(spec):
    kind = spec.get("velocity", "rotation")
    scale = float(spec.get("scale", 1.0))
    if kind == "rotation":
        return lambda x, y: tuple(scale * c for c in rotation_velocity(x, y))
    if kind == "constant":
        vx, vy = spec.get("vector", [1.0, 0.0])
        return lambda x, y: (np.full(np.shape(x), scale * vx), np.full(np.shape(y), scale * vy))
    raise ValueError(f"unknown velocity {kind!r}")


def _space_operator(specs):
    if isinstance(specs, dict):
        specs = [specs]

    def build(mesh: QuadMesh, disc=None):
        A = None
        for s in specs:
            kind = s.get("type")
            if kind == "diffusion":
                part = float(s.get("coefficient", 1.0)) * _laplacian(mesh, disc)
            elif kind == "advection":
                part = assemble_advection(mesh, _velocity(s))
            elif kind == "reaction":
                part = float(s.get("coefficient", 1.0)) * (
                    disc.mass if disc is not None else assemble_mass(mesh))
            else:
                raise ValueError(f"unknown operator type {kind!r}")
            A = part if A is None else A + part
        return A

    return build


def problem_from_dict(data) -> SeparatedParabolicProblem:
    """Build a problem from named built-ins, e.g.::

        {"name": "demo", "alpha": 1, "M": 1,
         "operators": [{"space": [{"type": "diffusion", "coefficient": 0.1},
                                  {"type": "advection", "velocity": "rotation"}],
                        "time": {"type": "constant", "value": 1}}],
         "sources": [{"space": {"type": "constant", "value": 1},
                      "time": {"type": "sin", "frequency": 3.14}}],
         "initial": {"type": "gaussian", "center": [0.6, 0.5], "width": 0.07}}
    """
    ops = data.get("operators")
    if not ops:
        raise ValueError("a problem needs at least one operator term")
    initial = data.get("initial")
    return SeparatedParabolicProblem(
        name=data.get("name", "custom"),
        operators=[_space_operator(o["space"]) for o in ops],
        mus=[_time_function(o.get("time", {})) for o in ops],
        lams=[_time_function(s.get("time", {})) for s in data.get("sources", [])],
        sources=[_space_function(s["space"]) for s in data.get("sources", [])],
        u0=None if initial is None else _space_function(initial),
        T=float(data.get("T", 1.0)),
        alpha=float(data.get("alpha", 1.0)),
        M=float(data.get("M", 1.0)),
    )


def load_problem(path) -> SeparatedParabolicProblem:
    with open(path) as fh:
        return problem_from_dict(json.load(fh))


def case1_l2h1_norm_sq():
    """Closed form of ``∫_I |∇u|²`` for the case-1 solution (terms are orthogonal)."""
    n = np.arange(1, 11, dtype=float)
    return float(np.sum(n ** -8 * PI ** 2 * n ** 2 / 4))
