import dataclasses

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from spacetime_pgd.assembly import build_system, residual_l2
from spacetime_pgd.greedy import SolverConfig, greedy_solve, xnorm_sq
from spacetime_pgd.linalg import KroneckerSumOperator, SeparatedVector, kron_apply
from spacetime_pgd.problems import get_problem, problem_from_dict

CASE_NAMES = ["heat-manufactured", "time-diffusion", "advection-diffusion"]
TIGHT = dict(eps_greedy=1e-12, eps_alt=1e-10, max_alt_sweeps=500, cg_tol=1e-13)


@pytest.mark.parametrize("case", CASE_NAMES)
@pytest.mark.parametrize("method", [1, 2, 3])
def test_greedy_reaches_the_dense_solution(case, method):
    sys = build_system(get_problem(case), method, 2, 1)
    B, g = sys.dense()
    x = np.linalg.solve(B, g)
    nh, nk = sys.shape
    sol, diag = greedy_solve(sys, SolverConfig(max_rank=nh * nk, **TIGHT))
    assert np.linalg.norm(sol.ravel() - x) <= 1e-8 * np.linalg.norm(x)
    assert diag.status in ("converged", "max_rank")


def test_tiny_heat_instance_matches_dense_solve():
    sys = build_system(get_problem("heat-manufactured"), 1, 2, 2)
    B, g = sys.dense()
    x = np.linalg.solve(B, g)
    sol, _ = greedy_solve(sys, SolverConfig(eps_greedy=1e-12, max_rank=20))
    assert np.linalg.norm(sol.ravel() - x) <= 1e-8 * np.linalg.norm(x)


def dense_xnorm_matrix(sys):
    """``Σ c · W_space ⊗ W_time``; Gram-form norms of differences bottom out near 1e-8."""
    out = 0.0
    for Ws, Wt, c in sys.xnorm_components:
        S = Ws.to_dense() if hasattr(Ws, "to_dense") else Ws.toarray()
        out = out + c * np.kron(S, Wt.toarray())
    return out


def _with_rhs(sys, g, B=None):
    return dataclasses.replace(sys, g=g, g_tags=["pde"] * g.rank, B=B or sys.B,
                               stiffness_factor=sys.stiffness_factor if B is None else None)


@pytest.mark.parametrize("method", [1, 3])
def test_rank_one_solution_is_recovered(method):
    base = build_system(get_problem("advection-diffusion"), method, 2, 4)
    nh, nk = base.shape
    rng = np.random.default_rng(11)
    target = SeparatedVector(rng.standard_normal((nh, 1)), rng.standard_normal((nk, 1)))
    sys = _with_rhs(base, kron_apply(base.B, target))
    X = dense_xnorm_matrix(base)
    exact = target.ravel()
    hits = 0
    for seed in range(5):
        sol, _ = greedy_solve(sys, SolverConfig(max_rank=1, seed=seed, **TIGHT))
        d = sol.ravel() - exact
        hits += np.sqrt((d @ X @ d) / (exact @ X @ exact)) <= 1e-8
    assert hits >= 3


def test_identity_operator_recovers_truncated_svd():
    base = build_system(get_problem("heat-manufactured"), 1, 2, 4)
    nh, nk = base.shape
    B = KroneckerSumOperator(n_space=nh, n_time=nk)
    B.add(sp.identity(nh, format="csr"), sp.identity(nk, format="csr"))
    rng = np.random.default_rng(2)
    Q1, _ = np.linalg.qr(rng.standard_normal((nh, 3)))
    Q2, _ = np.linalg.qr(rng.standard_normal((nk, 3)))
    target = SeparatedVector(Q1 * [9.0, 3.0, 1.0], Q2)
    sys = _with_rhs(base, target, B)
    sol, diag = greedy_solve(sys, SolverConfig(max_rank=3, **TIGHT))
    np.testing.assert_allclose(sol.to_dense(), target.to_dense(), atol=1e-8)
    first = sol.truncated(1).to_dense()
    np.testing.assert_allclose(first, 9.0 * np.outer(Q1[:, 0], Q2[:, 0]), atol=1e-8)


@settings(max_examples=12, deadline=None)
@given(st.sampled_from(CASE_NAMES), st.sampled_from([1, 2, 3]), st.integers(0, 1000))
def test_objective_trace_is_monotone(case, method, seed):
    sys = build_system(get_problem(case), method, 2, 3)
    _, diag = greedy_solve(sys, SolverConfig(max_rank=6, seed=seed))
    J = np.array(diag.objective_trace)
    assert np.all(np.diff(J) <= 1e-12 * np.abs(J).max())
    res = np.array(diag.column("residual"))
    assert np.all(res >= 0)


def test_iteration_records_are_consistent():
    sys = build_system(get_problem("time-diffusion"), 1, 3, 5)
    sol, diag = greedy_solve(sys, SolverConfig())
    assert len(diag.rows) == sol.rank
    assert [r.iteration for r in diag.rows] == list(range(1, sol.rank + 1))
    assert np.all(np.diff(diag.column("space_solves")) > 0)
    last = diag.rows[-1]
    assert last.stagnation_ratio == pytest.approx(last.increment_xnorm / last.solution_xnorm)
    assert last.solution_xnorm == pytest.approx(np.sqrt(xnorm_sq(sol, sys)), rel=1e-8)
    assert last.residual == pytest.approx(residual_l2(sys, sol)[0], rel=1e-6, abs=1e-9)
    assert diag.space_solves == last.space_solves and diag.total_sweeps >= sol.rank


def test_runs_are_deterministic_per_seed():
    sys = build_system(get_problem("advection-diffusion"), 2, 2, 4)
    a, da = greedy_solve(sys, SolverConfig(seed=5))
    b, db = greedy_solve(sys, SolverConfig(seed=5))
    np.testing.assert_array_equal(a.space, b.space)
    np.testing.assert_array_equal(a.time, b.time)
    assert da.column("residual") == db.column("residual")


def test_zero_data_gives_rank_zero():
    spec = {"operators": [{"space": {"type": "diffusion"}}],
            "sources": [{"space": {"type": "zero"}}]}
    sys = build_system(problem_from_dict(spec), 1, 2, 2)
    sol, diag = greedy_solve(sys)
    assert sol.rank == 0 and diag.status == "converged" and diag.rows == []


def test_max_rank_status_and_callback():
    sys = build_system(get_problem("heat-manufactured"), 1, 3, 5)
    seen = []
    sol, diag = greedy_solve(sys, SolverConfig(max_rank=2),
                             callback=lambda m, v, s, row: seen.append(m))
    assert sol.rank == 2 and diag.status == "max_rank" and seen == [1, 2]


def test_pcg_and_direct_space_solves_agree():
    sys = build_system(get_problem("advection-diffusion"), 3, 3, 4)
    a, _ = greedy_solve(sys, SolverConfig(max_rank=3))
    b, _ = greedy_solve(sys, SolverConfig(max_rank=3, space_solver="pcg", cg_tol=1e-13))
    np.testing.assert_allclose(a.to_dense(), b.to_dense(), atol=1e-7 * np.abs(a.to_dense()).max())


def test_config_validation():
    for bad in (dict(eps_greedy=0), dict(eps_alt=1.5), dict(max_rank=-1),
                dict(max_alt_sweeps=0), dict(space_solver="lu")):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    assert SolverConfig().to_dict()["eps_alt"] == 5e-2


def test_xnorm_of_terminal_hat_by_hand():
    sys = build_system(problem_from_dict({"operators": [{"space": {"type": "diffusion"}}]}),
                       1, 1, 1)
    u = SeparatedVector(np.ones((1, 1)), np.array([[0.0], [0.0], [1.0]]))
    expected = (8 / 3) * (1 / 6) + (1 / 9) * (3 / 8) * (1 / 9) * 2 + 1 / 9
    assert xnorm_sq(u, sys) == pytest.approx(expected, rel=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(-10, 10).filter(lambda c: abs(c) > 1e-3))
def test_xnorm_is_quadratic_and_positive(seed, c):
    sys = build_system(get_problem("time-diffusion"), 2, 2, 3)
    rng = np.random.default_rng(seed)
    u = SeparatedVector(rng.standard_normal((sys.shape[0], 2)), rng.standard_normal((sys.shape[1], 2)))
    base = xnorm_sq(u, sys)
    assert base > 0
    assert xnorm_sq(SeparatedVector(c * u.space, u.time), sys) == pytest.approx(c * c * base,
                                                                                rel=1e-10)
