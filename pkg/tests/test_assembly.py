import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import dense_minres
from spacetime_pgd.assembly import (Residual, assemble_system, build_system, discretize,
                                    reduce_to_space, reduce_to_time, residual_history,
                                    residual_l2)
from spacetime_pgd.linalg import SeparatedVector, SpdFactorization
from spacetime_pgd.problems import get_problem, problem_from_dict

CASE_NAMES = ["heat-manufactured", "time-diffusion", "advection-diffusion"]

UNIT_HEAT = {"operators": [{"space": {"type": "diffusion"}, "time": {"type": "constant"}}],
             "sources": [{"space": {"type": "constant", "value": 1},
                          "time": {"type": "constant"}}]}


def _oracle(problem, sd, td, method, pg_refine=1):
    return dense_minres(problem, sd.mass.toarray(), sd.stiffness.toarray(),
                        [A.toarray() for A in sd.operators], sd.loads, sd.initial,
                        td.grid.N, method, pg_refine)


@pytest.mark.parametrize("case", CASE_NAMES)
@pytest.mark.parametrize("method", [1, 2, 3])
@pytest.mark.parametrize("nk", [1, 2])
def test_system_matches_dense_quadrature_oracle(case, method, nk):
    problem = get_problem(case)
    sd, td = discretize(problem, 2, nk)
    B, g = assemble_system(method, problem, sd, td).dense()
    Bo, go = _oracle(problem, sd, td, method)
    assert np.abs(B - Bo).max() <= 1e-10 * np.abs(Bo).max()
    assert np.abs(g - go).max() <= 1e-10 * np.abs(go).max()


def test_refined_test_space_matches_oracle():
    problem = get_problem("time-diffusion")
    sd, td = discretize(problem, 2, 2, pg_refine=2)
    B, g = assemble_system(2, problem, sd, td).dense()
    Bo, go = _oracle(problem, sd, td, 2, pg_refine=2)
    np.testing.assert_allclose(B, Bo, atol=1e-10 * np.abs(Bo).max())
    np.testing.assert_allclose(g, go, atol=1e-10 * np.abs(go).max())


@pytest.mark.parametrize("method, B_ref, g_ref", [
    (1, np.array([[193, 95], [95, 217]]) / 216, np.array([11, 13]) / 96),
    (2, np.array([[145, 143], [143, 169]]) / 216, np.array([11, 13]) / 96),
    (3, np.array([[178, 95], [95, 217]]) / 81, np.array([11, 13]) / 36),
])
def test_single_node_single_element_by_hand(method, B_ref, g_ref):
    sys = build_system(problem_from_dict(UNIT_HEAT), method, 1, 0)
    B, g = sys.dense()
    np.testing.assert_allclose(B, B_ref, rtol=1e-13)
    np.testing.assert_allclose(g, g_ref, rtol=1e-12)


@pytest.mark.parametrize("case", CASE_NAMES)
@pytest.mark.parametrize("method", [1, 2, 3])
def test_system_is_spd(case, method):
    B, _ = build_system(get_problem(case), method, 2, 3).dense()
    assert np.abs(B - B.T).max() <= 1e-12 * np.abs(B).max()
    assert np.linalg.eigvalsh(B).min() > 0


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(CASE_NAMES), st.integers(0, 2 ** 31))
def test_petrov_galerkin_energy_is_dominated(case, seed):
    problem = get_problem(case)
    disc = discretize(problem, 2, 3)
    B1, _ = assemble_system(1, problem, *disc).dense()
    B2, _ = assemble_system(2, problem, *disc).dense()
    x = np.random.default_rng(seed).standard_normal(B1.shape[0])
    assert x @ (B1 - B2) @ x >= -1e-12 * (x @ B1 @ x)


def test_stiffness_cancellation_matches_implicit_form():
    # A = D_h is detected and cancelled; a copy scaled by one is not
    heat = problem_from_dict(UNIT_HEAT)
    spec = {**UNIT_HEAT, "operators": [{"space": [{"type": "diffusion", "coefficient": 0.5},
                                                  {"type": "diffusion", "coefficient": 0.5}]}]}
    B1, g1 = build_system(heat, 1, 2, 2).dense()
    B2, g2 = build_system(problem_from_dict(spec), 1, 2, 2).dense()
    np.testing.assert_allclose(B1, B2, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-14)


def _random_separated(rng, nh, nk, rank):
    return SeparatedVector(rng.standard_normal((nh, rank)), rng.standard_normal((nk, rank)))


@pytest.mark.parametrize("method", [1, 2, 3])
def test_reductions_match_dense_contractions(method):
    rng = np.random.default_rng(method)
    sys = build_system(get_problem("advection-diffusion"), method, 2, 2)
    B, g = sys.dense()
    nh, nk = sys.shape
    u = _random_separated(rng, nh, nk, 2)
    res = Residual(sys)
    res.subtract(u.space[:, 0], u.time[:, 0])
    res.subtract(u.space[:, 1], u.time[:, 1])
    r = g - B @ u.ravel()
    np.testing.assert_allclose(res.acc.as_separated().ravel(), r, atol=1e-12)

    s, v = rng.standard_normal(nk), rng.standard_normal(nh)
    Is = np.kron(np.eye(nh), s[:, None])
    Iv = np.kron(v[:, None], np.eye(nk))
    sub = reduce_to_space(sys, res, s)
    K = Is.T @ B @ Is
    np.testing.assert_allclose(np.column_stack([sub.apply(e) for e in np.eye(nh)]), K, atol=1e-12)
    np.testing.assert_allclose(sub.rhs, Is.T @ r, atol=1e-12)
    if sub.matrix is not None:
        np.testing.assert_allclose(sub.matrix.toarray(), K, atol=1e-12)
    T, rhs, _ = reduce_to_time(sys, res, v)
    np.testing.assert_allclose(T.toarray(), Iv.T @ B @ Iv, atol=1e-12)
    np.testing.assert_allclose(rhs, Iv.T @ r, atol=1e-12)
    with pytest.raises(ValueError):
        reduce_to_space(sys, res, np.zeros(nk))
    with pytest.raises(ValueError):
        reduce_to_time(sys, res, np.zeros(nh))


def test_residual_split_by_tag():
    rng = np.random.default_rng(7)
    sys = build_system(get_problem("advection-diffusion"), 1, 2, 2)
    B, g = sys.dense()
    u = _random_separated(rng, *sys.shape, 1)
    ic_cols = [j for j, t in enumerate(sys.g_tags) if t == "ic"]
    g_ic = SeparatedVector(sys.g.space[:, ic_cols], sys.g.time[:, ic_cols]).ravel()
    B_ic = sum(t.weight * np.kron(t.space.to_dense(), t.time.toarray())
               for t in sys.B.terms if t.tag == "ic")
    r = g - B @ u.ravel()
    r_ic = g_ic - B_ic @ u.ravel()
    gn = np.linalg.norm(g)
    total, pde, ic = residual_l2(sys, u)
    assert total == pytest.approx(np.linalg.norm(r) / gn, rel=1e-10)
    assert ic == pytest.approx(np.linalg.norm(r_ic) / gn, rel=1e-10)
    assert pde == pytest.approx(np.linalg.norm(r - r_ic) / gn, rel=1e-10)
    assert residual_l2(sys, _random_separated(rng, *sys.shape, 0))[0] == 1.0


def test_residual_of_exact_solution_vanishes():
    sys = build_system(get_problem("time-diffusion"), 1, 2, 3)
    B, g = sys.dense()
    x = np.linalg.solve(B, g).reshape(sys.shape)
    U, sv, Vt = np.linalg.svd(x, full_matrices=False)
    u = SeparatedVector(U * sv, Vt.T)
    assert residual_l2(sys, u)[0] < 1e-7
    hist = residual_history(sys, u)
    assert hist[0] == 1.0 and len(hist) == u.rank + 1
    with pytest.raises(ValueError):
        residual_l2(sys, SeparatedVector(np.ones((2, 1)), np.ones((9, 1))))


def test_assembly_rejects_bad_input():
    problem = get_problem("heat-manufactured")
    sd, td = discretize(problem, 2, 2)
    with pytest.raises(ValueError, match="method"):
        assemble_system(4, problem, sd, td)
    with pytest.raises(ValueError, match="separated form"):
        assemble_system(1, get_problem("time-diffusion"), sd, td)


def test_space_solve_uses_explicit_matrix_only_without_inverse():
    problem = get_problem("advection-diffusion")
    sys1 = build_system(problem, 1, 2, 2)
    sys3 = build_system(problem, 3, 2, 2)
    res1, res3 = Residual(sys1), Residual(sys3)
    s = np.ones(sys1.shape[1])
    assert reduce_to_space(sys1, res1, s).matrix is None
    sub = reduce_to_space(sys3, res3, s)
    assert sub.matrix is not None
    SpdFactorization(sub.matrix)
