import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spacetime_pgd.experiments import (RunRecord, SCHEMA_VERSION, _encode, compare_methods,
                                       convergence_study, cpu_table, solve_case, write_csv)
from spacetime_pgd.greedy import SolverConfig
from spacetime_pgd.problems import get_problem

finite = st.floats(allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.fixed_dictionaries({"iteration": st.integers(0, 10 ** 6), "residual": finite,
                                       "objective": finite}), max_size=5),
       finite, st.integers(0, 2 ** 40), st.sampled_from(["converged", "max_rank", "stagnated"]))
def test_run_record_round_trip(rows, wall, seed, status):
    rec = RunRecord(problem="p", method=2, nh_exp=3, nk_exp=4, N_h=49, N_k=17,
                    config=SolverConfig(seed=seed).to_dict(), rows=rows, status=status,
                    rank=len(rows), errors={"l2h1": wall}, space_solves=7, wall_time=wall,
                    seed=seed)
    back = RunRecord.from_lines(rec.to_lines())
    assert back == rec
    assert back.rows == rows and back.wall_time == wall


def test_float_format_keeps_17_digits():
    assert _encode(0.1) == "0.10000000000000001"
    assert json.loads(_encode({"x": [1.0 / 3, 2]})) == {"x": [1.0 / 3, 2]}
    assert _encode(float("nan")) == '"nan"' and _encode(True) == "true"
    with pytest.raises(TypeError):
        _encode(object())


def test_record_line_validation():
    rec = RunRecord("p", 1, 1, 1, 1, 3, {})
    lines = rec.to_lines()
    with pytest.raises(ValueError, match="summary"):
        RunRecord.from_lines([])
    with pytest.raises(ValueError, match="type"):
        RunRecord.from_lines(['{"type": "other"}'] + lines)
    bad = json.loads(lines[-1])
    bad["schema_version"] = SCHEMA_VERSION + 1
    with pytest.raises(ValueError, match="schema"):
        RunRecord.from_lines([json.dumps(bad)])


def test_csv_mirror():
    buf = io.StringIO()
    write_csv(buf, [{"iteration": 1, "residual": 0.5}, {"iteration": 2, "residual": 0.25}])
    assert buf.getvalue().splitlines() == ["iteration,residual", "1,0.5", "2,0.25"]


@pytest.fixture(scope="module")
def small_heat_run():
    return solve_case(get_problem("heat-manufactured"), 1, 3, 6)


def test_solve_case_fills_the_record(small_heat_run, tmp_path):
    rec = small_heat_run.record
    assert (rec.N_h, rec.N_k, rec.rank) == (49, 65, small_heat_run.solution.rank)
    assert rec.status == "converged" and rec.space_solves > 0
    assert set(rec.errors) == {"l2h1", "h1hm1"} and all(0 < e < 1 for e in rec.errors.values())
    assert len(rec.rows) == rec.rank and rec.rows[-1]["space_solves"] == rec.space_solves
    path = tmp_path / "r.json"
    rec.write(path)
    assert RunRecord.read(path) == rec
    rec.write(tmp_path / "r.csv", "csv")
    assert (tmp_path / "r.csv").read_text().startswith("iteration,residual")
    with pytest.raises(ValueError):
        rec.write(tmp_path / "r.txt", "xml")


def test_runs_are_reproducible(small_heat_run):
    again = solve_case(get_problem("heat-manufactured"), 1, 3, 6)
    for a, b in zip(again.record.rows, small_heat_run.record.rows):
        a, b = dict(a), dict(b)
        a.pop("wall_time"), b.pop("wall_time")
        assert a == b


def test_compare_curve_of_method_one_is_its_own_residual(small_heat_run):
    rec, runs = compare_methods(get_problem("heat-manufactured"), 3, 6, methods=(1, 3))
    assert rec.curves[1][0] == 1.0
    own = [r["residual"] for r in small_heat_run.record.rows]
    np.testing.assert_allclose(rec.curves[1][1:], own, rtol=1e-6, atol=1e-8)
    assert all(c > 0 for curve in rec.curves.values() for c in curve)
    assert 0.0 <= rec.ordering_fraction() <= 1.0
    rows = rec.rows()
    assert rows[0] == {"iteration": 0, "r1": 1.0, "r3": 1.0}


def test_compare_is_deterministic():
    a, _ = compare_methods(get_problem("advection-diffusion"), 2, 3, methods=(2,))
    b, _ = compare_methods(get_problem("advection-diffusion"), 2, 3, methods=(2,))
    assert a.curves == b.curves and a.violations == [] == b.violations


def test_convergence_study_structure():
    res = convergence_study(get_problem("heat-manufactured"), "space", 1, levels=[1, 2, 3],
                            reference_levels=(4, 6))
    assert res.levels == [1, 2, 3] and res.fit_levels == [1, 2, 3]
    assert res.parameters == [0.5, 0.25, 0.125]
    assert res.l2h1[0] > res.l2h1[-1] and np.isfinite(res.slope_h1hm1)
    assert len(res.rows()) == 3
    with pytest.raises(ValueError, match="three"):
        convergence_study(get_problem("heat-manufactured"), "time", 1, levels=[3],
                          reference_levels=(2, 5))
    with pytest.raises(ValueError, match="axis"):
        convergence_study(get_problem("heat-manufactured"), "depth", 1)


def test_time_sweep_uses_a_computed_reference():
    res = convergence_study(get_problem("time-diffusion"), "time", 1, levels=[2, 3, 4],
                            reference_levels=(2, 6))
    assert res.fit_levels == [2, 3, 4]
    assert all(e > 0 for e in res.l2h1)


def test_cpu_table_of_one_method_has_unit_ratio():
    table = cpu_table(get_problem("time-diffusion"), 2, 3, methods=(1,), repetitions=3)
    assert table[1]["ratio"] == 1.0 and table[1]["median_time"] > 0
    both = cpu_table(get_problem("time-diffusion"), 2, 3, methods=(1, 3), repetitions=1)
    assert set(both) == {1, 3} and math.isfinite(both[3]["ratio"])
