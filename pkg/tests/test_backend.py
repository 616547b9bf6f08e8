import math
import sys
import textwrap
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fmip.backend import (
    ENV_VAR,
    ERROR,
    INFEASIBLE,
    OPTIMAL,
    TIMEOUT,
    ExternalBackend,
    LPFormatError,
    branch_and_bound,
    brute_force,
    enumeration_size,
    external_solve,
    lp_relax,
    make_backend,
    parse_solution,
    read_lp,
    write_lp,
    write_solution,
)
from fmip.generators import indep_set_instance
from fmip.milp import evaluate, from_dense, toy_instance
from fmip.selfcheck import random_instance


def _instances():
    return st.integers(0, 2**31 - 1).map(lambda s: random_instance(np.random.default_rng(s)))


class TestLpRelax:
    def test_toy(self, toy):
        res = lp_relax(toy)
        assert res.status == OPTIMAL and res.objective == pytest.approx(0.0, abs=1e-9)

    def test_single_variable(self):
        inst = from_dense(np.zeros((0, 1)), [], [1.0], [0.0], [3.0], num_int=0)
        assert lp_relax(inst).objective == pytest.approx(0.0)

    def test_infeasible(self):
        inst = from_dense([[1.0], [-1.0]], [0.0, -1.0], [1.0], [-np.inf], [np.inf], num_int=0)
        assert lp_relax(inst).status == INFEASIBLE

    def test_unbounded_is_error(self):
        inst = from_dense([[1.0]], [1.0], [1.0], [-np.inf], [np.inf], num_int=0)
        assert lp_relax(inst).status == ERROR

    @given(_instances())
    def test_relaxation_bound(self, inst):
        exact = brute_force(inst)
        relax = lp_relax(inst)
        if exact.assignment is not None:
            assert relax.objective <= exact.objective + 1e-6


class TestBranchAndBound:
    def test_pure_lp(self):
        inst = from_dense([[1.0, 1.0]], [4.0], [-1.0, -2.0], [0, 0], [3, 3], num_int=0)
        assert branch_and_bound(inst).objective == pytest.approx(lp_relax(inst).objective)

    @pytest.mark.parametrize("int_bound", [1, 5])
    def test_toy_matches_oracle(self, int_bound):
        inst = toy_instance(int_bound)
        assert branch_and_bound(inst).objective == pytest.approx(brute_force(inst).objective, abs=1e-6)

    @given(_instances())
    def test_matches_oracle(self, inst):
        bb, bf = branch_and_bound(inst), brute_force(inst)
        assert (bb.assignment is None) == (bf.assignment is None)
        if bf.assignment is not None:
            assert abs(bb.objective - bf.objective) <= 1e-6
            assert evaluate(inst, bb.assignment).feasible

    @given(_instances())
    def test_incumbent_non_increasing(self, inst):
        trace = []
        branch_and_bound(inst, trace=trace)
        assert all(b <= a for a, b in zip(trace, trace[1:]))

    def test_time_limit(self):
        inst = random_instance(np.random.default_rng(1))
        res = branch_and_bound(inst, time_limit_s=0.0)
        assert res.status in (TIMEOUT, OPTIMAL, INFEASIBLE)

    def test_concurrent_equals_sequential(self):
        insts = [random_instance(np.random.default_rng(s)) for s in range(8)]
        seq = [branch_and_bound(i) for i in insts]
        with ThreadPoolExecutor(4) as pool:
            par = list(pool.map(branch_and_bound, insts))
        for a, b in zip(seq, par):
            assert a.same_outcome(b)


class TestBruteForce:
    def test_two_node_indep_set(self):
        assert brute_force(indep_set_instance(2, [(0, 1)])).objective == -1.0

    def test_no_integers_equals_lp(self):
        inst = from_dense([[1.0, 1.0]], [4.0], [-1.0, -2.0], [0, 0], [3, 3], num_int=0)
        assert brute_force(inst).objective == pytest.approx(lp_relax(inst).objective)

    def test_infeasible(self):
        inst = from_dense([[1.0], [-1.0]], [0.0, -1.0], [1.0], [0], [1], num_int=1)
        assert brute_force(inst).status == INFEASIBLE

    def test_enumeration_bound(self):
        n = 21
        inst = from_dense(np.zeros((0, n)), [], np.ones(n), np.zeros(n), np.ones(n), num_int=n)
        assert enumeration_size(inst) == 2 ** 21
        assert brute_force(inst).status == ERROR


class TestLpFormat:
    def test_toy_round_trip(self, toy):
        assert read_lp(write_lp(toy)) == toy

    def test_sections(self, toy_binary):
        text = write_lp(toy_binary)
        for head in ("Minimize", "Subject To", "Bounds", "End"):
            assert head in text
        assert "Binaries" in text or "Generals" in text

    @given(_instances())
    def test_round_trip_property(self, inst):
        back = read_lp(write_lp(inst))
        np.testing.assert_array_equal(back.dense_A, inst.dense_A)
        for key in ("obj", "rhs", "lower", "upper"):
            np.testing.assert_array_equal(getattr(back, key), getattr(inst, key))
        assert back.num_int == inst.num_int

    def test_solution_parse(self):
        x = parse_solution("# header\nx1 2.5\nx0 1  # trailing\n", 2)
        np.testing.assert_array_equal(x, [1.0, 2.5])
        np.testing.assert_array_equal(parse_solution(write_solution([0.1, 3.0]), 2), [0.1, 3.0])

    def test_unknown_variable(self):
        with pytest.raises(LPFormatError):
            parse_solution("x0 1\ny 2\n", 1)

    def test_missing_variable(self):
        with pytest.raises(LPFormatError):
            parse_solution("x0 1\n", 2)


FAKE_SOLVER = textwrap.dedent("""
    import sys, time
    from fmip.backend import brute_force, read_lp, write_solution
    mode, src, dst = sys.argv[1], sys.argv[2], sys.argv[3]
    if mode == "sleep":
        time.sleep(30)
    if mode == "fail":
        sys.exit(3)
    inst = read_lp(open(src).read())
    res = brute_force(inst)
    with open(dst, "w") as fh:
        if mode == "junk":
            fh.write("zz 1\\n")
        elif res.assignment is not None:
            fh.write(write_solution(res.assignment))
""")


@pytest.fixture
def fake_solver(tmp_path):
    path = tmp_path / "fake_solver.py"
    path.write_text(FAKE_SOLVER)
    return lambda mode: f"{sys.executable} {path} {mode} {{input}} {{output}}"


class TestExternal:
    def test_solves_via_subprocess(self, fake_solver, toy):
        res = external_solve(toy, fake_solver("ok"), 30)
        assert res.assignment is not None
        assert res.objective == pytest.approx(brute_force(toy).objective)

    def test_env_var_template(self, fake_solver, toy, monkeypatch):
        monkeypatch.setenv(ENV_VAR, fake_solver("ok"))
        assert make_backend("external").solve(toy, 30).assignment is not None

    def test_timeout(self, fake_solver, toy):
        res = external_solve(toy, fake_solver("sleep"), 0.1)
        assert res.status == TIMEOUT and res.assignment is None

    def test_nonzero_exit(self, fake_solver, toy):
        res = external_solve(toy, fake_solver("fail"), 30)
        assert res.status == ERROR and "exit code 3" in res.message

    def test_unknown_variable_in_solution(self, fake_solver, toy):
        assert external_solve(toy, fake_solver("junk"), 30).status == ERROR

    def test_no_template(self, toy, monkeypatch):
        monkeypatch.delenv(ENV_VAR, raising=False)
        assert ExternalBackend().solve(toy, math.inf).status == ERROR

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            make_backend("gurobi")
