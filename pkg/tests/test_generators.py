import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fmip.backend import BruteForceBackend, brute_force
from fmip.generators import (
    GenerationError,
    GenSpec,
    SplitMix64,
    generate,
    indep_set_instance,
    label_dataset,
    make_mixed,
    read_dataset,
    relax_variables,
    write_dataset,
)
from fmip.milp import evaluate, from_dense, serialize


class TestSplitMix64:
    def test_reference_values(self):
        rng = SplitMix64(0)
        assert rng.next_u64() == 0xE220A8397B1DCDAF
        assert rng.next_u64() == 0x6E789E6AA1B965F4

    def test_uniform_range(self):
        rng = SplitMix64(5)
        u = [rng.uniform() for _ in range(1000)]
        assert min(u) >= 0 and max(u) < 1

    @given(st.integers(0, 2**64 - 1), st.integers(1, 30), st.integers(0, 30))
    def test_sample_distinct(self, seed, n, k):
        k = min(k, n)
        out = SplitMix64(seed).sample(n, k)
        assert len(set(out)) == k and all(0 <= v < n for v in out)


class TestGenerate:
    def test_two_node_indep_set(self):
        inst = indep_set_instance(2, [(0, 1)])
        assert inst.num_cons == 1
        np.testing.assert_array_equal(inst.dense_A, [[1.0, 1.0]])
        np.testing.assert_array_equal(inst.obj, [-1.0, -1.0])

    @pytest.mark.parametrize("family", ["set_cover", "indep_set", "comb_auction"])
    def test_deterministic(self, family):
        spec = GenSpec(family, seed=3)
        assert serialize(generate(spec)) == serialize(generate(GenSpec(family, seed=3)))

    def test_seed_changes_instance(self):
        assert serialize(generate(GenSpec("set_cover", seed=1))) != serialize(
            generate(GenSpec("set_cover", seed=2)))

    def test_set_cover_rows_nonempty(self):
        inst = generate(GenSpec("set_cover", seed=7, rows=20, cols=40, density=0.2))
        assert inst.num_cons == 20
        assert np.all(np.bincount(inst.rows, minlength=20) >= 1)
        assert np.all(inst.vals == -1.0) and np.all(inst.rhs == -1.0)
        assert evaluate(inst, np.ones(inst.num_vars)).feasible

    @pytest.mark.parametrize("family", ["indep_set", "comb_auction"])
    def test_zero_feasible(self, family):
        inst = generate(GenSpec(family, seed=4))
        assert evaluate(inst, np.zeros(inst.num_vars)).feasible

    def test_uncoverable_rejected(self):
        with pytest.raises(GenerationError):
            generate(GenSpec("set_cover", cols=2, density=0.1))

    @pytest.mark.parametrize("kwargs", [dict(family="nope"), dict(family="set_cover", density=1.5),
                                        dict(family="indep_set", nodes=0), dict(family="set_cover", seed=-1)])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(GenerationError):
            GenSpec(**kwargs)


class TestMixed:
    def test_zero_fraction_is_identity(self):
        spec = GenSpec("indep_set", seed=1)
        base = generate(spec)
        relaxed, perm = relax_variables(base, 0.0, spec.seed)
        assert relaxed == base
        np.testing.assert_array_equal(perm, np.arange(base.num_vars))

    @given(st.floats(0.01, 0.95), st.integers(0, 1000))
    def test_num_int(self, frac, seed):
        spec = GenSpec("comb_auction", seed=seed, items=6, bids=10)
        inst = make_mixed(spec, frac)
        assert inst.num_int == inst.num_vars - math.ceil(frac * inst.num_vars)
        assert np.all(inst.lower[inst.num_int:] == 0) and np.all(inst.upper[inst.num_int:] == 1)

    @given(st.floats(0.01, 0.95), st.integers(0, 1000))
    def test_binary_label_stays_feasible(self, frac, seed):
        base = generate(GenSpec("indep_set", seed=seed, nodes=8))
        label = brute_force(base).assignment
        relaxed, perm = relax_variables(base, frac, seed)
        assert evaluate(relaxed, label[perm]).feasible
        assert math.isclose(evaluate(relaxed, label[perm]).objective, evaluate(base, label).objective)


class TestLabeling:
    def test_two_node_label(self):
        (lab,) = label_dataset([indep_set_instance(2, [(0, 1)])], BruteForceBackend())
        assert lab.label_objective == -1.0
        assert sorted(lab.label.tolist()) == [0.0, 1.0]

    def test_infeasible_dropped(self, caplog):
        bad = from_dense([[1.0], [-1.0]], [0.0, -1.0], [1.0], [0], [1], num_int=1, name="bad")
        with caplog.at_level(logging.WARNING):
            out = label_dataset([bad], BruteForceBackend())
        assert out == []
        assert "bad" in caplog.text

    def test_labels_feasible_and_dataset_round_trip(self, tmp_path):
        insts = [generate(GenSpec("indep_set", seed=s, nodes=8)) for s in range(3)]
        labs = label_dataset(insts, BruteForceBackend(), workers=2)
        assert len(labs) == 3
        for lab in labs:
            assert evaluate(lab.instance, lab.label).feasible
        write_dataset(tmp_path, insts, labs)
        back, labeled = read_dataset(tmp_path, require_labels=True)
        assert back == insts
        for a, b in zip(labeled, labs):
            np.testing.assert_array_equal(a.label, b.label)
