import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fmip.graph import SolutionState, attach_state, encode
from fmip.milp import from_dense
from fmip.selfcheck import random_instance


def _instances():
    return st.integers(0, 2**31 - 1).map(lambda s: random_instance(np.random.default_rng(s)))


class TestEncode:
    def test_toy_partitions(self, toy):
        g = encode(toy, normalize=False)
        assert (g.num_int, g.num_cont, g.num_cons) == (1, 1, 2)
        weights = sorted(np.concatenate([g.int_edge_weight, g.cont_edge_weight]).tolist())
        assert weights == [1.0, 1.0, 1.0, 3.0]
        np.testing.assert_array_equal(g.ivar_feats, [[4.0, 0.0, 5.0, 1.0, 1.0]])
        np.testing.assert_array_equal(g.cvar_feats, [[1.0, 0.0, 3.0, 1.0, 1.0]])
        np.testing.assert_array_equal(g.con_feats, [[1.0], [2.0]])

    def test_no_constraints(self):
        inst = from_dense(np.zeros((0, 2)), [], [1.0, 1.0], [0, 0], [1, 1], num_int=1)
        g = encode(inst)
        assert g.num_cons == 0
        assert g.int_edge_index.shape == (2, 0) and g.cont_edge_index.shape == (2, 0)

    def test_infinite_lower_bound(self):
        inst = from_dense([[1.0]], [1.0], [1.0], [-np.inf], [2.0], num_int=0)
        g = encode(inst)
        assert g.cvar_feats[0, 1] == 0.0 and g.cvar_feats[0, 3] == 0.0
        assert g.cvar_feats[0, 4] == 1.0

    def test_negative_coefficients_kept(self):
        inst = from_dense([[-2.0, 1.0]], [1.0], [1.0, 1.0], [0, 0], [1, 1], num_int=2)
        assert encode(inst).int_edge_index.shape[1] == 2

    @given(_instances())
    def test_edge_count_and_rescale(self, inst):
        g = encode(inst)
        assert g.int_edge_index.shape[1] + g.cont_edge_index.shape[1] == inst.nnz
        assert np.all(np.concatenate([g.int_edge_weight, g.cont_edge_weight]) != 0)
        A, b = g.coefficient_matrix()
        np.testing.assert_allclose(A, inst.dense_A, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(b, inst.rhs, rtol=1e-12, atol=1e-12)
        peak = np.zeros(inst.num_cons)
        for idx, w in ((g.int_edge_index, g.int_edge_weight), (g.cont_edge_index, g.cont_edge_weight)):
            np.maximum.at(peak, idx[0], np.abs(w))
        np.testing.assert_allclose(peak[np.bincount(inst.rows, minlength=inst.num_cons) > 0], 1.0)

    @given(_instances())
    def test_bound_features_sentinel(self, inst):
        g = encode(inst)
        feats = np.vstack([g.ivar_feats, g.cvar_feats])
        assert np.all(np.isin(feats[:, 3:], [0.0, 1.0]))
        assert np.all(feats[feats[:, 3] == 0, 1] == 0) and np.all(feats[feats[:, 4] == 0, 2] == 0)


class TestAttachState:
    def test_widths_and_read_back(self, toy):
        g = encode(toy)
        aug = attach_state(g, SolutionState(np.array([3.0]), np.array([0.25]), 0.4))
        assert aug.ivar_x.shape == (1, 6) and aug.cvar_x.shape == (1, 6)
        assert g.con_feats.shape == (2, 1)
        s = aug.state
        assert s.d.tolist() == [3.0] and s.c.tolist() == [0.25] and s.t == 0.4

    def test_zero_state(self, toy):
        aug = attach_state(encode(toy), SolutionState(np.zeros(1), np.zeros(1), 0.0))
        assert aug.ivar_x[:, 5].tolist() == [0.0] and aug.cvar_x[:, 5].tolist() == [0.0]

    def test_mismatch(self, toy):
        with pytest.raises(ValueError):
            attach_state(encode(toy), SolutionState(np.zeros(2), np.zeros(1), 0.0))
