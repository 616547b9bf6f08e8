import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fmip.metrics import format_imp, metrics_cross_entropy, metrics_gap, metrics_imp


class TestGap:
    def test_table_value(self):
        assert round(metrics_gap(401.00, 400.70), 2) == 0.30

    def test_zero(self):
        assert metrics_gap(3.5, 3.5) == 0.0

    @given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
    def test_symmetric_nonnegative(self, a, b):
        assert metrics_gap(a, b) == metrics_gap(b, a) >= 0

    def test_non_finite(self):
        with pytest.raises(ValueError):
            metrics_gap(math.inf, 1.0)


class TestImp:
    def test_table_value(self):
        assert format_imp(metrics_imp(0.30, 0.10)) == "66.67%"

    def test_zero_baseline(self):
        assert metrics_imp(0.0, 0.1) is None
        assert format_imp(None) == "n/a"

    @given(st.floats(1e-6, 1e3), st.floats(0, 1e3))
    def test_sign(self, a, b):
        imp = metrics_imp(a, b)
        assert (imp > 0) == (b < a) or math.isclose(a, b)


class TestCrossEntropy:
    def test_uniform(self):
        assert metrics_cross_entropy(np.full((5, 2), 0.5), [0, 1, 0, 1, 1]) == pytest.approx(0.693147, abs=1e-6)

    def test_point_mass(self):
        assert metrics_cross_entropy(np.eye(2)[[0, 1, 1]], [0, 1, 1]) == 0.0

    def test_mixed(self):
        marg = np.array([[0.2, 0.8], [0.8, 0.2], [0.5, 0.5], [0.5, 0.5]])
        assert metrics_cross_entropy(marg, [1, 0, 0, 1]) == pytest.approx(0.45815, abs=1e-5)

    def test_clamped_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            ce = metrics_cross_entropy([[1.0, 0.0]], [1])
        assert ce == pytest.approx(-math.log(1e-12))
        assert "clamped" in caplog.text

    def test_support(self):
        with pytest.raises(ValueError):
            metrics_cross_entropy([[0.5, 0.5]], [2])
