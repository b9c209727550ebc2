import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bioexp.search import bracket_max, golden_max


class TestGoldenMax:
    def test_parabola(self):
        res = golden_max(lambda x: -(x - 0.3) ** 2, 0.0, 1.0)
        assert res.converged
        assert res.x == pytest.approx(0.3, abs=1e-8)
        assert res.value == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("f,x", [(lambda x: x, 2.0), (lambda x: -x, -1.0)])
    def test_boundary_maximum_is_exact(self, f, x):
        assert golden_max(f, -1.0, 2.0).x == x

    def test_iteration_cap(self):
        res = golden_max(math.sin, 0.0, 3.0, xtol=0.0, max_iter=5)
        assert not res.converged

    @given(st.floats(-5, 5), st.floats(0.1, 10))
    def test_shifted_concave(self, c, scale):
        res = golden_max(lambda x: -scale * abs(x - c) ** 1.5, -6.0, 6.0, xtol=1e-11)
        assert res.x == pytest.approx(c, abs=1e-6)


class TestBracketMax:
    def test_brackets_interior_max(self):
        lo, hi, ok = bracket_max(lambda x: -(x - 37.0) ** 2)
        assert ok and lo < 37.0 < hi

    def test_max_at_zero(self):
        lo, hi, ok = bracket_max(lambda x: -x)
        assert ok and lo == 0.0 and hi > 0.0

    def test_still_increasing(self):
        lo, hi, ok = bracket_max(lambda x: x, max_x=1e3)
        assert not ok
