import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bioexp.probability import SourceModel, entropy, simplex_grid
from bioexp.rates import (
    FixedRates,
    PrivacyBudget,
    privacy_feasible_variable,
    rate_functions_variable,
    rs_min_fixed,
    rw_cap_combined,
    rw_star_dual,
    rw_star_fixed,
    rw_star_primal,
    rw_star_privacy_fixed,
)

from _oracles import FIG1, random_joint, rw_star_tilt

H_FIG1 = 0.6730116670092565
H_COND_FIG1 = 0.4041582938952926
I_FIG1 = 0.268853373113964

# unclamped R_w* on the Fig. 1 source, frozen from the exponential-tilt oracle
RW_STAR = {0.1: 0.48850413593, 0.2: 0.35760580936, 0.3: 0.23658710726,
           0.5: 0.0114459153, 1.0: -0.48917437623}


def _px_model(px):
    px = np.asarray(px, dtype=float)
    return SourceModel.from_matrix(np.outer(px, [0.5, 0.5]))


def _privacy_grid_oracle(px, h0, points=1_000_001):
    s = np.linspace(0.0, 1.0, points)
    logp = np.log(np.asarray(px))
    vals = np.log(np.exp(np.outer(s, logp)).sum(axis=1)) + s * h0
    return float(vals.min())


class TestTypes:
    def test_rates_non_negative(self):
        FixedRates(0.0, 0.3)
        with pytest.raises(ValueError):
            FixedRates(-0.1, 0.3)
        with pytest.raises(ValueError):
            PrivacyBudget(-1.0)


class TestHelperCap:
    def test_zero_e0_is_entropy(self, fig1):
        cap = rw_star_fixed(fig1, 0.0)
        assert cap.value == pytest.approx(H_FIG1, abs=1e-12)
        assert cap.lam == math.inf and cap.consistent

    @pytest.mark.parametrize("e0", sorted(RW_STAR))
    def test_frozen_values(self, fig1, e0):
        cap = rw_star_fixed(fig1, e0)
        assert cap.raw == pytest.approx(RW_STAR[e0], abs=1e-9)
        assert cap.value == pytest.approx(max(0.0, RW_STAR[e0]), abs=1e-9)
        assert cap.useless == (RW_STAR[e0] < 0)
        assert cap.gap < 1e-4

    @pytest.mark.parametrize("e0", [0.1, 0.2, 0.3, 0.5, 1.0])
    def test_frozen_values_match_tilt_oracle(self, e0):
        assert rw_star_tilt([0.4, 0.6], e0) == pytest.approx(RW_STAR[e0], abs=1e-10)

    @pytest.mark.parametrize("k,e0", [(2, 0.0), (2, 0.3), (3, 0.5), (4, 1.2)])
    def test_uniform_source(self, k, e0):
        model = _px_model(np.full(k, 1.0 / k))
        assert rw_star_dual(model, e0)[0] == pytest.approx(math.log(k) - e0, abs=1e-9)
        assert rw_star_primal(model, e0) == pytest.approx(math.log(k) - e0, abs=1e-9)

    def test_negative_e0_rejected(self, fig1):
        with pytest.raises(ValueError):
            rw_star_fixed(fig1, -0.01)

    def test_support_restriction(self):
        model = _px_model([0.3, 0.0, 0.7])
        ref = rw_star_tilt([0.3, 0.7], 0.05)
        assert rw_star_dual(model, 0.05)[0] == pytest.approx(ref, abs=1e-9)
        assert rw_star_primal(model, 0.05) == pytest.approx(ref, abs=1e-5)

    def test_monotone_on_dense_grid(self, fig1):
        vals = [rw_star_dual(fig1, e)[0] for e in np.linspace(0.0, 1.5, 100)]
        assert np.all(np.diff(vals) <= 1e-12)

    @given(st.integers(0, 2**32 - 1), st.just(0.0) | st.floats(1e-6, 0.8))
    def test_dual_matches_tilt_oracle(self, seed, e0):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 5))
        px = rng.dirichlet(np.ones(k)) * 0.98 + 0.02 / k
        assert rw_star_dual(_px_model(px), e0)[0] == pytest.approx(rw_star_tilt(px, e0), abs=1e-8)

    def test_dual_primal_random_sources(self):
        rng = np.random.default_rng(7)
        for trial in range(70):
            nx = 2 if trial < 50 else 3
            model = SourceModel.from_matrix(random_joint(rng, nx, 2, floor=0.01))
            e0 = float(rng.uniform(0.0, 0.6))
            dual = rw_star_dual(model, e0)[0]
            assert abs(dual - rw_star_primal(model, e0)) < 1e-3


class TestSecretRate:
    @pytest.mark.parametrize("e0", [0.0, 0.25, 1.0])
    def test_identity(self, e0):
        assert rs_min_fixed(e0) == e0


class TestVariableRates:
    def test_at_source_type(self, fig1):
        table = rate_functions_variable(fig1, 0.2, simplex_grid(2, 10))
        r_s, r_w = table.lookup((4, 6))
        assert r_s == pytest.approx(0.2, abs=1e-15)
        assert r_w == pytest.approx(H_FIG1 - 0.2, abs=1e-12)

    def test_outside_ball_is_unlimited(self, fig1):
        table = rate_functions_variable(fig1, 0.2, simplex_grid(2, 10))
        r_s, r_w = table.lookup((10, 0))
        assert r_w == math.inf and r_s == 0.0
        assert not table.feasible[table.divergences >= 0.2].any()

    def test_sum_is_type_entropy(self, fig1):
        grid = simplex_grid(2, 200)
        table = rate_functions_variable(fig1, 0.15, grid)
        f = table.feasible
        h = np.array([entropy(q) for q in grid.points[f]])
        np.testing.assert_allclose(table.r_s_values[f] + table.r_w_values[f], h, atol=1e-9)
        np.testing.assert_allclose(table.r_s_values[f], 0.15 - table.divergences[f], atol=1e-15)

    def test_uniform_is_constant(self):
        table = rate_functions_variable(_px_model([1 / 3] * 3), 0.1, simplex_grid(3, 12))
        np.testing.assert_allclose(table.r_w_values[table.feasible], math.log(3) - 0.1, atol=1e-12)

    def test_zero_e0_has_empty_feasible_set(self, fig1):
        assert not rate_functions_variable(fig1, 0.0, simplex_grid(2, 10)).feasible.any()

    def test_unknown_type(self, fig1):
        with pytest.raises(KeyError):
            rate_functions_variable(fig1, 0.1, simplex_grid(2, 10)).lookup((3, 3))

    def test_alphabet_mismatch(self, fig1):
        with pytest.raises(ValueError):
            rate_functions_variable(fig1, 0.1, simplex_grid(3, 4))


class TestPrivacy:
    def test_zero_budget(self, fig1):
        assert rw_star_privacy_fixed(fig1, 0.0) == 0.0

    def test_large_budget(self, fig1):
        assert rw_star_privacy_fixed(fig1, PrivacyBudget(100.0)) == pytest.approx(math.log(2), abs=1e-6)

    def test_dense_grid_oracle(self, fig1):
        ref = _privacy_grid_oracle([0.4, 0.6], 0.5)
        assert rw_star_privacy_fixed(fig1, 0.5) == pytest.approx(ref, abs=1e-7)

    def test_monotone_concave(self, fig1):
        h = np.linspace(0.0, 2.0, 81)
        v = np.array([rw_star_privacy_fixed(fig1, x) for x in h])
        assert np.all(np.diff(v) >= -1e-12)
        assert np.all(np.diff(v, 2) <= 1e-9)
        assert np.all(v <= np.minimum(h, math.log(2)) + 1e-12)

    def test_negative_budget(self, fig1):
        with pytest.raises(ValueError):
            rw_star_privacy_fixed(fig1, -0.1)

    def test_feasibility_examples(self, fig1):
        assert privacy_feasible_variable(fig1, H_FIG1, 0.0)
        assert not privacy_feasible_variable(fig1, 0.0, H_FIG1 - 0.01)
        assert privacy_feasible_variable(fig1, I_FIG1, H_COND_FIG1)

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 0.5), st.floats(0.0, 0.5))
    def test_feasibility_monotone(self, e0, h0, de, dh):
        m = SourceModel.from_matrix(FIG1)
        if privacy_feasible_variable(m, e0, h0):
            assert privacy_feasible_variable(m, e0 + de, h0 + dh)

    def test_combined_cap(self, fig1):
        assert rw_cap_combined(fig1, 0.0, 0.0) == 0.0
        assert rw_cap_combined(fig1, 0.1, 100.0) == pytest.approx(RW_STAR[0.1], abs=1e-9)
        expected = min(rw_star_tilt([0.4, 0.6], 0.1), _privacy_grid_oracle([0.4, 0.6], 0.3))
        assert rw_cap_combined(fig1, 0.1, 0.3) == pytest.approx(expected, abs=1e-7)
