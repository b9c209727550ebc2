import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import comb
from scipy.stats import entropy as sp_entropy

from bioexp.probability import (
    Alphabet,
    AlphabetMismatch,
    ConditionalPmf,
    JointPmf,
    ModelError,
    Pmf,
    SourceModel,
    composition_count,
    compositions,
    conditional_entropy,
    divergence,
    entropy,
    grid_resolution_for,
    load_model,
    model_from_dict,
    mutual_information,
    simplex_grid,
    weighted_divergence,
)

from _oracles import FIG1, naive_cond_entropy, naive_entropy, xlogy_sum

# frozen from scipy.stats.entropy on the Fig. 1 table
H_X = 0.6730116670092563
I_XY = 0.268853373113964
H_X_GIVEN_Y = 0.4041582938952926
D_HALF = 0.02041099726012756


def pmfs(k_min=2, k_max=5):
    return st.integers(k_min, k_max).flatmap(
        lambda k: st.lists(st.floats(0.0, 1.0), min_size=k, max_size=k)
        .filter(lambda v: sum(v) > 1e-3)
        .map(lambda v: np.array(v) / sum(v)))


def joints(max_side=4):
    return st.tuples(st.integers(1, max_side), st.integers(1, max_side)).flatmap(
        lambda s: st.lists(st.floats(0.0, 1.0), min_size=s[0] * s[1], max_size=s[0] * s[1])
        .filter(lambda v: sum(v) > 1e-3)
        .map(lambda v: (np.array(v) / sum(v)).reshape(s)))


class TestTypes:
    def test_alphabet_labels(self):
        a = Alphabet(3)
        assert a.size == 3 and len(a.labels) == 3
        with pytest.raises(ValueError):
            Alphabet(0)
        with pytest.raises(ValueError):
            Alphabet(2, ("a",))

    def test_pmf_validation(self):
        Pmf.from_probs([0.25, 0.75])
        with pytest.raises(ValueError):
            Pmf.from_probs([0.5, 0.6])
        with pytest.raises(ValueError):
            Pmf.from_probs([1.5, -0.5])

    def test_pmf_is_immutable(self):
        p = Pmf.from_probs([0.5, 0.5])
        with pytest.raises(ValueError):
            p.probs[0] = 1.0

    def test_tiny_negatives_clamped(self):
        p = Pmf.from_probs([1.0 + 1e-16, -1e-16])
        assert np.all(p.probs >= 0)

    def test_source_model_caches(self, fig1):
        np.testing.assert_allclose(fig1.px, [0.4, 0.6], atol=1e-12)
        np.testing.assert_allclose(fig1.p_y.probs, [0.38, 0.62], atol=1e-12)
        np.testing.assert_allclose(fig1.p_x_given_y.rows[0], [0.32 / 0.38, 0.06 / 0.38], atol=1e-12)
        np.testing.assert_allclose(fig1.p_y_given_x.rows[1], [0.1, 0.9], atol=1e-12)
        np.testing.assert_allclose(fig1.p_x_given_y.joint_with(fig1.p_y).T, FIG1, atol=1e-12)

    def test_degenerate_marginals_flagged(self):
        m = SourceModel.from_matrix([[0.5, 0.0], [0.5, 0.0]])
        assert m.degenerate_y.tolist() == [False, True]
        np.testing.assert_allclose(m.p_x_given_y.rows[1], [0.5, 0.5])

    def test_conditional_from_matrix(self):
        c = ConditionalPmf.from_matrix([[0.2, 0.8], [1.0, 0.0]])
        assert c.row(1).probs.tolist() == [1.0, 0.0]


class TestLoader:
    def test_round_trip(self, tmp_path, fig1):
        path = tmp_path / "m.json"
        path.write_text(json.dumps(fig1.to_json()))
        np.testing.assert_array_equal(load_model(path).pxy, fig1.pxy)

    def test_renormalizes_near_one(self, caplog):
        m = model_from_dict({"p_xy": [[0.5, 0.0], [0.0, 0.5 + 5e-7]]})
        assert abs(m.pxy.sum() - 1) < 1e-15
        assert "renormalizing" in caplog.text

    @pytest.mark.parametrize("data", [
        {"p_xy": [[0.5, 0.6]]},
        {"p_xy": [[-0.1, 1.1]]},
        {"p_xy": "nope"},
        {},
        {"p_xy": [[1.0]], "x_labels": ["a", "b"]},
    ])
    def test_rejects_bad_models(self, data):
        with pytest.raises(ModelError):
            model_from_dict(data)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelError):
            load_model(tmp_path / "absent.json")


class TestMeasures:
    def test_entropy_examples(self):
        assert entropy(Pmf.uniform(2)) == pytest.approx(math.log(2), abs=1e-15)
        assert entropy([1.0, 0.0]) == 0.0
        assert entropy([0.4, 0.6]) == pytest.approx(H_X, abs=1e-12)

    def test_divergence_examples(self):
        assert divergence([0.4, 0.6], [0.4, 0.6]) == 0.0
        assert divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
        assert divergence([0.5, 0.5], [0.4, 0.6]) == pytest.approx(D_HALF, abs=1e-10)

    def test_divergence_off_support_is_inf(self):
        assert divergence([0.5, 0.5], [1.0, 0.0]) == math.inf

    def test_alphabet_mismatch(self):
        with pytest.raises(AlphabetMismatch):
            divergence(Pmf.uniform(2), Pmf.uniform(3))

    def test_fig1_mutual_information(self):
        assert mutual_information(FIG1) == pytest.approx(I_XY, abs=1e-12)
        assert conditional_entropy(FIG1) == pytest.approx(H_X_GIVEN_Y, abs=1e-12)
        assert H_X - I_XY == pytest.approx(H_X_GIVEN_Y, abs=1e-12)

    def test_frozen_values_match_scipy(self):
        assert sp_entropy([0.4, 0.6]) == pytest.approx(H_X, abs=1e-15)
        assert sp_entropy([0.5, 0.5], [0.4, 0.6]) == pytest.approx(D_HALF, abs=1e-10)

    def test_product_has_zero_information(self):
        j = JointPmf.product(Pmf.from_probs([0.3, 0.7]), Pmf.from_probs([0.1, 0.2, 0.7]))
        assert mutual_information(j) == pytest.approx(0.0, abs=1e-15)

    def test_weighted_divergence_of_equal_channels(self, fig1):
        c = fig1.p_x_given_y
        assert weighted_divergence(c, c, Pmf.from_probs([0.9, 0.1])) == 0.0

    @given(pmfs())
    def test_entropy_matches_naive(self, p):
        assert entropy(p) == pytest.approx(naive_entropy(p), abs=1e-12)
        assert -1e-15 <= entropy(p) <= math.log(p.size) + 1e-12

    @given(pmfs(2, 4), st.data())
    def test_divergence_matches_naive_and_pinsker(self, q, data):
        p = data.draw(pmfs(q.size, q.size))
        d = divergence(q, p)
        assert d == pytest.approx(xlogy_sum(q, p), abs=1e-12) or math.isinf(d)
        tv = 0.5 * np.abs(q - p).sum()
        assert d >= 2 * tv ** 2 - 1e-12
        if np.max(np.abs(q - p)) > 1e-6:
            assert d > 0

    @given(joints())
    def test_conditional_entropy_matches_naive(self, q):
        assert conditional_entropy(q) == pytest.approx(naive_cond_entropy(q), abs=1e-12)

    @given(joints(3), st.data())
    def test_chain_rule(self, q, data):
        p = data.draw(joints(3).filter(lambda a: a.shape == q.shape))
        p = 0.9 * p + 0.1 / p.size
        qy, py = q.sum(axis=0), p.sum(axis=0)
        qj, pj = JointPmf.from_matrix(q.T), JointPmf.from_matrix(p.T)
        # rows of the transposed joints are indexed by y, so x_given_y is y_given_x here
        lhs = divergence(q.ravel(), p.ravel())
        rhs = divergence(qy, py) + weighted_divergence(
            qj.y_given_x(), pj.y_given_x(), Pmf.from_probs(qy))
        assert lhs == pytest.approx(rhs, abs=1e-10)


class TestGrids:
    def test_small_enumerations(self):
        pts = simplex_grid(2, 2).points
        np.testing.assert_allclose(pts, [[0, 1], [0.5, 0.5], [1, 0]])
        assert len(simplex_grid(2, 4)) == 5
        assert len(simplex_grid(3, 10)) == 66

    @pytest.mark.parametrize("m,k", [(1, 1), (5, 2), (7, 3), (6, 4), (3, 6)])
    def test_counts(self, m, k):
        c = compositions(m, k)
        assert c.shape == (int(comb(m + k - 1, k - 1)), k) == (composition_count(m, k), k)
        assert np.all(c.sum(axis=1) == m)
        assert len({tuple(r) for r in c.tolist()}) == c.shape[0]

    def test_deterministic_order(self):
        a = compositions(9, 3)
        np.testing.assert_array_equal(a, compositions(9, 3))
        keys = [tuple(r) for r in a.tolist()]
        assert keys == sorted(keys)

    def test_cap(self):
        with pytest.raises(OverflowError):
            simplex_grid(6, 200, cap=1000)

    def test_resolution_for_cap(self):
        m = grid_resolution_for(4, 10_000)
        assert composition_count(m, 4) <= 10_000 < composition_count(m + 1, 4)


class TestRandomBatches:
    """1,000-draw sweeps complementing the hypothesis properties."""

    def test_measures_match_naive(self, rng):
        for _ in range(1000):
            k = int(rng.integers(1, 7))
            p = rng.dirichlet(np.full(k, 0.5))
            q = rng.dirichlet(np.full(k, 0.5))
            assert entropy(p) == pytest.approx(naive_entropy(p), abs=1e-12)
            assert divergence(q, p) == pytest.approx(xlogy_sum(q, p), abs=1e-12)
            j = rng.dirichlet(np.ones(k * 3)).reshape(k, 3)
            assert conditional_entropy(j) == pytest.approx(naive_cond_entropy(j), abs=1e-12)

    def test_divergence_zero_iff_equal(self, rng):
        for _ in range(1000):
            p = rng.dirichlet(np.ones(int(rng.integers(2, 6))))
            assert divergence(p, p) == 0.0
            q = rng.dirichlet(np.ones(p.size))
            tv = 0.5 * np.abs(q - p).sum()
            assert divergence(q, p) >= 2 * tv ** 2 - 1e-12
            assert divergence(q, p) > 0

    def test_chain_rule(self, rng):
        for _ in range(1000):
            nx, ny = (int(v) for v in rng.integers(1, 5, size=2))
            q = rng.dirichlet(np.ones(nx * ny)).reshape(nx, ny)
            p = rng.dirichlet(np.ones(nx * ny)).reshape(nx, ny)
            qj, pj = JointPmf.from_matrix(q), JointPmf.from_matrix(p)
            rhs = divergence(q.sum(axis=0), p.sum(axis=0)) + weighted_divergence(
                qj.x_given_y(), pj.x_given_y(), qj.marginal_y())
            assert divergence(q, p) == pytest.approx(rhs, abs=1e-10)
