import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixagg.bounds import (THEOREM_IDS, OracleProblem, bound_rhs, constant_caps, kl_divergence,
                           kl_quadratic_sandwich, l2_pstar_distance, oracle_weights, residual_term,
                           weight_error_report)
from mixagg.dictionary import sine_dictionary, tabulated_density
from mixagg.solver import SolverOptions, frank_wolfe_gap

# KL(f_1 || f_2) for the sine dictionary, from 30-digit adaptive quadrature
KL_F1_F2 = 0.133974596215561353


def base_inputs(**extra):
    doc = {"n": 4000, "K": 16, "delta": 0.05, "V": 3.0, "M": 1.5, "bias": 0.0, "J_size": 2,
           "off_support_mass": 0.1, "compatibility": 0.125, "D": 2, "gamma": 0.1}
    doc.update(extra)
    return doc


class TestKL:
    def test_self_divergence(self):
        d = sine_dictionary(4)
        f = d.mixture([0.1, 0.2, 0.3, 0.4])
        assert abs(kl_divergence(f, [0.1, 0.2, 0.3, 0.4], d)) <= 1e-10

    def test_against_fine_trapezoid(self):
        d = sine_dictionary(2)
        value = kl_divergence(d.components[0], [0.0, 1.0], d)
        x = np.linspace(0, 1, 1_000_001)
        f, g = d.components[0](x), d.components[1](x)
        oracle = np.trapezoid(f * np.log(f / g), x)
        assert value == pytest.approx(oracle, abs=1e-7)
        assert value == pytest.approx(KL_F1_F2, abs=1e-10)

    def test_density_argument(self):
        d = sine_dictionary(2)
        assert kl_divergence(d.components[0], d.components[1]) == pytest.approx(KL_F1_F2, abs=1e-10)

    def test_support_violation_is_infinite(self):
        d = sine_dictionary(2, amplitude=1.0)
        f = tabulated_density([1.0, 1.0])
        assert kl_divergence(f, [1.0, 0.0], d) == math.inf

    def test_weights_need_dictionary(self):
        with pytest.raises(ValueError):
            kl_divergence(tabulated_density([1, 1]), [1.0])

    @given(st.integers(0, 10**6), st.integers(1, 10))
    def test_gibbs(self, seed, K):
        rng = np.random.default_rng(seed)
        d = sine_dictionary(K)
        f = d.mixture(rng.dirichlet(np.ones(K)))
        assert kl_divergence(f, rng.dirichlet(np.ones(K)), d) >= -1e-10


class TestSandwich:
    def test_equal_weights(self):
        d = sine_dictionary(3)
        s = kl_quadratic_sandwich([0.2, 0.3, 0.5], [0.2, 0.3, 0.5], d)
        assert s == (0.0, 0.0, 0.0)

    def test_middle_is_kl(self):
        d = sine_dictionary(2)
        s = kl_quadratic_sandwich([1.0, 0.0], [0.0, 1.0], d)
        assert s.kl == pytest.approx(kl_divergence(d.components[0], [0.0, 1.0], d), abs=1e-14)
        assert s.lower <= s.kl <= s.upper

    def test_quadratic_form_uses_lebesgue_gram(self):
        # ||Sigma^{1/2}(pi' - pi)||^2 = |pi' - pi|^2 / 8 for the sine dictionary
        d = sine_dictionary(2)
        s = kl_quadratic_sandwich([1.0, 0.0], [0.0, 1.0], d)
        q = 2 / 8
        assert s.lower == pytest.approx(q / (2 * 9 * 1.5), rel=1e-12)
        assert s.upper == pytest.approx(9 * q / (2 * 0.5), rel=1e-12)

    def test_needs_positive_lower_bound(self):
        with pytest.raises(ValueError):
            kl_quadratic_sandwich([1, 0], [0, 1], sine_dictionary(2, amplitude=1.0))

    @given(st.integers(0, 10**6), st.integers(1, 12))
    def test_holds_on_random_pairs(self, seed, K):
        rng = np.random.default_rng(seed)
        d = sine_dictionary(K)
        s = kl_quadratic_sandwich(rng.dirichlet(np.ones(K)), rng.dirichlet(np.ones(K)), d)
        assert s.lower <= s.kl <= s.upper


class TestOracleWeights:
    def test_realizable_vertex(self):
        d = sine_dictionary(5)
        prob = OracleProblem(d.components[0], d)
        res = oracle_weights(prob)
        assert res.weights[0] == pytest.approx(1.0, abs=1e-6)
        assert prob.kl(res.weights) <= 1e-8

    def test_well_specified(self):
        d = sine_dictionary(6)
        w = np.array([0.5, 0.0, 0.3, 0.0, 0.2, 0.0])
        prob = OracleProblem(d.mixture(w), d)
        assert prob.kl(oracle_weights(prob).weights) <= 1e-8

    def test_triangle_outside_span(self):
        d = sine_dictionary(8)
        prob = OracleProblem(tabulated_density([1, 2, 1]), d)
        res = oracle_weights(prob)
        assert prob.kl(res.weights) > 0
        _, w, fstar, Z = prob.grid()
        c = w * fstar
        assert frank_wolfe_gap(Z, res.weights, c / c.sum()) <= 1e-8
        assert res.certificate_gap <= 1e-8

    def test_truth_must_be_positive(self):
        d = sine_dictionary(2, amplitude=1.0)
        with pytest.raises(ValueError):
            OracleProblem(d.components[0], d)

    def test_constrained_oracle(self):
        d = sine_dictionary(4, amplitude=1.0)
        truth = d.mixture([0.25, 0.25, 0.25, 0.25])
        prob = OracleProblem(truth, d, 1025)
        res = oracle_weights(prob, SolverOptions(mu=0.05))
        _, _, _, Z = prob.grid()
        assert (Z @ res.weights).min() >= 0.05 * (1 - 1e-9)


class TestBoundRhs:
    def test_cap_at_v3(self):
        assert constant_caps(3.0, 1.5)["c1"] == 864.0
        caps = constant_caps(3.0, 1.5)
        assert caps["cbar"] == 128 * 2.25 * 81
        assert caps["c4"] == 868.0

    def test_report_records_cap(self):
        r = bound_rhs("boundDeviation", base_inputs())
        assert r.constant_cap["c1"] == 864.0 and r.constant_cap["c2"] == 288 * 2.25 * 729

    def test_empty_support_reduces(self):
        r = bound_rhs("boundDeviation", base_inputs(J_size=0, bias=0.2, compatibility=None))
        assert r.rhs_value == pytest.approx(0.2 + 864 * math.sqrt(math.log(16 / 0.05) / 4000), rel=1e-14)
        conv = bound_rhs("convOracle", base_inputs(bias=0.2))
        assert conv.rhs_value == pytest.approx(r.rhs_value, rel=1e-14)

    def test_dev_two_hand_arithmetic(self):
        r = bound_rhs("boundDevTwo", base_inputs(bias=0.01))
        assert r.rhs_value == pytest.approx(0.01 + 4844.282118835576, rel=1e-13)

    @pytest.mark.parametrize("tid", THEOREM_IDS)
    def test_every_id_evaluates_nonnegative(self, tid):
        r = bound_rhs(tid, base_inputs())
        assert r.rhs_value >= 0 and r.theorem_id == tid

    @pytest.mark.parametrize("tid", THEOREM_IDS)
    def test_missing_input_named(self, tid):
        inputs = base_inputs()
        inputs.pop("n")
        with pytest.raises(ValueError, match="'n'"):
            bound_rhs(tid, inputs)

    def test_missing_compatibility(self):
        inputs = base_inputs()
        inputs.pop("compatibility")
        with pytest.raises(ValueError, match="compatibility"):
            bound_rhs("boundDevTwo", inputs)

    def test_unknown_id(self):
        with pytest.raises(ValueError):
            bound_rhs("nope", base_inputs())

    def test_flags(self):
        assert "delta-outside-(0,1/2)" in bound_rhs("boundDevTwo", base_inputs(delta=0.7)).flags
        assert "K<4" in bound_rhs("boundDevTwo", base_inputs(K=3)).flags
        assert "K<2" in bound_rhs("boundDevFive", base_inputs(K=1)).flags
        assert bound_rhs("boundDevTwo", base_inputs()).flags == ()

    def test_dev_six_is_scaled_dev_five(self):
        five = bound_rhs("boundDevFive", base_inputs(bias=0.02)).rhs_value
        six = bound_rhs("boundDevSix", base_inputs(bias=0.02)).rhs_value
        assert six == pytest.approx(2 * 1.5**2 * five, rel=1e-14)

    def test_residual_reported_separately(self):
        r = bound_rhs("boundDevFive", base_inputs(residual=0.3))
        assert r.residual == 0.3
        assert r.rhs_value == bound_rhs("boundDevFive", base_inputs()).rhs_value

    @given(st.sampled_from(THEOREM_IDS), st.integers(1, 10), st.integers(10, 10**6),
           st.floats(1e-4, 0.49))
    def test_monotone(self, tid, J, n, delta):
        f = lambda **kw: bound_rhs(tid, base_inputs(**{"J_size": J, "n": n, "delta": delta, **kw})).rhs_value
        here = f()
        assert f(J_size=J + 1) >= here * (1 - 1e-12)
        assert f(n=2 * n) <= here * (1 + 1e-12)
        assert f(delta=delta / 2) >= here * (1 - 1e-12)

    def test_upper_matches_minimax_form(self):
        n, K, g, D = 10_000, 64, 0.1, 2
        r = bound_rhs("upper", {"n": n, "K": K, "gamma": g, "D": D})
        expect = min(math.sqrt(g * g * math.log(K) / n) + D * math.log(K) / n, math.sqrt(math.log(K) / n))
        assert r.rhs_value == pytest.approx(expect, rel=1e-14)


class TestResidualAndDistances:
    def test_residual_zero_when_above_threshold(self):
        d = sine_dictionary(3)
        truth = d.mixture([0.3, 0.3, 0.4])
        assert residual_term(truth, d, [0.3, 0.3, 0.4], 0.1) == 0.0

    def test_residual_positive_below_threshold(self):
        truth = tabulated_density([1, 1])
        r = residual_term(truth, sine_dictionary(1, amplitude=0.9), [1.0], 0.5)
        assert 0 < r < math.inf
        # the grid contains x = 3/4 where the full-amplitude component vanishes
        assert residual_term(truth, sine_dictionary(1, amplitude=1.0), [1.0], 0.5, nodes=5) == math.inf

    def test_l2_distance(self):
        d = sine_dictionary(2)
        assert l2_pstar_distance(d.components[0], d, [1.0, 0.0]) == pytest.approx(0.0, abs=1e-15)
        # int (f_1 - f_2)^2 f_1 = int (sin a - sin b)^2 / 4 * (1 + sin a / 2) = 1/4 by orthogonality
        assert l2_pstar_distance(d.components[0], d, [0.0, 1.0]) == pytest.approx(0.25, abs=1e-10)


class TestWeightErrors:
    def test_zero_error(self):
        rep = weight_error_report([0.5, 0.5, 0], [0.5, 0.5, 0], 1000, 4, 0.05, 3.0, 1.5, 0.125, 0.125)
        assert rep["l1_error"] == rep["l2_error"] == rep["l2_sq_error"] == 0.0
        assert rep["support_size"] == 2 and rep["l2_le_l1"]

    @given(st.integers(0, 10**6), st.integers(2, 20))
    def test_norm_inequality(self, seed, K):
        rng = np.random.default_rng(seed)
        rep = weight_error_report(rng.dirichlet(np.ones(K)), rng.dirichlet(np.ones(K)), 500, K, 0.05,
                                  3.0, 1.5, 0.1, 0.1)
        assert rep["l2_le_l1"] and rep["l2_error"] <= rep["l1_error"] + 1e-15
        assert rep["l1_rhs"] > 0 and rep["l2_rhs"] > 0 and rep["l2_sq_rhs"] > 0

    def test_rhs_omitted_without_constants(self):
        rep = weight_error_report([1, 0], [0, 1], 100, 2, 0.05, 3.0, 1.5)
        assert rep["l1_rhs"] is None and rep["l2_rhs"] is None
