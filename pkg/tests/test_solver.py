import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mixagg.bounds import kl_divergence
from mixagg.dictionary import make_dictionary, sine_density, sine_dictionary, tabulated_density
from mixagg.exceptions import DomainError, InfeasibleError
from mixagg.sampling import SeedSpec, sample_mixture
from mixagg.solver import (SolverOptions, bar_ell, fit_mle, fit_mle_surrogate, frank_wolfe_gap,
                           negative_log_likelihood, nll_gradient)


def random_instance(seed, K, n, alpha=0.5):
    rng = np.random.default_rng(seed)
    d = sine_dictionary(K)
    w = rng.dirichlet(np.full(K, alpha))
    x = sample_mixture(d, w, n, SeedSpec(seed, 0, "solver-test"))
    return d.evaluate(x)


class TestObjective:
    def test_all_ones(self):
        assert negative_log_likelihood(np.ones((5, 3)), [0.2, 0.3, 0.5]) == 0.0

    def test_single_point(self):
        Z = sine_dictionary(2).evaluate([0.25])
        assert negative_log_likelihood(Z, [1.0, 0.0]) == pytest.approx(-math.log(1.5), abs=1e-15)
        assert negative_log_likelihood(Z, [1.0, 0.0]) == pytest.approx(-0.405465, abs=1e-6)

    def test_scaled_weights_rejected(self):
        with pytest.raises(ValueError):
            negative_log_likelihood(np.ones((2, 2)), [1.0, 1.0])

    def test_nonpositive_mixture(self):
        Z = np.array([[0.0, 1.0], [1.0, 1.0]])
        with pytest.raises(DomainError):
            negative_log_likelihood(Z, [1.0, 0.0])
        with pytest.raises(DomainError):
            nll_gradient(Z, [1.0, 0.0])

    def test_gradient_all_ones(self):
        assert np.all(nll_gradient(np.ones((4, 3)), [0.5, 0.25, 0.25]) == -1.0)

    def test_gradient_single_component(self):
        Z = np.array([[0.5], [1.5], [1.1]])
        assert nll_gradient(Z, [1.0]) == pytest.approx([-1.0])

    @given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 60))
    def test_gradient_finite_difference(self, seed, K, n):
        rng = np.random.default_rng(seed)
        Z = rng.uniform(0.5, 1.5, size=(n, K))
        w = rng.dirichlet(np.ones(K))
        g = nll_gradient(Z, w)
        h = 1e-6
        for j in range(K):
            e = np.zeros(K)
            e[j] = h

            def L(v):
                return -np.mean(np.log(Z @ v))

            fd = (L(w + e) - L(w - e)) / (2 * h)
            assert abs(fd - g[j]) <= 1e-6


class TestBarEll:
    def test_continuity_at_threshold(self):
        mu = 0.3
        v, d = bar_ell(mu, mu)
        assert v == 0.0 and d == pytest.approx(-1 / mu)
        below = bar_ell(mu * (1 - 1e-9), mu)[1]
        above = bar_ell(mu * (1 + 1e-9), mu)[1]
        assert below == pytest.approx(-1 / mu, rel=1e-8) and above == pytest.approx(-1 / mu, rel=1e-8)

    def test_upper_branch(self):
        assert bar_ell(0.2, 0.1)[0] == pytest.approx(-math.log(2), abs=1e-15)

    def test_value_at_zero(self):
        assert bar_ell(0.0, 0.7)[0] == 1.5

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            bar_ell(-0.1, 0.5)
        with pytest.raises(ValueError):
            bar_ell(0.5, 0.0)

    @given(st.floats(0.01, 1.0), st.floats(1.0, 5.0), st.floats(1e-6, 1.0))
    def test_curvature_range(self, mu, M, frac):
        u = frac * M
        h = 1e-5 * max(u, mu)
        if abs(u - mu) < 2 * h or u - h <= 0:
            return
        second = (bar_ell(u + h, mu)[1] - bar_ell(u - h, mu)[1]) / (2 * h)
        assert M**-2 * (1 - 1e-4) <= second <= mu**-2 * (1 + 1e-4)

    @given(st.floats(0.01, 2.0), st.floats(0.0, 4.0))
    def test_derivative_matches_value(self, mu, u):
        h = 1e-6
        if u < h:
            return
        fd = (bar_ell(u + h, mu)[0] - bar_ell(u - h, mu)[0]) / (2 * h)
        assert fd == pytest.approx(bar_ell(u, mu)[1], rel=1e-5, abs=1e-5)


class TestFitMle:
    def test_single_component(self):
        res = fit_mle(np.array([[0.8], [1.2]]))
        assert res.weights.tolist() == [1.0] and res.certificate_gap == 0.0
        assert res.iterations == 1 and res.converged

    def test_identical_components(self):
        Z = random_instance(1, 1, 300)
        Z2 = np.hstack([Z, Z])
        res = fit_mle(Z2)
        assert abs(res.objective - negative_log_likelihood(Z2, [1.0, 0.0])) <= 1e-8

    def test_options_validation(self):
        with pytest.raises(ValueError):
            SolverOptions(gap_tolerance=0)
        with pytest.raises(ValueError):
            SolverOptions(max_iterations=0)
        with pytest.raises(ValueError):
            SolverOptions(method="newton")
        with pytest.raises(ValueError):
            SolverOptions(mu=-1)

    def test_zero_entry_without_mu(self):
        with pytest.raises(DomainError):
            fit_mle(np.array([[0.0, 1.0], [1.0, 1.0]]))

    def test_nonconvergence_is_reported(self):
        Z = random_instance(3, 16, 2000)
        res = fit_mle(Z, SolverOptions(max_iterations=2))
        assert not res.converged and res.iterations == 2
        assert res.certificate_gap > 1e-8

    @pytest.mark.parametrize("method", ["frank-wolfe", "mirror-descent"])
    def test_converged_certificate(self, method):
        Z = random_instance(4, 10, 1500)
        res = fit_mle(Z, SolverOptions(method=method))
        assert res.converged and -1e-12 <= res.certificate_gap <= 1e-8
        assert res.certificate_gap == pytest.approx(frank_wolfe_gap(Z, res.weights), abs=1e-12)
        assert res.weights.min() >= 0 and abs(res.weights.sum() - 1) <= 1e-12

    def test_trace_monotone_for_frank_wolfe(self):
        Z = random_instance(5, 12, 1000)
        res = fit_mle(Z, SolverOptions(record_trace=True))
        trace = np.asarray(res.trace)
        assert trace.size >= 2
        assert np.all(np.diff(trace) <= 1e-13)

    def test_json_serialization(self):
        Z = random_instance(6, 4, 200)
        res = fit_mle(Z, SolverOptions(record_trace=True))
        doc = json.loads(res.to_json(include_trace=True))
        assert doc["weights"] == pytest.approx(res.weights.tolist())
        assert len(doc["trace"]) == len(res.trace)
        assert "trace" not in json.loads(res.to_json())

    def test_tie_breaking_lowest_index(self):
        # all columns equal: the vertex start picks index 0 and nothing moves
        Z = np.tile(np.array([[0.9], [1.3], [1.1]]), (1, 4))
        res = fit_mle(Z)
        assert res.weights.tolist() == [1.0, 0.0, 0.0, 0.0]

    @given(st.integers(0, 2**31), st.integers(2, 20), st.integers(5, 400))
    def test_strong_convexity_descent(self, seed, K, n):
        Z = random_instance(seed, K, n)
        res = fit_mle(Z)
        M = 1.5
        rng = np.random.default_rng(seed + 1)
        for _ in range(20):
            pi = rng.dirichlet(np.ones(K))
            diff = Z @ (res.weights - pi)
            lower = negative_log_likelihood(Z, pi) - diff @ diff / (2 * M * M * n)
            assert res.objective <= lower + res.certificate_gap + 1e-12

    @given(st.integers(0, 2**31), st.integers(2, 16), st.integers(20, 500))
    def test_methods_agree(self, seed, K, n):
        Z = random_instance(seed, K, n)
        fw = fit_mle(Z)
        md = fit_mle(Z, SolverOptions(method="mirror-descent"))
        assert abs(fw.objective - md.objective) <= 1e-6

    def test_consistency_in_kl(self):
        # f* = 0.7 f_1 + 0.3 f_2, K = 16, n = 8000: KL(f* || f_hat) <= 0.01 in >= 45 of 50 runs
        d = sine_dictionary(16)
        w = np.zeros(16)
        w[:2] = [0.7, 0.3]
        truth = d.mixture(w)
        good = 0
        for rep in range(50):
            x = sample_mixture(d, w, 8000, SeedSpec(17, rep, "consistency"))
            res = fit_mle(d.evaluate(x))
            good += kl_divergence(truth, res.weights, d) <= 0.01
        assert good >= 45


class TestConstrained:
    def vanishing_instance(self, n=400, seed=0):
        d = sine_dictionary(4, amplitude=1.0)
        w = np.array([0.4, 0.3, 0.2, 0.1])
        x = sample_mixture(d, w, n, SeedSpec(seed, 0, "vanish"))
        return d.evaluate(x)

    def test_mu_below_min_is_unconstrained(self):
        Z = random_instance(7, 6, 300)
        a = fit_mle(Z)
        b = fit_mle(Z, SolverOptions(mu=0.1))
        assert np.allclose(a.weights, b.weights) and not b.active_constraint

    def test_feasible_and_certified(self):
        Z = self.vanishing_instance()
        res = fit_mle(Z, SolverOptions(mu=0.05))
        assert (Z @ res.weights).min() >= 0.05 * (1 - 1e-9)
        assert res.converged and res.certificate_gap <= 1e-8

    def test_binding_constraint_uses_polytope(self):
        # 99 points favour f_1, one sits near its zero; the free optimum t = 0.99 puts
        # that point at 0.0199, so mu = 0.5 binds and the optimum is where it equals 0.5
        Z = np.vstack([np.tile([2.0, 1.0], (99, 1)), [[0.01, 1.0]]])
        free = fit_mle(Z, SolverOptions(gap_tolerance=1e-12))
        assert free.weights[0] == pytest.approx(0.99, abs=1e-6)
        res = fit_mle(Z, SolverOptions(mu=0.5, gap_tolerance=1e-10))
        u = Z @ res.weights
        assert u.min() == pytest.approx(0.5, abs=1e-9) and res.active_constraint
        assert res.weights[0] == pytest.approx(0.5 / 0.99, abs=1e-9)
        assert res.converged

    def test_infeasible(self):
        Z = np.array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(InfeasibleError):
            fit_mle(Z, SolverOptions(mu=0.6))


class TestSurrogate:
    def test_matches_mle_when_bounded_below(self):
        Z = random_instance(8, 8, 600)
        mu = 0.3
        s = fit_mle_surrogate(Z, mu)
        m = fit_mle(Z)
        assert s.surrogate_exact and not s.active_constraint
        assert s.objective == pytest.approx(m.objective + math.log(mu), abs=1e-8)
        assert np.allclose(s.weights, m.weights, atol=1e-4)

    def test_mu_above_envelope(self):
        Z = random_instance(9, 6, 500)
        s = fit_mle_surrogate(Z, 5.0)
        assert s.converged and s.certificate_gap <= 1e-8
        assert not s.surrogate_exact and s.active_constraint

    def test_vanishing_on_subinterval(self):
        bump = tabulated_density([0, 0, 1, 2, 1, 0, 0], allow_zero=True)
        d = make_dictionary([bump, sine_density(1), sine_density(2)])
        x = sample_mixture(d, [0.5, 0.25, 0.25], 800, SeedSpec(10))
        Z = d.evaluate(x)
        s = fit_mle_surrogate(Z, 0.05)
        assert s.converged and s.certificate_gap <= 1e-8
        assert s.surrogate_exact == bool((Z @ s.weights).min() >= 0.05)

    def test_requires_positive_mu(self):
        with pytest.raises(ValueError):
            fit_mle_surrogate(np.ones((2, 2)), 0.0)

    @pytest.mark.parametrize("method", ["frank-wolfe", "mirror-descent"])
    def test_methods(self, method):
        Z = random_instance(11, 5, 300)
        s = fit_mle_surrogate(Z, 0.8, SolverOptions(method=method))
        assert s.converged


@given(hnp.arrays(float, st.tuples(st.integers(1, 30), st.integers(1, 8)),
                  elements=st.floats(0.05, 3.0)))
def test_simplex_feasibility(Z):
    res = fit_mle(Z)
    assert res.weights.min() >= 0
    assert abs(res.weights.sum() - 1) <= 1e-12
    assert res.certificate_gap >= -1e-12
    if res.converged:
        assert res.certificate_gap <= 1e-8
