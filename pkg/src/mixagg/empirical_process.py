"""Search estimates of empirical-process suprema over the simplex and their closed-form bounds.

Both the centered log-likelihood gradient and the Rademacher average of the
ratio class are maxima over (l, sign) of functions of the form

    h_l(pi) = sum_i a_i Y[i, l] / (Y pi)_i + const,

so one multi-start projected ascent serves both.  The maximum of smooth
pieces is climbed along the gradient of the currently active piece; any
increase of that piece increases the maximum, so accepted steps are monotone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mixagg.bounds import OracleProblem
from mixagg.dictionary import Dictionary
from mixagg.sampling import SeedSpec, as_generator

METHODS = ("grid", "restart-search", "monte-carlo")


@dataclass
class ProcessEstimate:
    value: float
    method: str
    inner_trials: int
    is_lower_estimate: bool
    std_error: float | None = None
    argmax: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {"value": self.value, "method": self.method, "inner_trials": self.inner_trials,
                "is_lower_estimate": self.is_lower_estimate, "std_error": self.std_error}


def project_simplex_columns(P: np.ndarray) -> np.ndarray:
    """Project every column of ``P`` onto the probability simplex."""
    K, S = P.shape
    U = -np.sort(-P, axis=0)
    css = np.cumsum(U, axis=0) - 1.0
    idx = np.arange(1, K + 1)[:, None]
    cond = U - css / idx > 0
    rho = K - 1 - np.argmax(cond[::-1], axis=0)
    theta = css[rho, np.arange(S)] / (rho + 1.0)
    return np.maximum(P - theta[None, :], 0.0)


def _piece_values(Y, a, const, P):
    """Matrix (K x S) of h_l at each column of P, plus the mixtures Y P."""
    F = Y @ P
    return Y.T @ (a[:, None] / F) + const, F


def _ascend(Y, a, const, starts, iterations, tol=1e-12):
    """Maximize max_l |h_l| from each start; returns the best value and its argmax."""
    K, S = starts.shape
    P = starts.copy()
    H, F = _piece_values(Y, a, const, P)
    absH = np.abs(H)
    best = absH.max(axis=0)
    step = np.full(S, 0.1)
    cols = np.arange(S)
    for _ in range(iterations):
        active = absH.argmax(axis=0)
        sign = np.sign(H[active, cols])
        sign[sign == 0] = 1.0
        # d h_l / d pi_k = -sum_i a_i Y_il Y_ik / F_i^2
        R = (a[:, None] * Y[:, active]) / (F * F)
        G = -(Y.T @ R) * sign[None, :]
        cand = project_simplex_columns(P + step[None, :] * G)
        Hc, Fc = _piece_values(Y, a, const, cand)
        vc = np.abs(Hc).max(axis=0)
        ok = vc > best + tol * np.maximum(best, 1e-300)
        P[:, ok] = cand[:, ok]
        H[:, ok] = Hc[:, ok]
        F[:, ok] = Fc[:, ok]
        best[ok] = vc[ok]
        absH = np.abs(H)
        step = np.where(ok, np.minimum(step * 2.0, 1e6), step * 0.5)
        if np.all(step < 1e-12):
            break
    j = int(np.argmax(best))
    return float(best[j]), P[:, j].copy()


def _starts(K, restarts, rng):
    """Dirichlet(1) random starts plus the K vertices."""
    R = rng.dirichlet(np.ones(K), size=restarts).T if restarts > 0 else np.zeros((K, 0))
    return np.concatenate([np.eye(K), R], axis=1)


def zeta_sup(problem: OracleProblem, samples, restarts: int = 64, seed=None,
             iterations: int = 200) -> ProcessEstimate:
    """Search estimate of sup over the simplex of the sup-norm of the centered score.

    The l-th coordinate is E*[f_l / f_pi] - mean_i f_l(X_i) / f_pi(X_i); the
    expectation uses the Simpson rule against f*, normalized by its own
    quadrature mass so that it is exact on constants.
    """
    _, w, fstar, G = problem.grid()
    Z = problem.dictionary.evaluate(np.asarray(samples, dtype=float))
    n, K = Z.shape
    if K == 1:
        return ProcessEstimate(0.0, "restart-search", 1, True, argmax=np.ones(1))
    q = w * fstar
    q = q / q.sum()
    Y = np.vstack([G, Z])
    a = np.concatenate([q, np.full(n, -1.0 / n)])
    rng = as_generator(seed if seed is not None else SeedSpec(0, 0, "zeta"))
    value, arg = _ascend(Y, a, 0.0, _starts(K, restarts, rng), iterations)
    return ProcessEstimate(value, "restart-search", restarts + K, True, argmax=arg)


def zeta_on_segment(problem: OracleProblem, samples, step: float = 1e-3) -> ProcessEstimate:
    """Exhaustive grid evaluation for K = 2 on pi = (t, 1 - t)."""
    if problem.dictionary.K != 2:
        raise ValueError("segment grid search needs K = 2")
    _, w, fstar, G = problem.grid()
    Z = problem.dictionary.evaluate(np.asarray(samples, dtype=float))
    n = Z.shape[0]
    q = w * fstar
    q = q / q.sum()
    t = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    P = np.vstack([t, 1.0 - t])
    Y = np.vstack([G, Z])
    a = np.concatenate([q, np.full(n, -1.0 / n)])
    H, _ = _piece_values(Y, a, 0.0, P)
    vals = np.abs(H).max(axis=0)
    j = int(np.argmax(vals))
    return ProcessEstimate(float(vals[j]), "grid", t.shape[0], True, argmax=P[:, j])


def rademacher_complexity(samples, dictionary: Dictionary, sign_trials: int = 100,
                          restarts: int = 16, seed=None, iterations: int = 200) -> ProcessEstimate:
    """Monte-Carlo estimate of the Rademacher complexity of {f_l / f_pi - 1}.

    Each sign draw is maximized over (pi, l) by restarted search, so the
    average is a lower estimate of the expected supremum.
    """
    if sign_trials < 2:
        raise ValueError("need at least two sign trials for a standard error")
    Z = dictionary.evaluate(np.asarray(samples, dtype=float))
    n, K = Z.shape
    if K == 1:
        return ProcessEstimate(0.0, "monte-carlo", sign_trials, True, 0.0)
    seed = seed if seed is not None else SeedSpec(0, 0, "rademacher")
    sign_rng = as_generator(seed.child("signs") if isinstance(seed, SeedSpec) else seed)
    start_rng = as_generator(seed.child("starts") if isinstance(seed, SeedSpec) else seed)
    sups = np.empty(sign_trials)
    for t in range(sign_trials):
        eps = sign_rng.choice((-1.0, 1.0), size=n)
        sups[t], _ = _ascend(Z, eps / n, -float(eps.mean()), _starts(K, restarts, start_rng),
                             iterations)
    se = float(sups.std(ddof=1) / math.sqrt(sign_trials))
    return ProcessEstimate(float(sups.mean()), "monte-carlo", sign_trials, True, se)


def gram_sup_deviation(empirical, population) -> float:
    """Entrywise max |empirical - population|."""
    E = np.asarray(empirical, dtype=float)
    P = np.asarray(population, dtype=float)
    if E.shape != P.shape:
        raise ValueError(f"Gram matrices differ in shape: {E.shape} vs {P.shape}")
    return float(np.abs(E - P).max()) if E.size else 0.0


def hoeffding_max_bound(N: int, n: int, a: float, b: float, two_sided: bool = False) -> float:
    """Hoeffding plus union bound scale for the max of N averages of [a, b]-valued terms."""
    if not b > a:
        raise ValueError("need b > a")
    if N < 1 or n < 1:
        raise ValueError("need N >= 1 and n >= 1")
    count = 2 * N if two_sided else N
    return (b - a) * math.sqrt(math.log(count) / (2.0 * n))


def zeta_deviation_bound(V: float, K: int, n: int, delta: float) -> float:
    return 8.0 * V**3 * math.sqrt(math.log(K / delta) / n)


def zeta_mean_bound(V: float, K: int, n: int) -> float:
    return 4.0 * V**3 * math.sqrt(2.0 * math.log(2.0 * K * K) / n)


def rademacher_bound(V: float, K: int, n: int) -> float:
    return 4.0 * V**3 * math.sqrt(math.log(K) / n)


def gram_deviation_bound(M: float, K: int, n: int, delta: float) -> float:
    return M * M * math.sqrt(math.log(K * K / delta) / (2.0 * n))
