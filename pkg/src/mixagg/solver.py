"""Maximum likelihood mixture weights over the simplex.

The objective is ``L(pi) = sum_i c_i * loss(Z_i . pi)`` with ``c_i = 1/n`` for a
sample (the negative log-likelihood) or quadrature weights for population
objectives. Two first-order methods are available and share one optimality
certificate, the Frank-Wolfe gap ``g.pi - min_j g_j`` over the feasible set.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from mixagg.exceptions import DomainError, InfeasibleError

log = logging.getLogger(__name__)

METHODS = ("frank-wolfe", "mirror-descent")


@dataclass(frozen=True)
class SolverOptions:
    method: str = "frank-wolfe"
    gap_tolerance: float = 1e-8
    max_iterations: int = 50000
    mu: float = 0.0
    line_search_tolerance: float = 1e-12
    record_trace: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.gap_tolerance > 0:
            raise ValueError("gap_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")


@dataclass
class SolverResult:
    weights: np.ndarray
    objective: float
    certificate_gap: float
    iterations: int
    converged: bool
    active_constraint: bool = False
    method: str = "frank-wolfe"
    surrogate_exact: bool | None = None
    trace: list | None = field(default=None, repr=False)

    def to_dict(self, include_trace: bool = False) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.tolist()
        if not include_trace:
            d.pop("trace")
        return d

    def to_json(self, include_trace: bool = False) -> str:
        return json.dumps(self.to_dict(include_trace))


# -- losses --------------------------------------------------------------------

class _NegLog:
    def value(self, u):
        with np.errstate(divide="ignore"):
            return -np.log(u)

    def d1(self, u):
        return -1.0 / u

    def d2(self, u):
        return 1.0 / (u * u)


class _BarEll:
    def __init__(self, mu: float):
        self.mu = mu

    def value(self, u):
        return bar_ell(u, self.mu)[0]

    def d1(self, u):
        return bar_ell(u, self.mu)[1]

    def d2(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u >= self.mu, 1.0 / np.maximum(u, self.mu) ** 2, 1.0 / self.mu**2)


def bar_ell(u, mu: float):
    """Quadratic extension of -log(u/mu) below ``mu``; returns (value, derivative).

    ``-log(u/mu)`` for ``u >= mu`` and ``r + r**2/2`` with ``r = 1 - u/mu``
    below it. Both branches agree to second order at ``u = mu``; the value at
    ``u = 0`` is 3/2.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("bar_ell is undefined for negative u")
    upper = u >= mu
    r = 1.0 - u / mu
    safe = np.where(upper, u, mu)
    value = np.where(upper, -np.log(safe / mu), r + 0.5 * r * r)
    deriv = np.where(upper, -1.0 / safe, -(1.0 + r) / mu)
    if value.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


# -- public objective helpers ------------------------------------------------------

def _check_weights(weights, K: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (K,):
        raise ValueError(f"weights must have shape ({K},)")
    if w.min() < -1e-12 or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must lie on the simplex (no renormalization is done)")
    return w


def _positive_mix(Z, weights) -> np.ndarray:
    u = np.asarray(Z, dtype=float) @ np.asarray(weights, dtype=float)
    if np.any(u <= 0):
        raise DomainError("Z_i . pi must be strictly positive for every i")
    return u


def negative_log_likelihood(Z, weights) -> float:
    """L_n(pi) = -(1/n) sum_i log(Z_i . pi) for ``pi`` on the simplex."""
    Z = np.asarray(Z, dtype=float)
    w = _check_weights(weights, Z.shape[1])
    return float(-np.mean(np.log(_positive_mix(Z, w))))


def nll_gradient(Z, weights) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    u = _positive_mix(Z, weights)
    return -(Z.T @ (1.0 / u)) / Z.shape[0]


# -- line search -----------------------------------------------------------------

def _line_search(loss, c, u, du, tmax, tol):
    """Exact minimizer of t -> sum c * loss(u + t du) on [0, tmax] (convex in t)."""

    def slope(t):
        return float(c @ (loss.d1(u + t * du) * du))

    if slope(tmax) <= 0.0:
        return tmax
    lo, hi = 0.0, tmax
    t = 0.5 * tmax
    for _ in range(200):
        v = u + t * du
        s = float(c @ (loss.d1(v) * du))
        if s > 0:
            hi = t
        else:
            lo = t
        if hi - lo <= tol * tmax:
            break
        curv = float(c @ (loss.d2(v) * du * du))
        t_new = t - s / curv if curv > 0 else 0.5 * (lo + hi)
        if not lo < t_new < hi:
            t_new = 0.5 * (lo + hi)
        t = t_new
    return lo


def _lowest_argmin(g):
    return int(np.flatnonzero(g == g.min())[0])


# -- simplex: away-step Frank-Wolfe ------------------------------------------------

def _afw_simplex(Z, c, loss, opts, x0):
    x = x0.copy()
    u = Z @ x
    trace = [] if opts.record_trace else None
    gap = np.inf
    it = 0
    converged = False
    for it in range(1, opts.max_iterations + 1):
        if it % 200 == 0:
            x /= x.sum()
            u = Z @ x
        g = Z.T @ (c * loss.d1(u))
        s = _lowest_argmin(g)
        gx = float(g @ x)
        gap = gx - float(g[s])
        if trace is not None:
            trace.append(float(c @ loss.value(u)))
        if gap <= opts.gap_tolerance:
            converged = True
            break
        active = np.flatnonzero(x > 0)
        ga = g[active]
        a = int(active[np.flatnonzero(ga == ga.max())[0]])
        away_gap = float(g[a]) - gx
        if gap >= away_gap or x[a] >= 1.0:
            du = Z[:, s] - u
            t = _line_search(loss, c, u, du, 1.0, opts.line_search_tolerance)
            x *= 1.0 - t
            x[s] += t
        else:
            tmax = x[a] / (1.0 - x[a])
            du = u - Z[:, a]
            t = _line_search(loss, c, u, du, tmax, opts.line_search_tolerance)
            x *= 1.0 + t
            x[a] -= t
            if t >= tmax:
                x[a] = 0.0
        np.clip(x, 0.0, None, out=x)
        u = u + t * du
    x /= x.sum()
    u = Z @ x
    g = Z.T @ (c * loss.d1(u))
    gap = max(float(g @ x - g.min()), 0.0)
    return x, float(c @ loss.value(u)), gap, it, gap <= opts.gap_tolerance or converged, trace


# -- simplex: entropic mirror descent ----------------------------------------------

def _mirror_descent(Z, c, loss, opts, x0):
    logx = np.log(np.clip(x0, 1e-300, None))
    logx -= logsumexp(logx)
    x = np.exp(logx)
    u = Z @ x
    f = float(c @ loss.value(u))
    zmax, zmin = float(Z.max()), float(Z.min())
    V = zmax / zmin if zmin > 0 else 1.0
    eta = 1.0 / (V * V)
    trace = [] if opts.record_trace else None
    converged = False
    it = 0
    gap = np.inf
    for it in range(1, opts.max_iterations + 1):
        g = Z.T @ (c * loss.d1(u))
        gap = float(g @ x - g.min())
        if trace is not None:
            trace.append(f)
        if gap <= opts.gap_tolerance:
            converged = True
            break
        while True:
            cand = logx - eta * (g - g.min())
            cand -= logsumexp(cand)
            xn = np.exp(cand)
            un = Z @ xn
            if np.all(un > 0):
                fn = float(c @ loss.value(un))
                # Bregman (KL) descent condition
                kl = float(xn @ (cand - logx))
                if fn <= f + float(g @ (xn - x)) + kl / eta + 1e-15 * abs(f):
                    break
            eta *= 0.5
            if eta < 1e-300:
                break
        if fn > f:
            break
        logx, x, u, f = cand, xn, un, fn
        eta = min(eta * 2.0, 1e12)
    g = Z.T @ (c * loss.d1(u))
    gap = max(float(g @ x - g.min()), 0.0)
    return x, f, gap, it, gap <= opts.gap_tolerance or converged, trace


# -- constrained set {pi : Z pi >= mu}: away-step FW with an LP oracle --------------

def _lp_oracle(g, Z, mu):
    K = Z.shape[1]
    res = linprog(g, A_ub=-Z, b_ub=-mu * np.ones(Z.shape[0]),
                  A_eq=np.ones((1, K)), b_eq=[1.0], bounds=(0, None), method="highs")
    if res.status != 0:
        raise InfeasibleError(f"linear oracle failed: {res.message}")
    s = np.clip(res.x, 0.0, None)
    return s / s.sum()


def _feasible_start(Z, mu):
    col_min = Z.min(axis=0)
    j = int(np.argmax(col_min))
    if col_min[j] >= mu:
        x = np.zeros(Z.shape[1])
        x[j] = 1.0
        return x
    # maximize t subject to Z pi >= t on the simplex
    n, K = Z.shape
    cost = np.zeros(K + 1)
    cost[-1] = -1.0
    A = np.hstack([-Z, np.ones((n, 1))])
    A_eq = np.hstack([np.ones((1, K)), np.zeros((1, 1))])
    bounds = [(0, None)] * K + [(None, None)]
    res = linprog(cost, A_ub=A, b_ub=np.zeros(n), A_eq=A_eq, b_eq=[1.0], bounds=bounds,
                  method="highs")
    if res.status != 0 or -res.fun < mu * (1 - 1e-12):
        best = -res.fun if res.status == 0 else float("nan")
        raise InfeasibleError(f"no simplex point has min_i Z_i.pi >= mu={mu} (best {best})")
    x = np.clip(res.x[:K], 0.0, None)
    return x / x.sum()


def _afw_polytope(Z, c, loss, opts, x0):
    vertices = [x0.copy()]
    vu = [Z @ x0]
    alpha = [1.0]
    x = x0.copy()
    u = vu[0].copy()
    trace = [] if opts.record_trace else None
    converged = False
    gap = np.inf
    it = 0
    for it in range(1, opts.max_iterations + 1):
        g = Z.T @ (c * loss.d1(u))
        s = _lp_oracle(g, Z, opts.mu)
        gx = float(g @ x)
        gap = gx - float(g @ s)
        if trace is not None:
            trace.append(float(c @ loss.value(u)))
        if gap <= opts.gap_tolerance:
            converged = True
            break
        scores = [float(g @ v) for v in vertices]
        a = int(np.argmax(scores))
        away_gap = scores[a] - gx
        if gap >= away_gap or alpha[a] >= 1.0:
            su = Z @ s
            du = su - u
            t = _line_search(loss, c, u, du, 1.0, opts.line_search_tolerance)
            alpha = [w * (1 - t) for w in alpha]
            for i, v in enumerate(vertices):
                if np.allclose(v, s, atol=1e-14, rtol=0):
                    alpha[i] += t
                    break
            else:
                vertices.append(s)
                vu.append(su)
                alpha.append(t)
            x = (1 - t) * x + t * s
        else:
            tmax = alpha[a] / (1.0 - alpha[a])
            du = u - vu[a]
            t = _line_search(loss, c, u, du, tmax, opts.line_search_tolerance)
            alpha = [w * (1 + t) for w in alpha]
            alpha[a] -= t
            x = (1 + t) * x - t * vertices[a]
        keep = [i for i, w in enumerate(alpha) if w > 1e-15]
        vertices = [vertices[i] for i in keep]
        vu = [vu[i] for i in keep]
        alpha = [alpha[i] for i in keep]
        total = sum(alpha)
        alpha = [w / total for w in alpha]
        x = np.clip(x, 0.0, None)
        x /= x.sum()
        u = Z @ x
    g = Z.T @ (c * loss.d1(u))
    gap = max(float(g @ x) - float(g @ _lp_oracle(g, Z, opts.mu)), 0.0)
    return x, float(c @ loss.value(u)), gap, it, gap <= opts.gap_tolerance or converged, trace


# -- entry points --------------------------------------------------------------------

def _sample_weights(n, sample_weights):
    if sample_weights is None:
        return np.full(n, 1.0 / n)
    c = np.asarray(sample_weights, dtype=float)
    if c.shape != (n,) or c.min() < 0:
        raise ValueError("sample_weights must be n nonnegative values")
    return c


def _solve(Z, c, loss, opts, x0, constrained):
    if constrained:
        if opts.method != "frank-wolfe":
            log.info("mu-constraint binds possibly; using frank-wolfe with an LP oracle")
        return _afw_polytope(Z, c, loss, opts, x0)
    if opts.method == "mirror-descent":
        return _mirror_descent(Z, c, loss, opts, x0)
    return _afw_simplex(Z, c, loss, opts, x0)


def _default_start(Z, c, loss):
    K = Z.shape[1]
    vertex_values = [float(c @ loss.value(Z[:, j])) for j in range(K)]
    x = np.zeros(K)
    x[int(np.argmin(vertex_values))] = 1.0
    return x


def fit_mle(Z, opts: SolverOptions | None = None, sample_weights=None, start=None) -> SolverResult:
    """Minimize the (weighted) negative log-likelihood over the simplex.

    With ``opts.mu > 0`` the feasible set is ``{pi : Z pi >= mu}``; when
    ``mu <= min Z`` this is the whole simplex and the unconstrained path runs.
    """
    opts = opts or SolverOptions()
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[0] < 1 or Z.shape[1] < 1:
        raise ValueError("Z must be a nonempty n x K matrix")
    n, K = Z.shape
    c = _sample_weights(n, sample_weights)
    loss = _NegLog()
    zmin = float(Z.min())
    constrained = opts.mu > 0 and opts.mu > zmin
    if not constrained and zmin <= 0:
        raise DomainError("with mu = 0 every entry of Z must be positive")
    if constrained:
        x0 = None if start is None else np.asarray(start, dtype=float)
    elif start is not None:
        x0 = _check_weights(start, K).copy()
    elif opts.method == "mirror-descent":
        x0 = np.full(K, 1.0 / K)
    else:
        x0 = _default_start(Z, c, loss)
    if K == 1:
        x = np.ones(1)
        u = Z[:, 0]
        return SolverResult(x, float(c @ loss.value(u)), 0.0, 1, True,
                            bool(opts.mu > 0 and u.min() <= opts.mu), opts.method,
                            trace=[float(c @ loss.value(u))] if opts.record_trace else None)
    if constrained and zmin > 0 and start is None:
        # The simplex optimum solves the smaller problem whenever it is feasible
        # there, and its simplex gap bounds the constrained gap.
        free = _solve(Z, c, loss, opts, _default_start(Z, c, loss), False)
        if free[4] and float((Z @ free[0]).min()) >= opts.mu:
            x, f, gap, it, conv, trace = free
            return SolverResult(x, f, gap, it, True,
                                bool(float((Z @ x).min()) <= opts.mu * (1 + 1e-9)),
                                "frank-wolfe", trace=trace)
    if x0 is None:
        x0 = _feasible_start(Z, opts.mu)
    x, f, gap, it, conv, trace = _solve(Z, c, loss, opts, x0, constrained)
    active = bool(opts.mu > 0 and float((Z @ x).min()) <= opts.mu * (1 + 1e-9))
    return SolverResult(x, f, gap, it, bool(conv), active,
                        "frank-wolfe" if constrained else opts.method, trace=trace)


def fit_mle_surrogate(Z, mu: float, opts: SolverOptions | None = None,
                      sample_weights=None) -> SolverResult:
    """Minimize (1/n) sum_i bar_ell(Z_i . pi, mu) over the full simplex.

    ``surrogate_exact`` reports whether ``min_i Z_i . pi >= mu`` at the
    solution, in which case surrogate and log-likelihood objectives coincide
    there up to the constant ``log mu``. ``active_constraint`` is its negation.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    opts = opts or SolverOptions()
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.min() < 0:
        raise ValueError("Z must be an n x K matrix of nonnegative values")
    n, K = Z.shape
    c = _sample_weights(n, sample_weights)
    loss = _BarEll(mu)
    if opts.method == "mirror-descent":
        x0 = np.full(K, 1.0 / K)
    else:
        x0 = _default_start(Z, c, loss)
    x, f, gap, it, conv, trace = _solve(Z, c, loss, opts, x0, constrained=False)
    exact = bool(float((Z @ x).min()) >= mu)
    return SolverResult(x, f, gap, it, bool(conv), not exact, opts.method, exact, trace)


def frank_wolfe_gap(Z, weights, sample_weights=None) -> float:
    """Simplex Frank-Wolfe gap of the (weighted) negative log-likelihood at ``weights``."""
    Z = np.asarray(Z, dtype=float)
    c = _sample_weights(Z.shape[0], sample_weights)
    w = np.asarray(weights, dtype=float)
    g = -(Z.T @ (c / _positive_mix(Z, w)))
    return max(float(g @ w - g.min()), 0.0)
