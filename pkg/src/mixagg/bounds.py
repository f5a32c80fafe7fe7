"""KL divergences by quadrature, oracle weights, and oracle-inequality right-hand sides."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from mixagg.dictionary import DEFAULT_NODES, Density, Dictionary, quadrature_grid
from mixagg.solver import SolverOptions, SolverResult, fit_mle

THEOREM_IDS = (
    "boundDeviation", "boundDevTwo", "boundDevThree", "boundDevFour",
    "boundExpOne", "boundExpTwo", "convOracle", "MSaggr", "Caggr", "Daggr",
    "elOne", "euclOne", "euclTwo", "upper", "boundDevFive", "boundDevSix",
)

# fields each right-hand side needs; "compatibility" is kappa, kappa-bar or the
# restricted eigenvalue depending on the bound
_REQUIRED = {
    "boundDeviation": ("n", "K", "delta", "V", "M", "bias", "J_size", "off_support_mass"),
    "boundDevTwo": ("n", "K", "delta", "V", "M", "bias", "J_size", "compatibility"),
    "boundDevThree": ("n", "K", "delta", "V", "M", "bias", "J_size", "off_support_mass"),
    "boundDevFour": ("n", "K", "delta", "V", "M", "bias", "J_size", "compatibility"),
    "boundExpOne": ("n", "K", "V", "M", "bias", "J_size", "off_support_mass"),
    "boundExpTwo": ("n", "K", "V", "M", "bias", "J_size", "compatibility"),
    "convOracle": ("n", "K", "delta", "V", "bias"),
    "MSaggr": ("n", "K", "V", "M", "bias", "compatibility"),
    "Caggr": ("n", "K", "V", "M", "bias", "compatibility"),
    "Daggr": ("n", "K", "V", "M", "bias", "D", "compatibility"),
    "elOne": ("n", "K", "delta", "V", "M", "J_size", "compatibility"),
    "euclOne": ("n", "K", "delta", "V", "M", "J_size", "compatibility"),
    "euclTwo": ("n", "K", "delta", "V", "M", "compatibility"),
    "upper": ("n", "K", "gamma", "D"),
    "boundDevFive": ("n", "K", "delta", "V", "M", "bias", "J_size", "compatibility"),
    "boundDevSix": ("n", "K", "delta", "V", "M", "bias", "J_size", "compatibility"),
}

_MIN_K = {"boundDeviation": 4, "boundDevTwo": 4, "convOracle": 4,
          "elOne": 4, "euclOne": 4, "euclTwo": 4,
          "boundDevFive": 2, "boundDevSix": 2}
_HAS_DELTA = {"boundDeviation", "boundDevTwo", "boundDevThree", "boundDevFour", "convOracle",
              "elOne", "euclOne", "euclTwo", "boundDevFive", "boundDevSix"}


def constant_caps(V: float, M: float) -> dict:
    """Upper bounds on the numerical constants of the oracle inequalities."""
    V3 = V**3
    M2 = M * M
    return {
        "c1": 32.0 * V3,
        "c2": 288.0 * M2 * V**6,
        "c3": 128.0 * M2 * V**6,
        "c4": 32.0 * V3 + 4.0,
        "c5": 4.5 * M2 * (8.0 * V3 + 1.0) ** 2,
        "c6": 2.0 * M2 * (8.0 * V3 + 1.0) ** 2,
        "c7": 20.0 * V3 + 8.0,
        "c8": M2 * (22.0 * V3 + 3.0) ** 2,
        "c9": M2 * (15.0 * V3 + 2.0) ** 2,
        "c10": M2 * (64.0 * V3 + 8.0),
        "c11": 4.0 * M2 * (8.0 * V3 + 1.0),
        "cbar": 128.0 * M2 * V**4,
    }


@dataclass(frozen=True, eq=False)
class OracleProblem:
    """A target density f* and a dictionary, integrated on a Simpson grid."""

    true_density: Density
    dictionary: Dictionary
    quadrature_nodes: int = DEFAULT_NODES

    def __post_init__(self):
        x, _ = quadrature_grid(self.quadrature_nodes)
        if float(self.true_density(x).min()) <= 0.0:
            raise ValueError("the true density must be bounded away from zero")

    def grid(self):
        x, w = quadrature_grid(self.quadrature_nodes)
        return x, w, self.true_density(x), self.dictionary.evaluate(x)

    def kl(self, weights) -> float:
        return kl_divergence(self.true_density, weights, self.dictionary, self.quadrature_nodes)


@dataclass
class BoundReport:
    theorem_id: str
    inputs: dict
    constant_cap: dict
    rhs_value: float
    flags: tuple = ()
    residual: float | None = None

    def to_dict(self) -> dict:
        return {"theorem_id": self.theorem_id, "inputs": dict(self.inputs),
                "constant_cap": dict(self.constant_cap), "rhs_value": self.rhs_value,
                "flags": list(self.flags), "residual": self.residual}


class Sandwich(NamedTuple):
    lower: float
    kl: float
    upper: float


def _values_on_grid(g, dictionary, x):
    if isinstance(g, Density):
        return g(x)
    if dictionary is None:
        raise ValueError("a dictionary is needed to evaluate a weight vector")
    return dictionary.evaluate(x) @ np.asarray(g, dtype=float)


def kl_divergence(f: Density, g, dictionary: Dictionary | None = None,
                  nodes: int = DEFAULT_NODES) -> float:
    """KL(f || g) by Simpson quadrature; ``g`` is a Density or a weight vector.

    Returns ``inf`` when g vanishes on the grid where f is positive.
    """
    x, w = quadrature_grid(nodes)
    fv = f(x)
    gv = _values_on_grid(g, dictionary, x)
    pos = fv > 0
    if np.any(gv[pos] <= 0):
        return math.inf
    integrand = np.zeros_like(fv)
    integrand[pos] = fv[pos] * np.log(fv[pos] / gv[pos])
    return float(w @ integrand)


def kl_quadratic_sandwich(pi, pi_prime, dictionary: Dictionary,
                          nodes: int = DEFAULT_NODES) -> Sandwich:
    """Quadratic lower and upper bounds around KL(f_pi || f_pi')."""
    if not dictionary.m > 0:
        raise ValueError("the sandwich needs a dictionary bounded away from zero")
    x, w = quadrature_grid(nodes)
    vals = dictionary.evaluate(x)
    fp = vals @ np.asarray(pi, dtype=float)
    fq = vals @ np.asarray(pi_prime, dtype=float)
    # the centered Gram form of pi' - pi equals the L2 distance of the mixtures
    q = float(w @ (fq - fp) ** 2)
    # both mixtures integrate to one, so KL = int fp (r - log(1 + r)) with r = fq/fp - 1,
    # a pointwise nonnegative form that keeps relative accuracy when the mixtures are close
    r = (fq - fp) / fp
    small = np.abs(r) < 1e-4
    gap = np.where(small, r * r * (0.5 - r / 3.0 + r * r / 4.0), r - np.log1p(np.where(small, 0.0, r)))
    kl = float(w @ (fp * gap))
    V, M, m = dictionary.V, dictionary.M, dictionary.m
    out = Sandwich(q / (2.0 * V * V * M), kl, V * V * q / (2.0 * m))
    slack = 1e-12 * max(1.0, abs(kl))
    if out.lower > kl + slack or kl > out.upper + slack:
        raise ArithmeticError(f"quadratic KL sandwich violated: {out}")
    return out


def oracle_weights(problem: OracleProblem, opts: SolverOptions | None = None) -> SolverResult:
    """Best mixture weights argmin KL(f* || f_pi), minimizing the cross-entropy on the grid.

    With ``opts.mu > 0`` the search is restricted to mixtures with f_pi >= mu
    on the grid, which is how dictionaries with vanishing components are handled.
    """
    opts = opts or SolverOptions()
    _, w, fstar, Z = problem.grid()
    c = w * fstar
    return fit_mle(Z, opts, sample_weights=c / c.sum())


def residual_term(true_density: Density, dictionary: Dictionary, weights, mu: float,
                  nodes: int = DEFAULT_NODES) -> float:
    """Integral of (log mu - log f_pi)_+ against f*; infinite if f_pi vanishes where f* > 0."""
    x, w = quadrature_grid(nodes)
    fs = true_density(x)
    fp = dictionary.evaluate(x) @ np.asarray(weights, dtype=float)
    pos = fs > 0
    if np.any(fp[pos] <= 0):
        return math.inf
    gap = np.zeros_like(fs)
    gap[pos] = np.maximum(math.log(mu) - np.log(fp[pos]), 0.0)
    return float(w @ (gap * fs))


def l2_pstar_distance(true_density: Density, dictionary: Dictionary, weights,
                      nodes: int = DEFAULT_NODES) -> float:
    """Squared L2(P*) distance between f* and the mixture with ``weights``."""
    x, w = quadrature_grid(nodes)
    fs = true_density(x)
    fp = dictionary.evaluate(x) @ np.asarray(weights, dtype=float)
    return float(w @ ((fs - fp) ** 2 * fs))


def _ratio(numerator, kappa):
    if numerator == 0:
        return 0.0
    return numerator / kappa if kappa > 0 else math.inf


def bound_rhs(theorem_id: str, inputs: dict) -> BoundReport:
    """Right-hand side of one oracle inequality or weight-error bound with capped constants."""
    if theorem_id not in THEOREM_IDS:
        raise ValueError(f"unknown theorem_id {theorem_id!r}")
    inputs = dict(inputs)
    J_size = inputs.get("J_size")
    for name in _REQUIRED[theorem_id]:
        if name == "compatibility" and J_size == 0:
            continue
        if inputs.get(name) is None:
            raise ValueError(f"{theorem_id}: missing input {name!r}")
    if theorem_id in ("boundDeviation", "boundDevThree", "boundExpOne") and J_size:
        if inputs.get("compatibility") is None:
            raise ValueError(f"{theorem_id}: missing input 'compatibility'")

    n = int(inputs["n"])
    K = int(inputs["K"])
    if n < 1 or K < 1:
        raise ValueError("n and K must be positive")
    flags = []
    if K < _MIN_K.get(theorem_id, 1):
        flags.append(f"K<{_MIN_K[theorem_id]}")
    delta = inputs.get("delta")
    if theorem_id in _HAS_DELTA and not 0 < delta < 0.5:
        flags.append("delta-outside-(0,1/2)")
    kappa = inputs.get("compatibility")
    if kappa is not None and kappa <= 0:
        flags.append("nonpositive-compatibility")

    V = inputs.get("V", 1.0)
    M = inputs.get("M", 1.0)
    caps = constant_caps(V, M)
    bias = max(float(inputs.get("bias", 0.0)), 0.0)
    logKd = math.log(K / delta) if delta else None
    logK = math.log(K)
    used = {}

    def cap(name):
        used[name] = caps[name]
        return caps[name]

    residual = None
    tid = theorem_id
    if tid in ("boundDeviation", "boundDevThree", "boundExpOne"):
        a, b = {"boundDeviation": ("c1", "c2"), "boundDevThree": ("c4", "c5"),
                "boundExpOne": ("c7", "c8")}[tid]
        L = logK if tid == "boundExpOne" else logKd
        off = 1.0 if J_size == 0 else float(inputs["off_support_mass"])
        rhs = bias + cap(a) * math.sqrt(L / n) * off
        if J_size:
            rhs += _ratio(cap(b) * J_size * L / n, kappa)
    elif tid in ("boundDevTwo", "boundDevFour", "boundExpTwo", "boundDevFive", "boundDevSix"):
        name = {"boundDevTwo": "c3", "boundDevFour": "c6", "boundExpTwo": "c9",
                "boundDevFive": "cbar", "boundDevSix": "cbar"}[tid]
        L = logK if tid == "boundExpTwo" else logKd
        rhs = bias + _ratio(cap(name) * J_size * L / n, kappa)
        if tid == "boundDevSix":
            rhs *= 2.0 * M * M
        if tid == "boundDevFive" and inputs.get("residual") is not None:
            residual = float(inputs["residual"])
    elif tid == "convOracle":
        rhs = bias + cap("c1") * math.sqrt(logKd / n)
    elif tid == "MSaggr":
        rhs = bias + _ratio(cap("c9") * logK / n, kappa)
    elif tid == "Caggr":
        rhs = bias + _ratio(cap("c9") * K * logK / n, kappa)
    elif tid == "Daggr":
        rhs = bias + _ratio(cap("c9") * int(inputs["D"]) * logK / n, kappa)
    elif tid == "elOne":
        rhs = _ratio(cap("c10") * J_size, kappa) * math.sqrt(logKd / n)
    elif tid == "euclOne":
        rhs = _ratio(cap("c11"), kappa) * math.sqrt(2.0 * J_size * logKd / n)
    elif tid == "euclTwo":
        rhs = _ratio(cap("c11"), kappa) * math.sqrt(2.0 * logKd / n)
    else:  # upper
        C = float(inputs.get("C", 1.0))
        gamma = float(inputs["gamma"])
        D = int(inputs["D"])
        sparse = math.sqrt(gamma * gamma * logK / n) + D * logK / n
        rhs = C * min(sparse, math.sqrt(logK / n))
        used["C"] = C
    return BoundReport(tid, inputs, used, float(max(rhs, 0.0)), tuple(flags), residual)


def weight_error_report(pi_hat, pi_star, n: int, K: int, delta: float, V: float, M: float,
                        kappa_bar: float | None = None, kappa_re: float | None = None,
                        support_tol: float = 1e-10) -> dict:
    """l1, l2 and squared-l2 weight errors, each next to its upper bound when the constant is given."""
    pi_hat = np.asarray(pi_hat, dtype=float)
    pi_star = np.asarray(pi_star, dtype=float)
    diff = pi_hat - pi_star
    J_size = int(np.count_nonzero(pi_star > support_tol))
    l1 = float(np.abs(diff).sum())
    l2 = float(np.sqrt(diff @ diff))
    base = {"n": n, "K": K, "delta": delta, "V": V, "M": M, "J_size": J_size}
    report = {"support_size": J_size, "l1_error": l1, "l2_error": l2, "l2_sq_error": l2 * l2,
              "l2_le_l1": l2 <= l1 + 1e-15,
              "l1_rhs": None, "l2_rhs": None, "l2_sq_rhs": None}
    if kappa_bar is not None:
        report["l1_rhs"] = bound_rhs("elOne", {**base, "compatibility": kappa_bar}).rhs_value
    if kappa_re is not None:
        report["l2_rhs"] = bound_rhs("euclOne", {**base, "compatibility": kappa_re}).rhs_value
        report["l2_sq_rhs"] = bound_rhs("euclTwo", {**base, "compatibility": kappa_re}).rhs_value
    return report
