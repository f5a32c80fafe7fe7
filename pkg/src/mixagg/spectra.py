"""Compatibility constants, restricted eigenvalues and principal-minor spectra.

For a fixed sign pattern on the support J the compatibility programs are
convex quadratic programs, so the search enumerates sign patterns (sampled
when there are too many) and solves each piece by projected gradient.  The
restricted eigenvalue has a unit-sphere constraint and is searched by
restarted projected gradient; its value is an upper estimate.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from mixagg.sampling import SeedSpec

VARIANTS = ("kappa", "kappa-bar", "restricted-eigenvalue")
ENUMERATION_LIMIT = 10_000


@dataclass(frozen=True)
class ConeSpec:
    support: tuple
    c: float
    variant: str = "kappa-bar"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.c < 0:
            raise ValueError("cone parameter c must be >= 0")
        if self.variant != "restricted-eigenvalue" and len(self.support) == 0:
            raise ValueError("support J must be nonempty")
        object.__setattr__(self, "support", tuple(sorted(int(j) for j in self.support)))


@dataclass
class ConstantEstimate:
    certified_lower: float
    search_upper: float
    restarts: int
    argmin_direction: np.ndarray = field(repr=False)
    exhaustive: bool = True
    boundary_attained: bool = False

    def to_dict(self) -> dict:
        return {"certified_lower": self.certified_lower, "search_upper": self.search_upper,
                "restarts": self.restarts, "argmin_direction": self.argmin_direction.tolist(),
                "exhaustive": self.exhaustive, "boundary_attained": self.boundary_attained}


class MinorExtremes(NamedTuple):
    lambda_min: float
    lambda_max: float
    exhaustive: bool


# -- projections --------------------------------------------------------------

def project_simplex(v, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = radius}."""
    v = np.asarray(v, dtype=float)
    if radius == 0:
        return np.zeros_like(v)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - radius
    idx = np.arange(1, v.shape[0] + 1)
    # index 0 always qualifies in exact arithmetic; rounding can hide it for tiny radii
    hits = np.flatnonzero(u - css / idx > 0)
    rho = hits[-1] if hits.size else 0
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def project_l1_ball(v, radius: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if radius <= 0:
        return np.zeros_like(v)
    if np.abs(v).sum() <= radius:
        return v.copy()
    return np.sign(v) * project_simplex(np.abs(v), radius)


# -- accelerated projected gradient on simplex x l1-ball pieces -------------------

def _qp_simplex_ball(H, size, radius, z0, tol=1e-10, max_iter=5000):
    """Minimize z'Hz over {z[:size] in simplex, ||z[size:]||_1 <= radius}.

    Accelerated projected gradient with adaptive restart; stops on the
    Frank-Wolfe gap, which bounds the suboptimality of the returned point.
    """
    L = 2.0 * max(float(np.linalg.eigvalsh(H)[-1]), 1e-300)

    def project(z):
        return np.concatenate([project_simplex(z[:size]), project_l1_ball(z[size:], radius)])

    def fw_gap(z, g):
        lin = float(g[:size].min())
        if z.shape[0] > size and radius > 0:
            lin -= radius * float(np.abs(g[size:]).max())
        return float(g @ z) - lin

    x = project(z0)
    y = x.copy()
    theta = 1.0
    fx = float(x @ H @ x)
    for _ in range(max_iter):
        gy = 2.0 * (H @ y)
        xn = project(y - gy / L)
        fn = float(xn @ H @ xn)
        if fn > fx and theta > 1.0:
            # restart momentum when the objective goes up
            y, theta = x.copy(), 1.0
            continue
        thn = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
        y = xn + ((theta - 1.0) / thn) * (xn - x)
        x, fx, theta = xn, fn, thn
        gap = fw_gap(x, 2.0 * (H @ x))
        if gap <= tol * max(fx, 0.0) + 1e-300 or gap <= 1e-12 * L:
            break
    return x, max(fx, 0.0)


def _golden_min(func, lo, hi, tol):
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c_, d_ = b - inv * (b - a), a + inv * (b - a)
    fc, fd = func(c_), func(d_)
    while b - a > tol:
        if fc[0] <= fd[0]:
            b, d_, fd = d_, c_, fc
            c_ = b - inv * (b - a)
            fc = func(c_)
        else:
            a, c_, fc = c_, d_, fd
            d_ = a + inv * (b - a)
            fd = func(d_)
    return min((func(lo), fc, fd), key=lambda r: r[0])


def _sign_patterns(size, restarts, seed):
    """Sign vectors on J with the first sign fixed to +1 (v and -v are equivalent)."""
    total = 2 ** (size - 1)
    if total <= max(restarts, 1):
        for bits in itertools.product((1.0, -1.0), repeat=size - 1):
            yield np.array((1.0,) + bits)
        return
    rng = seed.generator() if isinstance(seed, SeedSpec) else np.random.default_rng(seed)
    yield np.ones(size)
    for _ in range(restarts - 1):
        s = rng.choice((-1.0, 1.0), size=size)
        s[0] = 1.0
        yield s


def _lambda_min(A) -> float:
    return float(np.linalg.eigvalsh(A)[0])


def compatibility_constant(A, spec: ConeSpec, restarts: int = 64, seed=None,
                           tol: float = 1e-10) -> ConstantEstimate:
    """Search estimate of kappa_A(J, c) or kappa-bar_A(J, c).

    kappa-bar: inf |J| v'Av / ||v_J||_1^2 over ||v_{J^c}||_1 <= c ||v_J||_1.
    kappa:     inf c^2 |J| v'Av / (c ||v_J||_1 - ||v_{J^c}||_1)^2 over the same cone.

    Fixing the sign pattern s of v_J and scaling ||v_J||_1 = 1 leaves a convex
    quadratic program over a simplex times an l1-ball, solved to a certified
    gap.  For kappa the remaining one-dimensional search over t = ||v_{J^c}||_1
    is unimodal (sqrt of the inner value is convex in t) and done by golden
    section.  The strict cone inequality is relaxed to its closure; ``c = 0``
    restricts v to the support J.
    """
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    K = A.shape[0]
    if spec.variant == "restricted-eigenvalue":
        raise ValueError("use restricted_eigenvalue for the restricted-eigenvalue variant")
    J = np.array(spec.support, dtype=int)
    if J.min() < 0 or J.max() >= K:
        raise ValueError("support indices out of range")
    c = float(spec.c)
    if spec.variant == "kappa" and c == 0:
        raise ValueError("kappa(J, 0) is undefined; use kappa-bar")
    Jc = np.setdiff1d(np.arange(K), J)
    size = J.shape[0]
    seed = seed if seed is not None else SeedSpec(0, 0, "spectra")
    perm = np.concatenate([J, Jc])
    Aperm = A[np.ix_(perm, perm)]
    z_start = np.concatenate([np.full(size, 1.0 / size), np.zeros(K - size)])

    best = (np.inf, None, False)
    patterns = 0
    exhaustive = 2 ** (size - 1) <= max(restarts, 1)
    for s in _sign_patterns(size, restarts, seed):
        patterns += 1
        D = np.concatenate([s, np.ones(K - size)])
        H = Aperm * D[:, None] * D[None, :]
        if spec.variant == "kappa-bar":
            z, q = _qp_simplex_ball(H, size, c, z_start, tol)
            value = size * q
            t = float(np.abs(z[size:]).sum())
        else:
            warm = {"z": z_start}

            def ratio(t):
                z, q = _qp_simplex_ball(H, size, t, warm["z"], tol)
                warm["z"] = z
                return (c * c * size * q / (c - t) ** 2, z)

            value, z = _golden_min(ratio, 0.0, c * (1.0 - 1e-9), 1e-7 * c)
            t = float(np.abs(z[size:]).sum())
        boundary = c > 0 and t >= c * (1.0 - 1e-6)
        if value < best[0]:
            v = np.zeros(K)
            v[perm] = D * z
            best = (float(value), v, bool(boundary))
    value, v, boundary = best
    return ConstantEstimate(_lambda_min(A), value, patterns, v, exhaustive, boundary)


def _supports(K, s, limit, seed):
    total = math.comb(K, s)
    if total <= limit:
        return list(itertools.combinations(range(K), s)), True
    rng = seed.generator() if isinstance(seed, SeedSpec) else np.random.default_rng(seed)
    chosen = set()
    while len(chosen) < limit:
        chosen.add(tuple(sorted(rng.choice(K, size=s, replace=False).tolist())))
    return sorted(chosen), False


def _re_ratio(A, v, J):
    nj = float(v[J] @ v[J])
    return float(v @ A @ v) / nj if nj > 0 else np.inf


def restricted_eigenvalue(A, s: int, c: float, restarts: int = 8, seed=None,
                          iterations: int = 200, support_limit: int = ENUMERATION_LIMIT) -> ConstantEstimate:
    """Search estimate of inf ||A^{1/2} v||^2 over |J| = s, ||v_{J^c}||_1 <= c||v_J||_1, ||v_J||_2 = 1."""
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    K = A.shape[0]
    if not 1 <= s <= K:
        raise ValueError("need 1 <= s <= K")
    if c < 0:
        raise ValueError("c must be >= 0")
    seed = seed if seed is not None else SeedSpec(0, 0, "re")
    supports, exhaustive = _supports(K, s, support_limit, seed.child("supports"))
    rng = seed.child("restarts").generator()
    lmin = _lambda_min(A)
    step = 1.0 / (2.0 * max(float(np.linalg.eigvalsh(A)[-1]), 1e-300))
    best_val, best_v = np.inf, None
    for J in supports:
        J = np.array(J)
        Jc = np.setdiff1d(np.arange(K), J)

        def retract(v):
            out = np.zeros(K)
            x = v[J]
            nx = np.linalg.norm(x)
            if nx == 0:
                x = np.ones(s) / math.sqrt(s)
            else:
                x = x / nx
            out[J] = x
            out[Jc] = project_l1_ball(v[Jc], c * np.abs(x).sum())
            return out

        # the bottom eigenvector of A_JJ (with v_{J^c} = 0) is always feasible
        evals, evecs = np.linalg.eigh(A[np.ix_(J, J)])
        starts = [np.zeros(K)]
        starts[0][J] = evecs[:, 0]
        for _ in range(restarts):
            starts.append(rng.standard_normal(K))
        for v0 in starts:
            v = retract(v0)
            f = float(v @ A @ v)
            for _ in range(iterations):
                g = 2.0 * (A @ v)
                t = step
                while True:
                    vn = retract(v - t * g)
                    fn = float(vn @ A @ vn)
                    if fn <= f - 1e-4 * float(g @ (v - vn)) or t < 1e-16:
                        break
                    t *= 0.5
                if fn >= f:
                    break
                done = f - fn <= 1e-15 * max(abs(f), 1e-300)
                v, f = vn, fn
                if done:
                    break
            if f < best_val:
                best_val, best_v = f, v
    return ConstantEstimate(lmin, float(best_val), restarts + 1, best_v, exhaustive)


def minor_eigen_extremes(A, k: int, limit: int = ENUMERATION_LIMIT, seed=None) -> MinorExtremes:
    """Smallest and largest eigenvalue over all k x k principal minors of A."""
    A = np.asarray(A, dtype=float)
    K = A.shape[0]
    if not 1 <= k <= K:
        raise ValueError("need 1 <= k <= K")
    seed = seed if seed is not None else SeedSpec(0, 0, "minors")
    subsets, exhaustive = _supports(K, k, limit, seed)
    lo, hi = np.inf, -np.inf
    for S in subsets:
        ev = np.linalg.eigvalsh(A[np.ix_(S, S)])
        lo = min(lo, float(ev[0]))
        hi = max(hi, float(ev[-1]))
    return MinorExtremes(lo, hi, exhaustive)


def load_matrix(path) -> np.ndarray:
    """Read a square matrix from JSON (nested list) or whitespace-delimited text."""
    with open(path) as fh:
        text = fh.read()
    try:
        data = np.asarray(json.loads(text), dtype=float)
    except ValueError:
        data = np.loadtxt(path, dtype=float, ndmin=2)
    if data.ndim != 2 or data.shape[0] != data.shape[1]:
        raise ValueError("expected a square matrix")
    return data
