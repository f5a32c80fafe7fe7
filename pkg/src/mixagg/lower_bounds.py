"""Binary packings, hypothesis families for Fano-type lower bounds, and the minimax rate function."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from mixagg.dictionary import DEFAULT_NODES, Dictionary, population_gram, quadrature_grid, sine_dictionary
from mixagg.exceptions import PackingError
from mixagg.sampling import SeedSpec, as_generator
from mixagg.spectra import minor_eigen_extremes

EXHAUSTIVE_LIMIT = 100_000
CANDIDATE_BUDGET = 1_000_000


@dataclass
class PackingSet:
    """Weight-k binary vectors of length M, stored as their sorted supports (one row each)."""

    M: int
    k: int
    supports: np.ndarray  # L x k, strictly increasing rows in lexicographic order
    min_pairwise_l1: float
    achieved_log_cardinality: float
    exhaustive: bool = True

    @property
    def L(self) -> int:
        return int(self.supports.shape[0])

    @property
    def members(self) -> np.ndarray:
        """Dense L x M 0/1 matrix of the packing vectors."""
        out = np.zeros((self.L, self.M), dtype=np.uint8)
        out[np.repeat(np.arange(self.L), self.k), self.supports.ravel()] = 1
        return out

    @property
    def implied_c1(self) -> float:
        """log L / (k log(1 + eM/k)), the constant this packing certifies."""
        return self.achieved_log_cardinality / (self.k * math.log(1.0 + math.e * self.M / self.k))

    def to_dict(self) -> dict:
        return {"M": self.M, "k": self.k, "members": self.supports.tolist(),
                "min_pairwise_l1": self.min_pairwise_l1,
                "achieved_log_cardinality": self.achieved_log_cardinality,
                "exhaustive": self.exhaustive}


@dataclass
class HypothesisFamily:
    weights: np.ndarray  # L x K, one simplex vector per row
    kind: str
    params: dict

    @property
    def L(self) -> int:
        return int(self.weights.shape[0])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "weights": self.weights.tolist()}


def _has_shared_subset(supports: np.ndarray, t: int, M: int) -> bool:
    """Whether two distinct rows share a t-subset (rows are sets of distinct indices)."""
    L, k = supports.shape
    combos = np.array(list(itertools.combinations(range(k), t)), dtype=np.int64)
    subs = supports[:, combos]  # L x C(k, t) x t, each subset sorted
    flat = subs.reshape(-1, t)
    if t * math.log2(max(M, 2)) < 62:
        codes = np.sort(flat @ (M ** np.arange(t, dtype=np.int64)))
        return bool(np.any(codes[1:] == codes[:-1]))
    return np.unique(flat, axis=0).shape[0] < flat.shape[0]


def _max_shared(supports: np.ndarray, M: int) -> int:
    """Largest overlap between two rows; two k-sets share t elements iff they share a t-subset."""
    k = supports.shape[1]
    for t in range(k, 0, -1):
        if _has_shared_subset(supports, t, M):
            return t
    return 0


def pairwise_min_distance(members) -> float:
    """Minimum l1 distance over distinct pairs of binary rows (full overlap matrix)."""
    B = np.asarray(members, dtype=np.int64)
    if B.shape[0] < 2:
        return math.inf
    weights = B.sum(axis=1)
    dist = weights[:, None] + weights[None, :] - 2 * (B @ B.T)
    np.fill_diagonal(dist, np.iinfo(np.int64).max)
    return float(dist.min())


def verify_packing(supports, M: int, k: int) -> float:
    """Check every row is a weight-k vector of length M and return the minimum pairwise l1 distance.

    The distance is computed from scratch (t-subset collisions), never taken from
    the construction.
    """
    S = np.asarray(supports, dtype=np.int64)
    if S.ndim != 2 or S.shape[1] != k:
        raise AssertionError("packing rows must list exactly k support indices")
    if S.size and (S.min() < 0 or S.max() >= M or np.any(np.diff(S, axis=1) <= 0)):
        raise AssertionError("packing row is not a set of k distinct indices in range")
    if S.shape[0] < 2:
        return math.inf
    return float(2 * (k - _max_shared(S, M)))


def _all_combinations(M, k) -> np.ndarray:
    if k == 1:
        return np.arange(M, dtype=np.int64)[:, None]
    flat = np.fromiter(itertools.chain.from_iterable(itertools.combinations(range(M), k)),
                       dtype=np.int64, count=math.comb(M, k) * k)
    return flat.reshape(-1, k)


def _random_draws(M, k, rng, budget):
    chunk = 4096
    drawn = 0
    while drawn < budget:
        size = min(chunk, budget - drawn)
        keys = rng.random((size, M))
        yield np.sort(np.argpartition(keys, k - 1, axis=1)[:, :k], axis=1)
        drawn += size


def vg_packing(M: int, k: int, seed=None, budget: int = CANDIDATE_BUDGET) -> PackingSet:
    """Greedy packing of weight-k binary vectors with pairwise l1 distance >= (k + 1)/4.

    Candidates are visited in seeded random order (all of them when C(M, k) is
    at most 1e5, otherwise ``budget`` random draws).  The returned invariants are
    recomputed from the final set, not taken from the greedy loop.
    """
    if M < 4 or not 1 <= k <= M // 2:
        raise ValueError("need M >= 4 and 1 <= k <= M/2")
    rng = as_generator(seed if seed is not None else SeedSpec(0, 0, "packing"))
    required = (k + 1) / 4.0
    # distance 2(k - t) >= required  <=>  overlap t <= max_overlap
    max_overlap = int(math.floor(k - required / 2.0))
    exhaustive = math.comb(M, k) <= EXHAUSTIVE_LIMIT
    if max_overlap >= k - 1:
        # any two distinct vectors are far enough apart, so every candidate is admitted
        if exhaustive:
            admitted = _all_combinations(M, k)
        else:
            admitted = np.unique(np.concatenate(list(_random_draws(M, k, rng, budget))), axis=0)
    else:
        if exhaustive:
            combos = _all_combinations(M, k)
            stream = [combos[rng.permutation(combos.shape[0])]]
        else:
            stream = _random_draws(M, k, rng, budget)
        taken = set()
        width = max_overlap + 1
        rows = []
        for block in stream:
            for cand in map(tuple, block.tolist()):
                subs = list(itertools.combinations(cand, width))
                if any(sub in taken for sub in subs):
                    continue
                rows.append(cand)
                taken.update(subs)
        admitted = np.array(sorted(rows), dtype=np.int64).reshape(-1, k)
    dmin = verify_packing(admitted, M, k)
    if admitted.shape[0] >= 2 and dmin < required:
        raise AssertionError(f"packing distance {dmin} below {required}")
    packing = PackingSet(M, k, admitted, dmin, math.log(max(admitted.shape[0], 1)), exhaustive)
    if packing.L < 4:
        raise PackingError(f"only {packing.L} packing members found for M={M}, k={k}", packing)
    return packing


def sparse_hypotheses(packing: PackingSet, epsilon: float) -> HypothesisFamily:
    """pi^1 = w^1/d and pi^l = (1 - eps) pi^1 + eps w^l / d, with d the packing weight."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    d = packing.k
    omega = packing.members.astype(float) / d
    base = omega[0]
    weights = (1.0 - epsilon) * base[None, :] + epsilon * omega
    weights[0] = base
    return HypothesisFamily(weights, "sparse-0-D", {"d": d, "epsilon": float(epsilon)})


def shifted_hypotheses(packing: PackingSet, gamma: float) -> HypothesisFamily:
    """pi = (1 - gamma, gamma w / d) with w ranging over a packing of K - 1 coordinates."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    d = packing.k
    tail = gamma * packing.members.astype(float) / d
    head = np.full((packing.L, 1), 1.0 - gamma)
    return HypothesisFamily(np.hstack([head, tail]), "shifted-gamma-1",
                            {"d": d, "gamma": float(gamma)})


def kl_matrix(family: HypothesisFamily, dictionary: Dictionary, nodes: int = DEFAULT_NODES) -> np.ndarray:
    """Matrix with entry (i, j) = KL(f_pi_i || f_pi_j) by Simpson quadrature."""
    x, w = quadrature_grid(nodes)
    F = dictionary.evaluate(x) @ family.weights.T
    if F.min() <= 0:
        raise ValueError("hypothesis mixtures must be positive on the grid")
    logF = np.log(F)
    WF = F * w[:, None]
    self_term = np.einsum("gi,gi->i", WF, logF)
    return self_term[:, None] - WF.T @ logF


@dataclass
class FanoReport:
    family_size: int
    min_pairwise_kl: float
    s: float
    max_kl_to_reference: float
    product_kl: float
    product_kl_ratio: float
    condition_i: bool
    condition_ii: bool
    sandwich_ok: bool | None
    passed: bool

    CSV_FIELDS = ("family_size", "min_pairwise_kl", "s", "max_kl_to_reference", "product_kl",
                  "product_kl_ratio", "condition_i", "condition_ii", "sandwich_ok", "passed")

    def csv_row(self) -> dict:
        row = {}
        for name in self.CSV_FIELDS:
            v = getattr(self, name)
            if isinstance(v, bool) or v is None:
                row[name] = "" if v is None else int(v)
            elif isinstance(v, float):
                row[name] = format(v, ".17g")
            else:
                row[name] = v
        return row


def fano_check(family: HypothesisFamily, dictionary: Dictionary, n: int,
               nodes: int = DEFAULT_NODES, s: float | None = None,
               separation_floor: float = 1e-13) -> FanoReport:
    """Check (i) min pairwise KL >= 2s > 0 and (ii) n * max_l KL(f_l || f_1) <= log(L)/16.

    Without ``s`` the largest admissible value, half the minimum pairwise KL,
    is reported; condition (i) then requires that minimum to clear
    ``separation_floor`` (quadrature noise level).
    """
    L = family.L
    if L < 2:
        raise ValueError("a family needs at least two members")
    KL = kl_matrix(family, dictionary, nodes)
    off = ~np.eye(L, dtype=bool)
    min_kl = float(KL[off].min())
    s_value = min_kl / 2.0 if s is None else float(s)
    cond_i = min_kl > separation_floor and min_kl >= 2.0 * s_value and s_value > 0
    max_ref = float(max(KL[1:, 0].max(), 0.0))
    product = n * max_ref
    # tensorization: KL of n-fold products is the sum of n equal terms
    summed = math.fsum([max_ref] * n)
    if abs(product - summed) > 1e-12 * max(abs(product), 1e-300):
        raise ArithmeticError("product KL disagrees with its tensorized sum")
    budget = math.log(L) / 16.0
    ratio = product / budget if budget > 0 else math.inf
    cond_ii = product <= budget
    sandwich = None
    if dictionary.m > 0:
        x, w = quadrature_grid(nodes)
        F = dictionary.evaluate(x) @ family.weights.T
        sq = (F * F * w[:, None]).sum(axis=0)
        gram = (F * w[:, None]).T @ F
        q = sq[:, None] + sq[None, :] - 2.0 * gram
        V, M, m = dictionary.V, dictionary.M, dictionary.m
        tol = 1e-12
        sandwich = bool(np.all(q[off] / (2 * V * V * M) <= KL[off] + tol)
                        and np.all(KL[off] <= V * V * q[off] / (2 * m) + tol))
    passed = L >= 4 and cond_i and cond_ii
    return FanoReport(L, min_kl, s_value, max_ref, product, ratio, bool(cond_i), bool(cond_ii),
                      sandwich, bool(passed))


class RateValues(NamedTuple):
    rate: float
    grouped_min: float
    upper: float


def minimax_rate(n: int, K: int, gamma: float, D: int, C: float = 1.0) -> RateValues:
    """Nearly-D-sparse aggregation rate.

    ``rate`` is sqrt(g^2/n log(1 + K/(g sqrt n))) + min(D log(1 + K/D)/n, sqrt(log(1 + K/sqrt n)/n));
    ``grouped_min`` takes the minimum of the first two terms summed against the last;
    ``upper`` is C (sqrt(g^2 log K / n) + D log K / n) capped by C sqrt(log K / n).
    """
    if n < 1 or K < 1 or not 0 < gamma < 1 or not 1 <= D <= K:
        raise ValueError("need n >= 1, K >= 1, 0 < gamma < 1, 1 <= D <= K")
    rn = math.sqrt(n)
    first = math.sqrt(gamma * gamma / n * math.log(1.0 + K / (gamma * rn)))
    second = D * math.log(1.0 + K / D) / n
    third = math.sqrt(math.log(1.0 + K / rn) / n)
    logK = math.log(K)
    upper = C * min(math.sqrt(gamma * gamma * logK / n) + D * logK / n, math.sqrt(logK / n))
    return RateValues(first + min(second, third), min(first + second, third), upper)


class FanoPreset(NamedTuple):
    family: HypothesisFamily
    packing: PackingSet
    dictionary: Dictionary
    params: dict


def sparse_family_preset(d: int = 2, K: int = 8, n: int = 10_000, dictionary: Dictionary | None = None,
                         seed=None) -> FanoPreset:
    """Sparse family with eps^2 = d^2 log(1 + eK/d) / (n A1).

    A1 = max(4, 16 V^2 lambda_max(2d) / (C1 m)), where C1 is the constant
    certified by the packing actually built and lambda_max(2d) is the largest
    eigenvalue over 2d x 2d principal minors of the Lebesgue Gram matrix.
    """
    dictionary = dictionary or sine_dictionary(K)
    if dictionary.K != K:
        raise ValueError("dictionary size does not match K")
    packing = vg_packing(K, d, seed)
    c1 = packing.implied_c1
    lam = minor_eigen_extremes(population_gram(dictionary), min(2 * d, K)).lambda_max
    V, m = dictionary.V, dictionary.m
    A1 = max(4.0, 16.0 * V * V * lam / (c1 * m))
    eps2 = d * d * math.log(1.0 + math.e * K / d) / (n * A1)
    if eps2 > 1.0:
        raise ValueError("recipe gives epsilon > 1; n is too small for this d")
    eps = math.sqrt(eps2)
    family = sparse_hypotheses(packing, eps)
    return FanoPreset(family, packing, dictionary,
                      {"d": d, "K": K, "n": n, "C1": c1, "lambda_max": lam, "A1": A1, "epsilon": eps})


def save_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj.to_dict(), fh, indent=2)


def packing_from_dict(doc: dict) -> PackingSet:
    M, k = int(doc["M"]), int(doc["k"])
    supports = np.asarray(doc["members"], dtype=np.int64).reshape(-1, k)
    return PackingSet(M, k, supports, float(doc["min_pairwise_l1"]),
                      float(doc["achieved_log_cardinality"]), bool(doc.get("exhaustive", True)))


def family_from_dict(doc: dict) -> HypothesisFamily:
    return HypothesisFamily(np.asarray(doc["weights"], dtype=float), doc["kind"], dict(doc["params"]))
