"""Seeded experiment sweeps: fit, score against the quadrature oracle, check bounds, fit rates."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from mixagg.bounds import (OracleProblem, THEOREM_IDS, bound_rhs, kl_divergence, l2_pstar_distance,
                           oracle_weights, residual_term)
from mixagg.dictionary import (DEFAULT_NODES, empirical_gram, evaluation_matrix, population_gram,
                               sine_dictionary, tabulated_density)
from mixagg.empirical_process import zeta_sup
from mixagg.exceptions import InfeasibleError
from mixagg.lower_bounds import (fano_check, shifted_hypotheses, sparse_family_preset, sparse_hypotheses,
                                 vg_packing)
from mixagg.sampling import SeedSpec, sample, sample_mixture
from mixagg.solver import SolverOptions, SolverResult, fit_mle, frank_wolfe_gap
from mixagg.spectra import ConeSpec, compatibility_constant, restricted_eigenvalue

log = logging.getLogger(__name__)

SCENARIOS = ("well-specified-sparse", "well-specified-dense", "misspecified",
             "vanishing-component", "lower-bound-audit")
DEFAULT_BOUNDS = {
    "well-specified-sparse": ["boundDevTwo"],
    "well-specified-dense": ["convOracle"],
    "misspecified": ["boundDevTwo"],
    "vanishing-component": ["boundDevFive", "boundDevSix"],
    "lower-bound-audit": [],
}
OUTPUT_DIR_ENV = "MIXAGG_OUTPUT_DIR"

_DELTA_FREE = {"boundExpOne", "boundExpTwo", "MSaggr", "Caggr", "Daggr", "upper"}
_EMPIRICAL = {"boundDeviation", "boundDevTwo", "boundDevFive", "boundDevSix"}
SUPPORT_TOL = 1e-10


@dataclass
class ExperimentConfig:
    scenario: str
    n_values: list
    K: int
    replications: int = 1
    master_seed: int = 0
    D: int | None = None
    gamma: float | None = None
    mu: float | None = None
    quadrature_nodes: int = DEFAULT_NODES
    solver: dict = field(default_factory=dict)
    output_path: str | None = None
    bounds: list | None = None
    deltas: list = field(default_factory=lambda: [0.05, 0.1])
    truth_weights: list | None = None
    truth_values: list | None = None
    epsilon: float | None = None
    compute_zeta: bool = False
    zeta_restarts: int = 64
    compatibility_restarts: int = 64
    record_wall_time: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        self.n_values = [int(v) for v in self.n_values]
        if not self.n_values or any(v < 1 for v in self.n_values):
            raise ValueError("n_values must be a nonempty list of positive integers")
        if any(b <= a for a, b in zip(self.n_values, self.n_values[1:])):
            raise ValueError("n_values must be strictly increasing")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.scenario in ("well-specified-sparse", "vanishing-component", "lower-bound-audit"):
            if self.D is None and self.truth_weights is None:
                raise ValueError(f"scenario {self.scenario} needs D")
        if self.D is not None and not 1 <= self.D <= self.K:
            raise ValueError("D must satisfy 1 <= D <= K")
        if self.scenario == "vanishing-component" and not (self.mu and self.mu > 0):
            raise ValueError("vanishing-component needs mu > 0")
        if self.gamma is not None and not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.bounds is None:
            self.bounds = list(DEFAULT_BOUNDS[self.scenario])
        for b in self.bounds:
            if b not in THEOREM_IDS:
                raise ValueError(f"unknown bound id {b!r}")
        if "upper" in self.bounds and (self.gamma is None or self.D is None):
            raise ValueError("the 'upper' bound needs gamma and D")
        if "Daggr" in self.bounds and self.D is None:
            raise ValueError("the 'Daggr' bound needs D")
        if any(not 0 < d < 1 for d in self.deltas):
            raise ValueError("deltas must lie in (0, 1)")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        SolverOptions(**self.solver)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, **changes) -> "ExperimentConfig":
        doc = self.to_dict()
        doc.update({k: v for k, v in changes.items() if v is not None})
        return ExperimentConfig.from_dict(doc)

    def solver_options(self) -> SolverOptions:
        opts = dict(self.solver)
        if self.scenario == "vanishing-component":
            opts["mu"] = self.mu
        return SolverOptions(**opts)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))


@dataclass
class ResultRow:
    scenario: str
    n: int
    K: int
    D: int | None
    replication: int
    seed: int
    excess_kl: float
    nll: float
    gap: float
    l1_error: float | None
    l2_error: float | None
    zeta_estimate: float | None
    bound_id: str
    bound_rhs: float | None
    bound_satisfied: bool | None
    wall_time_ms: float = 0.0


FIELDS = tuple(f.name for f in dataclasses.fields(ResultRow))


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_rows(fh, rows, fields=FIELDS) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        get = row.get if isinstance(row, dict) else lambda k, r=row: getattr(r, k)
        writer.writerow([_fmt(get(k)) for k in fields])


def _parse(text):
    if text == "":
        return None
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: _parse(v) for k, v in rec.items()} for rec in csv.DictReader(fh)]


# -- per-configuration context -------------------------------------------------------

class _Context:
    """Everything shared by the replications of one configuration."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        K = config.K
        self.opts = config.solver_options()
        if config.scenario == "vanishing-component":
            self.dictionary = sine_dictionary(K, amplitude=1.0)
        else:
            self.dictionary = sine_dictionary(K)
        self.truth_weights = None
        if config.scenario == "misspecified":
            values = config.truth_values if config.truth_values is not None else [1.0, 2.0, 1.0]
            self.truth = tabulated_density(values)
        else:
            if config.truth_weights is not None:
                w = np.asarray(config.truth_weights, dtype=float)
            elif config.scenario == "well-specified-dense":
                w = np.full(K, 1.0 / K)
            else:
                w = np.zeros(K)
                w[: config.D] = 1.0 / config.D
            if w.shape != (K,) or w.min() < 0 or abs(w.sum() - 1) > 1e-12:
                raise ValueError("truth weights must be a length-K simplex vector")
            self.truth_weights = w
            self.truth = self.dictionary.mixture(w)
        self.problem = OracleProblem(self.truth, self.dictionary, config.quadrature_nodes)
        self.nodes = config.quadrature_nodes
        _, w_grid, fstar, self.Zgrid = self.problem.grid()
        c = w_grid * fstar
        self.grid_weights = c / c.sum()
        feasible_truth = self.truth_weights is not None and (
            self.opts.mu <= 0 or float((self.Zgrid @ self.truth_weights).min()) >= self.opts.mu)
        if feasible_truth:
            # realizable: the truth is its own best approximation
            self.pi_star = self.truth_weights.copy()
        else:
            self.pi_star = oracle_weights(self.problem, self.opts).weights
        self.kl_star = self.problem.kl(self.pi_star)
        self.V = self.dictionary.V if self.opts.mu <= 0 else self.dictionary.M / self.opts.mu
        self.M = self.dictionary.M
        self.pop_gram = population_gram(self.dictionary, self.nodes, reference=self.truth)
        self._kappa_cache = {}
        self._restricted = None
        self.order = np.argsort(-self.pi_star, kind="stable")
        self.support_size = int(np.count_nonzero(self.pi_star > SUPPORT_TOL))

    def kappa(self, A, variant, J, c, cache=True):
        key = (variant, tuple(J), c)
        if cache and key in self._kappa_cache:
            return self._kappa_cache[key]
        if variant == "restricted-eigenvalue":
            value = restricted_eigenvalue(A, len(J), c).search_upper
        else:
            value = compatibility_constant(A, ConeSpec(tuple(J), c, variant),
                                           self.config.compatibility_restarts).search_upper
        if cache:
            self._kappa_cache[key] = value
        return value

    def top(self, s):
        return tuple(sorted(int(j) for j in self.order[:s]))

    def restricted_candidates(self):
        """(J, bias) for J the top-s support of pi*, with the best mixture supported on J."""
        if self._restricted is None:
            out = []
            for s in range(1, self.support_size + 1):
                J = self.top(s)
                if s == self.support_size:
                    pi = self.pi_star
                else:
                    try:
                        sub = fit_mle(self.Zgrid[:, list(J)], self.opts, sample_weights=self.grid_weights)
                    except InfeasibleError:
                        continue
                    pi = np.zeros(self.dictionary.K)
                    pi[list(J)] = sub.weights
                out.append((J, kl_divergence(self.truth, pi, self.dictionary, self.nodes)))
            self._restricted = out
        return self._restricted

    def tail_candidates(self):
        """(J, off-support mass of pi*) for J the top-s support of pi*, s = 0..|supp|."""
        return [(self.top(s), max(1.0 - float(self.pi_star[list(self.top(s))].sum()), 0.0))
                for s in range(0, self.support_size + 1)]

    def d_sparse(self, D):
        """Smallest population kappa-bar over supports of size <= D, and the best candidate bias."""
        key = ("Daggr", D)
        if key not in self._kappa_cache:
            best = math.inf
            K = self.dictionary.K
            for s in range(1, D + 1):
                subsets = (itertools.combinations(range(K), s) if math.comb(K, s) <= 10_000
                           else [self.top(s)])
                for J in subsets:
                    best = min(best, self.kappa(self.pop_gram, "kappa-bar", J, 1.0, cache=False))
            biases = [b for J, b in self.restricted_candidates() if len(J) <= D]
            self._kappa_cache[key] = (best, min(biases) if biases else math.inf)
        return self._kappa_cache[key]

    def singletons(self):
        key = ("MSaggr",)
        if key not in self._kappa_cache:
            vals = []
            for j in range(self.dictionary.K):
                e = np.zeros(self.dictionary.K)
                e[j] = 1.0
                bias = kl_divergence(self.truth, e, self.dictionary, self.nodes)
                vals.append((bias, self.kappa(self.pop_gram, "kappa-bar", (j,), 1.0)))
            self._kappa_cache[key] = vals
        return self._kappa_cache[key]


def _labels(bounds, deltas):
    out = []
    for b in bounds:
        if b in _DELTA_FREE:
            out.append((b, b, None))
            continue
        for d in deltas:
            out.append((b, f"{b}@delta={d:g}", d))
            if b == "boundDevFive":
                out.append(("boundDevFive+residual", f"boundDevFive+residual@delta={d:g}", d))
    return out


def _bound_value(ctx: _Context, bid, delta, n, emp_gram, fit, stats_):
    """(rhs, lhs) for one bound; KL bounds are on the excess scale."""
    base = {"n": n, "K": ctx.dictionary.K, "delta": delta, "V": ctx.V, "M": ctx.M}
    kl_star = ctx.kl_star

    def best(values):
        return min(values) if values else math.inf

    if bid in ("boundDeviation", "boundDevThree", "boundExpOne"):
        A = emp_gram if bid == "boundDeviation" else ctx.pop_gram
        vals = []
        for J, off in ctx.tail_candidates():
            kappa = ctx.kappa(A, "kappa", J, 3.0, cache=A is not emp_gram) if J else None
            vals.append(bound_rhs(bid, {**base, "bias": kl_star, "J_size": len(J),
                                        "off_support_mass": off, "compatibility": kappa}).rhs_value)
        return best(vals) - kl_star, stats_["excess_kl"]
    if bid in ("boundDevTwo", "boundDevFour", "boundExpTwo", "boundDevFive",
               "boundDevFive+residual", "boundDevSix"):
        empirical = bid in _EMPIRICAL or bid == "boundDevFive+residual"
        A = emp_gram if empirical else ctx.pop_gram
        tid = "boundDevFive" if bid == "boundDevFive+residual" else bid
        vals = []
        for J, bias in ctx.restricted_candidates():
            kappa = ctx.kappa(A, "kappa-bar", J, 1.0, cache=not empirical)
            vals.append(bound_rhs(tid, {**base, "bias": bias, "J_size": len(J),
                                        "compatibility": kappa}).rhs_value)
        rhs = best(vals)
        if bid == "boundDevSix":
            return rhs, stats_["l2_pstar"]
        if bid == "boundDevFive+residual":
            rhs += residual_term(ctx.truth, ctx.dictionary, fit.weights, ctx.opts.mu, ctx.nodes)
        return rhs - kl_star, stats_["excess_kl"]
    if bid == "convOracle":
        return bound_rhs(bid, {**base, "bias": kl_star}).rhs_value - kl_star, stats_["excess_kl"]
    if bid == "MSaggr":
        vals = [bound_rhs(bid, {**base, "bias": b, "compatibility": k}).rhs_value
                for b, k in ctx.singletons()]
        return best(vals) - kl_star, stats_["excess_kl"]
    if bid == "Caggr":
        kappa = ctx.kappa(ctx.pop_gram, "kappa-bar", tuple(range(ctx.dictionary.K)), 1.0)
        return bound_rhs(bid, {**base, "bias": kl_star, "compatibility": kappa}).rhs_value - kl_star, \
            stats_["excess_kl"]
    if bid == "Daggr":
        kappa, bias = ctx.d_sparse(ctx.config.D)
        return bound_rhs(bid, {**base, "bias": bias, "D": ctx.config.D,
                               "compatibility": kappa}).rhs_value - kl_star, stats_["excess_kl"]
    if bid == "upper":
        rhs = bound_rhs(bid, {**base, "gamma": ctx.config.gamma, "D": ctx.config.D}).rhs_value
        return rhs, stats_["excess_kl"]
    J_star = ctx.top(ctx.support_size)
    if bid == "elOne":
        kappa = ctx.kappa(ctx.pop_gram, "kappa-bar", J_star, 1.0)
        return bound_rhs(bid, {**base, "J_size": len(J_star), "compatibility": kappa}).rhs_value, \
            stats_["l1_error"]
    kappa = ctx.kappa(ctx.pop_gram, "restricted-eigenvalue", J_star, 1.0)
    rhs = bound_rhs(bid, {**base, "J_size": len(J_star), "compatibility": kappa}).rhs_value
    return rhs, stats_["l2_error"] if bid == "euclOne" else stats_["l2_error"] ** 2


def _replication(ctx: _Context, n: int, rep: int) -> list[ResultRow]:
    cfg = ctx.config
    start = time.perf_counter()
    seed = SeedSpec(cfg.master_seed, rep, f"data/n={n}")
    if ctx.truth_weights is not None:
        x = sample_mixture(ctx.dictionary, ctx.truth_weights, n, seed)
    else:
        x = sample(ctx.truth, n, seed)
    Z = evaluation_matrix(ctx.dictionary, x)
    fit = fit_mle(Z, ctx.opts)
    kl_hat = kl_divergence(ctx.truth, fit.weights, ctx.dictionary, ctx.nodes)
    diff = fit.weights - ctx.pi_star
    values = {
        "excess_kl": kl_hat - ctx.kl_star,
        "l1_error": float(np.abs(diff).sum()),
        "l2_error": float(np.sqrt(diff @ diff)),
        "l2_pstar": l2_pstar_distance(ctx.truth, ctx.dictionary, fit.weights, ctx.nodes),
    }
    zeta = None
    if cfg.compute_zeta:
        zeta = zeta_sup(ctx.problem, x, cfg.zeta_restarts, seed.child("zeta")).value
    emp_gram = None
    if any(b in _EMPIRICAL for b in cfg.bounds):
        emp_gram = empirical_gram(Z, ctx.dictionary.centering(x))
    outcomes = []
    for bid, label, delta in _labels(cfg.bounds, cfg.deltas):
        rhs, lhs = _bound_value(ctx, bid, delta, n, emp_gram, fit, values)
        outcomes.append((label, rhs, bool(lhs <= rhs)))
    if not outcomes:
        outcomes.append(("", None, None))
    elapsed = (time.perf_counter() - start) * 1000.0 if cfg.record_wall_time else 0.0
    return [ResultRow(cfg.scenario, n, cfg.K, cfg.D, rep, seed.as_int(), values["excess_kl"],
                      fit.objective, fit.certificate_gap, values["l1_error"], values["l2_error"],
                      zeta, label, rhs, ok, elapsed)
            for label, rhs, ok in outcomes]


_WORKER_CTX = None


def _init_worker(config_doc):
    global _WORKER_CTX
    _WORKER_CTX = _Context(ExperimentConfig.from_dict(config_doc))


def _worker_task(task):
    n, rep = task
    return _replication(_WORKER_CTX, n, rep)


def resolve_output_path(config: ExperimentConfig) -> str | None:
    if config.output_path:
        return config.output_path
    directory = os.environ.get(OUTPUT_DIR_ENV)
    if directory:
        os.makedirs(directory, exist_ok=True)
        return os.path.join(directory, f"{config.scenario}-seed{config.master_seed}.csv")
    return None


def run_experiment(config: ExperimentConfig, output_path=None):
    """Run every (n, replication) of ``config`` and write the CSV.

    Returns a list of ResultRow (or of dict rows for the lower-bound audit).
    The output file is opened before any computation so an unwritable path
    fails fast.
    """
    path = output_path or resolve_output_path(config)
    fh = open(path, "w", newline="") if path else None
    try:
        if config.scenario == "lower-bound-audit":
            rows = _audit_rows(config)
            if fh:
                write_rows(fh, rows, AUDIT_FIELDS)
            return rows
        tasks = [(n, rep) for n in config.n_values for rep in range(config.replications)]
        if config.jobs > 1:
            with ProcessPoolExecutor(config.jobs, initializer=_init_worker,
                                     initargs=(config.to_dict(),)) as pool:
                chunks = list(pool.map(_worker_task, tasks))
        else:
            ctx = _Context(config)
            chunks = [_replication(ctx, n, rep) for n, rep in tasks]
        rows = [row for chunk in chunks for row in chunk]
        if fh:
            write_rows(fh, rows)
        return rows
    finally:
        if fh:
            fh.close()


AUDIT_FIELDS = ("n", "K", "d", "family", "L", "epsilon", "gamma", "implied_c1", "A1",
                "min_pairwise_kl", "s", "max_kl_to_reference", "product_kl", "product_kl_ratio",
                "condition_i", "condition_ii", "sandwich_ok", "passed")


def audit_rows(d: int, K: int, n: int, epsilon=None, gamma=None, master_seed: int = 0,
               nodes: int = DEFAULT_NODES) -> list[dict]:
    """Fano audit rows: the recipe sparse family, plus the shifted family when gamma is given."""
    preset = sparse_family_preset(d, K, n, seed=SeedSpec(master_seed, 0, "packing"))
    family = preset.family if epsilon is None else sparse_hypotheses(preset.packing, epsilon)
    report = fano_check(family, preset.dictionary, n, nodes)
    rows = [{"n": n, "K": K, "d": d, "family": family.kind, "L": family.L,
             "epsilon": family.params["epsilon"], "gamma": None,
             "implied_c1": preset.params["C1"], "A1": preset.params["A1"],
             **dataclasses.asdict(report)}]
    if gamma is not None:
        packing = vg_packing(K - 1, d, SeedSpec(master_seed, 0, "packing-shifted"))
        shifted = shifted_hypotheses(packing, gamma)
        report = fano_check(shifted, preset.dictionary, n, nodes)
        rows.append({"n": n, "K": K, "d": d, "family": shifted.kind, "L": shifted.L,
                     "epsilon": None, "gamma": gamma, "implied_c1": packing.implied_c1, "A1": None,
                     **dataclasses.asdict(report)})
    return rows


def _audit_rows(config: ExperimentConfig) -> list[dict]:
    return [row for n in config.n_values
            for row in audit_rows(config.D, config.K, n, config.epsilon, config.gamma,
                                  config.master_seed, config.quadrature_nodes)]


# -- analysis ------------------------------------------------------------------------

class RegressionResult(NamedTuple):
    slope: float
    stderr: float
    intercept: float
    n_values: tuple
    statistics: tuple


def rate_regression(rows, statistic: str = "median", field: str = "excess_kl") -> RegressionResult:
    """Least-squares slope of log(statistic of ``field``) against log n.

    Rows repeated across bound ids are counted once per (n, replication).
    """
    if statistic not in ("median", "mean"):
        raise ValueError("statistic must be 'median' or 'mean'")
    seen = set()
    by_n = {}
    for row in rows:
        get = row.get if isinstance(row, dict) else lambda k, r=row: getattr(r, k)
        key = (get("n"), get("replication"))
        if key in seen:
            continue
        seen.add(key)
        by_n.setdefault(int(get("n")), []).append(float(get(field)))
    if len(by_n) < 3:
        raise ValueError("rate regression needs at least 3 distinct n values")
    ns = tuple(sorted(by_n))
    reduce = np.median if statistic == "median" else np.mean
    values = tuple(float(reduce(by_n[n])) for n in ns)
    if min(values) <= 0:
        raise ValueError(f"{statistic} of {field} must be positive to take logs")
    fit = stats.linregress(np.log(ns), np.log(values))
    return RegressionResult(float(fit.slope), float(fit.stderr), float(fit.intercept), ns, values)


def baseline_model_selection(Z) -> SolverResult:
    """Best single dictionary element by empirical log-likelihood; ties go to the lowest index."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[1] < 1:
        raise ValueError("Z must be an n x K matrix")
    with np.errstate(divide="ignore"):
        losses = -np.log(Z).mean(axis=0)
    j = int(np.flatnonzero(losses == losses.min())[0])
    w = np.zeros(Z.shape[1])
    w[j] = 1.0
    gap = frank_wolfe_gap(Z, w) if np.isfinite(losses[j]) else math.inf
    return SolverResult(w, float(losses[j]), gap, Z.shape[1], True, False, "model-selection")
