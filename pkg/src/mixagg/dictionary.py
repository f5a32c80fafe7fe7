"""Density dictionaries on [0, 1], their evaluation matrices and Gram matrices.

All integrals on [0, 1] use composite Simpson on a uniform grid; the default
grid has 2**12 + 1 nodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

DEFAULT_NODES = 2**12 + 1


@lru_cache(maxsize=8)
def _simpson_grid(nodes: int):
    x = np.linspace(0.0, 1.0, nodes)
    w = np.empty(nodes)
    w[0::2] = 2.0
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    w *= (1.0 / (nodes - 1)) / 3.0
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def quadrature_grid(nodes: int = DEFAULT_NODES):
    """Nodes and composite Simpson weights on [0, 1]; ``nodes`` must be odd and >= 3."""
    if nodes < 3 or nodes % 2 == 0:
        raise ValueError(f"Simpson quadrature needs an odd node count >= 3, got {nodes}")
    return _simpson_grid(int(nodes))


def integrate(values, nodes: int | None = None) -> float:
    values = np.asarray(values, dtype=float)
    _, w = quadrature_grid(nodes or values.shape[0])
    return float(w @ values)


@dataclass(frozen=True, eq=False)
class Density:
    """A density on [0, 1] with certified bounds ``m <= f <= M``.

    ``kind`` is one of ``"sine"`` (params: ``frequency``), ``"tabulated"``
    (params: ``values``, piecewise linear on a uniform grid) or ``"mixture"``
    (params: ``components``, ``weights``).
    """

    kind: str
    params: dict = field(repr=False)
    m: float
    M: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "sine":
            k = self.params["frequency"]
            if k == 0:
                return np.ones_like(x)
            return 1.0 + self.params.get("amplitude", 0.5) * np.sin(2.0 * np.pi * k * x)
        if self.kind == "tabulated":
            values = self.params["values"]
            knots = np.linspace(0.0, 1.0, values.shape[0])
            return np.interp(x, knots, values)
        if self.kind == "mixture":
            out = np.zeros_like(x)
            for w, comp in zip(self.params["weights"], self.params["components"]):
                if w != 0.0:
                    out = out + w * comp(x)
            return out
        raise ValueError(f"unknown density kind {self.kind!r}")

    def check(self, nodes: int = DEFAULT_NODES, tol: float = 1e-9) -> None:
        """Raise if the density fails normalization or its stated bounds on the grid."""
        x, w = quadrature_grid(nodes)
        v = self(x)
        if self.kind == "tabulated":
            # Simpson is not exact across kinks; the knot trapezoid is
            knots = self.params["values"]
            mass = float((knots.sum() - 0.5 * (knots[0] + knots[-1])) / (knots.shape[0] - 1))
        else:
            mass = float(w @ v)
        if abs(mass - 1.0) > tol:
            raise ValueError(f"density integrates to {mass!r}, not 1")
        slack = 1e-12 * max(1.0, self.M)
        if v.min() < self.m - slack or v.max() > self.M + slack:
            raise ValueError("density leaves its [m, M] bounds on the grid")


def uniform_density() -> Density:
    return Density("sine", {"frequency": 0}, 1.0, 1.0)


def sine_density(k: int, amplitude: float = 0.5) -> Density:
    """f(x) = 1 + amplitude * sin(2 pi k x); ``k = 0`` is the uniform density.

    ``amplitude = 1`` gives a density that touches zero.
    """
    if k < 0:
        raise ValueError("frequency must be nonnegative")
    if not 0.0 <= amplitude <= 1.0:
        raise ValueError("amplitude must lie in [0, 1]")
    if k == 0:
        return uniform_density()
    params = {"frequency": int(k)}
    if amplitude != 0.5:
        params["amplitude"] = float(amplitude)
    return Density("sine", params, 1.0 - amplitude, 1.0 + amplitude)


def tabulated_density(values, allow_zero: bool = False) -> Density:
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.shape[0] < 2:
        raise ValueError("tabulated density needs at least two grid values")
    if not np.all(np.isfinite(values)):
        raise ValueError("tabulated values must be finite")
    if allow_zero:
        if values.min() < 0.0 or values.max() <= 0.0:
            raise ValueError("tabulated values must be nonnegative and not all zero")
    elif values.min() <= 0.0:
        raise ValueError("tabulated values must be strictly positive")
    # trapezoid on the knots is the exact integral of the linear interpolant
    h = 1.0 / (values.shape[0] - 1)
    mass = h * (values.sum() - 0.5 * (values[0] + values[-1]))
    values = values / mass
    values.setflags(write=False)
    return Density("tabulated", {"values": values}, float(values.min()), float(values.max()))


def normalize_tabulated(grid) -> Density:
    """Piecewise-linear density through ``grid`` on a uniform partition of [0, 1].

    Values must be strictly positive; the result is rescaled so its integral is
    exactly one and ``m``/``M`` are its extreme grid values.
    """
    return tabulated_density(grid, allow_zero=False)


def mixture_density(components, weights) -> Density:
    weights = np.asarray(weights, dtype=float)
    comps = tuple(components)
    if weights.shape != (len(comps),):
        raise ValueError("one weight per component required")
    m = sum(w * c.m for w, c in zip(weights, comps))
    M = sum(w * c.M for w, c in zip(weights, comps))
    return Density("mixture", {"components": comps, "weights": weights}, float(m), float(M))


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Ordered family of K densities sharing bounds ``m``, ``M`` plus a centering f0."""

    components: tuple
    centering: Density
    m: float
    M: float
    kind: str = "custom"

    def __post_init__(self):
        if len(self.components) < 1:
            raise ValueError("a dictionary needs at least one component")
        if not (0.0 <= self.m <= self.M):
            raise ValueError("need 0 <= m <= M")

    @property
    def K(self) -> int:
        return len(self.components)

    @property
    def V(self) -> float:
        return self.M / self.m if self.m > 0 else float("inf")

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty((x.shape[0], self.K))
        for j, comp in enumerate(self.components):
            out[:, j] = comp(x)
        return out

    def mixture(self, weights) -> Density:
        return mixture_density(self.components, weights)

    def mixture_values(self, weights, x) -> np.ndarray:
        return self.evaluate(x) @ np.asarray(weights, dtype=float)


def make_dictionary(components, centering: Density | None = None, kind: str = "custom") -> Dictionary:
    comps = tuple(components)
    if not comps:
        raise ValueError("a dictionary needs at least one component")
    m = min(c.m for c in comps)
    M = max(c.M for c in comps)
    return Dictionary(comps, centering or uniform_density(), m, M, kind)


def sine_dictionary(K: int, amplitude: float = 0.5) -> Dictionary:
    """f_k(x) = 1 + amplitude * sin(2 pi k x) for k = 1..K, centered at f0 = 1."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    comps = tuple(sine_density(k, amplitude) for k in range(1, K + 1))
    return Dictionary(comps, uniform_density(), 1.0 - amplitude, 1.0 + amplitude, "sine")


def evaluation_matrix(dictionary: Dictionary, samples) -> np.ndarray:
    """n x K matrix with entry (i, j) = f_j(X_i)."""
    x = np.atleast_1d(np.asarray(samples, dtype=float))
    if x.ndim != 1:
        raise ValueError("samples must be one-dimensional")
    if x.size and (x.min() < 0.0 or x.max() > 1.0 or not np.all(np.isfinite(x))):
        raise ValueError("samples must lie in [0, 1]")
    return dictionary.evaluate(x)


def population_gram(dictionary: Dictionary, quadrature_nodes: int = DEFAULT_NODES,
                    reference: Density | None = None) -> np.ndarray:
    """E[(f_k - f0)(f_l - f0)] under ``reference`` (Lebesgue when None)."""
    if quadrature_nodes < 64:
        raise ValueError("population_gram needs at least 64 quadrature nodes")
    x, w = quadrature_grid(quadrature_nodes)
    zbar = dictionary.evaluate(x) - dictionary.centering(x)[:, None]
    weights = w if reference is None else w * reference(x)
    gram = zbar.T @ (zbar * weights[:, None])
    return 0.5 * (gram + gram.T)


def empirical_gram(Z, f0_values) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    f0_values = np.asarray(f0_values, dtype=float)
    if Z.ndim != 2 or f0_values.shape != (Z.shape[0],):
        raise ValueError(f"f0_values must have length n={Z.shape[0] if Z.ndim == 2 else '?'}")
    zbar = Z - f0_values[:, None]
    gram = zbar.T @ zbar / Z.shape[0]
    return 0.5 * (gram + gram.T)


# -- serialization -----------------------------------------------------------

def _density_entry(d: Density):
    if d.kind == "sine":
        entry = {"kind": "sine", "frequency": d.params["frequency"]}
        if "amplitude" in d.params:
            entry["amplitude"] = d.params["amplitude"]
        return entry
    if d.kind == "tabulated":
        return {"kind": "tabulated", "values": d.params["values"].tolist()}
    raise ValueError(f"cannot serialize a {d.kind!r} density inside a dictionary")


def _density_from_entry(entry) -> Density:
    if entry["kind"] == "sine":
        return sine_density(int(entry["frequency"]), float(entry.get("amplitude", 0.5)))
    if entry["kind"] == "tabulated":
        return tabulated_density(entry["values"], allow_zero=True)
    raise ValueError(f"unknown density kind {entry['kind']!r}")


def dictionary_to_dict(dictionary: Dictionary) -> dict:
    if dictionary.kind == "sine":
        params = {"frequencies": [c.params["frequency"] for c in dictionary.components]}
        amplitudes = {c.params.get("amplitude", 0.5) for c in dictionary.components}
        if amplitudes != {0.5}:
            if len(amplitudes) > 1:
                raise ValueError("sine dictionary with mixed amplitudes; use kind 'custom'")
            params["amplitude"] = amplitudes.pop()
    else:
        params = {"components": [_density_entry(c) for c in dictionary.components]}
    params["centering"] = _density_entry(dictionary.centering)
    return {"kind": dictionary.kind, "K": dictionary.K, "params": params,
            "m": dictionary.m, "M": dictionary.M}


def dictionary_from_dict(doc: dict) -> Dictionary:
    params = doc["params"]
    centering = _density_from_entry(params["centering"]) if "centering" in params else None
    if doc["kind"] == "sine":
        amp = float(params.get("amplitude", 0.5))
        comps = [sine_density(int(k), amp) for k in params["frequencies"]]
    else:
        comps = [_density_from_entry(e) for e in params["components"]]
    if len(comps) != int(doc["K"]):
        raise ValueError("K does not match the number of components")
    d = make_dictionary(comps, centering, kind=doc["kind"])
    if d.m < float(doc["m"]) - 1e-12 or d.M > float(doc["M"]) + 1e-12:
        raise ValueError("stored bounds m, M do not cover the components")
    return Dictionary(d.components, d.centering, float(doc["m"]), float(doc["M"]), d.kind)


def save_dictionary(dictionary: Dictionary, path) -> None:
    with open(path, "w") as fh:
        json.dump(dictionary_to_dict(dictionary), fh, indent=2)


def load_dictionary(path) -> Dictionary:
    with open(path) as fh:
        return dictionary_from_dict(json.load(fh))
