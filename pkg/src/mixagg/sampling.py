"""Seeded i.i.d. sampling from densities and mixtures on [0, 1]."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from mixagg.dictionary import Density, Dictionary


@dataclass(frozen=True)
class SeedSpec:
    """Identifies one reproducible random stream.

    Streams are independent across distinct (master_seed, replication_index,
    stream_label) triples and never share generator state.
    """

    master_seed: int
    replication_index: int = 0
    stream_label: str = "data"

    def child(self, label: str) -> "SeedSpec":
        return SeedSpec(self.master_seed, self.replication_index, f"{self.stream_label}/{label}")

    def entropy(self) -> list[int]:
        label = zlib.crc32(self.stream_label.encode("utf-8"))
        return [self.master_seed & 0xFFFFFFFFFFFFFFFF, self.replication_index, label]

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(self.entropy())))

    def as_int(self) -> int:
        """A 63-bit integer fingerprint of the stream, for logging."""
        state = np.random.SeedSequence(self.entropy()).generate_state(2, dtype=np.uint32)
        return int((int(state[0]) << 31) ^ int(state[1]))


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, SeedSpec):
        return seed.generator()
    if isinstance(seed, np.random.Generator):
        return seed
    return SeedSpec(int(seed)).generator()


def _rejection(density: Density, n: int, rng: np.random.Generator) -> np.ndarray:
    envelope = float(density.M)
    if not np.isfinite(envelope) or envelope <= 0:
        raise ValueError("rejection sampling needs a finite envelope M")
    out = np.empty(n)
    filled = 0
    while filled < n:
        # expected acceptance is 1/M per trial
        batch = int(np.ceil((n - filled) * envelope * 1.1)) + 16
        x = rng.random(batch)
        u = rng.random(batch)
        accepted = x[u * envelope <= density(x)]
        take = min(accepted.shape[0], n - filled)
        out[filled:filled + take] = accepted[:take]
        filled += take
    return out


def sample(density: Density, n: int, seed) -> np.ndarray:
    """Draw ``n`` points from ``density`` by rejection against Uniform[0, 1]."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    return _rejection(density, int(n), as_generator(seed))


def check_simplex(weights, tol: float = 1e-9) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.min() < -tol or abs(w.sum() - 1.0) > tol:
        raise ValueError("weights must lie on the probability simplex")
    return w


def sample_mixture(dictionary: Dictionary, weights, n: int, seed) -> np.ndarray:
    """Two-stage draw: component labels from ``weights``, then each point by rejection."""
    w = check_simplex(weights)
    if w.shape[0] != dictionary.K:
        raise ValueError("one weight per dictionary component required")
    w = np.clip(w, 0.0, None)
    w = w / w.sum()
    rng = as_generator(seed)
    labels = rng.choice(dictionary.K, size=int(n), p=w)
    out = np.empty(int(n))
    for j in np.flatnonzero(np.bincount(labels, minlength=dictionary.K)):
        idx = np.flatnonzero(labels == j)
        out[idx] = _rejection(dictionary.components[j], idx.shape[0], rng)
    return out


def write_samples(path, samples) -> None:
    np.savetxt(path, np.asarray(samples, dtype=float), fmt="%.17g")


def read_samples(path) -> np.ndarray:
    return np.atleast_1d(np.loadtxt(path, dtype=float))
