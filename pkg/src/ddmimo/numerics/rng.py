"""Seeded, splittable random streams on numpy's counter-based Philox generator."""
from __future__ import annotations

import numpy as np

from .autodiff import ContractError


class Rng:
    """A reproducible random stream.

    ``Rng(seed).split(client_id, epoch)`` derives an independent child stream
    from the hash of ``(seed, client_id, epoch)``, so parallel clients never
    share state and replay is exact regardless of execution order.
    """

    def __init__(self, seed: int, *keys: int):
        self.seed = int(seed)
        self.keys = tuple(int(k) for k in keys)
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, *self.keys])
        self._gen = np.random.Generator(np.random.Philox(ss))

    def split(self, *keys: int) -> "Rng":
        return Rng(self.seed, *self.keys, *keys)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def gaussian(self, mu: float = 0.0, sigma: float = 1.0, size=None) -> np.ndarray:
        if sigma < 0:
            raise ContractError(f"sigma must be >= 0, got {sigma}")
        return self._gen.normal(mu, sigma, size)

    def uniform(self, a: float = 0.0, b: float = 1.0, size=None) -> np.ndarray:
        if a > b:
            raise ContractError(f"uniform needs a <= b, got [{a}, {b}]")
        return self._gen.uniform(a, b, size)

    def bernoulli(self, p, size=None) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        if np.any(p < 0) or np.any(p > 1):
            raise ContractError("bernoulli probability outside [0, 1]")
        shape = size if size is not None else p.shape
        return (self._gen.random(shape) < p).astype(np.int8)

    def complex_gaussian(self, variance: float = 1.0, size=None) -> np.ndarray:
        """Circular complex normal: real and imaginary parts each N(0, variance/2)."""
        if variance < 0:
            raise ContractError(f"variance must be >= 0, got {variance}")
        s = np.sqrt(variance / 2.0)
        return s * self._gen.standard_normal(size) + 1j * s * self._gen.standard_normal(size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Uniform integers on the inclusive range [low, high]."""
        return self._gen.integers(low, high, size=size, endpoint=True)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n)."""
        if k > n:
            raise ContractError(f"cannot choose {k} of {n} without replacement")
        return self._gen.choice(n, size=k, replace=False)
