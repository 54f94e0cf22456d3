"""Correlated Rayleigh MIMO channels, QPSK symbols and real-domain samples."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import ContractError, Rng

INV_SQRT2 = 1.0 / np.sqrt(2.0)
ES = 1.0  # energy per complex QPSK symbol


@dataclass(frozen=True)
class SystemConfig:
    n_t: int = 4
    n_r_range: tuple[int, int] = (4, 16)
    snr_db_range: tuple[float, float] = (-5.0, 15.0)
    rho_range: tuple[float, float] = (0.0, 0.9)

    def __post_init__(self):
        lo, hi = self.n_r_range
        if self.n_t < 1:
            raise ContractError("n_t must be >= 1")
        if not (self.n_t <= lo <= hi):
            raise ContractError(f"n_r_range {self.n_r_range} must satisfy n_t <= lo <= hi")
        r0, r1 = self.rho_range
        if not (0.0 <= r0 <= r1 < 1.0):
            raise ContractError(f"rho_range {self.rho_range} must lie in [0, 1)")
        if self.snr_db_range[0] > self.snr_db_range[1]:
            raise ContractError("snr_db_range is reversed")


@dataclass(frozen=True)
class ClientProfile:
    client_id: int
    rho_subinterval: tuple[float, float]
    snr_subinterval: tuple[float, float]
    n_r_range: tuple[int, int]


@dataclass(frozen=True, eq=False)
class Sample:
    """One real-domain detection instance ``y = H x + n``."""

    y: np.ndarray
    H: np.ndarray
    sigma2: float
    x: np.ndarray
    n_r: int
    rho: float = 0.0
    snr_db: float = 0.0

    @property
    def n_t(self) -> int:
        return self.H.shape[1] // 2

    @property
    def bits(self) -> np.ndarray:
        return qpsk_demodulate(self.x)


@dataclass
class Dataset:
    samples: list[Sample]
    provenance: ClientProfile | str = "pooled"

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


@dataclass
class Batch:
    """Stacked per-sample quantities that do not depend on N_r's shape.

    Detectors only need ``H^T H``, ``H^T y`` and ``y^T y`` (plus the scalar
    N_r), so samples with different receive-antenna counts batch together.
    """

    gram: np.ndarray        # (B, 2n_t, 2n_t)
    hty: np.ndarray         # (B, 2n_t)
    yty: np.ndarray         # (B,)
    sigma2: np.ndarray      # (B,) complex-domain noise variance
    n_r: np.ndarray         # (B,)
    x: np.ndarray           # (B, 2n_t)
    snr_db: np.ndarray = field(default=None)
    rho: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.sigma2)

    @property
    def n_t(self) -> int:
        return self.x.shape[1] // 2

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Batch":
        if len(samples) == 0:
            raise ContractError("cannot batch an empty sample list")
        gram = np.stack([s.H.T @ s.H for s in samples])
        hty = np.stack([s.H.T @ s.y for s in samples])
        yty = np.array([s.y @ s.y for s in samples])
        return cls(
            gram=gram, hty=hty, yty=yty,
            sigma2=np.array([s.sigma2 for s in samples], dtype=np.float64),
            n_r=np.array([s.n_r for s in samples], dtype=np.float64),
            x=np.stack([s.x for s in samples]),
            snr_db=np.array([s.snr_db for s in samples]),
            rho=np.array([s.rho for s in samples]),
        )

    def subset(self, idx) -> "Batch":
        return Batch(**{k: (None if v is None else v[idx]) for k, v in self.__dict__.items()})


def correlation_matrix(n: int, rho: float) -> np.ndarray:
    """Exponential-squared correlation ``R[i, j] = rho ** ((i - j) ** 2)``."""
    if not (0.0 <= rho < 1.0):
        raise ContractError(f"rho must lie in [0, 1), got {rho}")
    d = np.arange(n)
    return np.power(rho, (d[:, None] - d[None, :]) ** 2).astype(np.float64)


def matrix_sqrt(R: np.ndarray, atol: float = 1e-10) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix."""
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1] or not np.allclose(R, R.T, atol=atol, rtol=0):
        raise ContractError("matrix_sqrt needs a symmetric square matrix")
    w, V = np.linalg.eigh(R)
    w = np.clip(w, 0.0, None)
    S = (V * np.sqrt(w)) @ V.T
    return 0.5 * (S + S.T)


def generate_channel(n_t: int, n_r: int, rho: float, rng: Rng, count: int | None = None) -> np.ndarray:
    """Kronecker channel ``sqrt(R_r) H_g sqrt(R_t)`` with H_g ~ CN(0, 1/N_r).

    Returns an (n_r, n_t) complex matrix, or (count, n_r, n_t) if `count`.
    """
    shape = (n_r, n_t) if count is None else (count, n_r, n_t)
    Hg = rng.complex_gaussian(1.0 / n_r, shape)
    if rho == 0.0:
        return Hg
    return matrix_sqrt(correlation_matrix(n_r, rho)) @ Hg @ matrix_sqrt(correlation_matrix(n_t, rho))


def realify(M: np.ndarray) -> np.ndarray:
    """Map complex matrices to ``[[Re, -Im], [Im, Re]]`` and vectors to ``[Re; Im]``.

    Leading batch axes are preserved for matrices given as 3-D arrays.
    """
    M = np.asarray(M)
    if M.ndim == 1:
        return np.concatenate([M.real, M.imag]).astype(np.float64)
    top = np.concatenate([M.real, -M.imag], axis=-1)
    bottom = np.concatenate([M.imag, M.real], axis=-1)
    return np.concatenate([top, bottom], axis=-2).astype(np.float64)


def qpsk_modulate(bits) -> np.ndarray:
    """Bit b in real coordinate i maps to (2b - 1)/sqrt(2)."""
    b = np.asarray(bits)
    if b.shape[-1] % 2:
        raise ContractError("bit count must be even (2 per complex symbol)")
    return (2.0 * b - 1.0) * INV_SQRT2


def qpsk_demodulate(x_hat) -> np.ndarray:
    """Hard decisions; exactly zero decides for bit 1, matching the quantizer."""
    return (np.asarray(x_hat) >= 0).astype(np.int8)


def snr_to_sigma2(snr_db, n_t: int, n_r) -> np.ndarray | float:
    """Noise variance giving received signal power / noise power = SNR."""
    return n_t * ES / (np.asarray(n_r, dtype=np.float64) * 10.0 ** (np.asarray(snr_db) / 10.0))


def generate_samples(count: int, n_t: int, n_r: int, rho: float, snr_db: float, rng: Rng) -> list[Sample]:
    """`count` i.i.d. samples at one fixed operating point (vectorized)."""
    sigma2 = float(snr_to_sigma2(snr_db, n_t, n_r))
    Ht = generate_channel(n_t, n_r, rho, rng, count=count)
    bits = rng.integers(0, 1, size=(count, 2 * n_t))
    x = qpsk_modulate(bits)
    noise = rng.complex_gaussian(sigma2, (count, n_r))
    H = realify(Ht)
    nr = np.concatenate([noise.real, noise.imag], axis=-1)
    y = np.einsum("bij,bj->bi", H, x) + nr
    return [Sample(y=y[i], H=H[i], sigma2=sigma2, x=x[i], n_r=n_r, rho=rho, snr_db=snr_db)
            for i in range(count)]


def generate_sample(rng: Rng, profile: ClientProfile | None = None, *, n_t: int | None = None,
                    n_r: int | None = None, rho: float | None = None, snr_db: float | None = None) -> Sample:
    """Draw one sample either from a client profile or at an explicit operating point.

    With a profile, rho and SNR are uniform over its subintervals and N_r is a
    uniform integer over its receive range; `n_t` is always required.
    """
    if n_t is None:
        raise ContractError("n_t is required")
    if profile is not None:
        rho = float(rng.uniform(*profile.rho_subinterval))
        snr_db = float(rng.uniform(*profile.snr_subinterval))
        n_r = int(rng.integers(*profile.n_r_range))
    if n_r is None or rho is None or snr_db is None:
        raise ContractError("need a profile or explicit (n_r, rho, snr_db)")
    return generate_samples(1, n_t, n_r, rho, snr_db, rng)[0]


def _subinterval(lo: float, hi: float, length: float, rng: Rng) -> tuple[float, float]:
    if hi - lo <= length:
        return (lo, hi)
    start = float(rng.uniform(lo, hi - length))
    return (start, start + length)


def make_client_profiles(system: SystemConfig, n_clients: int, rng: Rng,
                         rho_len: float = 0.2, snr_len: float = 5.0) -> list[ClientProfile]:
    profiles = []
    for m in range(n_clients):
        r = rng.split(m)
        profiles.append(ClientProfile(
            client_id=m,
            rho_subinterval=_subinterval(*system.rho_range, rho_len, r),
            snr_subinterval=_subinterval(*system.snr_db_range, snr_len, r),
            n_r_range=tuple(system.n_r_range),
        ))
    return profiles


def generate_client_dataset(profile: ClientProfile, count: int, n_t: int, rng: Rng) -> Dataset:
    if count < 1:
        raise ContractError("count must be >= 1")
    return Dataset([generate_sample(rng, profile, n_t=n_t) for _ in range(count)], provenance=profile)


def pool(datasets: Sequence[Dataset], rng: Rng) -> Dataset:
    """Shuffled concatenation of client datasets."""
    allsamples = [s for d in datasets for s in d.samples]
    order = rng.permutation(len(allsamples))
    return Dataset([allsamples[i] for i in order], provenance="pooled")


def generate_mixed(count: int, system: SystemConfig, rng: Rng) -> Dataset:
    """Samples drawn over the full global ranges (used for mixed test sets)."""
    wide = ClientProfile(-1, tuple(system.rho_range), tuple(system.snr_db_range), tuple(system.n_r_range))
    return Dataset([generate_sample(rng, wide, n_t=system.n_t) for _ in range(count)], provenance="mixed")
