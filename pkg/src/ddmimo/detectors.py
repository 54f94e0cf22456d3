"""Classical baselines and Monte-Carlo BER evaluation."""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .channel import INV_SQRT2, Batch, Sample
from .numerics import ContractError

ML_MAX_NT = 8


def quantize(x_hat) -> np.ndarray:
    """Nearest point of {+-1/sqrt(2)} per component; exact zeros go to +1/sqrt(2)."""
    return np.where(np.asarray(x_hat) >= 0, INV_SQRT2, -INV_SQRT2)


def bit_errors(x_hat, x) -> int | np.ndarray:
    """Hamming distance between hard decisions; batched over leading axes."""
    x_hat, x = np.asarray(x_hat), np.asarray(x)
    if x_hat.shape != x.shape:
        raise ContractError(f"shape mismatch {x_hat.shape} vs {x.shape}")
    e = np.sum((x_hat >= 0) != (x >= 0), axis=-1)
    return int(e) if np.ndim(e) == 0 else e


def lmmse_soft(y, H, sigma2: float) -> np.ndarray:
    """Unquantized ``(H^T H + sigma2 I)^-1 H^T y``."""
    H = np.asarray(H, dtype=np.float64)
    A = H.T @ H + sigma2 * np.eye(H.shape[1])
    if sigma2 == 0 and np.linalg.matrix_rank(A) < A.shape[0]:
        raise np.linalg.LinAlgError("normal matrix is singular and sigma2 == 0")
    return np.linalg.solve(A, H.T @ np.asarray(y, dtype=np.float64))


def lmmse_detect(y, H, sigma2: float) -> np.ndarray:
    return quantize(lmmse_soft(y, H, sigma2))


def lmmse_batch(batch: Batch, soft: bool = False) -> np.ndarray:
    n = batch.gram.shape[-1]
    A = batch.gram + batch.sigma2[:, None, None] * np.eye(n)
    xs = np.linalg.solve(A, batch.hty[..., None])[..., 0]
    return xs if soft else quantize(xs)


def qpsk_candidates(n_t: int) -> np.ndarray:
    if n_t > ML_MAX_NT:
        raise ContractError(f"exhaustive ML refuses n_t={n_t} > {ML_MAX_NT}")
    return np.array(list(itertools.product((-INV_SQRT2, INV_SQRT2), repeat=2 * n_t)))


def ml_detect(y, H) -> np.ndarray:
    """Exhaustive ``argmin ||y - H x||^2`` over all QPSK vectors."""
    H = np.asarray(H, dtype=np.float64)
    X = qpsk_candidates(H.shape[1] // 2)
    r = np.asarray(y)[None, :] - X @ H.T
    return X[np.argmin(np.sum(r * r, axis=1))]


def ml_batch(batch: Batch, chunk: int = 2048) -> np.ndarray:
    """Batched ML using ``||y-Hx||^2 = y'y - 2 x'H'y + x'H'Hx`` (y'y dropped)."""
    X = qpsk_candidates(batch.n_t)
    out = np.empty_like(batch.x)
    for s in range(0, len(batch), chunk):
        G = batch.gram[s:s + chunk]
        quad = np.einsum("cj,bjk,ck->bc", X, G, X, optimize=True)
        metric = quad - 2.0 * batch.hty[s:s + chunk] @ X.T
        out[s:s + chunk] = X[np.argmin(metric, axis=1)]
    return out


@dataclass
class DetectorHandle:
    """Uniform wrapper: `fn` maps a Batch to estimates of shape (B, 2n_t)."""

    name: str
    fn: Callable[[Batch], np.ndarray]
    flops: Callable[[Batch], np.ndarray] | None = None

    def __call__(self, batch: Batch) -> np.ndarray:
        out = np.asarray(self.fn(batch))
        if out.shape != batch.x.shape:
            raise ContractError(f"{self.name} returned shape {out.shape}, expected {batch.x.shape}")
        return out

    def detect(self, sample: Sample) -> np.ndarray:
        return self(Batch.from_samples([sample]))[0]


LMMSE = DetectorHandle("LMMSE", lmmse_batch)
ML = DetectorHandle("ML", ml_batch)


@dataclass
class BerPoint:
    condition: float
    errors: int
    bits: int

    @property
    def ber(self) -> float:
        return self.errors / self.bits


@dataclass
class BerReport:
    detector: str
    axis: str
    points: list[BerPoint] = field(default_factory=list)
    sample_count: int = 0
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def errors(self) -> int:
        return int(np.sum([p.errors for p in self.points]))

    @property
    def bits(self) -> int:
        return int(np.sum([p.bits for p in self.points]))

    @property
    def ber(self) -> float:
        return self.errors / self.bits

    def csv_rows(self) -> list[list]:
        return [[self.detector, self.axis, p.condition, p.errors, p.bits, p.ber] for p in self.points]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["detector", "axis", "condition", "errors", "bits", "ber"])
        w.writerows(self.csv_rows())
        return buf.getvalue()

    def to_dict(self) -> dict:
        d = asdict(self)
        for p, dp in zip(self.points, d["points"]):
            dp["ber"] = p.ber
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def ber_evaluate(detector: DetectorHandle, conditions: Mapping[float, Batch | Sequence[Sample]],
                 axis: str = "snr_db", seed: int | None = None) -> BerReport:
    """Aggregate hard-decision bit errors of `detector` per condition point."""
    if not conditions:
        raise ContractError("no condition points given")
    report = BerReport(detector.name, axis, seed=seed)
    for cond, data in conditions.items():
        batch = data if isinstance(data, Batch) else (Batch.from_samples(data) if len(data) else None)
        if batch is None or len(batch) == 0:
            raise ContractError(f"condition {cond} has no samples")
        errs = bit_errors(detector(batch), batch.x)
        report.points.append(BerPoint(float(cond), int(np.sum(errs)), int(batch.x.size)))
        report.sample_count += len(batch)
    return report
