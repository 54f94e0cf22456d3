"""Sample-wise routing between the IDetNet and OAMPNet branches."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .channel import Batch
from .detectors import bit_errors, quantize
from .idetnet import IDetNetConfig, idetnet_detect
from .numerics import ContractError, Rng, Tensor
from .oampnet import OAMPNetConfig, oampnet_detect

ROUTE_HIDDEN = 128
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class RouteNetConfig:
    n_t: int = 4
    hidden: int = ROUTE_HIDDEN

    @property
    def in_width(self) -> int:
        return 4 * self.n_t ** 2 + 2 * self.n_t


def init_routenet(config: RouteNetConfig, rng: Rng) -> dict[str, np.ndarray]:
    std = np.sqrt(0.01)
    return {
        "W1": rng.gaussian(0.0, std, (config.hidden, config.in_width)),
        "b1": rng.gaussian(0.0, std, (config.hidden,)),
        "W2": rng.gaussian(0.0, std, (2, config.hidden)),
        "b2": rng.gaussian(0.0, std, (2,)),
    }


def param_count(config: RouteNetConfig) -> int:
    return config.hidden * config.in_width + config.hidden + 2 * config.hidden + 2


@dataclass
class NormStats:
    """Element-wise min/max of the RouteNet input blocks over a dataset."""

    sigma2_min: float
    sigma2_max: float
    gram_min: np.ndarray
    gram_max: np.ndarray
    n_r_min: float
    n_r_max: float
    source: str = ""

    def __post_init__(self):
        if self.sigma2_max < self.sigma2_min or self.n_r_max < self.n_r_min or np.any(self.gram_max < self.gram_min):
            raise ContractError("NormStats needs max >= min elementwise")

    @classmethod
    def from_arrays(cls, gram: np.ndarray, sigma2: np.ndarray, n_r: np.ndarray, source: str = "") -> "NormStats":
        flat = gram.reshape(len(gram), -1)
        return cls(float(sigma2.min()), float(sigma2.max()), flat.min(axis=0), flat.max(axis=0),
                   float(n_r.min()), float(n_r.max()), source)

    def to_dict(self) -> dict:
        return {"sigma2": [self.sigma2_min, self.sigma2_max],
                "gram_min": self.gram_min.tolist(), "gram_max": self.gram_max.tolist(),
                "n_r": [self.n_r_min, self.n_r_max], "source": self.source}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(d["sigma2"][0], d["sigma2"][1], np.asarray(d["gram_min"], dtype=np.float64),
                   np.asarray(d["gram_max"], dtype=np.float64), d["n_r"][0], d["n_r"][1], d.get("source", ""))


def normalize(s, s_min, s_max) -> np.ndarray:
    """(s - min)/(max - min); degenerate components map to 0, no clipping."""
    s, lo, hi = (np.asarray(a, dtype=np.float64) for a in (s, s_min, s_max))
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (s - lo) / safe, 0.0)


def build_route_input(gram: np.ndarray, sigma2: np.ndarray, n_r: np.ndarray, stats: NormStats) -> np.ndarray:
    """Rows ``[norm(sigma2) 1_{n_t}, norm(vec(H'H)), norm(N_r) 1_{n_t}]``."""
    gram = np.asarray(gram, dtype=np.float64)
    if gram.ndim == 2:
        gram = gram[None]
    B, n = gram.shape[0], gram.shape[-1]
    n_t = n // 2
    s = normalize(np.reshape(sigma2, (B, 1)), stats.sigma2_min, stats.sigma2_max)
    g = normalize(gram.reshape(B, -1), stats.gram_min, stats.gram_max)
    r = normalize(np.reshape(n_r, (B, 1)), stats.n_r_min, stats.n_r_max)
    return np.concatenate([np.repeat(s, n_t, axis=1), g, np.repeat(r, n_t, axis=1)], axis=1)


def routenet_logits(params, s_ro) -> Tensor:
    p = {k: nx.as_tensor(v) for k, v in params.items()}
    h = nx.sigmoid(nx.as_tensor(s_ro) @ nx.transpose(p["W1"]) + p["b1"])
    return h @ nx.transpose(p["W2"]) + p["b2"]


def routenet_forward(params, s_ro) -> tuple[Tensor, np.ndarray]:
    """Soft route probabilities and the hard route index (ties go to branch 0)."""
    logits = routenet_logits(params, s_ro)
    return nx.softmax(logits, axis=-1), route_index(logits.data)


def route_index(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits)
    return (logits[..., 1] > logits[..., 0]).astype(np.int64)


def route_label(be_id, be_oa) -> np.ndarray:
    """Label [1,0] (IDetNet) when its bit errors do not exceed OAMPNet's."""
    return route_label_eps(be_id, be_oa, 0)


def route_label_eps(be_1, be_2, eps) -> np.ndarray:
    first = np.asarray(be_1) - np.asarray(be_2) <= eps
    return np.stack([first, ~first], axis=-1).astype(np.int64)


@dataclass
class RouteSet:
    """Route dataset as parallel arrays; ``label`` is the class index (0 = IDetNet)."""

    gram: np.ndarray
    sigma2: np.ndarray
    n_r: np.ndarray
    label: np.ndarray
    be_id: np.ndarray
    be_oa: np.ndarray
    snr_db: np.ndarray | None = None

    def __len__(self):
        return len(self.label)

    def subset(self, idx) -> "RouteSet":
        return RouteSet(**{k: (None if v is None else v[idx]) for k, v in self.__dict__.items()})

    @property
    def one_hot(self) -> np.ndarray:
        return np.eye(2, dtype=np.int64)[self.label]

    def class_counts(self) -> tuple[int, int]:
        return int(np.sum(self.label == 0)), int(np.sum(self.label == 1))

    @staticmethod
    def concat(sets: list["RouteSet"]) -> "RouteSet":
        keys = sets[0].__dict__.keys()
        return RouteSet(**{k: (None if sets[0].__dict__[k] is None else np.concatenate([s.__dict__[k] for s in sets]))
                           for k in keys})


def branch_bit_errors(batch: Batch, id_params, id_cfg: IDetNetConfig, oa_params, oa_cfg: OAMPNetConfig):
    be_id = bit_errors(idetnet_detect(id_params, batch, id_cfg), batch.x)
    be_oa = bit_errors(oampnet_detect(oa_params, batch, oa_cfg), batch.x)
    return np.asarray(be_id), np.asarray(be_oa)


def build_route_dataset(batch: Batch, id_params, id_cfg: IDetNetConfig, oa_params, oa_cfg: OAMPNetConfig,
                        eps: float = 0) -> RouteSet:
    """Label every sample by which branch makes fewer bit errors (ties to IDetNet)."""
    be_id, be_oa = branch_bit_errors(batch, id_params, id_cfg, oa_params, oa_cfg)
    label = np.argmax(route_label_eps(be_id, be_oa, eps), axis=-1)
    return RouteSet(batch.gram, batch.sigma2, batch.n_r, label, be_id, be_oa, batch.snr_db)


def balance_route_dataset(routes: RouteSet, rng: Rng) -> RouteSet:
    """Drop random majority-class samples until both classes are equally large.

    Retained samples keep their original relative order; shuffle afterwards.
    """
    n0, n1 = routes.class_counts()
    if n0 == 0 or n1 == 0:
        raise ContractError(f"route dataset has an empty class (counts {n0}, {n1}); generate more data")
    major = 0 if n0 > n1 else 1
    idx_major = np.flatnonzero(routes.label == major)
    keep_major = np.sort(idx_major[rng.choice(len(idx_major), min(n0, n1))])
    keep = np.sort(np.concatenate([np.flatnonzero(routes.label != major), keep_major]))
    return routes.subset(keep)


def routenet_loss(params, routes: RouteSet, stats: NormStats, xi: float) -> Tensor:
    """Mean of cross-entropy plus ``xi`` times the expected extra bit errors."""
    if xi < 0:
        raise ContractError("xi must be >= 0")
    s_ro = build_route_input(routes.gram, routes.sigma2, routes.n_r, stats)
    r_soft = nx.softmax(routenet_logits(params, s_ro), axis=-1)
    return route_objective(r_soft, routes.one_hot, routes.be_id, routes.be_oa, xi)


def route_objective(r_soft: Tensor, r_lab: np.ndarray, be_id, be_oa, xi: float) -> Tensor:
    B = r_soft.shape[0]
    ce = -nx.sum(r_lab * nx.log(nx.maximum(r_soft, LOG_FLOOR)))
    costs = np.stack([np.asarray(be_id, float), np.asarray(be_oa, float)], axis=-1)
    penalty = nx.sum(r_soft * costs) - float(np.sum(np.minimum(be_id, be_oa)))
    return (ce + xi * penalty) / float(B)


def route_accuracy(params, routes: RouteSet, stats: NormStats) -> float:
    s_ro = build_route_input(routes.gram, routes.sigma2, routes.n_r, stats)
    return float(np.mean(route_index(routenet_logits(params, s_ro).data) == routes.label))


@dataclass
class DDNet:
    """Composite detector that runs exactly one branch per sample."""

    id_params: dict
    id_cfg: IDetNetConfig
    oa_params: dict
    oa_cfg: OAMPNetConfig
    ro_params: dict
    stats: NormStats
    calls: dict = field(default_factory=lambda: {"idetnet": 0, "oampnet": 0})

    def route(self, batch: Batch) -> np.ndarray:
        s_ro = build_route_input(batch.gram, batch.sigma2, batch.n_r, self.stats)
        return route_index(routenet_logits(self.ro_params, s_ro).data)

    def detect(self, batch: Batch, force: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Quantized estimates and the per-sample branch flag (1 = OAMPNet)."""
        flags = self.route(batch) if force is None else np.full(len(batch), int(force))
        x_hat = np.zeros_like(batch.x)
        for branch in (0, 1):
            idx = np.flatnonzero(flags == branch)
            if len(idx) == 0:
                continue
            sub = batch.subset(idx)
            if branch == 0:
                x_hat[idx] = idetnet_detect(self.id_params, sub, self.id_cfg)
                self.calls["idetnet"] += len(idx)
            else:
                x_hat[idx] = oampnet_detect(self.oa_params, sub, self.oa_cfg)
                self.calls["oampnet"] += len(idx)
        return quantize(x_hat), flags


def ddnet_detect(batch: Batch, model: DDNet) -> tuple[np.ndarray, np.ndarray]:
    return model.detect(batch)
