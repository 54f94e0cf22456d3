"""Federated training: FedAve, sparsified-gradient FedGS and bit accounting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .numerics import AdamState, ContractError, Rng, adam_step, flatten, unflatten, value_and_grad

Params = dict[str, np.ndarray]
LossFn = Callable[[dict, Any], Any]

PHASES = ("idetnet", "routenet")
_PHASE_KEY = {"idetnet": 1, "routenet": 2}


@dataclass
class ClientState:
    client_id: int
    data: Any                   # detection Batch
    routes: Any = None          # RouteSet, built after the branches are trained
    rng: Rng | None = None

    @property
    def n_detection(self) -> int:
        return len(self.data)

    @property
    def n_route(self) -> int:
        return 0 if self.routes is None else len(self.routes)


@dataclass
class FedConfig:
    n_clients: int = 20
    m_id: int = 8
    m_ro: int = 16
    local_steps: int = 1
    t_id: int = 100
    t_ro: int = 40
    delta: float = 1.0
    bits: int = 32
    lr: float = 1e-3

    def __post_init__(self):
        if not (1 <= self.m_id <= self.n_clients and 1 <= self.m_ro <= self.n_clients):
            raise ContractError("clients per epoch must lie in [1, n_clients]")
        if self.local_steps < 1:
            raise ContractError("local_steps must be >= 1")
        if not (0.0 < self.delta <= 1.0):
            raise ContractError("delta must lie in (0, 1]")

    def clients_per_epoch(self, phase: str) -> int:
        return self.m_id if phase == "idetnet" else self.m_ro

    def epochs(self, phase: str) -> int:
        return self.t_id if phase == "idetnet" else self.t_ro


@dataclass
class OverheadLedger:
    """Running bit counters, also split by training phase."""

    bits_broadcast: int = 0
    bits_upload: int = 0
    bits_index: int = 0
    phases: dict = field(default_factory=dict)

    def add(self, phase: str, broadcast: int = 0, upload: int = 0, index: int = 0) -> None:
        if min(broadcast, upload, index) < 0:
            raise ContractError("ledger increments must be nonnegative")
        self.bits_broadcast += int(broadcast)
        self.bits_upload += int(upload)
        self.bits_index += int(index)
        ph = self.phases.setdefault(phase, {"broadcast": 0, "upload": 0, "index": 0})
        ph["broadcast"] += int(broadcast)
        ph["upload"] += int(upload)
        ph["index"] += int(index)

    @property
    def total(self) -> int:
        return self.bits_broadcast + self.bits_upload + self.bits_index

    def snapshot(self) -> dict:
        return {"broadcast": self.bits_broadcast, "upload": self.bits_upload, "index": self.bits_index,
                "total": self.total, "phases": {k: dict(v) for k, v in self.phases.items()}}


def local_update(global_params: Params, loss_fn: LossFn, data, steps: int, lr: float = 1e-3) -> Params:
    """`steps` full-batch ADAM steps from the broadcast parameters, fresh moments."""
    if steps < 1:
        raise ContractError("steps must be >= 1")
    state = AdamState(lr=lr)
    params = {k: np.array(v) for k, v in global_params.items()}
    for _ in range(steps):
        _, grads = value_and_grad(loss_fn, params, data)
        params = adam_step(state, params, grads)
    return params


def aggregate_weighted(params_list: Sequence[Params], sizes: Sequence[float]) -> Params:
    """Size-weighted elementwise average of client parameter sets."""
    if len(params_list) == 0:
        raise ContractError("nothing to aggregate")
    if len(params_list) != len(sizes) or min(sizes) <= 0:
        raise ContractError("need one positive size per parameter set")
    w = np.asarray(sizes, dtype=np.float64)
    w = w / w.sum()
    out = {}
    for name in params_list[0]:
        acc = np.zeros_like(np.asarray(params_list[0][name], dtype=np.float64))
        for wi, p in zip(w, params_list):
            if np.shape(p[name]) != acc.shape:
                raise ContractError(f"shape mismatch for {name!r}")
            acc = acc + wi * p[name]
        out[name] = acc
    return out


def select_clients(n_clients: int, m: int, rng: Rng, phase: str, epoch: int) -> np.ndarray:
    """Uniform draw of `m` distinct clients, independent per (phase, epoch)."""
    if m > n_clients:
        raise ContractError(f"cannot select {m} of {n_clients} clients")
    return np.sort(rng.split(_PHASE_KEY[phase], epoch).choice(n_clients, m))


def _client_payload(client: ClientState, phase: str):
    data = client.data if phase == "idetnet" else client.routes
    if data is None or len(data) == 0:
        raise ContractError(f"client {client.client_id} has no {phase} data")
    return data, len(data)


def fedave_train(clients: Sequence[ClientState], config: FedConfig, phase: str, init_params: Params,
                 loss_fn: LossFn, rng: Rng, ledger: OverheadLedger | None = None,
                 log: Callable[[dict], None] | None = None) -> tuple[Params, OverheadLedger]:
    """Federated averaging for one network (`phase` is "idetnet" or "routenet")."""
    if phase not in PHASES:
        raise ContractError(f"unknown phase {phase!r}")
    ledger = ledger if ledger is not None else OverheadLedger()
    M, T = config.clients_per_epoch(phase), config.epochs(phase)
    if M > len(clients):
        raise ContractError(f"M={M} exceeds the {len(clients)} available clients")
    params = {k: np.array(v, dtype=np.float64) for k, v in init_params.items()}
    Q = int(flatten(params).size)
    b = config.bits
    for t in range(1, T + 1):
        chosen = select_clients(len(clients), M, rng, phase, t)
        locals_, sizes = [], []
        for i in chosen:
            data, size = _client_payload(clients[i], phase)
            locals_.append(local_update(params, loss_fn, data, config.local_steps, config.lr))
            sizes.append(size)
        params = aggregate_weighted(locals_, sizes)
        ledger.add(phase, broadcast=b * Q * M, upload=b * Q * M)
        if log is not None:
            log({"phase": phase, "epoch": t, "clients": chosen.tolist(), "ledger": ledger.snapshot(),
                 "params": params})
    return params, ledger


@dataclass
class SparsifiedGradient:
    values: np.ndarray      # amplified kept entries g_q / p_q, in index order
    mask: np.ndarray        # bool, length Q
    p: np.ndarray           # selection probabilities
    iterations: int = 0

    @property
    def q(self) -> int:
        return int(self.mask.size)

    @property
    def n_sent(self) -> int:
        return int(self.mask.sum())

    def dense(self) -> np.ndarray:
        out = np.zeros(self.q)
        out[self.mask] = self.values
        return out


def selection_probabilities(g: np.ndarray, delta: float, tol: float = 1e-2, max_iter: int = 1000) -> tuple[np.ndarray, int]:
    """Probabilities ``p_q = min(lambda |g_q|, 1)`` found by iterative amplification.

    Start from ``min(delta Q |g_q| / sum|g|, 1)``; repeatedly rescale the
    unsaturated entries so the total would reach ``delta Q``, stopping once
    the rescale factor is within `tol` of 1.
    """
    if not (0.0 < delta <= 1.0):
        raise ContractError("delta must lie in (0, 1]")
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ContractError("gradient has non-finite entries")
    mag = np.abs(g)
    Q = mag.size
    total = mag.sum()
    if total == 0:
        return np.zeros(Q), 0
    if delta == 1.0:
        # full budget: every coordinate is sent, zeros included
        return np.ones(Q), 0
    target = delta * Q
    p = np.minimum(target * mag / total, 1.0)
    it = 0
    while it < max_iter:
        open_ = p < 1.0
        mass = p[open_].sum()
        if not open_.any() or mass == 0:
            break
        amp = (target - Q + open_.sum()) / mass
        p[open_] = np.minimum(amp * p[open_], 1.0)
        it += 1
        if amp <= 1.0 + tol:
            break
    return p, it


def sparsify(g, delta: float, rng: Rng) -> SparsifiedGradient:
    """Unbiased random sparsification: keep g_q with probability p_q, send g_q / p_q."""
    g = np.asarray(g, dtype=np.float64)
    p, it = selection_probabilities(g, delta)
    mask = rng.bernoulli(p).astype(bool)
    return SparsifiedGradient(values=g[mask] / p[mask], mask=mask, p=p, iterations=it)


def fedgs_aggregate(sparsified: Sequence[SparsifiedGradient], sizes: Sequence[float]) -> np.ndarray:
    if len(sparsified) == 0:
        raise ContractError("nothing to aggregate")
    qs = {s.q for s in sparsified}
    if len(qs) != 1:
        raise ContractError("sparsified gradients have different lengths")
    w = np.asarray(sizes, dtype=np.float64)
    w = w / w.sum()
    out = np.zeros(qs.pop())
    for wi, s in zip(w, sparsified):
        out[s.mask] += wi * s.values
    return out


def fedgs_server_step(state: AdamState, params: Params, gradient: np.ndarray) -> Params:
    """One ADAM step on the aggregated flat gradient; `state` persists across epochs."""
    return adam_step(state, params, unflatten(gradient, params))


def fedgs_train(clients: Sequence[ClientState], config: FedConfig, phase: str, init_params: Params,
                loss_fn: LossFn, rng: Rng, ledger: OverheadLedger | None = None,
                log: Callable[[dict], None] | None = None,
                server_state: AdamState | None = None) -> tuple[Params, OverheadLedger]:
    if phase not in PHASES:
        raise ContractError(f"unknown phase {phase!r}")
    ledger = ledger if ledger is not None else OverheadLedger()
    state = server_state if server_state is not None else AdamState(lr=config.lr)
    M, T = config.clients_per_epoch(phase), config.epochs(phase)
    if M > len(clients):
        raise ContractError(f"M={M} exceeds the {len(clients)} available clients")
    params = {k: np.array(v, dtype=np.float64) for k, v in init_params.items()}
    Q = int(flatten(params).size)
    b = config.bits
    for t in range(1, T + 1):
        chosen = select_clients(len(clients), M, rng, phase, t)
        uploads, sizes = [], []
        for i in chosen:
            data, size = _client_payload(clients[i], phase)
            _, grads = value_and_grad(loss_fn, params, data)
            crng = rng.split(_PHASE_KEY[phase], t, 1000 + int(i))
            s = sparsify(flatten(grads), config.delta, crng)
            uploads.append(s)
            sizes.append(size)
            ledger.add(phase, upload=b * s.n_sent, index=Q)
        ledger.add(phase, broadcast=b * Q * M)
        params = fedgs_server_step(state, params, fedgs_aggregate(uploads, sizes))
        if log is not None:
            log({"phase": phase, "epoch": t, "clients": chosen.tolist(), "ledger": ledger.snapshot(),
                 "sent_fraction": float(np.mean([u.n_sent / Q for u in uploads])), "params": params})
    return params, ledger


# -- closed-form overheads --------------------------------------------------------

def sample_floats(n_t: int, n_r: int) -> int:
    """Floats needed to ship one (y, H, sigma2, x) sample."""
    return 2 * n_r + 4 * n_t * n_r + 2 * n_t + 1


def sample_bits(n_t: int, n_r: int, b: int = 32) -> int:
    return b * sample_floats(n_t, n_r)


def t_cl(n_r_values: Sequence[int], n_t: int, b: int = 32) -> int:
    return int(sum(sample_bits(n_t, int(n_r), b) for n_r in n_r_values))


def t_fedave(config: FedConfig, q_id: int, q_ro: int) -> int:
    return 2 * config.bits * (q_id * config.t_id * config.m_id + q_ro * config.t_ro * config.m_ro)


def _ceil_floats(delta: float, q: int) -> int:
    return math.ceil(delta * q - 1e-9)


def t_fedgs(config: FedConfig, q_id: int, q_ro: int, delta: float | None = None,
            index_per_client: bool = False) -> int:
    """Gradient upload + index bitmap + broadcast bits.

    The index term is ``Q_ID T_ID + Q_RO T_RO`` as in the closed form; with
    `index_per_client` every uploading client pays its own bitmap instead.
    """
    delta = config.delta if delta is None else delta
    b = config.bits
    upload = b * (_ceil_floats(delta, q_id) * config.t_id * config.m_id
                  + _ceil_floats(delta, q_ro) * config.t_ro * config.m_ro)
    if index_per_client:
        index = q_id * config.t_id * config.m_id + q_ro * config.t_ro * config.m_ro
    else:
        index = q_id * config.t_id + q_ro * config.t_ro
    broadcast = b * (q_id * config.t_id * config.m_id + q_ro * config.t_ro * config.m_ro)
    return upload + index + broadcast
