"""Training and evaluation pipelines built on the model and federated modules."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .channel import Batch, Dataset, generate_client_dataset, generate_mixed, generate_samples, make_client_profiles, pool
from .complexity import flop_count
from .config import ExperimentConfig
from .ddnet import (
    DDNet, NormStats, RouteSet, balance_route_dataset, build_route_dataset, init_routenet, routenet_loss,
)
from .detectors import LMMSE, ML, ML_MAX_NT, BerPoint, BerReport, DetectorHandle, bit_errors, quantize
from .federated import ClientState, OverheadLedger, fedave_train, fedgs_train
from .idetnet import IDetNetConfig, idetnet_detect, idetnet_loss, init_idetnet
from .numerics import AdamState, ContractError, NonFiniteError, Rng, adam_step, plateau_decay, value_and_grad
from .oampnet import OAMPNetConfig, init_oampnet, oampnet_detect, oampnet_loss

Log = Callable[[dict], None]

# stream keys, so every stage draws from its own reproducible stream
K_DATA, K_SPLIT, K_ID, K_OA, K_ROUTE, K_RO, K_FED, K_EVAL = range(1, 9)


class TrainingDiverged(RuntimeError):
    pass


def _noop(_record: dict) -> None:
    pass


# -- data ---------------------------------------------------------------------------

def generate_clients(cfg: ExperimentConfig, rng: Rng) -> list[Dataset]:
    system = cfg.system_config()
    profiles = make_client_profiles(system, cfg.data.n_clients, rng.split(K_DATA, 0),
                                    cfg.data.rho_subinterval, cfg.data.snr_subinterval)
    return [generate_client_dataset(p, cfg.data.samples_per_client, system.n_t, rng.split(K_DATA, 1, p.client_id))
            for p in profiles]


def pool_clients(datasets: Sequence[Dataset], rng: Rng) -> Dataset:
    return pool(datasets, rng.split(K_DATA, 2))


def split_validation(data, fraction: float, rng: Rng):
    """Random (train, validation) split of a Batch or RouteSet; no validation if fraction is 0."""
    n = len(data)
    n_val = int(round(fraction * n))
    if n_val == 0:
        return data, None
    if n_val >= n:
        raise ContractError("validation split leaves no training data")
    order = rng.permutation(n)
    return data.subset(np.sort(order[n_val:])), data.subset(np.sort(order[:n_val]))


# -- generic minibatch trainer ---------------------------------------------------------

@dataclass
class TrainResult:
    params: dict
    history: list[dict] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.history[0]["train_loss_start"]

    @property
    def final_loss(self) -> float:
        return self.history[-1]["train_loss"]


def train_minibatch(loss_fn: Callable, params: dict, data, epochs: int, batch_size: int, rng: Rng,
                    val=None, lr: float = 1e-3, patience: int = 20, decay: float = 0.9,
                    name: str = "model", log: Log = _noop, keep_best: bool = True) -> TrainResult:
    """Minibatch ADAM with the plateau learning-rate rule on the validation loss.

    ``loss_fn(params, data_subset)`` returns a scalar tensor. With `keep_best`
    the parameters of the lowest validation loss are returned.
    """
    state = AdamState(lr=lr, patience=patience, decay=decay)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    n = len(data)
    if n == 0:
        raise ContractError(f"{name}: empty training set")
    history, val_hist = [], []
    best = (np.inf, params)
    for epoch in range(epochs):
        order = rng.split(epoch).permutation(n)
        losses = []
        for s in range(0, n, batch_size):
            chunk = data.subset(np.sort(order[s:s + batch_size]))
            try:
                loss, grads = value_and_grad(loss_fn, params, chunk)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"{name}: non-finite value at epoch {epoch}, step {s // batch_size} "
                                       f"(lr={state.lr:.3g}): {exc}") from exc
            if not np.isfinite(loss):
                raise TrainingDiverged(f"{name}: loss became {loss} at epoch {epoch}")
            losses.append(loss)
            params = adam_step(state, params, grads)
        v = float(loss_fn(params, val).data) if val is not None else float(np.mean(losses))
        val_hist.append(v)
        plateau_decay(state, val_hist)
        if keep_best and v < best[0]:
            best = (v, params)
        rec = {"model": name, "epoch": epoch, "train_loss_start": losses[0], "train_loss": float(np.mean(losses)),
               "val_loss": v, "lr": state.lr}
        history.append(rec)
        log(rec)
    return TrainResult(best[1] if keep_best else params, history)


# -- individual networks -----------------------------------------------------------

def train_idetnet(cfg: IDetNetConfig, train: Batch, rng: Rng, *, val: Batch | None = None, epochs: int = 40,
                  batch_size: int = 64, lr: float = 1e-3, patience: int = 20, decay: float = 0.9,
                  init: dict | None = None, log: Log = _noop) -> TrainResult:
    params = init if init is not None else init_idetnet(cfg, rng.split(0))
    loss = lambda p, b: idetnet_loss(p, b, cfg)  # noqa: E731
    return train_minibatch(loss, params, train, epochs, batch_size, rng.split(1), val, lr, patience, decay,
                           "idetnet", log)


def train_oampnet(cfg: OAMPNetConfig, train: Batch, rng: Rng, *, epochs: int = 1, batch_size: int = 1,
                  lr: float = 1e-3, init: dict | None = None, log: Log = _noop) -> TrainResult:
    """Few-shot OAMPNet training; the final parameters are kept (no validation)."""
    params = init if init is not None else init_oampnet(cfg)
    loss = lambda p, b: oampnet_loss(p, b, cfg)  # noqa: E731
    return train_minibatch(loss, params, train, epochs, batch_size, rng, None, lr, name="oampnet", log=log,
                           keep_best=False)


def route_stats(routes: RouteSet, source: str = "") -> NormStats:
    return NormStats.from_arrays(routes.gram, routes.sigma2, routes.n_r, source)


def train_routenet(cfg, routes: RouteSet, stats: NormStats, xi: float, rng: Rng, *, val: RouteSet | None = None,
                   epochs: int = 60, batch_size: int = 64, lr: float = 1e-3, patience: int = 20,
                   decay: float = 0.9, log: Log = _noop) -> TrainResult:
    params = init_routenet(cfg, rng.split(0))
    loss = lambda p, r: routenet_loss(p, r, stats, xi)  # noqa: E731
    return train_minibatch(loss, params, routes, epochs, batch_size, rng.split(1), val, lr, patience, decay,
                           "routenet", log)


def make_route_set(batch: Batch, id_params, id_cfg, oa_params, oa_cfg, rng: Rng, eps: float = 0.0,
                   balance: bool = True) -> tuple[RouteSet, RouteSet]:
    """(raw, balanced-and-shuffled) route datasets from a detection batch."""
    raw = build_route_dataset(batch, id_params, id_cfg, oa_params, oa_cfg, eps)
    if not balance:
        return raw, raw
    bal = balance_route_dataset(raw, rng.split(0))
    return raw, bal.subset(rng.split(1).permutation(len(bal)))


# -- centralized pipeline ----------------------------------------------------------

@dataclass
class PipelineResult:
    model: DDNet
    routes: RouteSet
    histories: dict = field(default_factory=dict)
    ledger: OverheadLedger | None = None
    extra: dict = field(default_factory=dict)


def run_cl(cfg: ExperimentConfig, pooled: Dataset, log: Log = _noop) -> PipelineResult:
    """Steps (a)-(g): IDetNet, OAMPNet, route dataset, RouteNet."""
    rng = Rng(cfg.seed)
    t = cfg.train
    id_cfg, oa_cfg, ro_cfg = cfg.id_config(), cfg.oa_config(), cfg.ro_config()
    full = Batch.from_samples(pooled.samples)
    train, val = split_validation(full, cfg.data.val_fraction, rng.split(K_SPLIT, 0))
    # (a)-(b) and (c)-(d) are independent; run sequentially here
    id_res = train_idetnet(id_cfg, train, rng.split(K_ID), val=val, epochs=t.id_epochs, batch_size=t.id_batch,
                           lr=t.lr, patience=t.patience, decay=t.decay, log=log)
    oa_data = train.subset(np.arange(min(t.oa_samples, len(train))))
    oa_res = train_oampnet(oa_cfg, oa_data, rng.split(K_OA), epochs=t.oa_epochs, batch_size=t.oa_batch,
                           lr=t.lr, log=log)
    # (e) route dataset on the full pool, balanced then shuffled
    _, routes = make_route_set(full, id_res.params, id_cfg, oa_res.params, oa_cfg, rng.split(K_ROUTE), t.route_eps)
    stats = route_stats(routes, "cl-route-train")
    r_train, r_val = split_validation(routes, cfg.data.val_fraction, rng.split(K_SPLIT, 1))
    # (f)-(g)
    ro_res = train_routenet(ro_cfg, r_train, stats, cfg.xi, rng.split(K_RO), val=r_val, epochs=t.ro_epochs,
                            batch_size=t.ro_batch, lr=t.lr, patience=t.patience, decay=t.decay, log=log)
    model = DDNet(id_res.params, id_cfg, oa_res.params, oa_cfg, ro_res.params, stats)
    return PipelineResult(model, routes, {"idetnet": id_res.history, "oampnet": oa_res.history,
                                          "routenet": ro_res.history})


# -- federated pipelines ---------------------------------------------------------------

def make_clients(datasets: Sequence[Dataset], rng: Rng) -> list[ClientState]:
    return [ClientState(m, Batch.from_samples(d.samples), rng=rng.split(K_FED, 100 + m))
            for m, d in enumerate(datasets)]


def federated_oampnet(clients: Sequence[ClientState], cfg: OAMPNetConfig, rng: Rng, samples: int, epochs: int,
                      batch_size: int, lr: float) -> dict:
    """Each client trains its own OAMPNet copy; the server averages the copies once."""
    copies = []
    for c in clients:
        local = c.data.subset(np.arange(min(samples, len(c.data))))
        copies.append(train_oampnet(cfg, local, rng.split(c.client_id), epochs=epochs, batch_size=batch_size,
                                    lr=lr).params)
    return {k: np.mean([p[k] for p in copies], axis=0) for k in copies[0]}


def client_route_sets(clients: Sequence[ClientState], id_params, id_cfg, oa_params, oa_cfg, rng: Rng,
                      eps: float = 0.0) -> None:
    """Label every client's local data; balance locally when both classes are present."""
    for c in clients:
        raw = build_route_dataset(c.data, id_params, id_cfg, oa_params, oa_cfg, eps)
        n0, n1 = raw.class_counts()
        r = rng.split(c.client_id)
        if n0 and n1:
            bal = balance_route_dataset(raw, r.split(0))
            c.routes = bal.subset(r.split(1).permutation(len(bal)))
        else:
            c.routes = raw


def run_federated(cfg: ExperimentConfig, datasets: Sequence[Dataset], mode: str | None = None,
                  log: Log = _noop) -> PipelineResult:
    mode = mode or cfg.mode
    if mode not in ("fedave", "fedgs"):
        raise ContractError(f"unknown federated mode {mode!r}")
    rng = Rng(cfg.seed)
    fed = cfg.fed_config()
    t = cfg.train
    id_cfg, oa_cfg, ro_cfg = cfg.id_config(), cfg.oa_config(), cfg.ro_config()
    clients = make_clients(datasets, rng)
    if len(clients) != fed.n_clients:
        raise ContractError(f"config expects {fed.n_clients} clients, got {len(clients)}")
    train_fn = fedave_train if mode == "fedave" else fedgs_train
    ledger = OverheadLedger()
    id_loss = lambda p, b: idetnet_loss(p, b, id_cfg)  # noqa: E731
    id_params, _ = train_fn(clients, fed, "idetnet", init_idetnet(id_cfg, rng.split(K_ID, 0)), id_loss,
                            rng.split(K_FED, 1), ledger, log)
    oa_params = federated_oampnet(clients, oa_cfg, rng.split(K_OA), t.oa_samples, t.oa_epochs, t.oa_batch, t.lr)
    client_route_sets(clients, id_params, id_cfg, oa_params, oa_cfg, rng.split(K_ROUTE), t.route_eps)
    routes = RouteSet.concat([c.routes for c in clients])
    stats = route_stats(routes, f"{mode}-client-union")
    ro_loss = lambda p, r: routenet_loss(p, r, stats, cfg.xi)  # noqa: E731
    ro_params, _ = train_fn(clients, fed, "routenet", init_routenet(ro_cfg, rng.split(K_RO, 0)), ro_loss,
                            rng.split(K_FED, 2), ledger, log)
    model = DDNet(id_params, id_cfg, oa_params, oa_cfg, ro_params, stats)
    return PipelineResult(model, routes, ledger=ledger, extra={"mode": mode, "delta": fed.delta})


# -- evaluation --------------------------------------------------------------------

def eval_conditions(cfg: ExperimentConfig, axis: str | None = None, rng: Rng | None = None) -> dict[float, Batch]:
    """Fresh test batches for every point of the sweep axis."""
    e = cfg.eval
    axis = axis or e.axis
    rng = rng or Rng(cfg.seed).split(K_EVAL)
    n_t, count = cfg.system.n_t, e.samples_per_point
    out = {}
    if axis == "snr":
        for i, snr in enumerate(e.snr_points):
            out[float(snr)] = generate_samples(count, n_t, e.fixed_n_r, e.fixed_rho, snr, rng.split(1, i))
    elif axis == "n_r":
        for i, n_r in enumerate(e.n_r_points):
            out[float(n_r)] = generate_samples(count, n_t, int(n_r), e.fixed_rho, e.fixed_snr_db, rng.split(2, i))
    elif axis == "rho":
        for i, rho in enumerate(e.rho_points):
            out[float(rho)] = generate_samples(count, n_t, e.fixed_n_r, rho, e.fixed_snr_db, rng.split(3, i))
    elif axis == "mixed":
        out[0.0] = generate_mixed(count, cfg.system_config(), rng.split(4)).samples
    else:
        raise ContractError(f"unknown axis {axis!r}")
    return {k: Batch.from_samples(v) for k, v in out.items()}


def _checked(name: str, fn: Callable[[Batch], np.ndarray]) -> Callable[[Batch], np.ndarray]:
    def run(batch: Batch) -> np.ndarray:
        out = fn(batch)
        if not np.all(np.isfinite(out)):
            raise TrainingDiverged(f"{name} produced non-finite estimates; check the checkpoint")
        return quantize(out)
    return run


def detector_handles(model: DDNet, include_ml: bool = True) -> list[DetectorHandle]:
    hs = [DetectorHandle("LMMSE", _checked("LMMSE", LMMSE.fn)),
          DetectorHandle("IDetNet", _checked("IDetNet", lambda b: idetnet_detect(model.id_params, b, model.id_cfg))),
          DetectorHandle("OAMPNet", _checked("OAMPNet", lambda b: oampnet_detect(model.oa_params, b, model.oa_cfg)))]
    if include_ml and model.id_cfg.n_t <= ML_MAX_NT:
        hs.append(ML)
    return hs


def evaluate(model: DDNet, conditions: dict[float, Batch], axis: str, ro_cfg=None, include_ml: bool = True,
             seed: int | None = None) -> list[BerReport]:
    """BER of every detector per condition; the DDNet report carries routing fractions and FLOPs."""
    from .ddnet import RouteNetConfig
    ro_cfg = ro_cfg or RouteNetConfig(n_t=model.id_cfg.n_t)
    reports = []
    for h in detector_handles(model, include_ml):
        rep = BerReport(h.name, axis, seed=seed)
        for cond, batch in conditions.items():
            errs = bit_errors(h(batch), batch.x)
            rep.points.append(BerPoint(float(cond), int(np.sum(errs)), int(batch.x.size)))
            rep.sample_count += len(batch)
        reports.append(rep)
    dd = BerReport("DDNet", axis, seed=seed, extra={"oampnet_fraction": {}, "avg_flops": {}, "flags_total": {}})
    for cond, batch in conditions.items():
        x_hat, flags = model.detect(batch)
        if not np.all(np.isfinite(x_hat)):
            raise TrainingDiverged("DDNet produced non-finite estimates")
        errs = bit_errors(x_hat, batch.x)
        dd.points.append(BerPoint(float(cond), int(np.sum(errs)), int(batch.x.size)))
        dd.sample_count += len(batch)
        n_t = model.id_cfg.n_t
        flops = [flop_count("ddnet", n_t, int(nr), id_cfg=model.id_cfg, oa_cfg=model.oa_cfg, ro_cfg=ro_cfg,
                            branch=int(f)) for nr, f in zip(batch.n_r, flags)]
        key = str(float(cond))
        dd.extra["oampnet_fraction"][key] = float(np.mean(flags))
        dd.extra["avg_flops"][key] = float(np.mean(flops))
        dd.extra["flags_total"][key] = int(np.sum(flags == 0) + np.sum(flags == 1))
    reports.append(dd)
    return reports


def branch_flops(model: DDNet, n_r: int, ro_cfg=None) -> dict[str, int]:
    n_t = model.id_cfg.n_t
    kw = dict(id_cfg=model.id_cfg, oa_cfg=model.oa_cfg, ro_cfg=ro_cfg)
    return {name: flop_count(name, n_t, n_r, **kw) for name in ("lmmse", "idetnet", "oampnet", "routenet")}


def id_detector(params: dict, cfg: IDetNetConfig) -> DetectorHandle:
    return DetectorHandle("IDetNet", _checked("IDetNet", lambda b: idetnet_detect(params, b, cfg)))


def oa_detector(params: dict, cfg: OAMPNetConfig) -> DetectorHandle:
    return DetectorHandle("OAMPNet", _checked("OAMPNet", lambda b: oampnet_detect(params, b, cfg)))


def summary_record(reports: Sequence[BerReport]) -> dict[str, Any]:
    return {r.detector: {"ber": r.ber, "errors": r.errors, "bits": r.bits,
                         "points": {str(p.condition): p.ber for p in r.points}} for r in reports}
