"""Unfolded OAMP detector with four trainable scalars per layer.

The trainable path (:func:`oampnet_forward`) works in the 2N_t-dimensional
space: with ``R_n = s I`` the push-through identity gives

    H' (v^2 H H' + s I)^-1 = (v^2 H'H + s I)^-1 H'

so every layer quantity follows from ``G = H'H``, ``H'y`` and ``y'y``. This
lets samples with different N_r share one batch and keeps the inverse
small. :func:`oampnet_reference` evaluates the layer equations literally,
per sample, with the 2N_r-dimensional inverse; the tests hold the two paths
against each other.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .channel import INV_SQRT2, Batch
from .idetnet import layer_loss
from .numerics import ContractError, Tensor

V_FLOOR = 1e-9
TAU_FLOOR = 1e-9


@dataclass(frozen=True)
class OAMPNetConfig:
    n_t: int = 4
    k_oa: int = 4
    v_floor: float = V_FLOOR
    tau_floor: float = TAU_FLOOR

    def __post_init__(self):
        if self.n_t < 1 or self.k_oa < 1:
            raise ContractError("OAMPNet sizes must be positive")


def init_oampnet(config: OAMPNetConfig) -> dict[str, np.ndarray]:
    """gamma_1 = gamma_2 = gamma_3 = 1, gamma_4 = 0 in every layer."""
    return {f"{k}.gamma": np.array([1.0, 1.0, 1.0, 0.0]) for k in range(config.k_oa)}


def param_count(config: OAMPNetConfig) -> int:
    return 4 * config.k_oa


def mmse_denoiser(z, tau2):
    """Posterior mean of x in {+-1/sqrt(2)} given z = x + N(0, tau2).

    Accepts numpy arrays or tensors; `tau2` broadcasts against `z`.
    """
    if isinstance(z, Tensor) or isinstance(tau2, Tensor):
        tau2 = nx.as_tensor(tau2)
        if np.any(tau2.data <= 0):
            raise ContractError("tau2 must be positive")
        return INV_SQRT2 * nx.tanh(INV_SQRT2 * nx.as_tensor(z) / tau2)
    tau2 = np.asarray(tau2, dtype=np.float64)
    if np.any(tau2 <= 0):
        raise ContractError("tau2 must be positive")
    return INV_SQRT2 * np.tanh(INV_SQRT2 * np.asarray(z) / tau2)


def noise_var_real(sigma2):
    """Per-real-component noise variance of the realified model."""
    return 0.5 * np.asarray(sigma2, dtype=np.float64)


def oampnet_forward(params, batch: Batch, config: OAMPNetConfig, trace_out: list | None = None) -> list[Tensor]:
    """Per-layer estimates x_2 ... x_{K+1}, each (B, 2n_t).

    If `trace_out` is a list, one dict of per-layer intermediates (numpy) is
    appended per layer.
    """
    n = 2 * config.n_t
    if batch.gram.shape[1:] != (n, n):
        raise ContractError(f"batch is for n_t={batch.n_t}, model for n_t={config.n_t}")
    p = {k: nx.as_tensor(v) for k, v in params.items()}
    B = len(batch)
    eye = np.eye(n)
    G = nx.Tensor(batch.gram)
    hty = nx.Tensor(batch.hty)
    s_np = noise_var_real(batch.sigma2)
    s = s_np[:, None, None]
    tr_rn = 2.0 * batch.n_r * s_np
    tr_g = np.trace(batch.gram, axis1=1, axis2=2)
    x = nx.Tensor(np.zeros((B, n)))
    outs = []
    for k in range(config.k_oa):
        g = p[f"{k}.gamma"]
        g1, g2, g3, g4 = (nx.take(g, i) for i in range(4))
        gx = nx.reshape(G @ nx.reshape(x, (B, n, 1)), (B, n))
        resid2 = batch.yty - 2.0 * nx.sum(x * hty, axis=1) + nx.sum(x * gx, axis=1)
        v2 = nx.maximum((resid2 - tr_rn) / tr_g, config.v_floor)
        M = nx.inverse(nx.reshape(v2, (B, 1, 1)) * G + s * eye)
        MG = M @ G
        c = n / nx.trace(MG)
        lin = nx.reshape(M @ nx.reshape(hty - gx, (B, n, 1)), (B, n))
        z = x + g1 * nx.reshape(c, (B, 1)) * lin
        C = eye - g2 * nx.reshape(c, (B, 1, 1)) * MG
        tr_cc = nx.sum(C * C, axis=(1, 2))
        tr_ara = s_np * c * c * nx.trace(MG @ M)
        tau2 = nx.maximum((tr_cc * v2 + tr_ara) / float(n), config.tau_floor)
        x = g3 * (mmse_denoiser(z, nx.reshape(tau2, (B, 1))) - g4 * z)
        outs.append(x)
        if trace_out is not None:
            trace_out.append({"v2": v2.data, "c": c.data, "z": z.data, "tau2": tau2.data,
                              "x_next": x.data, "trAH": c.data * np.trace(MG.data, axis1=1, axis2=2)})
    return outs


def oampnet_loss(params, batch: Batch, config: OAMPNetConfig) -> Tensor:
    return layer_loss(oampnet_forward(params, batch, config), batch.x)


def oampnet_detect(params, batch: Batch, config: OAMPNetConfig) -> np.ndarray:
    return oampnet_forward(params, batch, config)[-1].data


def oampnet_reference(H: np.ndarray, y: np.ndarray, sigma2: float, params, config: OAMPNetConfig) -> list[dict]:
    """Literal per-sample evaluation of the OAMP layer equations (numpy only).

    Returns one dict per layer with v2, A, z, C, tau2 and x_next.
    """
    H = np.asarray(H, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    two_nr, n = H.shape
    Rn = noise_var_real(sigma2) * np.eye(two_nr)
    HHt = H @ H.T
    x = np.zeros(n)
    layers = []
    for k in range(config.k_oa):
        g1, g2, g3, g4 = np.asarray(params[f"{k}.gamma"], dtype=np.float64)
        r = y - H @ x
        v2 = max((r @ r - np.trace(Rn)) / np.trace(H.T @ H), config.v_floor)
        W = v2 * H.T @ np.linalg.inv(v2 * HHt + Rn)
        A = n * W / np.trace(W @ H)
        z = x + g1 * A @ r
        C = np.eye(n) - g2 * A @ H
        tau2 = max((np.trace(C @ C.T) * v2 + np.trace(A @ Rn @ A.T)) / n, config.tau_floor)
        x = g3 * (mmse_denoiser(z, tau2) - g4 * z)
        layers.append({"v2": v2, "A": A, "z": z, "C": C, "tau2": tau2, "x_next": x})
    return layers
