"""Unfolded projected-gradient detector with trainable soft sign and smoothing.

Layer k maps the iterates ``(v_k, x_k)`` to

    z_k     = relu(Dense1([v_k, H'y, H'H x_k, x_k]))
    v_{k+1} = smooth(Dense2(z_k), v_k, alpha_k1)
    x_{k+1} = smooth(lss(Dense3(z_k), beta_k), x_k, alpha_k2)

starting from zero vectors. Setting ``compat=True`` freezes beta at a constant
and alpha at 0, which recovers the plain DetNet-style recursion used as an
ablation baseline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .channel import Batch
from .numerics import ContractError, Rng, Tensor

BETA_INIT = 0.7
ALPHA_INIT = 0.8
WEIGHT_VAR = 0.01
BETA_FLOOR = 1e-8


@dataclass(frozen=True)
class IDetNetConfig:
    n_t: int = 4
    k_id: int = 10
    h1: int = 64
    h2: int = 32
    compat: bool = False
    compat_beta: float = BETA_INIT

    def __post_init__(self):
        if min(self.n_t, self.k_id, self.h1, self.h2) < 1:
            raise ContractError("IDetNet sizes must be positive")

    @property
    def in_width(self) -> int:
        return self.h2 + 3 * (2 * self.n_t)


def param_shapes(config: IDetNetConfig) -> dict[str, tuple[int, ...]]:
    n, h1, h2 = 2 * config.n_t, config.h1, config.h2
    shapes = {}
    for k in range(config.k_id):
        shapes[f"{k}.W1"] = (h1, config.in_width)
        shapes[f"{k}.b1"] = (h1,)
        shapes[f"{k}.W2"] = (h2, h1)
        shapes[f"{k}.b2"] = (h2,)
        shapes[f"{k}.W3"] = (n, h1)
        shapes[f"{k}.b3"] = (n,)
        if not config.compat:
            shapes[f"{k}.beta"] = ()
            shapes[f"{k}.alpha1"] = ()
            shapes[f"{k}.alpha2"] = ()
    return shapes


def init_idetnet(config: IDetNetConfig, rng: Rng) -> dict[str, np.ndarray]:
    params = {}
    std = np.sqrt(WEIGHT_VAR)
    for name, shape in param_shapes(config).items():
        kind = name.split(".")[1]
        if kind == "beta":
            params[name] = np.array(BETA_INIT)
        elif kind.startswith("alpha"):
            params[name] = np.array(ALPHA_INIT)
        else:
            params[name] = rng.gaussian(0.0, std, shape)
    return params


def param_count(config: IDetNetConfig, trainable_only: bool = True) -> int:
    n, h1, h2, K = 2 * config.n_t, config.h1, config.h2, config.k_id
    dense = h1 * (h2 + 3 * n) + h1 + h2 * h1 + h2 + n * h1 + n
    full = K * (dense + 3)
    if config.compat and trainable_only:
        return full - 3 * K
    return full


def detnet_compat(config: IDetNetConfig) -> IDetNetConfig:
    return IDetNetConfig(config.n_t, config.k_id, config.h1, config.h2, compat=True,
                         compat_beta=config.compat_beta)


def lss(s, beta) -> Tensor:
    """Linear soft sign: ``s/|beta|`` clipped to [-1, 1].

    Equal to ``-1 + relu(s+beta)/|beta| - relu(s-beta)/|beta|`` for beta > 0;
    written with |beta| throughout so it stays odd when beta changes sign.
    """
    beta = nx.as_tensor(beta)
    if abs(float(beta.data)) <= BETA_FLOOR:
        raise ContractError(f"|beta| = {abs(float(beta.data)):.3g} is too small for the soft sign")
    u = nx.as_tensor(s) / nx.absolute(beta)
    return -nx.maximum(-nx.maximum(u, -1.0), -1.0)


def smooth(s_new, s_old, alpha) -> Tensor:
    return (1.0 - nx.as_tensor(alpha)) * s_new + alpha * nx.as_tensor(s_old)


def _dense(s: Tensor, W, b) -> Tensor:
    return s @ nx.transpose(W) + b


def idetnet_forward(params, batch: Batch, config: IDetNetConfig) -> list[Tensor]:
    """Per-layer estimates x_2 ... x_{K+1}, each of shape (B, 2n_t)."""
    n = 2 * config.n_t
    if batch.gram.shape[1:] != (n, n):
        raise ContractError(f"batch is for n_t={batch.n_t}, model for n_t={config.n_t}")
    p = {k: nx.as_tensor(v) for k, v in params.items()}
    B = len(batch)
    gram = nx.Tensor(batch.gram)
    hty = nx.Tensor(batch.hty)
    v = nx.Tensor(np.zeros((B, config.h2)))
    x = nx.Tensor(np.zeros((B, n)))
    outs = []
    for k in range(config.k_id):
        gx = nx.reshape(gram @ nx.reshape(x, (B, n, 1)), (B, n))
        z = nx.relu(_dense(nx.concat([v, hty, gx, x], axis=-1), p[f"{k}.W1"], p[f"{k}.b1"]))
        if config.compat:
            beta, a1, a2 = config.compat_beta, 0.0, 0.0
        else:
            beta, a1, a2 = p[f"{k}.beta"], p[f"{k}.alpha1"], p[f"{k}.alpha2"]
        v = smooth(_dense(z, p[f"{k}.W2"], p[f"{k}.b2"]), v, a1)
        x = smooth(lss(_dense(z, p[f"{k}.W3"], p[f"{k}.b3"]), beta), x, a2)
        outs.append(x)
    return outs


def layer_loss(estimates: list[Tensor], x: np.ndarray) -> Tensor:
    """Batch mean of the sum over layers of ``||x_k - x||^2``."""
    B = x.shape[0]
    total = None
    for est in estimates:
        d = est - x
        term = nx.sum(d * d)
        total = term if total is None else total + term
    return total / float(B)


def idetnet_loss(params, batch: Batch, config: IDetNetConfig) -> Tensor:
    return layer_loss(idetnet_forward(params, batch, config), batch.x)


def idetnet_detect(params, batch: Batch, config: IDetNetConfig) -> np.ndarray:
    """Soft final-layer output (quantize for hard decisions)."""
    return idetnet_forward(params, batch, config)[-1].data
