"""Multiplication + division counts per detected sample.

Conventions: an m x k by k x n product costs m*k*n; a trace of a product only
forms the diagonal; an m x m inverse costs round(2 m^3 / 3) (LU leading
term); tanh, exp and the sigmoid count one operation per element.
"""
from __future__ import annotations

from .ddnet import RouteNetConfig
from .idetnet import IDetNetConfig
from .numerics import ContractError
from .oampnet import OAMPNetConfig


def inverse_flops(m: int) -> int:
    return round(2 * m ** 3 / 3)


def dense_flops(m: int, n: int) -> int:
    return m * n


def gram_flops(n_t: int, n_r: int) -> int:
    """H'H and H'y for a realified 2n_r x 2n_t channel."""
    n, m = 2 * n_t, 2 * n_r
    return n * n * m + n * m


def lmmse_flops(n_t: int, n_r: int) -> int:
    n = 2 * n_t
    return gram_flops(n_t, n_r) + inverse_flops(n) + n * n


def idetnet_flops(n_t: int, n_r: int, cfg: IDetNetConfig) -> int:
    n, h1, h2 = 2 * n_t, cfg.h1, cfg.h2
    per_layer = n * n + dense_flops(h1, h2 + 3 * n) + dense_flops(h2, h1) + dense_flops(n, h1)
    per_layer += n  # soft sign: one division by |beta| per component
    if not cfg.compat:
        per_layer += 2 * h2 + 2 * n  # smoothing of v and x
    return gram_flops(n_t, n_r) + cfg.k_id * per_layer


def oampnet_flops(n_t: int, n_r: int, cfg: OAMPNetConfig, form: str = "literal") -> int:
    """`form="literal"` counts the 2n_r-dimensional layer equations as written;
    `form="reduced"` counts the 2n_t-dimensional path used for training."""
    n, m = 2 * n_t, 2 * n_r
    tail = n + n * n + n * n + 3 * n + 2 * n + 4  # gamma1, gamma2*AH, tr(CC'), denoiser, eta, scalars
    if form == "literal":
        pre = m * m * n + n * m
        layer = (m * n + m + 1 + m * m + inverse_flops(m) + n * m * m + n * m + n * m
                 + n * m + 1 + n * m + n * n * m + n * m + 1) + tail
    elif form == "reduced":
        pre = gram_flops(n_t, n_r) + m
        layer = (n * n + 2 * n + 1 + n * n + inverse_flops(n) + n ** 3 + 1 + n * n + n
                 + n * n + 3) + tail
    else:
        raise ContractError(f"unknown OAMPNet flop form {form!r}")
    return pre + cfg.k_oa * layer


def routenet_flops(n_t: int, n_r: int, cfg: RouteNetConfig) -> int:
    n = 2 * n_t
    normalize = 1 + n * n + 1
    return (n * n * 2 * n_r + normalize + dense_flops(cfg.hidden, cfg.in_width)
            + 2 * cfg.hidden + dense_flops(2, cfg.hidden))


def flop_count(detector: str, n_t: int, n_r: int, *, id_cfg: IDetNetConfig | None = None,
               oa_cfg: OAMPNetConfig | None = None, ro_cfg: RouteNetConfig | None = None,
               branch: int = 0, oamp_form: str = "literal") -> int:
    """Per-sample cost of `detector`; for ``"ddnet"`` `branch` selects the executed branch."""
    id_cfg = id_cfg or IDetNetConfig(n_t=n_t)
    oa_cfg = oa_cfg or OAMPNetConfig(n_t=n_t)
    ro_cfg = ro_cfg or RouteNetConfig(n_t=n_t)
    name = detector.lower()
    if name == "lmmse":
        return lmmse_flops(n_t, n_r)
    if name in ("idetnet", "detnet"):
        return idetnet_flops(n_t, n_r, id_cfg)
    if name == "oampnet":
        return oampnet_flops(n_t, n_r, oa_cfg, oamp_form)
    if name == "routenet":
        return routenet_flops(n_t, n_r, ro_cfg)
    if name == "ddnet":
        chosen = idetnet_flops(n_t, n_r, id_cfg) if branch == 0 else oampnet_flops(n_t, n_r, oa_cfg, oamp_form)
        return routenet_flops(n_t, n_r, ro_cfg) + chosen
    raise ContractError(f"unknown detector {detector!r}")
