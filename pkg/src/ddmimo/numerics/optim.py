"""ADAM with bias correction and a plateau learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import ContractError

Params = dict[str, np.ndarray]


@dataclass
class AdamState:
    """Per-parameter moments plus the plateau bookkeeping.

    `best_loss` and `bad_epochs` back :func:`plateau_decay`; they are ignored
    by :func:`adam_step`.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    best_loss: float = float("inf")
    bad_epochs: int = 0
    patience: int = 20
    decay: float = 0.9

    def reset_moments(self) -> None:
        self.m, self.v, self.step = {}, {}, 0


def adam_step(state: AdamState, params: Params, grads: Params) -> Params:
    """Apply one ADAM update; returns new parameter arrays and advances `state`."""
    if params.keys() != grads.keys():
        raise ContractError("gradient names do not match parameter names")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


def plateau_decay(state: AdamState, history: Sequence[float]) -> AdamState:
    """Consume the newest validation loss in `history`.

    The learning rate is multiplied by ``state.decay`` once ``state.patience``
    consecutive epochs pass without improving on the best loss seen; the
    counter restarts after each decay and on every improvement.
    """
    if len(history) == 0:
        raise ContractError("validation history is empty")
    latest = float(history[-1])
    if latest < state.best_loss:
        state.best_loss = latest
        state.bad_epochs = 0
        return state
    state.bad_epochs += 1
    if state.bad_epochs >= state.patience:
        state.lr *= state.decay
        state.bad_epochs = 0
    return state


def flatten(params: Params) -> np.ndarray:
    if not params:
        return np.zeros(0)
    return np.concatenate([np.ravel(p) for p in params.values()])


def unflatten(vec: np.ndarray, like: Params) -> Params:
    need = param_size(like)
    if len(vec) != need:
        raise ContractError(f"flat vector has {len(vec)} entries, parameters need {need}")
    out, i = {}, 0
    for name, p in like.items():
        n = int(np.size(p))
        out[name] = np.asarray(vec[i:i + n], dtype=np.float64).reshape(np.shape(p))
        i += n
    return out


def param_size(params: Params) -> int:
    return int(sum(np.size(p) for p in params.values()))
