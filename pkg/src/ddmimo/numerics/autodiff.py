"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`GradTape` records every operation applied to tensors it watches.
Because nodes are appended in creation order, the tape is already a
topological order and :func:`backward` just walks it in reverse.

Operations broadcast like numpy; gradients are summed back to the operand
shapes. Every op output is checked for finiteness.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ContractError(ValueError):
    """An operation was called with operands that violate its contract."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, cond: float):
        super().__init__(f"matrix is singular or ill-conditioned (cond estimate {cond:.3e})")
        self.cond = cond


# Condition-number cap used by `inverse`; callers may override per call.
DEFAULT_COND_CAP = 1e12


class Tensor:
    """An immutable float64 array, optionally recorded on a tape."""

    __slots__ = ("data", "tape", "parents", "backward_fn", "name")
    __array_ufunc__ = None  # make numpy defer to the reflected Tensor operators

    def __init__(self, data, tape: "GradTape | None" = None, parents=(), backward_fn=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, tracked={self.tape is not None})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class GradTape:
    """Records operations on watched tensors for one backward pass."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.leaves: dict[str, Tensor] = {}

    def watch(self, value, name: str | None = None) -> Tensor:
        """Register `value` as a differentiable leaf and return its tensor."""
        if name is None:
            name = f"leaf{len(self.leaves)}"
        if name in self.leaves:
            raise ContractError(f"duplicate leaf name {name!r}")
        data = value.data if isinstance(value, Tensor) else value
        t = Tensor(np.array(data, dtype=np.float64), tape=self, name=name)
        _check_finite(t.data, "watch")
        self.nodes.append(t)
        self.leaves[name] = t
        return t


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced a non-finite value")


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    _check_finite(data, op)
    tape = None
    for p in parents:
        if p.tape is not None:
            if tape is not None and p.tape is not tape:
                raise ContractError(f"{op}: operands recorded on different tapes")
            tape = p.tape
    if tape is None:
        return Tensor(data)
    out = Tensor(data, tape=tape, parents=tuple(parents), backward_fn=backward_fn, name=op)
    tape.nodes.append(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


hadamard = mul


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data
    return _make("div", out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


# -- shape ops ---------------------------------------------------------------

def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ContractError("transpose needs at least 2 dimensions")
    return _make("transpose", np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ContractError(str(e)) from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ContractError(str(e)) from None
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make("concat", out, ts, lambda g: tuple(np.split(g, splits, axis=axis)))


def take(a, index, axis: int = -1) -> Tensor:
    """Select entries `index` (int or int array) along `axis`."""
    a = as_tensor(a)
    out = np.take(a.data, index, axis=axis)

    def back(g):
        full = np.zeros_like(a.data)
        ax = axis % a.ndim
        sl = [slice(None)] * a.ndim
        sl[ax] = index
        np.add.at(full, tuple(sl), g)
        return (full,)

    return _make("take", out, (a,), back)


# -- reductions --------------------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", out, (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return div(sum(a, axis=axis, keepdims=keepdims), float(n))


def trace(a) -> Tensor:
    """Trace over the last two axes (batched)."""
    a = as_tensor(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ContractError(f"trace needs square matrices, got {a.shape}")
    eye = np.eye(a.shape[-1])
    return _make("trace", np.trace(a.data, axis1=-2, axis2=-1), (a,),
                 lambda g: (np.asarray(g)[..., None, None] * eye,))


def norm1(a, axis=None) -> Tensor:
    return sum(absolute(a), axis=axis)


def norm2sq(a, axis=None) -> Tensor:
    a = as_tensor(a)
    return sum(mul(a, a), axis=axis)


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product; both operands need at least 2 dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError("matmul operands must be at least 2-D; reshape vectors explicitly")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as e:
        raise ContractError(str(e)) from None

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make("matmul", out, (a, b), back)


def condition_estimate(a: np.ndarray, a_inv: np.ndarray) -> np.ndarray:
    """1-norm condition number ||A||_1 ||A^-1||_1, batched over leading axes."""
    n1 = np.abs(a).sum(axis=-2).max(axis=-1)
    n2 = np.abs(a_inv).sum(axis=-2).max(axis=-1)
    return n1 * n2


def inverse(a, cond_cap: float = DEFAULT_COND_CAP) -> Tensor:
    """Batched inverse via LAPACK LU with partial pivoting.

    The adjoint is the closed form ``-A^-T G A^-T``.
    """
    a = as_tensor(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ContractError(f"inverse needs square matrices, got {a.shape}")
    try:
        inv = np.linalg.inv(a.data)
    except np.linalg.LinAlgError:
        raise SingularMatrixError(float("inf")) from None
    cond = condition_estimate(a.data, inv)
    worst = float(np.max(cond)) if cond.size else 0.0
    if not np.isfinite(worst) or worst > cond_cap:
        raise SingularMatrixError(worst)
    inv_t = np.swapaxes(inv, -1, -2)
    return _make("inverse", inv, (a,), lambda g: (-(inv_t @ g @ inv_t),))


# -- nonlinearities --------------------------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    s = np.sign(a.data)
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * s,))


def maximum(a, floor: float) -> Tensor:
    """Elementwise max with a constant; gradient flows only where a > floor."""
    a = as_tensor(a)
    mask = a.data > floor
    return _make("maximum", np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ContractError("log of a non-positive value")
    return _make("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make("softmax", out, (a,), back)


# -- driver ------------------------------------------------------------------------

def backward(tape: GradTape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradient of scalar `loss` with respect to every leaf on `tape`.

    Leaves the loss does not depend on get zero gradients.
    """
    if loss.data.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    if loss.tape is not tape:
        raise ContractError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None) if node.backward_fn is not None else grads.get(id(node))
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if parent.tape is not tape or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=np.float64).reshape(parent.shape)
    return {name: grads.get(id(leaf), np.zeros_like(leaf.data)) for name, leaf in tape.leaves.items()}


def value_and_grad(fn: Callable, params: dict[str, np.ndarray], *args, has_aux: bool = False, **kwargs):
    """Evaluate ``fn(tensors, *args)`` and its gradient w.r.t. every entry of `params`.

    Returns ``(loss, grads)`` or ``(loss, grads, aux)`` when `has_aux` is set and
    `fn` returns ``(loss_tensor, aux)``.
    """
    tape = GradTape()
    tensors = {k: tape.watch(v, name=k) for k, v in params.items()}
    result = fn(tensors, *args, **kwargs)
    loss, aux = result if has_aux else (result, None)
    grads = backward(tape, loss)
    if has_aux:
        return float(loss.data), grads, aux
    return float(loss.data), grads
