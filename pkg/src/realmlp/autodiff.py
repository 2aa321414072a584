"""Tape-based reverse-mode differentiation over numpy arrays.

Only the operations the RealMLP forward pass needs are provided. Every op
records one node on the tape of its inputs; :meth:`Tape.backward` walks the
nodes in reverse recording order and accumulates gradients additively.
"""

from __future__ import annotations

from typing import Callable, Mapping, Optional, Sequence

import numpy as np

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


class ShapeError(ValueError):
    pass


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []

    def var(self, value, requires_grad: bool = False) -> "Var":
        return Var(np.asarray(value), self, requires_grad)

    def backward(self, out: "Var") -> None:
        if out.value.size != 1:
            raise ShapeError("backward needs a scalar output")
        out.grad = np.ones_like(out.value)
        for node in reversed(self.nodes):
            if node.grad is not None and node.backward_fn is not None:
                node.backward_fn(node.grad)


class Var:
    __slots__ = ("value", "grad", "tape", "requires_grad", "backward_fn")

    def __init__(self, value: np.ndarray, tape: Tape, requires_grad: bool = False):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.backward_fn: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if g.shape != self.value.shape:
            raise ShapeError(f"gradient shape {g.shape} != value shape {self.value.shape}")
        self.grad = g.copy() if self.grad is None else self.grad + g

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"


def _lift(x, tape: Tape) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x), tape, False)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one argument must be a Var")


def _node(value: np.ndarray, inputs: Sequence[Var], backward_fn) -> Var:
    tape = inputs[0].tape
    out = Var(value, tape, any(x.requires_grad for x in inputs))
    if out.requires_grad:
        out.backward_fn = backward_fn
        tape.nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast(a.value, b.value)

    def back(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return _node(a.value + b.value, [a, b], back)


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast(a.value, b.value)

    def back(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(-g, b.shape))

    return _node(a.value - b.value, [a, b], back)


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast(a.value, b.value)

    def back(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.value, b.shape))

    return _node(a.value * b.value, [a, b], back)


def scale(a: Var, c: float) -> Var:
    return _node(a.value * c, [a], lambda g: a.accumulate(g * c))


def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")

    def back(g):
        if a.requires_grad:
            a.accumulate(g @ b.value.T)
        if b.requires_grad:
            b.accumulate(a.value.T @ g)

    return _node(a.value @ b.value, [a, b], back)


def linear(x: Var, w: Var, b: Optional[Var], c: float = 1.0) -> Var:
    """``c * x @ w.T + b`` with ``w`` stored as (out, in)."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not fit weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} does not fit weight {w.shape}")
    value = (x.value @ w.value.T) * c
    if b is not None:
        value = value + b.value

    def back(g):
        if x.requires_grad:
            x.accumulate((g @ w.value) * c)
        if w.requires_grad:
            w.accumulate((g.T @ x.value) * c)
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=0))

    return _node(value, [x, w] + ([b] if b is not None else []), back)


def einsum(spec: str, a, b) -> Var:
    """Two-operand einsum, e.g. ``"nfh,fkh->nfk"``. Each input index must
    appear in the output or in the other operand."""
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    ins, out_s = spec.replace(" ", "").split("->")
    a_s, b_s = ins.split(",")
    try:
        value = np.einsum(spec, a.value, b.value)
    except ValueError as e:
        raise ShapeError(str(e)) from None

    def back(g):
        if a.requires_grad:
            a.accumulate(np.einsum(f"{out_s},{b_s}->{a_s}", g, b.value))
        if b.requires_grad:
            b.accumulate(np.einsum(f"{out_s},{a_s}->{b_s}", g, a.value))

    return _node(value, [a, b], back)


def reshape(a: Var, shape) -> Var:
    old = a.shape
    return _node(a.value.reshape(shape), [a], lambda g: a.accumulate(g.reshape(old)))


def total(a: Var) -> Var:
    return _node(np.sum(a.value), [a], lambda g: a.accumulate(np.broadcast_to(g, a.shape).astype(a.value.dtype)))


def concat(xs: Sequence[Var], axis: int = -1) -> Var:
    tape = _tape_of(*xs)
    xs = [_lift(x, tape) for x in xs]
    try:
        value = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def back(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                x.accumulate(np.take(g, np.arange(lo, hi), axis=axis))

    return _node(value, xs, back)


def columns(x: Var, lo: int, hi: int) -> Var:
    """``x[:, lo:hi]``."""

    def back(g):
        full = np.zeros_like(x.value)
        full[:, lo:hi] = g
        x.accumulate(full)

    return _node(x.value[:, lo:hi], [x], back)


def gather_rows(table: Var, idx) -> Var:
    """``table[idx]`` for integer ``idx``; repeated rows accumulate gradient."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError("gather index out of range")

    def back(g):
        acc = np.zeros_like(table.value)
        np.add.at(acc, idx, g)
        table.accumulate(acc)

    return _node(table.value[idx], [table], back)


def _elementwise(a: Var, value: np.ndarray, deriv: np.ndarray) -> Var:
    return _node(value, [a], lambda g: a.accumulate(g * deriv))


def cos(a: Var) -> Var:
    return _elementwise(a, np.cos(a.value), -np.sin(a.value))


def sin(a: Var) -> Var:
    return _elementwise(a, np.sin(a.value), np.cos(a.value))


# Activations on plain arrays: value and derivative.

def relu_fn(x):
    return np.maximum(x, 0.0), (x > 0).astype(x.dtype)


def selu_fn(x):
    neg = SELU_LAMBDA * SELU_ALPHA * np.expm1(np.minimum(x, 0.0))
    value = np.where(x > 0, SELU_LAMBDA * x, neg)
    deriv = np.where(x > 0, SELU_LAMBDA, neg + SELU_LAMBDA * SELU_ALPHA)
    return value, deriv


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def mish_fn(x):
    t = np.tanh(_softplus(x))
    value = x * t
    deriv = t + x * (1.0 - t * t) * _sigmoid(x)
    return value, deriv


ACTIVATIONS = {"relu": relu_fn, "selu": selu_fn, "mish": mish_fn}


def activation(a: Var, kind: str) -> Var:
    value, deriv = ACTIVATIONS[kind](a.value)
    return _elementwise(a, value, deriv)


def relu(a: Var) -> Var:
    return activation(a, "relu")


def selu(a: Var) -> Var:
    return activation(a, "selu")


def mish(a: Var) -> Var:
    return activation(a, "mish")


def param_act(x: Var, alpha: Var, kind: str) -> Var:
    """(1 - alpha) * x + alpha * act(x) with per-column alpha."""
    if alpha.shape != x.shape[-1:]:
        raise ShapeError(f"alpha shape {alpha.shape} does not match width {x.shape[-1]}")
    s, ds = ACTIVATIONS[kind](x.value)
    diff = s - x.value
    value = x.value + alpha.value * diff

    def back(g):
        if x.requires_grad:
            x.accumulate(g * (1.0 + alpha.value * (ds - 1.0)))
        if alpha.requires_grad:
            alpha.accumulate(np.sum(g * diff, axis=0))

    return _node(value, [x, alpha], back)


def dropout(x: Var, mask: Optional[np.ndarray], p: float) -> Var:
    """Inverted dropout with a precomputed keep-mask (treated as a constant)."""
    if mask is None or p <= 0.0:
        return x
    factor = mask.astype(x.value.dtype) / (1.0 - p)
    return _node(x.value * factor, [x], lambda g: x.accumulate(g * factor))


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def smoothed_targets(labels, n_classes: int, eps: float, dtype=np.float64) -> np.ndarray:
    q = np.full((len(labels), n_classes), eps / n_classes, dtype=dtype)
    q[np.arange(len(labels)), labels] += 1.0 - eps
    return q


def softmax_cross_entropy(logits: Var, labels, eps: float = 0.0) -> Var:
    """Mean cross-entropy against (1 - eps) * onehot + eps / K."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError("labels must be a vector matching the batch")
    q = smoothed_targets(labels, k, eps, logits.value.dtype)
    lsm = log_softmax(logits.value)
    value = np.asarray(-np.sum(q * lsm) / n, dtype=logits.value.dtype)

    def back(g):
        logits.accumulate(g * (np.exp(lsm) - q) / n)

    return _node(value, [logits], back)


def mse(pred: Var, target) -> Var:
    target = np.asarray(target, dtype=pred.value.dtype).reshape(pred.shape)
    diff = pred.value - target
    value = np.asarray(np.mean(diff * diff), dtype=pred.value.dtype)
    return _node(value, [pred], lambda g: pred.accumulate(g * 2.0 * diff / diff.size))


def grad_check(fn: Callable[[Tape, dict], Var], params: Mapping[str, np.ndarray], h: float = 1e-5) -> float:
    """Max over all parameter entries of |analytic - central difference| / max(1, |central difference|).

    ``fn(tape, vars)`` must build a scalar loss from ``vars`` (a dict of
    Vars mirroring ``params``) and be deterministic.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape = Tape()
    vs = {k: tape.var(v, requires_grad=True) for k, v in params.items()}
    loss = fn(tape, vs)
    if not np.isfinite(loss.value).all():
        raise FloatingPointError("non-finite loss")
    tape.backward(loss)

    def value_at(name, idx, delta):
        p = {k: v.copy() for k, v in params.items()}
        p[name][idx] += delta
        t = Tape()
        out = fn(t, {k: t.var(v, requires_grad=False) for k, v in p.items()})
        return float(out.value)

    worst = 0.0
    for name, arr in params.items():
        analytic = vs[name].grad if vs[name].grad is not None else np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            fd = (value_at(name, idx, h) - value_at(name, idx, -h)) / (2 * h)
            worst = max(worst, abs(analytic[idx] - fd) / max(1.0, abs(fd)))
    return worst
