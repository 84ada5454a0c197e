"""Tape-based reverse-mode automatic differentiation.

Every :class:`Var` wraps a float64 value (a 0-d scalar, or an array whose
entries are independent lanes, e.g. one per simulated environment) and an
index into the :class:`Tape` that produced it.  Nodes are appended in
evaluation order, so a single reverse sweep over the tape realizes the chain
rule.

Elementwise ops record their local partial derivatives directly; structural
ops (matmul, indexing, reductions, fused kernels) record a vector-Jacobian
closure instead.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

DETACHED = -1
SMOOTH_ABS_EPS = 1e-8


class AutodiffError(ValueError):
    pass


class DomainError(AutodiffError):
    """Argument outside the mathematical domain of an op."""


class NonFiniteError(AutodiffError, FloatingPointError):
    """An op produced NaN or Inf."""


class Tape:
    """Append-only record of differentiable operations."""

    __slots__ = ("kinds", "values", "parents", "partials", "epoch")

    def __init__(self):
        self.kinds: list[str] = []
        self.values: list = []
        self.parents: list[tuple[int, ...]] = []
        self.partials: list[tuple] = []
        self.epoch = 0

    def __len__(self):
        return len(self.values)

    def reset(self):
        """Drop every node.  Vars created before the reset become stale."""
        self.kinds.clear()
        self.values.clear()
        self.parents.clear()
        self.partials.clear()
        self.epoch += 1

    def push(self, kind: str, value, parents: tuple[int, ...] = (), partials: tuple = ()) -> "Var":
        self.kinds.append(kind)
        self.values.append(value)
        self.parents.append(parents)
        self.partials.append(partials)
        return Var(value, self, len(self.values) - 1)

    def custom(self, kind: str, value, inputs: Sequence["Var"], vjps: Sequence[Callable]) -> "Var":
        """Record a fused op whose backward pass is supplied by the caller.

        ``vjps[i]`` maps the output cotangent to the cotangent of ``inputs[i]``.
        Detached inputs are skipped.
        """
        _check_finite(kind, value)
        parents, partials = [], []
        for v, f in zip(inputs, vjps):
            if v.tracked:
                _check_tape(self, v)
                parents.append(v.node)
                partials.append(f)
        if not parents:
            return Var(value)
        return self.push(kind, value, tuple(parents), tuple(partials))


class Var:
    """Differentiable handle: a float64 value plus its tape node."""

    __slots__ = ("value", "tape", "node", "epoch")
    __array_priority__ = 1000

    def __init__(self, value, tape: Tape | None = None, node: int = DETACHED):
        self.value = value
        self.tape = tape
        self.node = node
        self.epoch = tape.epoch if tape is not None else 0

    @property
    def tracked(self) -> bool:
        return self.node != DETACHED

    @property
    def shape(self) -> tuple[int, ...]:
        return np.shape(self.value)

    @property
    def ndim(self) -> int:
        return np.ndim(self.value)

    def __repr__(self):
        where = "detached" if not self.tracked else f"node={self.node}"
        return f"Var({self.value!r}, {where})"

    def __float__(self):
        return float(self.value)

    def __len__(self):
        return len(self.value)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)
    __pow__ = lambda self, o: pow(self, o)
    __rpow__ = lambda self, o: pow(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __rmatmul__ = lambda self, o: matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return vsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


# --------------------------------------------------------------------------
# helpers

def _check_tape(tape, v):
    if v.tape is not tape:
        raise AutodiffError("operands belong to different tapes")
    if v.epoch != tape.epoch:
        raise AutodiffError("stale Var: its tape has been reset")


def _check_finite(kind, value):
    if isinstance(value, float):
        ok = math.isfinite(value)
    else:
        ok = bool(np.isfinite(value).all())
    if not ok:
        raise NonFiniteError(f"{kind}: non-finite result")


def _val(x):
    return x.value if isinstance(x, Var) else x


def as_var(x) -> Var:
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x, dtype=np.float64) if not isinstance(x, float) else x)


def _record(kind, value, args, partials):
    _check_finite(kind, value)
    tape = None
    parents, parts = [], []
    for a, d in zip(args, partials):
        if isinstance(a, Var) and a.node != DETACHED:
            if tape is None:
                tape = a.tape
            _check_tape(tape, a)
            parents.append(a.node)
            parts.append(d)
    if tape is None:
        return Var(value)
    return tape.push(kind, value, tuple(parents), tuple(parts))


def _unbroadcast(g, shape):
    gshape = np.shape(g)
    if gshape == shape:
        return g
    extra = len(gshape) - len(shape)
    if extra > 0:
        g = np.sum(g, axis=tuple(range(extra)))
    if len(shape):
        axes = tuple(i for i, s in enumerate(shape) if s == 1 and np.shape(g)[i] != 1)
        if axes:
            g = np.sum(g, axis=axes, keepdims=True)
    return np.reshape(g, shape) if np.shape(g) != shape else g


# --------------------------------------------------------------------------
# construction

def lift(value, tape: Tape) -> Var:
    """Place a value on ``tape`` as a differentiable leaf."""
    value = np.asarray(value, dtype=np.float64)
    if not np.isfinite(value).all():
        raise NonFiniteError("lift: non-finite input")
    if value.ndim == 0:
        value = float(value)
    return tape.push("leaf", value)


def constant(value) -> Var:
    return Var(np.asarray(value, dtype=np.float64))


def detach(v) -> Var:
    """Same value, no gradient path."""
    if isinstance(v, Var):
        return Var(v.value)
    return as_var(v)


# --------------------------------------------------------------------------
# elementwise ops.  Every op accepts Vars or plain numbers/arrays; with no
# tracked operand the result is a detached Var.

def add(a, b):
    av, bv = _val(a), _val(b)
    return _record("add", av + bv, (a, b), (1.0, 1.0))


def sub(a, b):
    av, bv = _val(a), _val(b)
    return _record("sub", av - bv, (a, b), (1.0, -1.0))


def mul(a, b):
    av, bv = _val(a), _val(b)
    return _record("mul", av * bv, (a, b), (bv, av))


def div(a, b):
    av, bv = _val(a), _val(b)
    if np.any(np.asarray(bv) == 0):
        raise DomainError("div: division by zero")
    inv = 1.0 / bv
    out = av * inv
    return _record("div", out, (a, b), (inv, -out * inv))


def neg(a):
    return _record("neg", -_val(a), (a,), (-1.0,))


def tanh(a):
    y = np.tanh(_val(a))
    return _record("tanh", y, (a,), (1.0 - y * y,))


def exp(a):
    with np.errstate(over="ignore"):
        y = np.exp(_val(a))
    return _record("exp", y, (a,), (y,))


def log(a):
    x = _val(a)
    if np.any(np.asarray(x) <= 0):
        raise DomainError("log: argument must be > 0")
    return _record("log", np.log(x), (a,), (1.0 / x,))


def sqrt(a):
    x = _val(a)
    if np.any(np.asarray(x) < 0):
        raise DomainError("sqrt: argument must be >= 0")
    y = np.sqrt(x)
    # subgradient 0 at the origin
    with np.errstate(divide="ignore"):
        d = np.where(np.asarray(y) > 0, 0.5 / np.maximum(y, 1e-300), 0.0)
    return _record("sqrt", y, (a,), (d if np.ndim(y) else float(d),))


def pow(a, b):
    """``a ** b``.  A tracked exponent requires a positive base."""
    x, p = _val(a), _val(b)
    if isinstance(b, Var) and b.tracked and np.any(np.asarray(x) <= 0):
        raise DomainError("pow: base must be > 0 for a differentiable exponent")
    if np.any((np.asarray(x) == 0) & (np.asarray(p) < 1)) and isinstance(a, Var) and a.tracked:
        raise DomainError("pow: derivative undefined at base 0 for exponent < 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.power(x, p)
        dx = p * np.power(x, p - 1.0)
    if isinstance(b, Var) and b.tracked:
        dy = y * np.log(x)
    else:
        dy = 0.0
    return _record("pow", y, (a, b), (dx, dy))


def sin(a):
    x = _val(a)
    return _record("sin", np.sin(x), (a,), (np.cos(x),))


def cos(a):
    x = _val(a)
    return _record("cos", np.cos(x), (a,), (-np.sin(x),))


def maximum(a, b):
    """Elementwise max.  The full gradient goes to the selected argument;
    ties select ``a``."""
    av, bv = _val(a), _val(b)
    pick_a = np.asarray(av >= bv, dtype=np.float64)
    return _record("max", np.where(pick_a > 0, av, bv), (a, b), (pick_a, 1.0 - pick_a))


def minimum(a, b):
    """Elementwise min; ties select ``a``."""
    av, bv = _val(a), _val(b)
    pick_a = np.asarray(av <= bv, dtype=np.float64)
    return _record("min", np.where(pick_a > 0, av, bv), (a, b), (pick_a, 1.0 - pick_a))


def abs_smooth(a, eps: float = SMOOTH_ABS_EPS):
    """sqrt(x^2 + eps^2): |x| with a finite derivative at 0."""
    x = _val(a)
    y = np.sqrt(x * x + eps * eps)
    return _record("abs_smooth", y, (a,), (x / y,))


def sqabs(a):
    """x * |x|, the signed square; derivative 2|x|."""
    x = _val(a)
    ax = np.abs(x)
    return _record("sqabs", x * ax, (a,), (2.0 * ax,))


def square(a):
    x = _val(a)
    return _record("square", x * x, (a,), (2.0 * x,))


# --------------------------------------------------------------------------
# structural ops

def matmul(a, b):
    av, bv = _val(a), _val(b)
    out = av @ bv

    def da(g):
        if np.ndim(bv) == 1:
            return np.multiply.outer(g, bv) if np.ndim(av) == 2 else g * bv
        return g @ np.swapaxes(bv, -1, -2) if np.ndim(av) > 1 else bv @ g

    def db(g):
        if np.ndim(av) == 1:
            return np.multiply.outer(av, g) if np.ndim(bv) == 2 else g * av
        if np.ndim(bv) == 1:
            return np.swapaxes(av, -1, -2) @ g
        return np.swapaxes(av, -1, -2) @ g

    return _record("matmul", out, (a, b), (da, db))


def getitem(a, idx):
    av = _val(a)
    out = av[idx]
    if not isinstance(a, Var) or not a.tracked:
        return Var(out)
    shape = np.shape(av)
    basic = _is_basic_index(idx)

    def back(g):
        z = np.zeros(shape)
        if basic:
            z[idx] = g
        else:
            np.add.at(z, idx, g)
        return z

    return _record("getitem", out, (a,), (back,))


def _is_basic_index(idx):
    if not isinstance(idx, tuple):
        idx = (idx,)
    return all(isinstance(i, (int, slice, type(Ellipsis))) or i is None for i in idx)


def concat(vars_: Sequence, axis: int = -1):
    vals = [np.asarray(_val(v), dtype=np.float64) for v in vars_]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def piece(k):
        def back(g):
            return np.split(g, bounds, axis=axis)[k]
        return back

    return _record("concat", out, tuple(vars_), tuple(piece(k) for k in range(len(vals))))


def stack(vars_: Sequence, axis: int = -1):
    vals = [_val(v) for v in vars_]
    out = np.stack(np.broadcast_arrays(*[np.asarray(v, dtype=np.float64) for v in vals]), axis=axis)

    def piece(k, shape):
        def back(g):
            return _unbroadcast(np.take(g, k, axis=axis), shape)
        return back

    return _record("stack", out, tuple(vars_), tuple(piece(k, np.shape(v)) for k, v in enumerate(vals)))


def vsum(a, axis=None):
    av = _val(a)
    out = np.sum(av, axis=axis)
    shape = np.shape(av)

    def back(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    return _record("sum", out, (a,), (back,))


def mean(a, axis=None):
    n = np.size(_val(a)) if axis is None else np.shape(_val(a))[axis]
    return vsum(a, axis) * (1.0 / n)


def reshape(a, shape):
    av = _val(a)
    old = np.shape(av)
    return _record("reshape", np.reshape(av, shape), (a,), (lambda g: np.reshape(g, old),))


# --------------------------------------------------------------------------
# composites

def elu(a):
    """max(x, 0) + exp(min(x, 0)) - 1."""
    return maximum(a, 0.0) + exp(minimum(a, 0.0)) - 1.0


def norm(a, axis=-1, eps: float = SMOOTH_ABS_EPS):
    """Euclidean norm smoothed at the origin, shifted so that norm(0) == 0."""
    ss = vsum(square(a), axis=axis)
    return sqrt(ss + eps * eps) - eps


def norm_of(components: Iterable, eps: float = SMOOTH_ABS_EPS):
    """Smoothed norm of a vector given as separate scalar components."""
    ss = None
    for c in components:
        ss = square(c) if ss is None else ss + square(c)
    return sqrt(ss + eps * eps) - eps


OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "pow": pow,
    "sin": sin,
    "cos": cos,
    "max": maximum,
    "min": minimum,
    "abs_smooth": abs_smooth,
}


def apply(op: str, *args) -> Var:
    try:
        fn = OPS[op]
    except KeyError:
        raise AutodiffError(f"unknown op {op!r}") from None
    return fn(*args)


# --------------------------------------------------------------------------
# reverse sweep

def backward(tape: Tape, root: Var, seed=None) -> list:
    """Return d(root)/d(node) for every node on ``tape``.

    ``root`` must be a scalar unless ``seed`` (the output cotangent) is given.
    Nodes after ``root`` or unreachable from it get zeros.
    """
    if not isinstance(root, Var) or not root.tracked:
        raise AutodiffError("backward: root is detached")
    _check_tape(tape, root)
    if seed is None:
        if np.size(root.value) != 1:
            raise AutodiffError("backward: non-scalar root needs an explicit seed")
        seed = np.ones_like(root.value) if np.ndim(root.value) else 1.0
    values, parents, partials = tape.values, tape.parents, tape.partials
    grads: list = [None] * len(values)
    grads[root.node] = seed
    for i in range(root.node, -1, -1):
        g = grads[i]
        if g is None:
            continue
        for p, d in zip(parents[i], partials[i]):
            if callable(d):
                contrib = d(g)
            else:
                if type(d) is float and d == 1.0:
                    contrib = _unbroadcast(g, np.shape(values[p]))
                else:
                    contrib = _unbroadcast(g * d, np.shape(values[p]))
            prev = grads[p]
            grads[p] = contrib if prev is None else prev + contrib
    for i, g in enumerate(grads):
        if g is None:
            grads[i] = np.zeros_like(values[i]) if np.ndim(values[i]) else 0.0
    return grads


def grad_of(grads: list, v: Var):
    """Pick the gradient of ``v`` out of a :func:`backward` result."""
    if not v.tracked:
        return np.zeros_like(v.value) if np.ndim(v.value) else 0.0
    return grads[v.node]
