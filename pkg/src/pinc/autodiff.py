"""Tape-based reverse-mode differentiation over small dense float64 arrays.

Every node on the tape holds an ``np.ndarray`` value. Operations are recorded
in execution order, so the record is topologically sorted by construction and
a backward pass is a single reverse sweep.

The module-level operations (:func:`tanh`, :func:`concat`, ...) accept either
:class:`Var` or plain arrays. With plain arrays they fall through to numpy and
record nothing, which lets model code run unchanged for fast inference and for
differentiated evaluation.

Derivatives of derivatives are not computed by nesting backward passes. A
quantity such as ``dy/dt`` is built as explicit forward-tangent operations on
the tape (see :mod:`pinc.network`), and the loss gradient then differentiates
through those operations like any other node.
"""

from __future__ import annotations

from numbers import Number
from typing import Callable, Sequence

import numpy as np

from .errors import ConstructionError, ContractError, DomainError

__all__ = [
    "Tape",
    "Var",
    "record_forward",
    "gradient",
    "jacobian",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "tanh",
    "affine",
    "tanh_tangent",
    "square",
    "sqrt",
    "relu",
    "sum",
    "mean",
    "concat",
    "stack",
    "value_of",
    "external",
]


class Tape:
    """Ordered record of elementary operations.

    ``values[i]`` is the forward value of node ``i``; ``parents[i]`` is a tuple
    of ``(parent_index, vjp)`` pairs where ``vjp`` maps the adjoint of node
    ``i`` to its contribution to the parent's adjoint.
    """

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.parents: list[tuple] = []
        self.ops: list[str] = []
        self.adjoints: list | None = None

    def __len__(self):
        return len(self.values)

    def leaf(self, value) -> Var:
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise DomainError("leaf value is not finite")
        return self._push(value, "leaf", ())

    def clear(self):
        self.values.clear()
        self.parents.clear()
        self.ops.clear()
        self.adjoints = None

    def _push(self, value, op, parents) -> Var:
        self.values.append(value)
        self.parents.append(parents)
        self.ops.append(op)
        return Var(self, len(self.values) - 1)


class Var:
    """Handle to one node of a :class:`Tape`."""

    __slots__ = ("tape", "index")
    __array_priority__ = 1000

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(#{self.index} {self.tape.ops[self.index]}, shape={self.shape})"

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

    def __pow__(self, exponent):
        if isinstance(exponent, Number) and exponent == 2:
            return square(self)
        if isinstance(exponent, Number) and exponent == 0.5:
            return sqrt(self)
        raise ConstructionError(f"unsupported operation: power {exponent!r}")

    def __getitem__(self, key):
        return _index(self, key)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        fn = _UFUNCS.get(ufunc) if method == "__call__" and not kwargs else None
        if fn is None:
            raise ConstructionError(f"unsupported operation: {ufunc.__name__}.{method}")
        return fn(*inputs)

    def __bool__(self):
        raise ConstructionError("unsupported operation: truth value of a recorded node")

    def __float__(self):
        return float(self.value)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ContractError("operands belong to different tapes")
        elif not isinstance(x, (Number, np.ndarray, np.generic, list, tuple)):
            raise ConstructionError(f"unsupported operand type {type(x).__name__}")
    return tape


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(a, b, op, forward, vjp_a, vjp_b):
    tape = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out = forward(av, bv)
    if tape is None:
        return out
    parents = []
    if isinstance(a, Var):
        parents.append((a.index, lambda g: _unbroadcast(vjp_a(g, av, bv), av.shape)))
    if isinstance(b, Var):
        parents.append((b.index, lambda g: _unbroadcast(vjp_b(g, av, bv), bv.shape)))
    return tape._push(np.asarray(out, dtype=np.float64), op, tuple(parents))


def _unary(x, op, forward, vjp):
    if not isinstance(x, Var):
        _tape_of(x)
        return forward(np.asarray(x, dtype=np.float64))
    xv = x.value
    out = np.asarray(forward(xv), dtype=np.float64)
    return x.tape._push(out, op, ((x.index, lambda g: vjp(g, xv, out)),))


def add(a, b):
    return _binary(a, b, "add", np.add, lambda g, a, b: g, lambda g, a, b: g)


def sub(a, b):
    return _binary(a, b, "sub", np.subtract, lambda g, a, b: g, lambda g, a, b: -g)


def mul(a, b):
    return _binary(a, b, "mul", np.multiply, lambda g, a, b: g * b, lambda g, a, b: g * a)


def div(a, b):
    return _binary(
        a, b, "div", np.divide, lambda g, a, b: g / b, lambda g, a, b: -g * a / (b * b)
    )


def neg(x):
    return _unary(x, "neg", np.negative, lambda g, x, y: -g)


def _mm_grad_a(g, a, b):
    if b.ndim == 1:
        return np.multiply.outer(g, b) if a.ndim == 2 else g * b
    return g @ b.T if a.ndim == 2 else b @ g


def _mm_grad_b(g, a, b):
    if a.ndim == 1:
        return np.multiply.outer(a, g) if b.ndim == 2 else g * a
    return a.T @ g if b.ndim == 2 else g @ a


def matmul(a, b):
    """Matrix product for 1-D/2-D operands (the affine layers' workhorse)."""
    if value_of(a).ndim > 2 or value_of(b).ndim > 2:
        raise ConstructionError("unsupported operation: matmul beyond 2-D")
    return _binary(a, b, "matmul", np.matmul, _mm_grad_a, _mm_grad_b)


def affine(x, w, b):
    """``x @ w + b`` recorded as one node (x is ``(N, n)`` or ``(n,)``, w is 2-D)."""
    tape = _tape_of(x, w, b)
    xv, wv, bv = value_of(x), value_of(w), value_of(b)
    out = xv @ wv + bv
    if tape is None:
        return out
    parents = []
    if isinstance(x, Var):
        parents.append((x.index, lambda g: g @ wv.T))
    if isinstance(w, Var):
        parents.append((w.index, lambda g: xv.T @ g if xv.ndim == 2 else np.multiply.outer(xv, g)))
    if isinstance(b, Var):
        parents.append((b.index, lambda g: _unbroadcast(g, bv.shape)))
    return tape._push(out, "affine", tuple(parents))


def tanh_tangent(a, da):
    """``(1 - a**2) * da``: pushes a tangent through ``a = tanh(z)`` in one node."""
    tape = _tape_of(a, da)
    av, dv = value_of(a), value_of(da)
    slope = np.asarray(av * av)
    np.subtract(1.0, slope, out=slope)
    out = slope * dv
    if tape is None:
        return out
    parents = []
    if isinstance(a, Var):
        def vjp_a(g):
            r = np.asarray(av * dv)
            r *= g
            r *= -2.0
            return _unbroadcast(r, av.shape)

        parents.append((a.index, vjp_a))
    if isinstance(da, Var):
        parents.append((da.index, lambda g: _unbroadcast(slope * g, dv.shape)))
    return tape._push(out, "tanh_tangent", tuple(parents))


def _tanh_vjp(g, x, y):
    r = np.asarray(y * y)
    np.subtract(1.0, r, out=r)
    r *= g
    return r


def tanh(x):
    return _unary(x, "tanh", np.tanh, _tanh_vjp)


def square(x):
    return _unary(x, "square", np.square, lambda g, x, y: 2.0 * x * g)


def _sqrt_vjp(g, x, y):
    safe = np.where(x > 0.0, y, 1.0)
    return np.where(x > 0.0, g / (2.0 * safe), 0.0)


def sqrt(x):
    """Square root clamped at zero; the derivative is defined as 0 where ``x <= 0``."""
    return _unary(x, "sqrt", lambda v: np.sqrt(np.maximum(v, 0.0)), _sqrt_vjp)


def relu(x):
    return _unary(x, "relu", lambda v: np.maximum(v, 0.0), lambda g, x, y: np.where(x > 0.0, g, 0.0))


def sum(x, axis=None):  # noqa: A001
    def vjp(g, xv, y):
        if axis is None:
            return np.broadcast_to(g, xv.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), xv.shape).copy()

    return _unary(x, "sum", lambda v: np.sum(v, axis=axis), vjp)


def mean(x, axis=None):
    n = value_of(x).size if axis is None else value_of(x).shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def _is_basic_key(key):
    keys = key if isinstance(key, tuple) else (key,)
    return all(k is None or k is Ellipsis or isinstance(k, (int, np.integer, slice)) for k in keys)


def _index(x, key):
    xv = x.value
    basic = _is_basic_key(key)

    def vjp(g, xv_, y):
        full = np.zeros_like(xv)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return full

    return _unary(x, "index", lambda v: np.array(v[key], dtype=np.float64), vjp)


def concat(xs: Sequence, axis=0):
    xs = list(xs)
    tape = _tape_of(*xs)
    vals = [value_of(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if tape is None:
        return out
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])
    parents = []
    for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
        if isinstance(x, Var):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(int(lo), int(hi))
            sl = tuple(sl)
            parents.append((x.index, lambda g, sl=sl: g[sl]))
    return tape._push(out, "concat", tuple(parents))


def stack(xs: Sequence, axis=0):
    xs = list(xs)
    tape = _tape_of(*xs)
    out = np.stack([value_of(x) for x in xs], axis=axis)
    if tape is None:
        return out
    parents = []
    for i, x in enumerate(xs):
        if isinstance(x, Var):
            parents.append((x.index, lambda g, i=i: np.take(g, i, axis=axis)))
    return tape._push(out, "stack", tuple(parents))


_UFUNCS = {
    np.add: add,
    np.subtract: sub,
    np.multiply: mul,
    np.true_divide: div,
    np.negative: neg,
    np.matmul: matmul,
    np.tanh: tanh,
    np.square: square,
    np.sqrt: sqrt,
}


def external(value, inputs: Sequence, jacobians: Sequence, op: str = "external"):
    """Record a value computed outside the tape, given its Jacobian per input.

    ``jacobians[i]`` has shape ``(value.size, inputs[i].size)``. Inputs that are
    not :class:`Var` are treated as constants. Returns a plain array when no
    input is recorded.
    """
    tape = _tape_of(*inputs)
    value = np.asarray(value, dtype=np.float64)
    if tape is None:
        return value
    parents = []
    for x, jac in zip(inputs, jacobians):
        if isinstance(x, Var):
            shape, jac = x.shape, np.asarray(jac, dtype=np.float64)
            parents.append((x.index, lambda g, jac=jac, shape=shape: (np.ravel(g) @ jac).reshape(shape)))
    return tape._push(value, op, tuple(parents))


def record_forward(builder: Callable, leaf_values) -> tuple[Tape, object, list[Var]]:
    """Run ``builder`` on fresh leaves and return ``(tape, outputs, leaves)``.

    ``leaf_values`` is a sequence of arrays (or scalars); each becomes one leaf.
    ``outputs`` is whatever the builder returns, usually a :class:`Var` or a
    list of them.
    """
    tape = Tape()
    leaves = [tape.leaf(v) for v in leaf_values]
    outputs = builder(*leaves)
    return tape, outputs, leaves


def _backward(tape: Tape, output: Var, seed: np.ndarray) -> list:
    if output.tape is not tape:
        raise ContractError("output node does not belong to this tape")
    adj = [None] * (output.index + 1)
    adj[output.index] = seed
    parents = tape.parents
    for i in range(output.index, -1, -1):
        g = adj[i]
        if g is None:
            continue
        for p, vjp in parents[i]:
            c = vjp(g)
            adj[p] = c if adj[p] is None else adj[p] + c
    return adj


def _collect(tape, adj, leaves):
    grads = []
    for leaf in leaves:
        if leaf.tape is not tape:
            raise ContractError("leaf does not belong to this tape")
        g = adj[leaf.index] if leaf.index < len(adj) else None
        grads.append(np.zeros_like(leaf.value) if g is None else np.asarray(g, dtype=np.float64).reshape(leaf.shape))
    return grads


def gradient(tape: Tape, output: Var, leaves: Sequence[Var]) -> list[np.ndarray]:
    """Derivative of the scalar ``output`` with respect to each leaf.

    Returns one array per leaf, shaped like the leaf. Adjoint storage is
    discarded after the sweep, so the tape can be swept again.
    """
    if not isinstance(output, Var):
        raise ContractError("output is not a recorded node")
    if output.size != 1:
        raise ContractError(f"gradient seed must be scalar, got shape {output.shape}")
    adj = _backward(tape, output, np.ones_like(output.value))
    tape.adjoints = adj
    try:
        return _collect(tape, adj, leaves)
    finally:
        tape.adjoints = None


def jacobian(tape: Tape, outputs, leaves: Sequence[Var]) -> np.ndarray:
    """Dense Jacobian: one row per scalar output element, one column per leaf element.

    ``outputs`` is a :class:`Var` (each element becomes a row) or a sequence of
    them. Columns follow the order of ``leaves`` with each leaf raveled.
    """
    if isinstance(outputs, Var):
        outputs = [outputs]
    n_cols = int(np.sum([leaf.size for leaf in leaves]))
    rows = []
    for out in outputs:
        if not isinstance(out, Var):
            raise ContractError("output is not a recorded node")
        for e in range(out.size):
            seed = np.zeros(out.size)
            seed[e] = 1.0
            adj = _backward(tape, out, seed.reshape(out.shape))
            grads = _collect(tape, adj, leaves)
            rows.append(np.concatenate([g.ravel() for g in grads]) if grads else np.zeros(0))
    if not rows:
        return np.zeros((0, n_cols))
    return np.vstack(rows)
