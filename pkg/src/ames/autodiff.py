"""Define-by-run reverse-mode differentiation over dense float64 matrices.

Every value is a 2-D ``numpy.ndarray``. A :class:`Tape` records the
operations of one forward pass; :meth:`Tape.backward` walks it in reverse
insertion order. Two capabilities go beyond a textbook tape:

* gradients of interior nodes stay readable after the backward pass
  (``tape.grad(node)``), and
* the gradient of a trainable leaf can be replaced before the optimizer
  consumes it (``tape.override_gradient``).

A fresh tape is built for every training step.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DegenerateBatchError,
    DimensionError,
    DivergenceError,
    DomainError,
    UnknownNodeError,
)

Array = np.ndarray
BackwardFn = Callable[[Array], Sequence[Array | None]]


class Parameter:
    """A named trainable matrix that outlives individual tapes."""

    def __init__(self, name: str, value):
        value = np.array(value, dtype=np.float64)
        if value.ndim != 2:
            raise DimensionError(f"parameter {name!r} must be 2-D, got shape {value.shape}")
        self.name = name
        self.value = value

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class Node:
    __slots__ = ("tape", "id", "value", "grad", "op", "parents", "backward_fn")

    def __init__(self, tape, node_id, value, op, parents, backward_fn):
        self.tape = tape
        self.id = node_id
        self.value = value
        self.grad = None
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(id={self.id}, op={self.op!r}, shape={self.shape})"

    # Operator sugar; keeps model code readable.
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Append-only record of one forward pass."""

    def __init__(self, check_finite: bool = True):
        self.nodes: list[Node] = []
        self.param_ids: dict[int, Parameter] = {}
        self._param_nodes: dict[int, Node] = {}
        self.check_finite = check_finite

    def _push(self, value: Array, op: str, parents: tuple = (), backward_fn: BackwardFn | None = None) -> Node:
        if self.check_finite and not np.isfinite(value).all():
            raise DivergenceError(
                f"non-finite value produced by op {op!r} at tape position {len(self.nodes)}", op=op
            )
        node = Node(self, len(self.nodes), value, op, parents, backward_fn)
        self.nodes.append(node)
        return node

    def constant(self, value, op: str = "constant") -> Node:
        value = np.array(value, dtype=np.float64, ndmin=2)
        if value.ndim != 2:
            raise DimensionError(f"tape values must be 2-D, got shape {value.shape}")
        return self._push(value, op)

    def param(self, p: Parameter) -> Node:
        """Leaf node for ``p``; one node per parameter per tape."""
        node = self._param_nodes.get(id(p))
        if node is None:
            node = self._push(p.value, f"param:{p.name}")
            self._param_nodes[id(p)] = node
            self.param_ids[node.id] = p
        return node

    def node(self, node_id: int) -> Node:
        if not 0 <= node_id < len(self.nodes):
            raise UnknownNodeError(f"no tape node with id {node_id}")
        return self.nodes[node_id]

    def backward(self, loss: Node) -> None:
        if loss.tape is not self:
            raise ContractError("loss node belongs to a different tape")
        if loss.shape != (1, 1):
            raise ContractError(f"backward needs a 1x1 loss, got shape {loss.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones((1, 1))
        for node in reversed(self.nodes[: loss.id + 1]):
            if node.grad is None or node.backward_fn is None:
                continue
            contributions = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, contributions):
                if g is None:
                    continue
                # never in-place: a contribution may alias another node's grad
                parent.grad = g if parent.grad is None else parent.grad + g

    def grad(self, node: Node | int) -> Array:
        """Gradient of the last backward loss w.r.t. ``node`` (zeros if unreachable)."""
        if isinstance(node, (int, np.integer)):
            node = self.node(int(node))
        if node.grad is None:
            return np.zeros_like(node.value)
        return node.grad

    def param_node(self, p: Parameter) -> Node | None:
        return self._param_nodes.get(id(p))

    def param_grad(self, p: Parameter) -> Array:
        node = self._param_nodes.get(id(p))
        if node is None:
            return np.zeros_like(p.value)
        return self.grad(node)

    def override_gradient(self, param_id: int, new_grad) -> None:
        """Replace the stored gradient of trainable leaf ``param_id``."""
        if param_id not in self.param_ids:
            raise UnknownNodeError(f"tape id {param_id} is not a trainable parameter")
        node = self.nodes[param_id]
        new_grad = np.asarray(new_grad, dtype=np.float64)
        if new_grad.shape != node.shape:
            raise DimensionError(f"gradient shape {new_grad.shape} != parameter shape {node.shape}")
        node.grad = new_grad.copy()

    def ancestors(self, node: Node) -> set[int]:
        """Ids of every node ``node`` depends on (itself included)."""
        seen = {node.id}
        stack = [node]
        while stack:
            for parent in stack.pop().parents:
                if parent.id not in seen:
                    seen.add(parent.id)
                    stack.append(parent)
        return seen


# ---------------------------------------------------------------------------
# helpers


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise ContractError("at least one operand must be a tape node")


def _lift(tape: Tape, x) -> Node:
    if isinstance(x, Node):
        if x.tape is not tape:
            raise ContractError("operands live on different tapes")
        return x
    return tape.constant(x)


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple[int, int]:
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise DimensionError(f"{op}: incompatible shapes {a} and {b}")
    return tuple(out)


def _unbroadcast(g: Array, shape: tuple) -> Array:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _binary(a, b, op: str):
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _broadcast_shape(a.shape, b.shape, op)
    return tape, a, b


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Node, b: Node) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return tape._push(av @ bv, "matmul", (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Node) -> Node:
    return a.tape._push(a.value.T.copy(), "transpose", (a,), lambda g: (g.T,))


def concat_cols(parts: Sequence[Node]) -> Node:
    tape = _tape_of(*parts)
    parts = [_lift(tape, p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {sorted(rows)}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g):
        return [g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]

    return tape._push(np.hstack([p.value for p in parts]), "concat_cols", tuple(parts), backward)


def columns(a: Node, start: int, stop: int | None = None) -> Node:
    """Column slice ``a[:, start:stop]`` (a single column when ``stop`` is None)."""
    stop = start + 1 if stop is None else stop
    n, m = a.shape
    if not 0 <= start < stop <= m:
        raise DimensionError(f"columns[{start}:{stop}] out of range for {a.shape}")

    def backward(g):
        full = np.zeros((n, m))
        full[:, start:stop] = g
        return (full,)

    return a.tape._push(a.value[:, start:stop].copy(), "columns", (a,), backward)


def take(a: Node, rows, cols) -> Node:
    """Gather entries ``a[rows[t], cols[t]]`` into a column vector."""
    rows = np.asarray(rows, dtype=np.intp).ravel()
    cols = np.asarray(cols, dtype=np.intp).ravel()
    if rows.shape != cols.shape:
        raise DimensionError("take: rows and cols differ in length")
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, (rows, cols), g[:, 0])
        return (full,)

    return a.tape._push(a.value[rows, cols].reshape(-1, 1), "take", (a,), backward)


def zero_diagonal(a: Node) -> Node:
    """Force the diagonal to exactly zero; diagonal gradients are dropped."""
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"zero_diagonal needs a square matrix, got {a.shape}")
    out = a.value.copy()
    np.fill_diagonal(out, 0.0)

    def backward(g):
        g = g.copy()
        np.fill_diagonal(g, 0.0)
        return (g,)

    return a.tape._push(out, "zero_diagonal", (a,), backward)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Node:
    tape, a, b = _binary(a, b, "add")
    sa, sb = a.shape, b.shape
    return tape._push(a.value + b.value, "add", (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Node:
    tape, a, b = _binary(a, b, "sub")
    sa, sb = a.shape, b.shape
    return tape._push(a.value - b.value, "sub", (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Node:
    tape, a, b = _binary(a, b, "mul")
    av, bv = a.value, b.value
    return tape._push(
        av * bv, "mul", (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def neg(a: Node) -> Node:
    return a.tape._push(-a.value, "neg", (a,), lambda g: (-g,))


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return a.tape._push(a.value * c, "scale", (a,), lambda g: (g * c,))


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return a.tape._push(out, "exp", (a,), lambda g: (g * out,))


def log(a: Node) -> Node:
    av = a.value
    if (av <= 0).any():
        raise DomainError("log of a non-positive entry")
    return a.tape._push(np.log(av), "log", (a,), lambda g: (g / av,))


def sigmoid(a: Node) -> Node:
    x = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return a.tape._push(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def elu(a: Node, alpha: float = 1.0) -> Node:
    x = a.value
    neg_part = alpha * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg_part)
    # right-hand derivative (1) at exactly zero
    slope = np.where(x >= 0, 1.0, neg_part + alpha)
    return a.tape._push(out, "elu", (a,), lambda g: (g * slope,))


def sqrt(a: Node) -> Node:
    """Square root; entries at exactly zero get a zero gradient."""
    av = a.value
    if (av < 0).any():
        raise DomainError("sqrt of a negative entry")
    out = np.sqrt(av)

    def backward(g):
        res = np.zeros_like(out)
        np.divide(0.5 * g, out, out=res, where=out > 0)
        return (res,)

    return a.tape._push(out, "sqrt", (a,), backward)


def square(a: Node) -> Node:
    av = a.value
    return a.tape._push(av * av, "square", (a,), lambda g: (2.0 * av * g,))


def softplus(a: Node) -> Node:
    x = a.value
    out = np.logaddexp(0.0, x)
    e = np.exp(-np.abs(x))
    sig = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return a.tape._push(out, "softplus", (a,), lambda g: (g * sig,))


def clamp(a: Node, lo: float = -np.inf, hi: float = np.inf) -> Node:
    """Clip into ``[lo, hi]``; gradient is zero wherever the clip is active."""
    x = a.value
    inside = (x >= lo) & (x <= hi)
    return a.tape._push(np.clip(x, lo, hi), "clamp", (a,), lambda g: (np.where(inside, g, 0.0),))


def arccosh_clamped(a: Node) -> Node:
    """``arccosh(max(x, 1))``; zero gradient where the clamp binds."""
    x = np.maximum(a.value, 1.0)
    out = np.arccosh(x)
    den = np.sqrt((x - 1.0) * (x + 1.0))
    active = a.value > 1.0

    def backward(g):
        res = np.zeros_like(x)
        np.divide(g, den, out=res, where=active & (den > 0))
        return (res,)

    return a.tape._push(out, "arccosh", (a,), backward)


def arccos_clamped(a: Node) -> Node:
    """``arccos(clip(x, -1, 1))``; zero gradient where the clip binds."""
    x = np.clip(a.value, -1.0, 1.0)
    out = np.arccos(x)
    den = np.sqrt((1.0 - x) * (1.0 + x))
    active = (a.value > -1.0) & (a.value < 1.0)

    def backward(g):
        res = np.zeros_like(x)
        np.divide(-g, den, out=res, where=active & (den > 0))
        return (res,)

    return a.tape._push(out, "arccos", (a,), backward)


def unary(a: Node, fn: Callable[[Array], Array], dfn: Callable[[Array], Array], op: str) -> Node:
    """Elementwise op from a forward function and its derivative."""
    x = a.value
    return a.tape._push(fn(x), op, (a,), lambda g: (g * dfn(x),))


_ELEMENTWISE_UNARY = {
    "exp": exp,
    "log": log,
    "neg": neg,
    "sigmoid": sigmoid,
    "elu": elu,
    "sqrt": sqrt,
    "square": square,
    "softplus": softplus,
}
_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(a, kind: str, other=None) -> Node:
    """Dispatch an elementwise op by name; ``other`` is the second operand or the scale factor."""
    if kind in _ELEMENTWISE_BINARY:
        if other is None:
            raise ContractError(f"{kind} needs a second operand")
        return _ELEMENTWISE_BINARY[kind](a, other)
    if kind == "scale":
        return scale(a, other)
    if kind in _ELEMENTWISE_UNARY:
        return _ELEMENTWISE_UNARY[kind](a)
    raise ContractError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# reductions


def sum_all(a: Node) -> Node:
    shape = a.shape
    return a.tape._push(np.array([[a.value.sum()]]), "sum", (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean(a: Node) -> Node:
    shape = a.shape
    n = a.value.size
    return a.tape._push(np.array([[a.value.mean()]]), "mean", (a,), lambda g: (np.full(shape, g[0, 0] / n),))


def rowsum(a: Node) -> Node:
    shape = a.shape
    return a.tape._push(
        a.value.sum(axis=1, keepdims=True), "rowsum", (a,), lambda g: (np.broadcast_to(g, shape).copy(),)
    )


def colsum(a: Node) -> Node:
    shape = a.shape
    return a.tape._push(
        a.value.sum(axis=0, keepdims=True), "colsum", (a,), lambda g: (np.broadcast_to(g, shape).copy(),)
    )


def rowmax(a: Node) -> Node:
    """Row maxima; the gradient goes to the first (lowest-index) maximiser."""
    idx = np.argmax(a.value, axis=1)
    rows = np.arange(a.shape[0])
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[rows, idx] = g[:, 0]
        return (full,)

    return a.tape._push(a.value[rows, idx].reshape(-1, 1), "rowmax", (a,), backward)


_REDUCTIONS = {"sum": sum_all, "mean": mean, "rowsum": rowsum, "colsum": colsum, "rowmax": rowmax}


def reduce(a: Node, kind: str) -> Node:
    try:
        return _REDUCTIONS[kind](a)
    except KeyError:
        raise ContractError(f"unknown reduction {kind!r}") from None


# ---------------------------------------------------------------------------
# normalisations


def softmax_rows(a: Node) -> Node:
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return a.tape._push(out, "softmax_rows", (a,), backward)


def log_softmax_rows(a: Node) -> Node:
    z = a.value - a.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return a.tape._push(out, "log_softmax_rows", (a,), backward)


class BatchNormState:
    """Running statistics of one batch-norm layer."""

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros((1, num_features))
        self.running_var = np.ones((1, num_features))
        self.momentum = momentum
        self.eps = eps

    def copy(self) -> "BatchNormState":
        other = BatchNormState(self.running_mean.shape[1], self.momentum, self.eps)
        other.running_mean = self.running_mean.copy()
        other.running_var = self.running_var.copy()
        return other


def batchnorm(x: Node, gamma: Node, beta: Node, state: BatchNormState, mode: str = "train") -> Node:
    """Batch normalisation over rows with learnable scale ``gamma`` and shift ``beta``."""
    tape = _tape_of(x, gamma, beta)
    gamma, beta = _lift(tape, gamma), _lift(tape, beta)
    n, f = x.shape
    if gamma.shape != (1, f) or beta.shape != (1, f):
        raise DimensionError(f"batchnorm: gamma/beta must be (1, {f})")
    xv, gv = x.value, gamma.value
    if mode == "train":
        if n < 2:
            raise DegenerateBatchError("batchnorm needs at least 2 rows in train mode")
        mu = xv.mean(axis=0, keepdims=True)
        var = xv.var(axis=0, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (xv - mu) * inv_std
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mu
        state.running_var = (1.0 - m) * state.running_var + m * var * (n / (n - 1))

        def backward(g):
            gx_hat = g * gv
            gx = inv_std / n * (
                n * gx_hat - gx_hat.sum(axis=0, keepdims=True) - xhat * (gx_hat * xhat).sum(axis=0, keepdims=True)
            )
            return gx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    elif mode == "eval":
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (xv - state.running_mean) * inv_std

        def backward(g):
            return g * gv * inv_std, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    else:
        raise ContractError(f"unknown batchnorm mode {mode!r}")
    return tape._push(xhat * gv + beta.value, "batchnorm", (x, gamma, beta), backward)
