"""Dense matrices plus a small reverse-mode differentiation engine.

Define-by-run graphs over 2-D float64 matrices: every operation records its
inputs and a backward closure, and ``backward()`` walks the graph once in
reverse topological order. The op set is exactly what the perturbation-mask
objective needs (matmul, elementwise arithmetic, relu / sigmoid /
row-softmax / log, reductions, transpose, clamp) plus Adam and plain
gradient-descent steps.

Graphs are single-threaded; ``Matrix`` values are frozen once produced, so
sharing them read-only across threads is safe.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ShapeError

Array = np.ndarray


def _as_2d_float64(values) -> Array:
    arr = np.array(values, dtype=np.float64, order="C")
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"matrices are 2-D; got input of shape {arr.shape}")
    return arr


class Matrix:
    """Immutable row-major float64 matrix.

    Public construction validates finiteness; internal ops use ``_wrap`` to
    skip the check on values they computed from finite inputs.
    """

    __slots__ = ("arr",)

    def __init__(self, values):
        arr = _as_2d_float64(values)
        if not np.isfinite(arr).all():
            raise ValueError("matrix entries must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "arr", arr)

    @classmethod
    def _wrap(cls, arr: Array) -> "Matrix":
        out = object.__new__(cls)
        if not (arr.flags.c_contiguous and arr.dtype == np.float64):
            arr = np.ascontiguousarray(arr, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(out, "arr", arr)
        return out

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls._wrap(np.zeros((rows, cols)))

    @classmethod
    def eye(cls, n: int) -> "Matrix":
        return cls._wrap(np.eye(n))

    @property
    def rows(self) -> int:
        return self.arr.shape[0]

    @property
    def cols(self) -> int:
        return self.arr.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.arr.shape

    @property
    def data(self) -> Array:
        """Row-major flat view of the entries (read-only)."""
        return self.arr.reshape(-1)

    def tolist(self) -> list[list[float]]:
        return self.arr.tolist()

    def __repr__(self) -> str:
        return f"Matrix({self.arr.tolist()!r})"


class Node:
    """Computation-graph node: a value, its gradient, and provenance.

    ``grad`` is a mutable accumulator of the same shape as ``value``; it is
    zero until a backward pass reaches this node. Nodes built by
    ``constant()`` opt out of gradient computation entirely.
    """

    __slots__ = ("value", "grad", "op", "parents", "needs_grad", "_backward")

    def __init__(
        self,
        value: Matrix,
        op: str = "leaf",
        parents: tuple["Node", ...] = (),
        needs_grad: bool = True,
        backward_fn: Callable[[Array], None] | None = None,
    ):
        if not isinstance(value, Matrix):
            value = Matrix(value)
        self.value = value
        self.grad = np.zeros(value.shape)
        self.op = op
        self.parents = parents
        self.needs_grad = needs_grad
        self._backward = backward_fn

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 node, got {self.value.shape}")
        return float(self.value.arr[0, 0])

    def __float__(self) -> float:
        return self.item()

    def zero_grad(self) -> None:
        self.grad[:] = 0.0

    def __matmul__(self, other: "Node") -> "Node":
        return matmul(self, other)

    def __add__(self, other: "Node") -> "Node":
        return elementwise("add", self, other)

    def __sub__(self, other: "Node") -> "Node":
        return elementwise("sub", self, other)

    def __mul__(self, other: "Node") -> "Node":
        return elementwise("mul", self, other)

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def parameter(values) -> Node:
    """Leaf node that participates in gradient computation."""
    return Node(values if isinstance(values, Matrix) else Matrix(values))


def constant(values) -> Node:
    """Leaf node excluded from gradient computation."""
    node = Node(values if isinstance(values, Matrix) else Matrix(values), needs_grad=False)
    return node


def _out(value_arr: Array, op: str, parents: tuple[Node, ...], backward_fn) -> Node:
    needs = any(p.needs_grad for p in parents)
    return Node(Matrix._wrap(value_arr), op=op, parents=parents,
                needs_grad=needs, backward_fn=backward_fn if needs else None)


def matmul(a: Node, b: Node) -> Node:
    """Matrix product a @ b."""
    if a.value.cols != b.value.rows:
        raise ShapeError(f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}")
    av, bv = a.value.arr, b.value.arr

    def bw(g: Array) -> None:
        if a.needs_grad:
            a.grad += g @ bv.T
        if b.needs_grad:
            b.grad += av.T @ g

    return _out(av @ bv, "matmul", (a, b), bw)


_EW_KINDS = ("mul", "add", "sub", "div")


def elementwise(kind: str, a: Node, b: Node) -> Node:
    """Entrywise mul/add/sub/div of equal-shape operands.

    ``b`` may also be an n x 1 column broadcast across the columns of ``a``
    (node-gate against features) or a 1 x 1 scalar (loss weighting and the
    division inside the compactness normalization).
    """
    if kind not in _EW_KINDS:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    av, bv = a.value.arr, b.value.arr
    if av.shape == bv.shape:
        reduce_axes = None
    elif bv.shape == (av.shape[0], 1):
        reduce_axes = 1
    elif bv.shape == (1, 1):
        reduce_axes = "all"
    else:
        raise ShapeError(f"elementwise {kind}: incompatible shapes {av.shape} vs {bv.shape}")

    def _collapse(g: Array) -> Array:
        if reduce_axes is None:
            return g
        if reduce_axes == "all":
            return g.sum().reshape(1, 1)
        return g.sum(axis=1, keepdims=True)

    if kind == "mul":
        out = av * bv

        def bw(g: Array) -> None:
            if a.needs_grad:
                a.grad += g * bv
            if b.needs_grad:
                b.grad += _collapse(g * av)

    elif kind == "add":
        out = av + bv

        def bw(g: Array) -> None:
            if a.needs_grad:
                a.grad += g
            if b.needs_grad:
                b.grad += _collapse(g)

    elif kind == "sub":
        out = av - bv

        def bw(g: Array) -> None:
            if a.needs_grad:
                a.grad += g
            if b.needs_grad:
                b.grad -= _collapse(g)

    else:  # div
        out = av / bv

        def bw(g: Array) -> None:
            if a.needs_grad:
                a.grad += g / bv
            if b.needs_grad:
                b.grad -= _collapse(g * av / (bv * bv))

    return _out(out, f"ew-{kind}", (a, b), bw)


def _sigmoid(x: Array) -> Array:
    # Branch on sign so neither exp overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _row_softmax(x: Array) -> Array:
    shifted = x - x.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


_ACT_KINDS = ("relu", "sigmoid", "row-softmax", "log")


def activation(kind: str, a: Node) -> Node:
    """relu / sigmoid / row-softmax / log, with the conventional gradients.

    relu's subgradient at exactly 0 is taken as 0; row-softmax subtracts the
    row max before exponentiating; log requires strictly positive entries.
    """
    if kind not in _ACT_KINDS:
        raise ValueError(f"unknown activation kind {kind!r}")
    av = a.value.arr

    if kind == "relu":
        out = np.maximum(av, 0.0)

        def bw(g: Array) -> None:
            if a.needs_grad:
                a.grad += g * (av > 0)

    elif kind == "sigmoid":
        out = _sigmoid(av)
        y = out

        def bw(g: Array) -> None:
            if a.needs_grad:
                a.grad += g * y * (1.0 - y)

    elif kind == "row-softmax":
        out = _row_softmax(av)
        y = out

        def bw(g: Array) -> None:
            if a.needs_grad:
                a.grad += y * (g - (g * y).sum(axis=1, keepdims=True))

    else:  # log
        if (av <= 0).any():
            raise DomainError("log requires strictly positive entries")
        out = np.log(av)

        def bw(g: Array) -> None:
            if a.needs_grad:
                a.grad += g / av

    return _out(out, kind, (a,), bw)


def clamp(a: Node, lo: float, hi: float) -> Node:
    """Entrywise clip to [lo, hi]; gradient passes only strictly inside."""
    av = a.value.arr
    out = np.clip(av, lo, hi)

    def bw(g: Array) -> None:
        if a.needs_grad:
            a.grad += g * ((av > lo) & (av < hi))

    return _out(out, "clamp", (a,), bw)


def transpose(a: Node) -> Node:
    av = a.value.arr

    def bw(g: Array) -> None:
        if a.needs_grad:
            a.grad += g.T

    return _out(av.T.copy(), "transpose", (a,), bw)


_REDUCE_KINDS = ("sum", "mean", "frobenius-norm")


def reduce(kind: str, a: Node) -> Node:
    """Reduce to a 1x1 node: sum, mean, or Frobenius norm.

    The Frobenius-norm gradient is a / ||a||_F, defined as 0 at the all-zero
    matrix.
    """
    if kind not in _REDUCE_KINDS:
        raise ValueError(f"unknown reduce kind {kind!r}")
    av = a.value.arr

    if kind == "sum":
        out = av.sum()

        def bw(g: Array) -> None:
            if a.needs_grad:
                a.grad += g[0, 0]

    elif kind == "mean":
        size = av.size
        out = av.mean()

        def bw(g: Array) -> None:
            if a.needs_grad:
                a.grad += g[0, 0] / size

    else:  # frobenius-norm
        out = float(np.sqrt((av * av).sum()))
        norm = out

        def bw(g: Array) -> None:
            if a.needs_grad and norm != 0.0:
                a.grad += g[0, 0] * av / norm

    return _out(np.array([[out]]), kind, (a,), bw)


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Populate gradients of every node reachable from a 1x1 root.

    Each call adds exactly one pass worth of gradient, so calling twice
    without clearing accumulates; with cleared gradients the result is
    bit-for-bit reproducible. The pass runs on fresh buffers and adds onto
    whatever the nodes already hold.
    """
    if root.value.shape != (1, 1):
        raise ShapeError(f"backward root must be 1x1, got {root.value.shape}")
    order = _topo_order(root)
    held = [node.grad for node in order]
    for node in order:
        node.grad = np.zeros(node.value.shape)
    root.grad[0, 0] = 1.0
    for node in reversed(order):
        if node._backward is not None and node.needs_grad:
            node._backward(node.grad)
    for node, previous in zip(order, held):
        node.grad += previous


def zero_grads(nodes: Sequence[Node]) -> None:
    for node in nodes:
        node.grad[:] = 0.0


class OptimizerState:
    """Per-parameter Adam moments (or bare SGD) for a fixed parameter list."""

    def __init__(self, params: Sequence[Node], kind: str = "adam",
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        self.kind = kind
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.shapes = [p.value.shape for p in params]
        self.m = [np.zeros(s) for s in self.shapes]
        self.v = [np.zeros(s) for s in self.shapes]

    def check(self, params: Sequence[Node]) -> None:
        if [p.value.shape for p in params] != self.shapes:
            raise ShapeError("optimizer state does not match parameter shapes")


def adam_step(params: Sequence[Node], state: OptimizerState, lr: float) -> None:
    """One Adam update (beta1=0.9, beta2=0.999, eps=1e-8, bias-corrected)."""
    state.check(params)
    state.t += 1
    b1, b2, eps, t = state.beta1, state.beta2, state.eps, state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.value = Matrix._wrap(p.value.arr - lr * m_hat / (np.sqrt(v_hat) + eps))


def sgd_step(params: Sequence[Node], state: OptimizerState, lr: float) -> None:
    state.check(params)
    state.t += 1
    for p in params:
        p.value = Matrix._wrap(p.value.arr - lr * p.grad)


def optimizer_step(params: Sequence[Node], state: OptimizerState, lr: float) -> None:
    if state.kind == "adam":
        adam_step(params, state, lr)
    else:
        sgd_step(params, state, lr)
