"""Dense 2-D float64 tensors with a small reverse-mode autodiff graph.

Values are plain ``numpy.ndarray`` objects of shape ``(rows, cols)``; a
:class:`Node` wraps one value together with its gradient and the closure
that pushes the gradient back to its parents.  Only the handful of ops an
MLP with a sponge-energy penalty needs are provided.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericalError, ValidationError


def as_tensor(data, name: str = "tensor") -> np.ndarray:
    """Coerce ``data`` into a finite, C-contiguous float64 matrix.

    Scalars become ``1x1`` and 1-D sequences become a single row.
    """
    arr = np.array(data, dtype=np.float64, order="C", copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"{name}: expected a 2-D tensor, got shape {arr.shape}")
    _check_finite(arr, name)
    return arr


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{op}: non-finite value produced")


class Node:
    """A value in the autodiff graph.

    ``grad`` always has the shape of ``value``.  Leaves have no parents;
    interior nodes keep a reference to their parents plus a backward closure
    taking the upstream gradient.
    """

    __slots__ = ("value", "grad", "parents", "_backward", "name")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        backward_fn: Callable[[np.ndarray], None] | None = None,
        name: str = "",
    ):
        self.value = value if isinstance(value, np.ndarray) and value.ndim == 2 else as_tensor(value, name or "node")
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self._backward = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 node, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Node{label}(shape={self.shape})"


def constant(data, name: str = "const") -> Node:
    return Node(as_tensor(data, name), name=name)


def _result(value: np.ndarray, op: str, parents, backward_fn) -> Node:
    _check_finite(value, op)
    return Node(value, parents, backward_fn, name=op)


def matmul(a: Node, b: Node) -> Node:
    (m, k), (k2, n) = a.shape, b.shape
    if k != k2:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")

    def backward(g):
        a.grad += g @ b.value.T
        b.grad += a.value.T @ g

    return _result(a.value @ b.value, "matmul", (a, b), backward)


def add_bias(x: Node, b: Node) -> Node:
    if b.shape[0] != 1 or b.shape[1] != x.shape[1]:
        raise DimensionError(f"add_bias: bias {b.shape} does not fit input {x.shape}")

    def backward(g):
        x.grad += g
        b.grad += g.sum(axis=0, keepdims=True)

    return _result(x.value + b.value, "add_bias", (x, b), backward)


def relu(x: Node) -> Node:
    on = x.value > 0.0

    def backward(g):
        # subgradient at exactly 0 is 0
        x.grad += g * on

    return _result(np.where(on, x.value, 0.0), "relu", (x,), backward)


def add(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes differ, {a.shape} vs {b.shape}")

    def backward(g):
        a.grad += g
        b.grad += g

    return _result(a.value + b.value, "add", (a, b), backward)


def scale(x: Node, factor: float) -> Node:
    factor = float(factor)

    def backward(g):
        x.grad += factor * g

    return _result(factor * x.value, "scale", (x,), backward)


def sub(a: Node, b: Node) -> Node:
    return add(a, scale(b, -1.0))


def sum_all(x: Node) -> Node:
    def backward(g):
        x.grad += g[0, 0]

    return _result(np.array([[x.value.sum()]]), "sum", (x,), backward)


def mean_all(x: Node) -> Node:
    size = x.value.size
    if size == 0:
        raise ValidationError("mean of an empty tensor")
    return scale(sum_all(x), 1.0 / size)


def take_rows(x: Node, rows: Sequence[int] | np.ndarray) -> Node:
    """Select rows (in the given order); gradients scatter-add back."""
    idx = np.asarray(rows, dtype=np.intp)

    def backward(g):
        np.add.at(x.grad, idx, g)

    return _result(x.value[idx], "take_rows", (x,), backward)


def softmax_cross_entropy(logits: Node, labels) -> Node:
    """Mean negative log-likelihood of integer ``labels`` under row softmax."""
    y = np.asarray(labels)
    m, c = logits.shape
    if m < 1:
        raise ValidationError("cross-entropy needs at least one row")
    if y.shape != (m,):
        raise DimensionError(f"cross-entropy: {y.shape[0] if y.ndim else 0} labels for {m} rows")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValidationError("cross-entropy labels must be integers")
        y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= c:
        raise ValidationError(f"cross-entropy labels must lie in [0, {c}), got range [{y.min()}, {y.max()}]")

    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(m)
    loss = -log_p[rows, y].mean()

    def backward(g):
        d = np.exp(log_p)
        d[rows, y] -= 1.0
        logits.grad += g[0, 0] * d / m

    return _result(np.array([[loss]]), "softmax_cross_entropy", (logits,), backward)


def _topological(root: Node) -> list[Node]:
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
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> None:
    """Fill ``grad`` of every node reachable from ``loss`` with d(loss)/d(node).

    Gradients of the reachable nodes are reset first, so calling this twice on
    the same graph yields the same result.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) root, got {loss.shape}")
    order = _topological(loss)
    for node in order:
        node.grad = np.zeros_like(node.value)
    loss.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)
    for node in order:
        _check_finite(node.grad, f"gradient of {node.name or 'node'}")


def zero_grads(nodes: Iterable[Node]) -> None:
    for node in nodes:
        node.grad = np.zeros_like(node.value)
