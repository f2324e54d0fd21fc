"""
Reverse-Mode Autodiff Module
Minimal tape of numpy-valued nodes. Every operation records its parents and a
closure that pushes the output gradient back to them; backward() replays the
record in reverse topological order.
"""
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from aslpinn.exceptions import UsageError

Operand = Union["Node", float, int, np.ndarray]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Node:
    """A value on the record, with its accumulated gradient"""

    __array_ufunc__ = None  # make numpy defer to the reflected operators
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, parents: Tuple["Node", ...] = (),
                 backward: Optional[Callable[[np.ndarray], None]] = None,
                 requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=float)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Node{label}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def _accumulate(self, grad: np.ndarray):
        if self.requires_grad:
            grad = _unbroadcast(grad, self.data.shape)
            self.grad = grad if self.grad is None else self.grad + grad

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other: Operand) -> "Node":
        other = as_node(other)

        def backward(g):
            self._accumulate(g)
            other._accumulate(g)

        return Node(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other: Operand) -> "Node":
        other = as_node(other)

        def backward(g):
            self._accumulate(g)
            other._accumulate(-g)

        return Node(self.data - other.data, (self, other), backward)

    def __rsub__(self, other: Operand) -> "Node":
        return as_node(other) - self

    def __neg__(self) -> "Node":
        def backward(g):
            self._accumulate(-g)

        return Node(-self.data, (self,), backward)

    def __mul__(self, other: Operand) -> "Node":
        other = as_node(other)

        def backward(g):
            self._accumulate(g * other.data)
            other._accumulate(g * self.data)

        return Node(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other: Operand) -> "Node":
        other = as_node(other)

        def backward(g):
            self._accumulate(g / other.data)
            other._accumulate(-g * self.data / (other.data * other.data))

        return Node(self.data / other.data, (self, other), backward)

    def __rtruediv__(self, other: Operand) -> "Node":
        return as_node(other) / self

    def __pow__(self, exponent: int) -> "Node":
        if not isinstance(exponent, int):
            raise UsageError("Only integer powers are recorded")

        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))

        return Node(self.data ** exponent, (self,), backward)

    def __matmul__(self, other: Operand) -> "Node":
        other = as_node(other)

        def backward(g):
            self._accumulate(g @ other.data.T)
            other._accumulate(self.data.T @ g)

        return Node(self.data @ other.data, (self, other), backward)

    def __rmatmul__(self, other: Operand) -> "Node":
        return as_node(other) @ self

    # -- reductions -----------------------------------------------------
    def sum(self) -> "Node":
        def backward(g):
            self._accumulate(np.broadcast_to(g, self.data.shape))

        return Node(self.data.sum(), (self,), backward)

    def mean(self) -> "Node":
        count = self.data.size

        def backward(g):
            self._accumulate(np.broadcast_to(g / count, self.data.shape))

        return Node(self.data.mean(), (self,), backward)

    # -- backpropagation ------------------------------------------------
    def topological_order(self) -> List["Node"]:
        """Nodes reachable from self, parents before children"""
        order: List[Node] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self) -> List["Node"]:
        """Fill .grad of every node on the record; returns the record"""
        if self.data.size != 1:
            raise UsageError("backward() needs a scalar output")
        order = self.topological_order()
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        return order


def as_node(value: Operand) -> Node:
    return value if isinstance(value, Node) else Node(value)


def variable(data, name: Optional[str] = None) -> Node:
    """A trainable leaf"""
    return Node(data, requires_grad=True, name=name)


def tanh(x: Operand) -> Node:
    x = as_node(x)
    out = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - out * out))

    return Node(out, (x,), backward)


def exp(x: Operand) -> Node:
    x = as_node(x)
    out = np.exp(x.data)

    def backward(g):
        x._accumulate(g * out)

    return Node(out, (x,), backward)


def square(x: Operand) -> Node:
    return as_node(x) ** 2


# -- fused operations ----------------------------------------------------
# One node each for patterns the training loop records on every iteration.

def affine(x: Operand, weight: Node, bias: Node) -> Node:
    """x @ weight + bias"""
    x = as_node(x)

    def backward(g):
        x._accumulate(g @ weight.data.T)
        weight._accumulate(x.data.T @ g)
        bias._accumulate(g)

    return Node(x.data @ weight.data + bias.data, (x, weight, bias), backward)


def tanh_tangent(h: Node, dz: Operand) -> Node:
    """(1 - h^2) * dz, the tangent through a tanh whose output is h"""
    dz = as_node(dz)
    slope = 1.0 - h.data * h.data

    def backward(g):
        h._accumulate(-2.0 * h.data * dz.data * g)
        dz._accumulate(slope * g)

    return Node(slope * dz.data, (h, dz), backward)


def mean_square(x: Operand) -> Node:
    """mean(x^2)"""
    x = as_node(x)
    count = x.data.size

    def backward(g):
        x._accumulate(g * (2.0 / count) * x.data)

    return Node(np.mean(x.data * x.data), (x,), backward)


def scaled_exp(x: Operand, scale: float) -> Node:
    """scale * exp(x)"""
    x = as_node(x)
    out = scale * np.exp(x.data)

    def backward(g):
        x._accumulate(g * out)

    return Node(out, (x,), backward)


def grad(loss: Node, wrt: Sequence[Node], allow_unused: bool = False) -> List[np.ndarray]:
    """
    d loss / d node for every node in wrt.
    Nodes that are not on the loss's record raise UsageError, or get a zero
    gradient when allow_unused is set.
    """
    order = loss.backward()
    on_record = {id(node) for node in order}
    missing = [node for node in wrt if id(node) not in on_record]
    if missing and not allow_unused:
        names = ", ".join(node.name or repr(node) for node in missing)
        raise UsageError(f"Values not on the loss record: {names}")
    return [
        np.array(node.grad) if node.grad is not None else np.zeros_like(node.data)
        for node in wrt
    ]
