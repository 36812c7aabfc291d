"""Reverse-mode automatic differentiation over dense float64 matrices.

Every value is a 2-D ``numpy`` array.  Sparse operands (``scipy.sparse``)
enter only as constant left factors of :meth:`Tape.spmm`.  Nodes are recorded
on a :class:`Tape` in creation order, so walking the tape backwards is a valid
reverse topological order.

The tape also owns the random generator used by stochastic ops (dropout), so
replaying a forward pass with the same seed reproduces the same values.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class Node:
    __slots__ = ("value", "grad", "parents", "backward_rule", "requires_grad", "name", "op")

    def __init__(self, value, parents=(), backward_rule=None, requires_grad=False, name=None, op="leaf"):
        self.value = value
        self.grad = None
        self.parents = tuple(parents)
        self.backward_rule = backward_rule
        self.requires_grad = requires_grad
        self.name = name
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape}, name={self.name!r})"


def _as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"expected a matrix, got {a.ndim}-D array")
    return a


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    # only row-vector (1 x n) and scalar (1 x 1) broadcasting is supported
    if g.shape == shape:
        return g
    if shape[0] == 1 and shape[1] == g.shape[1]:
        return g.sum(axis=0, keepdims=True)
    if shape == (1, 1):
        return np.array([[g.sum()]])
    if shape[1] == 1 and shape[0] == g.shape[0]:
        return g.sum(axis=1, keepdims=True)
    raise ShapeError(f"cannot reduce gradient {g.shape} to {shape}")


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str):
    if a.shape == b.shape:
        return
    try:
        out = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None
    if out not in (a.shape, b.shape):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return _sigmoid(z)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "identity":
        return z
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _derivative(kind: str, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """First derivative of ``kind`` at ``z`` given ``y = kind(z)``."""
    if kind == "relu":
        return (z > 0).astype(np.float64)  # subgradient 0 at the kink
    if kind == "sigmoid":
        return y * (1.0 - y)
    if kind == "tanh":
        return 1.0 - y * y
    if kind == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {kind!r}")


def _second_derivative(kind: str, z: np.ndarray) -> np.ndarray:
    if kind in ("relu", "identity"):
        return np.zeros_like(z)
    if kind == "sigmoid":
        s = _sigmoid(z)
        return s * (1.0 - s) * (1.0 - 2.0 * s)
    if kind == "tanh":
        t = np.tanh(z)
        return -2.0 * t * (1.0 - t * t)
    raise ValueError(f"unknown activation {kind!r}")


class Tape:
    """Records nodes in creation order and holds the RNG for stochastic ops.

    ``rng`` may be a seed or an existing ``numpy.random.Generator``; sharing a
    generator across tapes lets a training loop draw one continuous stream.
    """

    def __init__(self, rng=None):
        if isinstance(rng, np.random.Generator):
            self.rng = rng
        else:
            self.rng = np.random.default_rng(rng)
        self.nodes: list[Node] = []
        self._params: dict[int, Node] = {}

    # -- leaves -----------------------------------------------------------
    def _record(self, value, parents=(), rule=None, op="leaf", name=None, requires_grad=None):
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        node = Node(value, parents, rule if requires_grad else None, requires_grad, name, op)
        self.nodes.append(node)
        return node

    def param(self, array: np.ndarray, name: str | None = None) -> Node:
        """Trainable leaf.  The array is wrapped, not copied; binding the same
        array twice on one tape returns the same node."""
        if not isinstance(array, np.ndarray) or array.ndim != 2 or array.dtype != np.float64:
            raise ShapeError("parameters must be 2-D float64 arrays")
        node = self._params.get(id(array))
        if node is not None and node.value is array:
            return node
        node = self._record(array, name=name, requires_grad=True)
        self._params[id(array)] = node
        return node

    def const(self, array, name: str | None = None) -> Node:
        return self._record(_as_matrix(array), name=name, requires_grad=False)

    # -- linear algebra ---------------------------------------------------
    def matmul(self, a: Node, b: Node) -> Node:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

        def rule(g):
            return (g @ b.value.T if a.requires_grad else None,
                    a.value.T @ g if b.requires_grad else None)

        return self._record(a.value @ b.value, (a, b), rule, "matmul")

    def spmm(self, s, d: Node) -> Node:
        """Constant sparse (or dense) matrix times a node."""
        if s.shape[1] != d.shape[0]:
            raise ShapeError(f"spmm: {s.shape} @ {d.shape}")
        value = s @ d.value
        if sp.issparse(value):
            value = value.toarray()
        value = np.asarray(value, dtype=np.float64)
        st = s.T

        def rule(g):
            out = st @ g
            return (np.asarray(out.toarray() if sp.issparse(out) else out),)

        return self._record(value, (d,), rule, "spmm")

    def transpose(self, a: Node) -> Node:
        return self._record(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")

    # -- elementwise arithmetic ------------------------------------------
    def add(self, a: Node, b: Node) -> Node:
        _check_broadcast(a.value, b.value, "add")

        def rule(g):
            return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                    _unbroadcast(g, b.shape) if b.requires_grad else None)

        return self._record(a.value + b.value, (a, b), rule, "add")

    def sub(self, a: Node, b: Node) -> Node:
        _check_broadcast(a.value, b.value, "sub")

        def rule(g):
            return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                    -_unbroadcast(g, b.shape) if b.requires_grad else None)

        return self._record(a.value - b.value, (a, b), rule, "sub")

    def mul(self, a: Node, b: Node) -> Node:
        _check_broadcast(a.value, b.value, "mul")

        def rule(g):
            return (_unbroadcast(g * b.value, a.shape) if a.requires_grad else None,
                    _unbroadcast(g * a.value, b.shape) if b.requires_grad else None)

        return self._record(a.value * b.value, (a, b), rule, "mul")

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)
        return self._record(a.value * c, (a,), lambda g: (g * c,), "scale")

    def add_scalar(self, a: Node, c: float) -> Node:
        return self._record(a.value + float(c), (a,), lambda g: (g,), "add_scalar")

    def square(self, a: Node) -> Node:
        return self._record(a.value * a.value, (a,), lambda g: (2.0 * a.value * g,), "square")

    def sqrt(self, a: Node) -> Node:
        y = np.sqrt(a.value)

        def rule(g):
            # zero gradient where the argument is 0 (norm of a zero vector)
            with np.errstate(divide="ignore", invalid="ignore"):
                d = np.where(y > 0, 0.5 / np.where(y > 0, y, 1.0), 0.0)
            return (g * d,)

        return self._record(y, (a,), rule, "sqrt")

    def log(self, a: Node, floor: float = 1e-12) -> Node:
        """Natural log with the argument clamped below at ``floor``."""
        x = np.maximum(a.value, floor)

        def rule(g):
            return (np.where(a.value > floor, g / x, 0.0),)

        return self._record(np.log(x), (a,), rule, "log")

    # -- reductions and reshaping ----------------------------------------
    def sum(self, a: Node, axis: int | None = None) -> Node:
        if axis is None:
            value = np.array([[a.value.sum()]])
            rule = lambda g: (np.full(a.shape, g[0, 0]),)
        elif axis == 1:
            value = a.value.sum(axis=1, keepdims=True)
            rule = lambda g: (np.broadcast_to(g, a.shape).copy(),)
        elif axis == 0:
            value = a.value.sum(axis=0, keepdims=True)
            rule = lambda g: (np.broadcast_to(g, a.shape).copy(),)
        else:
            raise ValueError("axis must be None, 0 or 1")
        return self._record(value, (a,), rule, "sum")

    def mean(self, a: Node) -> Node:
        n = a.value.size
        if n == 0:
            raise ValueError("mean of an empty matrix")
        return self.scale(self.sum(a), 1.0 / n)

    def rows(self, a: Node, index) -> Node:
        """Gather rows ``index`` of ``a``."""
        index = np.asarray(index, dtype=np.intp)

        def rule(g):
            out = np.zeros(a.shape)
            np.add.at(out, index, g)
            return (out,)

        return self._record(a.value[index], (a,), rule, "rows")

    def vstack(self, parts: Sequence[Node]) -> Node:
        widths = {p.shape[1] for p in parts}
        if len(widths) != 1:
            raise ShapeError(f"vstack: column counts differ {sorted(widths)}")
        bounds = np.cumsum([0] + [p.shape[0] for p in parts])

        def rule(g):
            return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

        return self._record(np.vstack([p.value for p in parts]), parts, rule, "vstack")

    # -- nonlinearities ---------------------------------------------------
    def activation(self, kind: str, a: Node) -> Node:
        y = activate(kind, a.value)
        if kind == "identity":
            return a

        def rule(g):
            return (g * _derivative(kind, a.value, y),)

        return self._record(y, (a,), rule, kind)

    def relu(self, a: Node) -> Node:
        return self.activation("relu", a)

    def sigmoid(self, a: Node) -> Node:
        return self.activation("sigmoid", a)

    def tanh(self, a: Node) -> Node:
        return self.activation("tanh", a)

    def activation_derivative(self, kind: str, a: Node) -> Node:
        """Entrywise ``kind'(a)`` as a differentiable node (second-order path)."""
        y = activate(kind, a.value)
        value = _derivative(kind, a.value, y)
        if kind in ("relu", "identity"):
            # piecewise constant: no gradient flows back
            return self._record(value, (a,), lambda g: (np.zeros(a.shape),), f"d{kind}",
                                requires_grad=False)
        return self._record(value, (a,), lambda g: (g * _second_derivative(kind, a.value),),
                            f"d{kind}")

    def softmax(self, a: Node) -> Node:
        z = a.value - a.value.max(axis=1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=1, keepdims=True)

        def rule(g):
            return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

        return self._record(y, (a,), rule, "softmax")

    # -- stochastic -------------------------------------------------------
    def dropout(self, x: Node, p: float, training: bool) -> Node:
        """Inverted dropout; identity when ``p == 0`` or not training."""
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
        if not training or p == 0.0:
            return x
        mask = (self.rng.random(x.shape, dtype=np.float32) >= p).astype(np.float64)
        mask *= 1.0 / (1.0 - p)
        return self._record(x.value * mask, (x,), lambda g: (g * mask,), "dropout")

    def sparse_dropout(self, s, p: float, training: bool):
        """Dropout over the stored entries of a constant sparse matrix."""
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
        if not training or p == 0.0:
            return s
        s = sp.csr_matrix(s, copy=True)
        mask = (self.rng.random(s.data.shape, dtype=np.float32) >= p).astype(np.float64)
        s.data = s.data * mask * (1.0 / (1.0 - p))
        return s

    # -- differentiation --------------------------------------------------
    def backward(self, root: Node) -> dict[str, np.ndarray]:
        """Accumulate d(root)/d(node) into every node's ``grad``.

        Returns gradients of all named trainable leaves (zeros when a leaf is
        unreachable from ``root``).
        """
        if root.value.shape != (1, 1):
            raise ValueError(f"backward needs a 1x1 root, got {root.value.shape}")
        for node in self.nodes:
            node.grad = None
        root.grad = np.ones((1, 1))
        try:
            stop = self.nodes.index(root)
        except ValueError:
            raise ValueError("root was not recorded on this tape") from None
        for node in reversed(self.nodes[:stop + 1]):
            if node.grad is None or node.backward_rule is None:
                continue
            contributions = node.backward_rule(node.grad)
            for parent, g in zip(node.parents, contributions):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
        grads = {}
        for node in self.nodes:
            if node.op == "leaf" and node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros(node.shape)
                if node.name is not None:
                    grads[node.name] = node.grad
        return grads


def critic_input_gradient(tape: Tape, w1: Node, b1: Node, w2: Node, h: Node,
                          activation: str = "relu") -> Node:
    """Per-row input gradient of a one-hidden-layer critic.

    The critic is ``f(h) = a(h W1^T + b1) w2 + b2`` with ``W1`` of shape
    hidden x d and ``w2`` hidden x 1.  Its gradient in ``h`` is
    ``(a'(z) * w2^T) W1``, built from tape ops so that a later backward pass
    differentiates it with respect to the critic parameters.
    """
    if h.shape[1] != w1.shape[1]:
        raise ShapeError(f"critic input width {h.shape[1]} != {w1.shape[1]}")
    if w2.shape != (w1.shape[0], 1) or b1.shape != (1, w1.shape[0]):
        raise ShapeError("critic parameter shapes are inconsistent")
    z = tape.add(tape.matmul(h, tape.transpose(w1)), b1)
    slope = tape.activation_derivative(activation, z)
    weighted = tape.mul(slope, tape.transpose(w2))
    return tape.matmul(weighted, w1)


def numeric_gradient(f: Callable[[], float], array: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``f`` with respect to ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + step
        up = f()
        array[idx] = orig - step
        down = f()
        array[idx] = orig
        grad[idx] = (up - down) / (2.0 * step)
    return grad
