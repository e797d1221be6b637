"""Dense float64 tensors with a reverse-mode differentiation tape.

Every operation returns a fresh node wired to its parents, so graphs are
acyclic by construction and a creation-order topological sort always exists.
Gradients are computed by :func:`backward` as a pure function of the graph:
nothing is cached on the nodes, so repeated calls give identical results.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateRow,
    InvalidTemperature,
    NonFiniteValue,
    NonScalarLoss,
    ShapeMismatch,
)

Array = np.ndarray

ROW_NORM_FLOOR = 1e-12


class Tensor:
    """A value in the computation graph plus the recipe for its gradient.

    Leaf tensors (no parents) are the differentiable inputs. ``data`` is
    always a float64 ndarray; non-finite values raise at the producing
    operation rather than propagating silently.
    """

    __slots__ = ("data", "parents", "op", "_backward")

    def __init__(self, data, parents: Sequence["Tensor"] = (), op: str = "leaf",
                 backward_fn: Optional[Callable[[Array], tuple]] = None):
        self.data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteValue(f"non-finite values produced by op '{op}'")
        self.parents = tuple(parents)
        self.op = op
        self._backward = backward_fn

    # -- introspection -----------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    def detach(self) -> "Tensor":
        """A new leaf with the same values and no graph history."""
        return Tensor(self.data, op="const")

    # -- elementwise arithmetic --------------------------------------------

    def __add__(self, other):
        other = _lift(other)
        _check_elementwise(self, other, "add")
        return Tensor(self.data + other.data, (self, other), "add",
                      lambda g: (_fit(g, self.shape), _fit(g, other.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other)
        _check_elementwise(self, other, "sub")
        return Tensor(self.data - other.data, (self, other), "sub",
                      lambda g: (_fit(g, self.shape), _fit(-g, other.shape)))

    def __rsub__(self, other):
        return _lift(other).__sub__(self)

    def __mul__(self, other):
        other = _lift(other)
        _check_elementwise(self, other, "mul")
        return Tensor(self.data * other.data, (self, other), "mul",
                      lambda g: (_fit(g * other.data, self.shape),
                                 _fit(g * self.data, other.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other)
        _check_elementwise(self, other, "div")
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.data / other.data
        return Tensor(out, (self, other), "div",
                      lambda g: (_fit(g / other.data, self.shape),
                                 _fit(-g * self.data / (other.data * other.data),
                                      other.shape)))

    def __rtruediv__(self, other):
        return _lift(other).__truediv__(self)

    def __neg__(self):
        return Tensor(-self.data, (self,), "neg", lambda g: (-g,))

    # -- linear algebra ------------------------------------------------------

    def __matmul__(self, other):
        other = _lift(other)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ShapeMismatch(
                f"matmul: {self.shape} @ {other.shape}")
        return Tensor(self.data @ other.data, (self, other), "matmul",
                      lambda g: (g @ other.data.T, self.data.T @ g))

    @property
    def T(self) -> "Tensor":
        if self.ndim != 2:
            raise ShapeMismatch(f"transpose needs a matrix, got shape {self.shape}")
        return Tensor(self.data.T, (self,), "transpose", lambda g: (g.T,))

    # -- reductions ----------------------------------------------------------

    def sum(self) -> "Tensor":
        return Tensor(np.sum(self.data), (self,), "sum",
                      lambda g: (np.full(self.shape, float(g)),))

    def mean(self) -> "Tensor":
        n = self.data.size
        return Tensor(np.mean(self.data), (self,), "mean",
                      lambda g: (np.full(self.shape, float(g) / n),))

    # -- elementwise nonlinearities -------------------------------------------

    def exp(self) -> "Tensor":
        with np.errstate(over="ignore"):
            out = np.exp(self.data)
        t = Tensor(out, (self,), "exp", None)
        t._backward = lambda g: (g * out,)
        return t

    def log(self) -> "Tensor":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(self.data)
        return Tensor(out, (self,), "log", lambda g: (g / self.data,))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        t = Tensor(out, (self,), "tanh", None)
        t._backward = lambda g: (g * (1.0 - out * out),)
        return t

    def relu(self) -> "Tensor":
        return Tensor(np.maximum(self.data, 0.0), (self,), "relu",
                      lambda g: (g * (self.data > 0.0),))

    def clamp(self, lo: float, hi: float) -> "Tensor":
        mask = (self.data >= lo) & (self.data <= hi)
        return Tensor(np.clip(self.data, lo, hi), (self,), "clamp",
                      lambda g: (g * mask,))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    # same shape, or one side scalar (0-d); no general broadcasting
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise ShapeMismatch(f"{op}: {a.shape} vs {b.shape}")


def _fit(grad: Array, shape: tuple) -> Array:
    """Reduce a gradient to a scalar operand's shape after scalar broadcast."""
    if grad.shape == shape:
        return grad
    return np.sum(grad).reshape(shape)


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Row-wise broadcast add: (n, d) matrix plus a length-d vector."""
    m, v = _lift(m), _lift(v)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeMismatch(f"add_rowvec: {m.shape} + {v.shape}")
    return Tensor(m.data + v.data, (m, v), "add_rowvec",
                  lambda g: (g, g.sum(axis=0)))


def l2_normalize_rows(m: Tensor) -> Tensor:
    """Scale every row of a matrix to unit Euclidean norm.

    Raises DegenerateRow when any row norm falls below 1e-12: a zero vector
    has no direction, so normalizing it would silently fabricate one.
    """
    m = _lift(m)
    if m.ndim != 2:
        raise ShapeMismatch(f"l2_normalize_rows needs a matrix, got {m.shape}")
    norms = np.sqrt(np.sum(m.data * m.data, axis=1, keepdims=True))
    if np.any(norms < ROW_NORM_FLOOR):
        bad = int(np.argmin(norms))
        raise DegenerateRow(f"row {bad} has norm {norms[bad, 0]:.3e} < {ROW_NORM_FLOOR}")
    out = m.data / norms

    def backward_fn(g: Array):
        # per row: (g - y (g.y)) / ||x||
        dots = np.sum(g * out, axis=1, keepdims=True)
        return ((g - out * dots) / norms,)

    return Tensor(out, (m,), "l2_normalize_rows", backward_fn)


def row_log_softmax(s: Tensor, tau: float) -> Tensor:
    """Log of the row-wise softmax of s / tau, computed stably.

    Uses max-subtraction so the result is exact even at tau = 0.01 with
    logits of magnitude 1e4, where the direct exp would overflow.
    """
    if not (isinstance(tau, (int, float)) and tau > 0 and np.isfinite(tau)):
        raise InvalidTemperature(f"tau must be a positive finite number, got {tau!r}")
    s = _lift(s)
    if s.ndim != 2:
        raise ShapeMismatch(f"row_log_softmax needs a matrix, got {s.shape}")
    a = s.data / tau
    shifted = a - np.max(a, axis=1, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))

    def backward_fn(g: Array):
        p = np.exp(out)
        return ((g - p * np.sum(g, axis=1, keepdims=True)) / tau,)

    return Tensor(out, (s,), "row_log_softmax", backward_fn)


def backward(loss: Tensor, leaves: Optional[Iterable[Tensor]] = None) -> Dict[Tensor, Array]:
    """Gradients of a scalar loss with respect to leaf tensors.

    Accumulates in reverse topological order with a fixed node numbering, so
    results are bit-deterministic and repeat calls over the same graph return
    identical values. Leaves with no path to the loss get exact zeros.

    Returns a dict keyed by the leaf Tensor objects themselves. When
    ``leaves`` is None, every leaf reachable from ``loss`` is reported.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise NonScalarLoss("backward requires a scalar loss node")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack.append((p, False))

    grads: Dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, contrib in zip(node.parents, node._backward(g)):
            acc = grads.get(id(parent))
            grads[id(parent)] = contrib if acc is None else acc + contrib

    if leaves is None:
        leaves = [n for n in topo if not n.parents]
    out: Dict[Tensor, Array] = {}
    for leaf in leaves:
        g = grads.get(id(leaf))
        out[leaf] = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=np.float64)
    return out


def finite_diff_grad(f: Callable[[Array], float], x, h: float = 1e-5) -> Array:
    """Central-difference gradient oracle: (f(x+h e_i) - f(x-h e_i)) / 2h.

    ``f`` receives a plain ndarray and must return a scalar. Kept independent
    of the tape so it can cross-check backward().
    """
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        grad[idx] = (float(f(xp)) - float(f(xm))) / (2.0 * h)
    return grad
