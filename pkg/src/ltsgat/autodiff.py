"""Reverse-mode automatic differentiation over dense float64 matrices.

Every value in the graph is a 2-D matrix; scalars are 1x1 and vectors are
columns. The primitive set is deliberately closed: matrix multiply, affine
maps with broadcast bias, transpose, elementwise add/subtract/multiply,
concatenation, axis softmax (optionally restricted to a 0/1 support mask),
sigmoid, tanh, leaky-ReLU, exp, log, axis mean, scalar multiply, row/column
gather, and full sum. Gradients accumulate by summation on leaves, and
repeated backward() calls keep accumulating until grads are cleared.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import GraphCycleError, ShapeError

Array = np.ndarray


def _as_matrix(values) -> Array:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)  # bare vectors become columns
    elif arr.ndim != 2:
        raise ShapeError(f"graph values must be 2-D matrices, got shape {arr.shape}")
    return arr


class Node:
    """A matrix value in the differentiation graph.

    `vjps` holds one vector-Jacobian callable per parent; each maps the
    gradient at this node to the gradient contribution for that parent.
    """

    __slots__ = ("value", "grad", "parents", "vjps", "op", "requires_grad")

    def __init__(self, value: Array, parents: tuple = (), vjps: tuple = (),
                 op: str = "leaf", requires_grad: bool = False):
        self.value = value
        self.grad: Array | None = None
        self.parents = parents
        self.vjps = vjps
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        r, c = self.value.shape
        return f"Node(op={self.op!r}, shape=({r}, {c}), requires_grad={self.requires_grad})"


def leaf(values, requires_grad: bool = False, op: str = "leaf") -> Node:
    arr = _as_matrix(values).copy()
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"leaf values must be finite (op={op})")
    return Node(arr, op=op, requires_grad=requires_grad)


def parameter(values) -> Node:
    """A learnable leaf: participates in gradient accumulation."""
    return leaf(values, requires_grad=True, op="parameter")


def constant(values) -> Node:
    return leaf(values, requires_grad=False, op="constant")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Node, b: Node) -> Node:
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}")
    av, bv = a.value, b.value
    return Node(av @ bv, (a, b),
                (lambda g: g @ bv.T, lambda g: av.T @ g), op="matmul")


def transpose(x: Node) -> Node:
    return Node(x.value.T.copy(), (x,), (lambda g: g.T,), op="transpose")


def _bias_axis(full: tuple[int, int], bias: tuple[int, int]) -> int | None:
    """Axis along which `bias` broadcasts against `full`, or None if equal."""
    if full == bias:
        return None
    if bias == (full[0], 1):
        return 1
    if bias == (1, full[1]):
        return 0
    raise ShapeError(f"add/sub shape mismatch: {full} vs {bias}")


def add(a: Node, b: Node) -> Node:
    """Elementwise sum; one operand may be a broadcast bias (r,1) or (1,c)."""
    if a.value.shape == b.value.shape:
        return Node(a.value + b.value, (a, b),
                    (lambda g: g, lambda g: g), op="add")
    # decide which operand is the bias
    if a.value.size < b.value.size:
        small, big, swapped = a, b, True
    else:
        small, big, swapped = b, a, False
    axis = _bias_axis(big.value.shape, small.value.shape)
    vjp_small = lambda g: g.sum(axis=axis, keepdims=True)
    vjp_big = lambda g: g
    vjps = (vjp_small, vjp_big) if swapped else (vjp_big, vjp_small)
    return Node(a.value + b.value, (a, b), vjps, op="add")


def sub(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"sub shape mismatch: {a.value.shape} vs {b.value.shape}")
    return Node(a.value - b.value, (a, b),
                (lambda g: g, lambda g: -g), op="sub")


def hadamard(a: Node, b: Node) -> Node:
    """Elementwise (Hadamard) product."""
    if a.value.shape != b.value.shape:
        raise ShapeError(f"hadamard shape mismatch: {a.value.shape} vs {b.value.shape}")
    av, bv = a.value, b.value
    return Node(av * bv, (a, b),
                (lambda g: g * bv, lambda g: g * av), op="hadamard")


def affine(w: Node, x: Node, b: Node) -> Node:
    """w @ x + b, with b broadcast when it is a single column or row."""
    return add(matmul(w, x), b)


def concat_rows(xs: Sequence[Node]) -> Node:
    if not xs:
        raise ShapeError("concat_rows of zero matrices")
    cols = xs[0].value.shape[1]
    for x in xs:
        if x.value.shape[1] != cols:
            raise ShapeError(
                f"concat_rows column mismatch: {x.value.shape} vs (*, {cols})")
    value = np.concatenate([x.value for x in xs], axis=0)
    offsets = np.cumsum([0] + [x.value.shape[0] for x in xs])
    vjps = tuple(
        (lambda lo, hi: lambda g: g[lo:hi, :])(offsets[i], offsets[i + 1])
        for i in range(len(xs)))
    return Node(value, tuple(xs), vjps, op="concat_rows")


def concat_cols(xs: Sequence[Node]) -> Node:
    if not xs:
        raise ShapeError("concat_cols of zero matrices")
    rows = xs[0].value.shape[0]
    for x in xs:
        if x.value.shape[0] != rows:
            raise ShapeError(
                f"concat_cols row mismatch: {x.value.shape} vs ({rows}, *)")
    value = np.concatenate([x.value for x in xs], axis=1)
    offsets = np.cumsum([0] + [x.value.shape[1] for x in xs])
    vjps = tuple(
        (lambda lo, hi: lambda g: g[:, lo:hi])(offsets[i], offsets[i + 1])
        for i in range(len(xs)))
    return Node(value, tuple(xs), vjps, op="concat_cols")


def softmax(x: Node, axis: int, mask: Array | None = None) -> Node:
    """Softmax along `axis`, optionally restricted to a 0/1 support mask.

    Max-subtraction keeps exp() in range; masked-out entries never enter
    the exponential, so no infinities appear anywhere on the path.
    """
    v = x.value
    if v.shape[axis] == 0:
        raise ShapeError(f"softmax over axis {axis} of length 0, shape {v.shape}")
    if mask is None:
        shifted = v - v.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
    else:
        if mask.shape != v.shape:
            raise ShapeError(f"softmax mask shape {mask.shape} vs value {v.shape}")
        if np.any((mask > 0).sum(axis=axis) == 0):
            raise ShapeError("softmax support mask has an empty row/column")
        masked = np.where(mask > 0, v, -np.inf)
        top = masked.max(axis=axis, keepdims=True)
        e = np.where(mask > 0, np.exp(np.where(mask > 0, v - top, 0.0)), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    s = e / denom

    def vjp(g: Array) -> Array:
        inner = (g * s).sum(axis=axis, keepdims=True)
        return s * (g - inner)

    return Node(s, (x,), (vjp,), op="softmax")


def sigmoid(x: Node) -> Node:
    s = 1.0 / (1.0 + np.exp(-x.value))
    return Node(s, (x,), (lambda g: g * s * (1.0 - s),), op="sigmoid")


def tanh(x: Node) -> Node:
    t = np.tanh(x.value)
    return Node(t, (x,), (lambda g: g * (1.0 - t * t),), op="tanh")


def leaky_relu(x: Node, slope: float = 0.2) -> Node:
    # slope at exactly 0 is the positive branch (1), for determinism
    factor = np.where(x.value >= 0.0, 1.0, slope)
    return Node(x.value * factor, (x,), (lambda g: g * factor,), op="leaky_relu")


def exp(x: Node) -> Node:
    e = np.exp(x.value)
    return Node(e, (x,), (lambda g: g * e,), op="exp")


def log(x: Node) -> Node:
    v = x.value
    return Node(np.log(v), (x,), (lambda g: g / v,), op="log")


def mean(x: Node, axis: int) -> Node:
    """Mean along `axis`, keeping the reduced axis with length 1."""
    n = x.value.shape[axis]
    if n == 0:
        raise ShapeError(f"mean over axis {axis} of length 0, shape {x.value.shape}")
    m = x.value.mean(axis=axis, keepdims=True)

    def vjp(g: Array) -> Array:
        return np.broadcast_to(g / n, x.value.shape).copy()

    return Node(m, (x,), (vjp,), op="mean")


def scale(x: Node, factor: float) -> Node:
    f = float(factor)
    return Node(x.value * f, (x,), (lambda g: g * f,), op="scale")


def take_rows(x: Node, indices: Sequence[int]) -> Node:
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("take_rows expects a flat index list")
    if idx.size and (idx.min() < 0 or idx.max() >= x.value.shape[0]):
        raise ShapeError(f"take_rows index out of range for shape {x.value.shape}")

    def vjp(g: Array) -> Array:
        out = np.zeros_like(x.value)
        np.add.at(out, idx, g)
        return out

    return Node(x.value[idx, :], (x,), (vjp,), op="take_rows")


def take_cols(x: Node, indices: Sequence[int]) -> Node:
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("take_cols expects a flat index list")
    if idx.size and (idx.min() < 0 or idx.max() >= x.value.shape[1]):
        raise ShapeError(f"take_cols index out of range for shape {x.value.shape}")

    def vjp(g: Array) -> Array:
        out = np.zeros_like(x.value)
        np.add.at(out.T, idx, g.T)
        return out

    return Node(x.value[:, idx], (x,), (vjp,), op="take_cols")


def sum_all(x: Node) -> Node:
    """Sum of all entries, as a 1x1 matrix."""
    s = np.array([[x.value.sum()]])

    def vjp(g: Array) -> Array:
        return np.full_like(x.value, g[0, 0])

    return Node(s, (x,), (vjp,), op="sum_all")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _reverse_topo(root: Node) -> list[Node]:
    """Reverse topological order of the grad-requiring subgraph under root."""
    order: list[Node] = []
    seen: set[int] = {id(root)}
    on_path: set[int] = {id(root)}
    stack: list[tuple[Node, iter]] = [(root, iter(root.parents))]
    while stack:
        node, it = stack[-1]
        pushed = False
        for p in it:
            if not p.requires_grad:
                continue
            pid = id(p)
            if pid in on_path:
                raise GraphCycleError("differentiation graph contains a cycle")
            if pid not in seen:
                seen.add(pid)
                on_path.add(pid)
                stack.append((p, iter(p.parents)))
                pushed = True
                break
        if not pushed:
            order.append(node)
            on_path.discard(id(node))
            stack.pop()
    return order  # parents before children; iterate reversed for backprop


def backward(loss: Node) -> None:
    """Populate grads of every grad-requiring leaf reachable from `loss`.

    `loss` must be 1x1. Each node is visited exactly once in reverse
    topological order; values used several times receive the sum of all
    downstream contributions.
    """
    if loss.value.shape != (1, 1):
        raise ShapeError(f"backward requires a 1x1 loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    order = _reverse_topo(loss)
    if loss.grad is None:
        loss.grad = np.ones((1, 1))
    else:
        loss.grad = loss.grad + np.ones((1, 1))
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for p, vjp in zip(node.parents, node.vjps):
            if not p.requires_grad:
                continue
            contrib = vjp(g)
            if p.grad is None:
                p.grad = np.ascontiguousarray(contrib)
            else:
                p.grad += contrib
        if node.parents:  # free interior grads; leaves keep accumulating
            node.grad = None


def zero_grads(nodes) -> None:
    for n in nodes:
        n.grad = None


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Outcome of one finite-difference comparison."""
    op_name: str
    max_relative_error: float
    entry_errors: dict[str, Array]
    passed: bool


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(build: Callable, seed: int, tol: float = 1e-4,
               step: float = 1e-5, max_entries: int | None = None,
               name: str = "expression") -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    `build(rng)` must return `(forward, leaves)` where `forward()` rebuilds
    the scalar expression from the current leaf values and `leaves` maps
    names to the perturbable grad-requiring leaf nodes. With `max_entries`
    set, a random subset of entries per leaf is probed instead of all of
    them (for large compositions).
    """
    rng = np.random.default_rng(seed)
    forward, leaves = build(rng)
    loss = forward()
    if loss.value.shape != (1, 1):
        raise ShapeError(f"grad_check requires a scalar expression, got {loss.value.shape}")
    zero_grads(leaves.values())
    backward(loss)
    analytic_grads = {
        nm: (lf.grad.copy() if lf.grad is not None else np.zeros_like(lf.value))
        for nm, lf in leaves.items()
    }
    pick = np.random.default_rng([seed, 0x5EED])
    entry_errors: dict[str, Array] = {}
    worst = 0.0
    for nm, lf in leaves.items():
        flat = np.arange(lf.value.size)
        if max_entries is not None and flat.size > max_entries:
            flat = np.sort(pick.choice(flat, size=max_entries, replace=False))
        errs = np.zeros(flat.size)
        for j, f in enumerate(flat):
            r, c = divmod(int(f), lf.value.shape[1])
            orig = lf.value[r, c]
            lf.value[r, c] = orig + step
            f_plus = forward().value[0, 0]
            lf.value[r, c] = orig - step
            f_minus = forward().value[0, 0]
            lf.value[r, c] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            errs[j] = relative_error(analytic_grads[nm][r, c], numeric)
        entry_errors[nm] = errs
        if errs.size:
            worst = max(worst, float(errs.max()))
    return GradCheckReport(name, worst, entry_errors, worst < tol)
