"""A small reverse-mode autodiff engine over dense 2-D float64 matrices.

Every value in the graph is a 2-D ``numpy`` array. Graphs are built by
:func:`apply` (or the operator overloads on :class:`Node`) and are meant to
live for a single training step.

Supported op kinds::

    matmul add subtract scalar-multiply hadamard divide concat-rows
    slice-rows transpose leaky-relu sum mean frobenius-norm l1-norm
    column-norms reshape rodrigues

``add``, ``subtract``, ``hadamard`` and ``divide`` broadcast a ``1 x n`` row,
an ``m x 1`` column or a ``1 x 1`` scalar against a full operand.
``rodrigues`` maps a ``3 x n`` block of axis-angle columns to a ``9 x n``
block of row-major rotation matrices.
"""

import numpy as np

from . import so3
from .errors import DimensionError, NumericError, UsageError

LEAKY_SLOPE = 0.01


class Node:
    """A value in the computation graph."""

    __slots__ = ("value", "op", "parents", "requires_grad", "attrs", "name", "_grad_fn", "_cache")

    def __init__(self, value, op="leaf", parents=(), requires_grad=False, attrs=None, name=None):
        self.value = value
        self.op = op
        self.parents = tuple(parents)
        self.requires_grad = requires_grad
        self.attrs = attrs or {}
        self.name = name
        self._grad_fn = None
        self._cache = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.value.shape})"

    def __add__(self, other):
        return apply("add", [self, _lift(other)])

    def __radd__(self, other):
        return apply("add", [_lift(other), self])

    def __sub__(self, other):
        return apply("subtract", [self, _lift(other)])

    def __rsub__(self, other):
        return apply("subtract", [_lift(other), self])

    def __mul__(self, other):
        if np.isscalar(other):
            return apply("scalar-multiply", [self], scalar=float(other))
        return apply("hadamard", [self, _lift(other)])

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return apply("scalar-multiply", [self], scalar=1.0 / float(other))
        return apply("divide", [self, _lift(other)])

    def __neg__(self):
        return apply("scalar-multiply", [self], scalar=-1.0)

    def __matmul__(self, other):
        return apply("matmul", [self, _lift(other)])

    def __rmatmul__(self, other):
        return apply("matmul", [_lift(other), self])

    def __getitem__(self, rows):
        if not isinstance(rows, slice) or rows.step not in (None, 1):
            raise UsageError("Node indexing supports contiguous row slices only")
        start, stop, _ = rows.indices(self.value.shape[0])
        return apply("slice-rows", [self], start=start, stop=stop)

    @property
    def T(self):
        return apply("transpose", [self])


def as_matrix(x):
    arr = np.array(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise DimensionError(f"matrices are 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError("matrices must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise NumericError("matrix entries must be finite")
    return arr


def const(x, name=None):
    """Wrap a value as a leaf that never receives gradient."""
    if isinstance(x, Node):
        return x
    return Node(as_matrix(x), name=name)


def param(x, name=None):
    """Wrap a value as a leaf that collects gradient."""
    return Node(as_matrix(x), requires_grad=True, name=name)


def detach(x):
    """Same value, no parents, no gradient."""
    return Node(x.value, op="detach", name=x.name)


def _lift(x):
    return x if isinstance(x, Node) else const(x)


# ---------------------------------------------------------------------------
# forward / backward kernels


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    (ra, ca), (rb, cb) = a.shape, b.shape
    rows_ok = ra == rb or ra == 1 or rb == 1
    cols_ok = ca == cb or ca == 1 or cb == 1
    if not (rows_ok and cols_ok):
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _check_binary(op, vals, attrs):
    _broadcast_shape(op, *vals)


def _check_matmul(op, vals, attrs):
    a, b = vals
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")


def _check_concat(op, vals, attrs):
    cols = {v.shape[1] for v in vals}
    if len(cols) != 1:
        raise DimensionError(f"concat-rows: column counts differ, {[v.shape for v in vals]}")


def _check_slice(op, vals, attrs):
    rows = vals[0].shape[0]
    start, stop = attrs["start"], attrs["stop"]
    if not 0 <= start < stop <= rows:
        raise DimensionError(f"slice-rows: [{start}:{stop}] out of range for {vals[0].shape}")


def _check_reshape(op, vals, attrs):
    if attrs["rows"] * attrs["cols"] != vals[0].size:
        raise DimensionError(
            f"reshape: cannot view {vals[0].shape} as ({attrs['rows']}, {attrs['cols']})"
        )


def _check_rodrigues(op, vals, attrs):
    if vals[0].shape[0] != 3:
        raise DimensionError(f"rodrigues: expected 3 rows of axis-angle, got {vals[0].shape}")


def _fwd_rodrigues(vals, attrs, cache):
    R, dR = so3.exp_map(vals[0].T, jacobian=True)
    cache["dR"] = dR
    return R.reshape(-1, 9).T


def _bwd_rodrigues(g, vals, out, attrs, cache):
    dR = cache["dR"].reshape(-1, 9, 3)
    return [np.einsum("rn,nrk->kn", g, dR)]


def _fwd_norm(vals, attrs, cache):
    return np.array([[np.sqrt(np.sum(vals[0] ** 2))]])


def _bwd_norm(g, vals, out, attrs, cache):
    n = out[0, 0]
    if n == 0.0:
        return [np.zeros_like(vals[0])]
    return [g[0, 0] * vals[0] / n]


def _fwd_colnorms(vals, attrs, cache):
    return np.sqrt(np.sum(vals[0] ** 2, axis=0, keepdims=True))


def _bwd_colnorms(g, vals, out, attrs, cache):
    safe = np.where(out == 0.0, 1.0, out)
    return [np.where(out == 0.0, 0.0, vals[0] * (g / safe))]


def _bwd_divide(g, vals, out, attrs, cache):
    a, b = vals
    return [_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)]


def _bwd_concat(g, vals, out, attrs, cache):
    grads, row = [], 0
    for v in vals:
        grads.append(g[row : row + v.shape[0]])
        row += v.shape[0]
    return grads


def _bwd_slice(g, vals, out, attrs, cache):
    full = np.zeros_like(vals[0])
    full[attrs["start"] : attrs["stop"]] = g
    return [full]


def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


_OPS = {
    # name: (arity or None for variadic, check, forward, backward)
    "matmul": (
        2,
        _check_matmul,
        lambda v, at, c: v[0] @ v[1],
        lambda g, v, o, at, c: [g @ v[1].T, v[0].T @ g],
    ),
    "add": (
        2,
        _check_binary,
        lambda v, at, c: v[0] + v[1],
        lambda g, v, o, at, c: [_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)],
    ),
    "subtract": (
        2,
        _check_binary,
        lambda v, at, c: v[0] - v[1],
        lambda g, v, o, at, c: [_unbroadcast(g, v[0].shape), _unbroadcast(-g, v[1].shape)],
    ),
    "scalar-multiply": (
        1,
        None,
        lambda v, at, c: at["scalar"] * v[0],
        lambda g, v, o, at, c: [at["scalar"] * g],
    ),
    "hadamard": (
        2,
        _check_binary,
        lambda v, at, c: v[0] * v[1],
        lambda g, v, o, at, c: [
            _unbroadcast(g * v[1], v[0].shape),
            _unbroadcast(g * v[0], v[1].shape),
        ],
    ),
    "divide": (2, _check_binary, lambda v, at, c: v[0] / v[1], _bwd_divide),
    "concat-rows": (None, _check_concat, lambda v, at, c: np.vstack(v), _bwd_concat),
    "slice-rows": (
        1,
        _check_slice,
        lambda v, at, c: v[0][at["start"] : at["stop"]].copy(),
        _bwd_slice,
    ),
    "transpose": (1, None, lambda v, at, c: v[0].T.copy(), lambda g, v, o, at, c: [g.T]),
    "leaky-relu": (
        1,
        None,
        lambda v, at, c: _leaky(v[0], at.get("slope", LEAKY_SLOPE)),
        lambda g, v, o, at, c: [np.where(v[0] > 0, g, at.get("slope", LEAKY_SLOPE) * g)],
    ),
    "sum": (
        1,
        None,
        lambda v, at, c: np.array([[v[0].sum()]]),
        lambda g, v, o, at, c: [np.full_like(v[0], g[0, 0])],
    ),
    "mean": (
        1,
        None,
        lambda v, at, c: np.array([[v[0].mean()]]),
        lambda g, v, o, at, c: [np.full_like(v[0], g[0, 0] / v[0].size)],
    ),
    "frobenius-norm": (1, None, _fwd_norm, _bwd_norm),
    "l1-norm": (
        1,
        None,
        lambda v, at, c: np.array([[np.abs(v[0]).sum()]]),
        lambda g, v, o, at, c: [g[0, 0] * np.sign(v[0])],
    ),
    "column-norms": (1, None, _fwd_colnorms, _bwd_colnorms),
    "reshape": (
        1,
        _check_reshape,
        lambda v, at, c: v[0].reshape(at["rows"], at["cols"]).copy(),
        lambda g, v, o, at, c: [g.reshape(v[0].shape)],
    ),
    "rodrigues": (1, _check_rodrigues, _fwd_rodrigues, _bwd_rodrigues),
}

OP_KINDS = tuple(_OPS)


def apply(op, operands, **attrs):
    """Evaluate ``op`` on ``operands`` and record the edge in the graph."""
    if op not in _OPS:
        raise UsageError(f"unknown op kind {op!r}")
    if not operands:
        raise UsageError(f"{op}: empty operand list")
    arity, check, forward, backward_fn = _OPS[op]
    operands = [_lift(x) for x in operands]
    if arity is not None and len(operands) != arity:
        raise UsageError(f"{op}: expected {arity} operands, got {len(operands)}")
    vals = [x.value for x in operands]
    if check is not None:
        check(op, vals, attrs)
    cache = {}
    out = forward(vals, attrs, cache)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{op}: non-finite forward value")
    requires_grad = any(x.requires_grad for x in operands)
    node = Node(out, op, operands if requires_grad else (), requires_grad, attrs)
    if requires_grad:
        node._grad_fn = backward_fn
        node._cache = cache
    return node


# convenience wrappers, named after the op kinds


def matmul(a, b):
    return apply("matmul", [a, b])


def concat_rows(nodes):
    return apply("concat-rows", list(nodes))


def slice_rows(x, start, stop):
    return apply("slice-rows", [x], start=start, stop=stop)


def transpose(x):
    return apply("transpose", [x])


def leaky_relu(x, slope=LEAKY_SLOPE):
    return apply("leaky-relu", [x], slope=slope)


def total(x):
    return apply("sum", [x])


def mean(x):
    return apply("mean", [x])


def frobenius_norm(x):
    return apply("frobenius-norm", [x])


def l1_norm(x):
    return apply("l1-norm", [x])


def column_norms(x):
    return apply("column-norms", [x])


def reshape(x, rows, cols):
    return apply("reshape", [x], rows=rows, cols=cols)


def rodrigues(omega):
    return apply("rodrigues", [omega])


# ---------------------------------------------------------------------------
# reverse pass


def _topological(loss):
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Gradients of a scalar ``loss`` with respect to every gradient leaf.

    Returns a dict mapping each leaf :class:`Node` with ``requires_grad`` to
    an array of the leaf's shape. Contributions from repeated uses add up.
    """
    if loss.value.shape != (1, 1):
        raise UsageError(f"backward needs a 1x1 loss, got {loss.value.shape}")
    grads = {id(loss): np.ones((1, 1))}
    result = {}
    if not loss.requires_grad:
        return result
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient at {node!r}")
        if not node.parents:
            result[node] = g
            continue
        vals = [p.value for p in node.parents]
        parent_grads = node._grad_fn(g, vals, node.value, node.attrs, node._cache)
        for p, pg in zip(node.parents, parent_grads):
            if not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return result


def grad_check(function, point, step=1e-5):
    """Largest relative gap between analytic and central-difference gradients.

    ``function`` takes a Node and returns a 1x1 Node. The error per
    coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if step <= 0:
        raise UsageError("step must be positive")
    point = as_matrix(point)
    x = param(point)
    grads = backward(function(x))
    analytic = grads.get(x, np.zeros_like(point))

    def evaluate(p):
        v = function(const(p)).value[0, 0]
        if not np.isfinite(v):
            raise NumericError("function evaluated to a non-finite value")
        return v

    numeric = np.empty_like(point)
    for idx in np.ndindex(point.shape):
        hi, lo = point.copy(), point.copy()
        hi[idx] += step
        lo[idx] -= step
        numeric[idx] = (evaluate(hi) - evaluate(lo)) / (2 * step)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
