"""Dense-matrix expression graphs with reverse-mode differentiation.

A :class:`Tape` records nodes in construction order, which is always a valid
topological order because every operand must exist before the node using it.
Shapes are checked when a node is created; values are (re)computed by
:meth:`Tape.forward`, so one graph can be evaluated many times with new
bindings for its inputs.  All values are 2-D ``float64`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

Shape = Tuple[int, int]

NORM_EPS = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(FloatingPointError):
    """A node produced NaN or Inf during forward evaluation."""


class UsageError(RuntimeError):
    """The tape was used out of order (e.g. backward before forward)."""


def as_matrix(value, name: str = "value") -> np.ndarray:
    """Coerce external input to a finite 2-D float64 array."""
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"{name}: expected a matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains NaN or Inf")
    return arr


class Node:
    __slots__ = ("tape", "index", "op", "inputs", "attrs", "shape", "name",
                 "trainable", "needs_grad", "value", "grad", "ctx")

    def __init__(self, tape, op, inputs, attrs, shape, name=None,
                 trainable=False, needs_grad=False):
        self.tape = tape
        self.index = len(tape.nodes)
        self.op = op
        self.inputs = tuple(inputs)
        self.attrs = attrs
        self.shape = shape
        self.name = name
        self.trainable = trainable
        self.needs_grad = needs_grad
        self.value: Optional[np.ndarray] = None
        self.grad: Optional[np.ndarray] = None
        self.ctx: Optional[dict] = None

    def __repr__(self):
        label = self.name or f"%{self.index}"
        return f"Node({label}, op={self.op}, shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return hadamard(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self):
        return transpose(self)


# ---------------------------------------------------------------------------
# primitive table: op -> (shape_fn, forward_fn, backward_fn)
#   shape_fn(shapes, attrs) -> out shape (raise ShapeError on mismatch)
#   forward_fn(vals, ctx) -> ndarray; ctx starts as a copy of the node's
#       attrs and may be used to cache intermediates for the backward pass
#   backward_fn(g, vals, out, ctx) -> tuple of operand grads (None = skip)
# Values are never modified in place, so forward/backward may return views.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Primitive:
    shape: Callable
    forward: Callable
    backward: Callable


PRIMITIVES: Dict[str, Primitive] = {}


def _register(name, shape, forward, backward):
    PRIMITIVES[name] = Primitive(shape, forward, backward)


def _same(op):
    def check(shapes, attrs):
        a, b = shapes
        if a != b:
            raise ShapeError(f"{op}: shapes {a} and {b} differ")
        return a
    return check


def _unary(shapes, attrs):
    return shapes[0]


def _scalar(shapes, attrs):
    return (1, 1)


def _require_square(op, shape):
    if shape[0] != shape[1]:
        raise ShapeError(f"{op}: expected a square matrix, got {shape}")


def _trace_shape(shapes, attrs):
    _require_square("trace", shapes[0])
    return (1, 1)


def _diag_shape(shapes, attrs):
    _require_square("diag", shapes[0])
    return (shapes[0][0], 1)


def _row_normalize_shape(shapes, attrs):
    _require_square("row_normalize", shapes[0])
    if shapes[0][0] < 2:
        raise ShapeError("row_normalize: need N >= 2 for an off-diagonal row")
    return shapes[0]


def _matmul_shape(shapes, attrs):
    (m, k1), (k2, n) = shapes
    if k1 != k2:
        raise ShapeError(f"matmul: inner dimensions {shapes[0]} @ {shapes[1]}")
    return (m, n)


def _add_row_shape(shapes, attrs):
    (m, n), b = shapes
    if b != (1, n):
        raise ShapeError(f"add_row: bias shape {b} does not broadcast over {(m, n)}")
    return (m, n)


def _mul_scalar_shape(shapes, attrs):
    s, m = shapes
    if s != (1, 1):
        raise ShapeError(f"mul_scalar: first operand must be 1x1, got {s}")
    return m


def _element_shape(shapes, attrs):
    r, c = shapes[0]
    i, j = attrs["index"]
    if not (0 <= i < r and 0 <= j < c):
        raise ShapeError(f"element: index {(i, j)} outside {shapes[0]}")
    return (1, 1)


def _gram_shape(shapes, attrs):
    (m, k1), (n, k2) = shapes
    if k1 != k2:
        raise ShapeError(f"cosine_row_gram: row lengths {k1} and {k2} differ")
    return (m, n)


def _softmax_shape(shapes, attrs):
    if shapes[0][0] != 1:
        raise ShapeError(f"softmax: expected a row vector, got {shapes[0]}")
    return shapes[0]


def _unit_rows(a):
    norms = np.sqrt(np.einsum("ij,ij->i", a, a))
    live = norms >= NORM_EPS
    inv = np.zeros_like(norms)
    inv[live] = 1.0 / norms[live]
    return a * inv[:, None], inv


def _unit_rows_backward(g_hat, hat, inv):
    # d(a/|a|) = (g - (g.a_hat) a_hat) / |a|; dead rows get zero
    proj = np.einsum("ij,ij->i", g_hat, hat)
    return (g_hat - proj[:, None] * hat) * inv[:, None]


def _cosine_forward(vals, ctx):
    a_hat, a_inv = _unit_rows(vals[0])
    if vals[1] is vals[0]:
        b_hat, b_inv = a_hat, a_inv
    else:
        b_hat, b_inv = _unit_rows(vals[1])
    ctx.update(a_hat=a_hat, a_inv=a_inv, b_hat=b_hat, b_inv=b_inv)
    return a_hat @ b_hat.T


def _cosine_backward(g, vals, out, ctx):
    if "a_hat" not in ctx:
        _cosine_forward(vals, ctx)
    a_hat, b_hat = ctx["a_hat"], ctx["b_hat"]
    if vals[1] is vals[0]:
        # same operand on both sides: one product covers both adjoints
        return _unit_rows_backward((g + g.T) @ a_hat, a_hat, ctx["a_inv"]), None
    ga = _unit_rows_backward(g @ b_hat, a_hat, ctx["a_inv"])
    gb = _unit_rows_backward(g.T @ a_hat, b_hat, ctx["b_inv"])
    return ga, gb


def _gram_backward(g, vals, out, ctx):
    return ((g + g.T) @ vals[0],)


def _row_normalize_forward(vals, attrs):
    m = vals[0]
    n = m.shape[0]
    sums = m.sum(axis=1)
    dead = sums < NORM_EPS
    out = np.empty_like(m)
    live = ~dead
    out[live] = m[live] / sums[live, None]
    if dead.any():
        out[dead] = 1.0 / (n - 1)
        idx = np.flatnonzero(dead)
        out[idx, idx] = 0.0
    return out


def _row_normalize_backward(g, vals, out, attrs):
    m = vals[0]
    sums = m.sum(axis=1)
    live = sums >= NORM_EPS
    gm = np.zeros_like(m)
    inner = np.einsum("ij,ij->i", g, out)
    gm[live] = (g[live] - inner[live, None]) / sums[live, None]
    return (gm,)


def _softmax_forward(vals, attrs):
    x = vals[0]
    e = np.exp(x - x.max())
    return e / e.sum()


def _element_backward(g, vals, out, attrs):
    ga = np.zeros_like(vals[0])
    ga[attrs["index"]] = g[0, 0]
    return (ga,)


def _diag_backward(g, vals, out, attrs):
    ga = np.zeros_like(vals[0])
    np.fill_diagonal(ga, g[:, 0])
    return (ga,)


_register("matmul", _matmul_shape,
          lambda v, a: v[0] @ v[1],
          lambda g, v, o, a: (g @ v[1].T, v[0].T @ g))
_register("add", _same("add"),
          lambda v, a: v[0] + v[1],
          lambda g, v, o, a: (g, g))
_register("sub", _same("sub"),
          lambda v, a: v[0] - v[1],
          lambda g, v, o, a: (g, -g))
_register("add_row", _add_row_shape,
          lambda v, a: v[0] + v[1],
          lambda g, v, o, a: (g, g.sum(axis=0, keepdims=True)))
_register("transpose", lambda s, a: (s[0][1], s[0][0]),
          lambda v, a: v[0].T,
          lambda g, v, o, a: (g.T,))
_register("tanh", _unary,
          lambda v, a: np.tanh(v[0]),
          lambda g, v, o, a: (g * (1.0 - o * o),))
_register("relu", _unary,
          lambda v, a: np.maximum(v[0], 0.0),
          lambda g, v, o, a: (g * (v[0] > 0.0),))
_register("exp", _unary,
          lambda v, a: np.exp(v[0]),
          lambda g, v, o, a: (g * o,))
_register("log", _unary,
          lambda v, a: np.log(v[0]),
          lambda g, v, o, a: (g / v[0],))
_register("scale", _unary,
          lambda v, a: a["k"] * v[0],
          lambda g, v, o, a: (a["k"] * g,))
_register("hadamard", _same("hadamard"),
          lambda v, a: v[0] * v[1],
          lambda g, v, o, a: (g * v[1], g * v[0]))
_register("mul_scalar", _mul_scalar_shape,
          lambda v, a: v[0][0, 0] * v[1],
          lambda g, v, o, a: (np.array([[np.sum(g * v[1])]]), v[0][0, 0] * g))
_register("rowsum", lambda s, a: (s[0][0], 1),
          lambda v, a: v[0].sum(axis=1, keepdims=True),
          lambda g, v, o, a: (np.broadcast_to(g, v[0].shape),))
_register("sum", _scalar,
          lambda v, a: np.array([[v[0].sum()]]),
          lambda g, v, o, a: (np.broadcast_to(g, v[0].shape),))
_register("frob_sq", _scalar,
          lambda v, a: np.array([[np.sum(v[0] * v[0])]]),
          lambda g, v, o, a: (2.0 * g[0, 0] * v[0],))
_register("trace", _trace_shape,
          lambda v, a: np.array([[np.trace(v[0])]]),
          lambda g, v, o, a: (g[0, 0] * np.eye(v[0].shape[0]),))
_register("diag", _diag_shape,
          lambda v, a: np.diagonal(v[0]).reshape(-1, 1).copy(),
          _diag_backward)
_register("element", _element_shape,
          lambda v, a: np.array([[v[0][a["index"]]]]),
          _element_backward)
_register("cosine_row_gram", _gram_shape, _cosine_forward, _cosine_backward)
_register("gram", lambda s, a: (s[0][0], s[0][0]),
          lambda v, a: v[0] @ v[0].T,
          _gram_backward)
_register("softmax", _softmax_shape,
          _softmax_forward,
          lambda g, v, o, a: (o * (g - np.sum(g * o)),))
_register("row_normalize", _row_normalize_shape,
          _row_normalize_forward, _row_normalize_backward)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

class Tape:
    """Append-only expression graph with a scalar root."""

    def __init__(self):
        self.nodes: List[Node] = []
        self.root: Optional[Node] = None
        self._forwarded = False

    def input(self, name: str, value=None, shape: Optional[Shape] = None,
              trainable: bool = True) -> Node:
        if value is not None:
            value = as_matrix(value, name)
            shape = value.shape
        if shape is None:
            raise ShapeError(f"input {name!r}: need a value or a shape")
        if self.find(name) is not None:
            raise ValueError(f"duplicate input name {name!r}")
        node = Node(self, "input", (), {}, tuple(shape), name=name,
                    trainable=trainable, needs_grad=trainable)
        node.value = value
        self.nodes.append(node)
        return node

    def constant(self, value, name: Optional[str] = None) -> Node:
        value = as_matrix(value, name or "constant")
        node = Node(self, "const", (), {}, value.shape, name=name)
        node.value = value
        self.nodes.append(node)
        return node

    def apply(self, op: str, *operands: Node, name: Optional[str] = None,
              **attrs) -> Node:
        prim = PRIMITIVES[op]
        for x in operands:
            if x.tape is not self:
                raise UsageError(f"{op}: operand {x!r} belongs to another tape")
        shape = prim.shape([x.shape for x in operands], attrs)
        node = Node(self, op, operands, attrs, shape, name=name,
                    needs_grad=any(x.needs_grad for x in operands))
        self.nodes.append(node)
        self._forwarded = False
        return node

    def find(self, name: str) -> Optional[Node]:
        for node in self.nodes:
            if node.name == name and node.op == "input":
                return node
        return None

    @property
    def inputs(self) -> List[Node]:
        return [n for n in self.nodes if n.op == "input"]

    @property
    def trainable(self) -> List[Node]:
        return [n for n in self.nodes if n.op == "input" and n.trainable]

    def set_root(self, node: Node) -> Node:
        if node.tape is not self:
            raise UsageError("root belongs to another tape")
        if node.shape != (1, 1):
            raise ShapeError(f"root must be 1x1, got {node.shape}")
        self.root = node
        return node

    def bind(self, name: str, value) -> None:
        node = self.find(name)
        if node is None:
            raise KeyError(name)
        value = as_matrix(value, name)
        if value.shape != node.shape:
            raise ShapeError(f"bind {name!r}: shape {value.shape} != {node.shape}")
        node.value = value
        self._forwarded = False

    def forward(self) -> float:
        """Evaluate every node in order; return the root value."""
        for node in self.nodes:
            if node.op in ("input", "const"):
                if node.value is None:
                    raise UsageError(f"input {node.name!r} is unbound")
                continue
            prim = PRIMITIVES[node.op]
            ctx = dict(node.attrs)
            with np.errstate(all="ignore"):
                out = prim.forward([x.value for x in node.inputs], ctx)
            node.ctx = ctx
            if not np.all(np.isfinite(out)):
                raise NonFiniteError(f"non-finite value at {node!r}")
            node.value = out
        self._forwarded = True
        return float(self.root.value[0, 0]) if self.root is not None else float("nan")

    def backward(self) -> Dict[str, np.ndarray]:
        """Propagate d(root)/d(node) to every trainable input."""
        if self.root is None:
            raise UsageError("no root set")
        if not self._forwarded:
            raise UsageError("backward called before forward")
        for node in self.nodes:
            node.grad = None
        self.root.grad = np.ones((1, 1))
        for node in reversed(self.nodes):
            g = node.grad
            if g is None or not node.inputs:
                continue
            prim = PRIMITIVES[node.op]
            grads = prim.backward(g, [x.value for x in node.inputs],
                                  node.value, node.ctx)
            for x, gx in zip(node.inputs, grads):
                if not x.needs_grad or gx is None:
                    continue
                x.grad = gx if x.grad is None else x.grad + gx
        out = {}
        for node in self.trainable:
            out[node.name] = (node.grad if node.grad is not None
                              else np.zeros(node.shape))
        return out

    def values(self, nodes: Iterable[Node]) -> List[np.ndarray]:
        return [n.value for n in nodes]


# ---------------------------------------------------------------------------
# functional constructors
# ---------------------------------------------------------------------------

def _tape(*nodes: Node) -> Tape:
    return nodes[0].tape


def matmul(a, b):
    return _tape(a).apply("matmul", a, b)


def add(a, b):
    return _tape(a).apply("add", a, b)


def sub(a, b):
    return _tape(a).apply("sub", a, b)


def add_row(a, bias):
    return _tape(a).apply("add_row", a, bias)


def transpose(a):
    return _tape(a).apply("transpose", a)


def tanh(a):
    return _tape(a).apply("tanh", a)


def relu(a):
    return _tape(a).apply("relu", a)


def exp(a):
    return _tape(a).apply("exp", a)


def log(a):
    return _tape(a).apply("log", a)


def scale(a, k: float):
    return _tape(a).apply("scale", a, k=float(k))


def hadamard(a, b):
    return _tape(a).apply("hadamard", a, b)


def mul_scalar(s, m):
    return _tape(s).apply("mul_scalar", s, m)


def rowsum(a):
    return _tape(a).apply("rowsum", a)


def total(a):
    return _tape(a).apply("sum", a)


def frob_sq(a):
    return _tape(a).apply("frob_sq", a)


def trace(a):
    return _tape(a).apply("trace", a)


def diag(a):
    return _tape(a).apply("diag", a)


def element(a, i: int, j: int):
    return _tape(a).apply("element", a, index=(int(i), int(j)))


def cosine_row_gram(a, b):
    return _tape(a).apply("cosine_row_gram", a, b)


def gram(a):
    """Row Gram matrix a @ a.T."""
    return _tape(a).apply("gram", a)


def softmax(a):
    return _tape(a).apply("softmax", a)


def row_normalize(a):
    return _tape(a).apply("row_normalize", a)


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: List[GradCheckEntry] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def __str__(self):
        lines = [f"{'PASS' if e.passed else 'FAIL'} {e.name}: max rel err {e.max_rel_error:.3e}"
                 for e in self.entries]
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor).

    The floor is 1e-3 of the largest gradient magnitude of the input (and at
    least 1e-8), so entries whose true gradient is ~0 are judged against the
    input's gradient scale instead of against finite-difference noise.
    """
    scale_ = max(np.max(np.abs(analytic), initial=0.0),
                 np.max(np.abs(numeric), initial=0.0))
    floor = max(1e-3 * scale_, 1e-8)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(tape: Tape, name: str, h: float = 1e-5) -> np.ndarray:
    node = tape.find(name)
    base = node.value.copy()
    grad = np.zeros_like(base)
    work = base.copy()
    node.value = work
    try:
        for idx in np.ndindex(*base.shape):
            work[idx] = base[idx] + h
            up = tape.forward()
            work[idx] = base[idx] - h
            down = tape.forward()
            work[idx] = base[idx]
            grad[idx] = (up - down) / (2.0 * h)
    finally:
        node.value = base
        tape.forward()
    return grad


def grad_check(tape: Tape, h: float = 1e-5, tol: float = 1e-4,
               names: Optional[Sequence[str]] = None,
               analytic: Optional[Dict[str, np.ndarray]] = None) -> GradCheckReport:
    """Compare backward() against central differences for each trainable input.

    ``analytic`` may be supplied to check an externally computed gradient map
    (used to confirm a corrupted adjoint is caught).
    """
    if not 0.0 < h <= 1e-2:
        raise ValueError(f"step h={h} outside (0, 1e-2]")
    tape.forward()
    if analytic is None:
        analytic = tape.backward()
    if names is None:
        names = [n.name for n in tape.trainable]
    report = GradCheckReport(tol=tol)
    for name in names:
        numeric = numeric_gradient(tape, name, h)
        err = float(np.max(relative_error(analytic[name], numeric), initial=0.0))
        report.entries.append(GradCheckEntry(name, err, err <= tol))
    return report
