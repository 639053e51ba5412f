"""Dense float64 tensors with reverse-mode differentiation on an append-only tape.

The engine covers exactly what the training objectives need: elementwise
arithmetic with numpy broadcasting, matmul against 2-D weight matrices
(optionally with one stacked batch dimension on the left operand),
reductions, a handful of activations, and an analytic input-gradient for
affine / leaky-relu critic stacks so the gradient-penalty term can itself
be differentiated with respect to the critic weights.

Every op validates shapes up front and checks its result for NaN/Inf, so a
diverging computation fails loudly at the op that produced it.
"""

from __future__ import annotations

import itertools
from enum import Enum

import numpy as np

LEAKY_SLOPE = 0.2  # negative-side slope, also used as the subgradient at 0


class ShapeError(ValueError):
    """Operand shapes incompatible for an op."""

    def __init__(self, op, *shapes):
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}")
        self.op = op
        self.shapes = shapes


class NonFiniteError(ArithmeticError):
    """An op produced (or was given) NaN or Inf values."""

    def __init__(self, op):
        super().__init__(f"{op}: produced non-finite values")
        self.op = op


class ParamGroup(Enum):
    """Owner set of a trainable parameter; each update rule touches one group."""

    AUTOENCODER = "autoencoder"
    TRANSFER = "transfer"
    CRITIC = "critic"


_node_counter = itertools.count()


class Tensor:
    """A tape node: float64 array plus the record needed to differentiate it.

    Nodes are append-only (strictly increasing ``node_id``) and reference
    their inputs, so reverse insertion order is a valid reverse-topological
    order for backward traversal.
    """

    __slots__ = ("data", "op", "parents", "grad_fn", "node_id", "differentiable", "argmax", "nn_idx")

    def __init__(self, data, op="leaf", parents=(), grad_fn=None, differentiable=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(op)
        self.data = arr
        self.op = op
        self.parents = tuple(parents)
        self.grad_fn = grad_fn
        self.node_id = next(_node_counter)
        self.differentiable = differentiable or any(p.differentiable for p in self.parents)
        self.argmax = None
        self.nn_idx = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def detach(self):
        """A constant leaf sharing this node's values."""
        return Tensor(self.data, op="detach")

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, id={self.node_id})"


class Parameter(Tensor):
    """Trainable leaf with a stable name and exactly one owner group."""

    __slots__ = ("name", "group")

    def __init__(self, name, data, group):
        super().__init__(data, op="param", differentiable=True)
        self.name = name
        self.group = ParamGroup(group)


def constant(data):
    """Non-differentiable leaf (inputs, sampled codes, masks)."""
    return Tensor(data, op="const")


def variable(data):
    """Differentiable leaf that is not a named parameter (used in gradient tests)."""
    return Tensor(data, op="var", differentiable=True)


def as_tensor(x):
    return x if isinstance(x, Tensor) else constant(x)


def _node(op, data, parents, grad_fn):
    return Tensor(data, op=op, parents=parents, grad_fn=grad_fn)


def _unbroadcast(g, shape):
    """Sum gradient over axes that numpy broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None
    return _node("add", out, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None
    return _node("sub", out, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None
    ad, bd = a.data, b.data
    return _node("mul", out, (a, b),
                 lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def scalar_mul(a, c):
    a = as_tensor(a)
    c = float(c)
    return _node("scalar-mul", c * a.data, (a,), lambda g: (c * g,))


def neg(a):
    return scalar_mul(a, -1.0)


# ---------------------------------------------------------------------------
# linear algebra / structure


def matmul(a, b):
    """a @ b with b a 2-D weight matrix; a may carry one stacked leading axis."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim not in (2, 3) or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = a.data @ b.data
    ad, bd = a.data, b.data

    def grad(g):
        ga = g @ bd.T
        if ad.ndim == 2:
            gb = ad.T @ g
        else:
            gb = np.tensordot(ad, g, axes=([0, 1], [0, 1]))
        return ga, gb

    return _node("matmul", out, (a, b), grad)


def transpose(a):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.shape)
    return _node("transpose", a.data.T, (a,), lambda g: (g.T,))


def _affine_check(h, w, b):
    if w.data.ndim != 2 or h.data.ndim not in (2, 3) or h.shape[-1] != w.shape[0] \
            or b.data.shape != (w.shape[1],):
        raise ShapeError("affine", h.shape, w.shape, b.shape)


def _matmul_grads(hd, wd):
    def grad(gz):
        gh = gz @ wd.T
        if hd.ndim == 2:
            gw = hd.T @ gz
        else:
            gw = np.tensordot(hd, gz, axes=([0, 1], [0, 1]))
        gb = gz.sum(axis=tuple(range(gz.ndim - 1)))
        return gh, gw, gb

    return grad


def affine(h, w, b):
    """h @ w + b in one node (the workhorse of every dense stack)."""
    h, w, b = as_tensor(h), as_tensor(w), as_tensor(b)
    _affine_check(h, w, b)
    out = h.data @ w.data
    out += b.data
    return _node("affine", out, (h, w, b), _matmul_grads(h.data, w.data))


def dense_leaky(h, w, b, slope=LEAKY_SLOPE):
    """Fused leaky_relu(h @ w + b); the hidden-layer fast path.

    Values are bit-identical to affine followed by leaky_relu.  The leaky
    output preserves the pre-activation's sign, so backward keys its mask
    off the stored output and the pre-activation array is never kept.
    """
    from . import _kernels

    h, w, b = as_tensor(h), as_tensor(w), as_tensor(b)
    _affine_check(h, w, b)
    z = h.data @ w.data
    flat = z.reshape(-1, z.shape[-1])
    out = _kernels.bias_leaky(flat, b.data, slope).reshape(z.shape)
    inner = _matmul_grads(h.data, w.data)

    def grad(g):
        gz = _kernels.leaky_backward(np.ascontiguousarray(g), out, slope)
        return inner(gz)

    return _node("dense-leaky", out, (h, w, b), grad)


def concat_last(*tensors):
    ts = [as_tensor(t) for t in tensors]
    lead = ts[0].shape[:-1]
    if any(t.shape[:-1] != lead for t in ts):
        raise ShapeError("concat-last-axis", *[t.shape for t in ts])
    out = np.concatenate([t.data for t in ts], axis=-1)
    widths = [t.shape[-1] for t in ts]
    splits = np.cumsum(widths)[:-1]

    def grad(g):
        return tuple(np.split(g, splits, axis=-1))

    return _node("concat-last-axis", out, tuple(ts), grad)


def slice_last(a, start, stop):
    a = as_tensor(a)
    if not (0 <= start <= stop <= a.shape[-1]):
        raise ShapeError("slice-last-axis", a.shape, (start, stop))

    def grad(g):
        z = np.zeros_like(a.data)
        z[..., start:stop] = g
        return (z,)

    return _node("slice-last-axis", a.data[..., start:stop], (a,), grad)


def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)
    src = a.data.shape
    return _node("reshape", out, (a,), lambda g: (g.reshape(src),))


def broadcast_to(a, shape):
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError("broadcast", a.shape, shape) from None
    return _node("broadcast", out, (a,), lambda g: (_unbroadcast(g, a.shape),))


# ---------------------------------------------------------------------------
# activations and pointwise functions


def leaky_relu(a, slope=LEAKY_SLOPE):
    a = as_tensor(a)
    ad = a.data
    out = slope * ad
    np.maximum(ad, out, out=out)  # == leaky for 0 < slope < 1

    def grad(g):
        gs = g * slope
        np.copyto(gs, g, where=ad > 0)
        return (gs,)

    return _node("leaky-relu", out, (a,), grad)


def relu(a):
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    return _node("relu", a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a):
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    return _node("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _node("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def square(a):
    a = as_tensor(a)
    ad = a.data
    return _node("square", ad * ad, (a,), lambda g: (2.0 * ad * g,))


def sqrt(a):
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)  # negatives yield NaN; the node constructor rejects it
    return _node("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


# ---------------------------------------------------------------------------
# reductions


def sum_(a, axis=None):
    a = as_tensor(a)
    out = a.data.sum(axis=axis)
    src = a.data.shape

    def grad(g):
        if axis is None:
            return (np.full(src, g, dtype=np.float64),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _node("sum", out, (a,), grad)


def mean(a, axis=None):
    a = as_tensor(a)
    out = a.data.mean(axis=axis)
    src = a.data.shape
    count = a.data.size if axis is None else src[axis]

    def grad(g):
        if axis is None:
            return (np.full(src, g / count, dtype=np.float64),)
        return (np.broadcast_to(np.expand_dims(g / count, axis), src).copy(),)

    return _node("mean", out, (a,), grad)


def max_axis(a, axis):
    """Max over one axis; the winning indices are recorded on the node."""
    from . import _kernels

    a = as_tensor(a)
    if a.data.ndim == 3 and axis == 1 and a.data.flags.c_contiguous:
        out, idx = _kernels.maxpool_points(a.data)
    else:
        idx = np.argmax(a.data, axis=axis)
        out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    src = a.data.shape

    def grad(g):
        z = np.zeros(src, dtype=np.float64)
        np.put_along_axis(z, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (z,)

    node = _node("max-over-axis", out, (a,), grad)
    node.argmax = idx
    return node


def l2_norm_rows(a):
    """Euclidean norm of each row of a 2-D tensor -> 1-D tensor."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("l2-norm-rows", a.shape)
    n = np.sqrt((a.data * a.data).sum(axis=1))
    ad = a.data

    def grad(g):
        safe = np.where(n > 0, n, 1.0)
        return ((g / safe)[:, None] * ad,)

    return _node("l2-norm-rows", n, (a,), grad)


_OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scalar-mul": scalar_mul,
    "concat-last-axis": concat_last,
    "slice-last-axis": slice_last,
    "leaky-relu": leaky_relu,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "square": square,
    "sqrt": sqrt,
    "sum": sum_,
    "mean": mean,
    "max-over-axis": max_axis,
    "broadcast": broadcast_to,
    "l2-norm-rows": l2_norm_rows,
}


def forward_op(kind, *inputs, **kwargs):
    """Dispatch an op by kind name; appends one node to the tape."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# backward


class Gradients:
    """Mapping from leaf tensors to gradient arrays; unreached leaves read as zero."""

    def __init__(self, table):
        self._table = table

    def wrt(self, leaf):
        g = self._table.get(id(leaf))
        return g if g is not None else np.zeros_like(leaf.data)

    def reached(self, leaf):
        return id(leaf) in self._table


def backward(loss, wrt=None):
    """Reverse-mode gradients of a scalar loss.

    ``wrt`` limits propagation to subgraphs that can reach the given leaves
    (an optimization; the returned object reads zeros for anything else).
    With ``wrt=None`` every differentiable leaf gets a gradient.
    """
    if loss.data.size != 1:
        raise ShapeError("backward", loss.shape)

    want = None if wrt is None else {id(t) for t in wrt}

    # Mark nodes whose subtree contains a wanted leaf; iterative post-order.
    relevant = {}

    def mark(root):
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            nid = id(node)
            if nid in relevant:
                continue
            if not node.differentiable:
                relevant[nid] = False
                continue
            if not node.parents:
                relevant[nid] = want is None or nid in want
                continue
            if expanded:
                relevant[nid] = any(relevant[id(p)] for p in node.parents)
            else:
                stack.append((node, True))
                stack.extend((p, False) for p in node.parents)

    mark(loss)
    if not relevant.get(id(loss), False):
        return Gradients({})

    # slot: [node, grad, owned]; the grad array is copied lazily, only when a
    # second consumer actually accumulates into it.
    grads = {id(loss): [loss, np.ones_like(loss.data), True]}
    leaf_grads = {}
    # Reverse insertion order is reverse-topological for the tape DAG.
    order = sorted(
        {id(n): n for n in _reachable(loss, relevant)}.values(),
        key=lambda n: n.node_id,
        reverse=True,
    )
    for node in order:
        entry = grads.pop(id(node), None)
        if entry is None:
            continue
        g = entry[1]
        if not node.parents:
            leaf_grads[id(node)] = g
            continue
        parent_grads = node.grad_fn(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not relevant.get(id(p), False):
                continue
            slot = grads.get(id(p))
            if slot is None:
                grads[id(p)] = [p, np.asarray(pg, dtype=np.float64), False]
            else:
                if not slot[2]:
                    slot[1] = np.array(slot[1], dtype=np.float64, copy=True)
                    slot[2] = True
                slot[1] += pg
    return Gradients(leaf_grads)


def _reachable(root, relevant):
    seen = set()
    stack = [root]
    while stack:
        node = stack.pop()
        nid = id(node)
        if nid in seen or not relevant.get(nid, False):
            continue
        seen.add(nid)
        yield node
        stack.extend(node.parents)


# ---------------------------------------------------------------------------
# analytic input-gradient for affine / leaky-relu stacks


class UnsupportedLayerError(ValueError):
    """Critic contains a layer the input-gradient contract does not cover."""


def critic_input_gradient(stack, x):
    """Gradient of a scalar-headed affine/leaky-relu stack w.r.t. its input.

    ``stack`` is a sequence of ``(W, b, activation)`` with ``W``/``b`` tape
    tensors and activation one of ``"leaky_relu"`` / ``"identity"``; the last
    layer must end in a single unit.  The result is built as a forward tape
    computation over the weight matrices (activation masks enter as
    constants, their derivative being zero almost everywhere), so the
    returned (B, d) tensor can itself be differentiated w.r.t. the weights.
    """
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("critic-input-gradient", x.shape)
    if stack[-1][0].shape[-1] != 1:
        raise ShapeError("critic-input-gradient", stack[-1][0].shape)

    # Plain numpy forward just to collect the activation masks.
    masks = []
    h = x.data
    for W, b, act in stack:
        z = h @ W.data + (b.data if b is not None else 0.0)
        if act == "leaky_relu":
            masks.append(np.where(z > 0, 1.0, LEAKY_SLOPE))
            h = z * masks[-1]
        elif act == "identity":
            masks.append(None)
            h = z
        else:
            raise UnsupportedLayerError(f"activation {act!r} not supported in critic stacks")

    g = constant(np.ones((x.data.shape[0], 1)))
    for (W, _b, _act), mask in zip(reversed(stack), reversed(masks)):
        if mask is not None:
            g = mul(g, constant(mask))
        g = matmul(g, transpose(W))
    return g
