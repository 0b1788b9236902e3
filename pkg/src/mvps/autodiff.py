"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

A :class:`Tape` records every operation as a node holding the operation kind,
the indices of its parents and a closure that maps the output cotangent to
the parent cotangents.  Nodes are appended in evaluation order, so the tape is
topologically sorted by construction and :meth:`Tape.backward` is a single
reverse sweep.

Second derivatives (needed by the Eikonal and normal losses) are obtained by
writing the spatial gradient as an explicit forward computation built from the
same primitives; reverse mode over that extended graph gives exact gradients
without a general higher-order engine.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

Array = np.ndarray


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class Param:
    """A trainable array with an accumulated gradient of the same shape."""

    name: str
    value: Array
    grad: Array = field(init=False)

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


@dataclass
class Node:
    op: str
    parents: tuple
    vjp: Callable | None


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _sigmoid(x: Array) -> Array:
    return expit(x)


class Var:
    """Handle to a value recorded on a tape."""

    __slots__ = ("tape", "index", "value")
    __array_priority__ = 100

    def __init__(self, tape: "Tape", index: int, value: Array):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


class Tape:
    """Append-only record of operations.

    With ``grad_enabled=False`` operations only compute values; this is used
    for inference passes (mesh extraction, coarse ray sampling).
    """

    def __init__(self, grad_enabled: bool = True, check_finite: bool = True):
        self.grad_enabled = grad_enabled
        self.check_finite = check_finite
        self.nodes: list[Node] = []
        self.requires: list[bool] = []
        self._param_nodes: dict[int, tuple[Param, Var]] = {}

    def __len__(self):
        return len(self.nodes)

    def _record(self, op: str, value: Array, parents: Sequence[Var], vjp, leaf_requires: bool = False) -> Var:
        idx = len(self.nodes)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite value produced by '{op}' at node {idx}")
        req = self.grad_enabled and (leaf_requires or any(self.requires[p.index] for p in parents))
        # subgraphs that depend on no differentiable leaf are stored as constants
        self.nodes.append(Node(op, tuple(p.index for p in parents), vjp) if req else Node(op, (), None))
        self.requires.append(req)
        return Var(self, idx, value)

    def const(self, value) -> Var:
        value = np.asarray(value, dtype=np.float64)
        return self._record("const", value, (), None)

    def variable(self, value) -> Var:
        """A differentiable leaf not bound to a Param (for gradient probes)."""
        value = np.asarray(value, dtype=np.float64)
        return self._record("variable", value, (), None, leaf_requires=True)

    def needs_grad(self, v: "Var") -> bool:
        return self.requires[v.index]

    def param(self, p: Param) -> Var:
        """Leaf node bound to ``p``; repeated calls return the same node."""
        hit = self._param_nodes.get(id(p))
        if hit is not None:
            return hit[1]
        v = self._record("param", p.value, (), None, leaf_requires=True)
        self._param_nodes[id(p)] = (p, v)
        return v

    def backward(self, root: Var, params: Iterable[Param] | None = None) -> None:
        """Reverse sweep from the scalar ``root``.

        Gradients are written (not accumulated) into ``Param.grad`` for every
        parameter used on this tape.  Parameters listed in ``params`` but not
        reached get a zero gradient.
        """
        if not self.grad_enabled:
            raise RuntimeError("tape was recorded with grad_enabled=False")
        if root.tape is not self:
            raise ValueError("root belongs to a different tape")
        if root.value.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
        if params is not None:
            for p in params:
                p.zero_grad()
        grads = self._sweep(root)
        for p, v in self._param_nodes.values():
            g = grads[v.index] if v.index < len(grads) else None
            p.grad = np.zeros_like(p.value) if g is None else np.asarray(g, dtype=np.float64).reshape(p.value.shape)

    def _sweep(self, root: Var, keep: bool = False) -> list:
        # interior cotangents are dropped once propagated unless keep=True
        grads: list = [None] * (root.index + 1)
        grads[root.index] = np.ones_like(root.value)
        for i in range(root.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self.nodes[i]
            if node.vjp is None:
                continue
            for pi, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not self.requires[pi]:
                    continue
                grads[pi] = pg if grads[pi] is None else grads[pi] + pg
            if not keep:
                grads[i] = None
        return grads

    def grad_of(self, root: Var, wrt: Sequence[Var]) -> list[Array]:
        """Gradients of ``root`` with respect to arbitrary recorded nodes."""
        if root.value.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
        grads = self._sweep(root, keep=True)
        out = []
        for w in wrt:
            g = grads[w.index] if w.index < len(grads) else None
            out.append(np.zeros_like(w.value) if g is None else g)
        return out


def _lift(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        return x
    return tape.const(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _binary_shape_check(op: str, a: Array, b: Array) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise binary ops
# ---------------------------------------------------------------------------


def add(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    _binary_shape_check("add", a.value, b.value)
    sa, sb = a.shape, b.shape
    return t._record("add", a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    _binary_shape_check("sub", a.value, b.value)
    sa, sb = a.shape, b.shape
    return t._record("sub", a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    _binary_shape_check("mul", a.value, b.value)
    av, bv = a.value, b.value
    ra, rb = t.needs_grad(a), t.needs_grad(b)

    def vjp(g):
        return (
            _unbroadcast(g * bv, av.shape) if ra else None,
            _unbroadcast(g * av, bv.shape) if rb else None,
        )

    return t._record("mul", av * bv, (a, b), vjp)


def div(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    _binary_shape_check("div", a.value, b.value)
    av, bv = a.value, b.value
    out = av / bv

    def vjp(g):
        return _unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)

    return t._record("div", out, (a, b), vjp)


def neg(a: Var) -> Var:
    return a.tape._record("neg", -a.value, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------


def matmul(a, b) -> Var:
    """``a @ b`` with ``b`` 2-D and ``a`` of any rank >= 1 (leading dims batch)."""
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    av, bv = a.value, b.value
    if bv.ndim != 2 or av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")

    ra, rb = t.needs_grad(a), t.needs_grad(b)

    def vjp(g):
        ga = g @ bv.T if ra else None
        gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1]) if rb else None
        return ga, gb

    return t._record("matmul", av @ bv, (a, b), vjp)


def reshape(a: Var, shape) -> Var:
    s = a.shape
    return a.tape._record("reshape", a.value.reshape(shape), (a,), lambda g: (g.reshape(s),))


def transpose(a: Var, axes=None) -> Var:
    inv = None if axes is None else tuple(np.argsort(axes))
    return a.tape._record("transpose", np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a: Var, key) -> Var:
    s = a.shape

    def vjp(g):
        out = np.zeros(s)
        np.add.at(out, key, g)
        return (out,)

    return a.tape._record("getitem", a.value[key], (a,), vjp)


def concat(xs: Sequence, axis: int = -1) -> Var:
    t = _tape_of(*xs)
    xs = [_lift(t, x) for x in xs]
    ax = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(
            x.shape[i] != xs[0].shape[i] for i in range(x.ndim) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {xs[0].shape} and {x.shape}")
    splits = np.cumsum([x.shape[ax] for x in xs])[:-1]
    return t._record(
        "concat", np.concatenate([x.value for x in xs], axis=ax), tuple(xs), lambda g: tuple(np.split(g, splits, axis=ax))
    )


def where(cond: Array, a, b) -> Var:
    """Select with a constant boolean mask; the mask carries no gradient."""
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    cond = np.asarray(cond, dtype=bool)
    sa, sb = a.shape, b.shape
    return t._record(
        "where",
        np.where(cond, a.value, b.value),
        (a, b),
        lambda g: (_unbroadcast(np.where(cond, g, 0.0), sa), _unbroadcast(np.where(cond, 0.0, g), sb)),
    )


# ---------------------------------------------------------------------------
# elementwise unary ops
# ---------------------------------------------------------------------------


def relu(a: Var) -> Var:
    mask = a.value > 0
    return a.tape._record("relu", np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Var) -> Var:
    s = _sigmoid(a.value)
    return a.tape._record("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def softplus(a: Var, beta: float = 1.0) -> Var:
    """``log(1 + exp(beta a)) / beta``, computed stably."""
    z = beta * a.value
    out = (np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))) / beta
    return a.tape._record("softplus", out, (a,), lambda g: (g * _sigmoid(z),))


def softplus_and_slope(a: Var, beta: float = 1.0) -> tuple[Var, Var]:
    """Softplus and its derivative ``sigmoid(beta a)`` sharing one exponential."""
    z = beta * a.value
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0, e) / (1.0 + e)
    sp = a.tape._record("softplus", (np.maximum(z, 0.0) + np.log1p(e)) / beta, (a,), lambda g: (g * s,))
    slope = a.tape._record("softplus_slope", s, (a,), lambda g: (g * (beta * s * (1.0 - s)),))
    return sp, slope


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return a.tape._record("exp", out, (a,), lambda g: (g * out,))


def log(a: Var) -> Var:
    av = a.value
    return a.tape._record("log", np.log(av), (a,), lambda g: (g / av,))


def sin(a: Var) -> Var:
    av = a.value
    return a.tape._record("sin", np.sin(av), (a,), lambda g: (g * np.cos(av),))


def cos(a: Var) -> Var:
    av = a.value
    return a.tape._record("cos", np.cos(av), (a,), lambda g: (-g * np.sin(av),))


def vabs(a: Var) -> Var:
    sgn = np.sign(a.value)
    return a.tape._record("abs", np.abs(a.value), (a,), lambda g: (g * sgn,))


def square(a: Var) -> Var:
    av = a.value
    return a.tape._record("square", av * av, (a,), lambda g: (2.0 * g * av,))


def sqrt(a: Var) -> Var:
    out = np.sqrt(a.value)
    return a.tape._record("sqrt", out, (a,), lambda g: (0.5 * g / out,))


def clamp_min(a: Var, lo: float) -> Var:
    mask = a.value >= lo
    return a.tape._record("clamp_min", np.maximum(a.value, lo), (a,), lambda g: (g * mask,))


def clamp_max(a: Var, hi: float) -> Var:
    mask = a.value <= hi
    return a.tape._record("clamp_max", np.minimum(a.value, hi), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _expand(g: Array, shape: tuple, axis, keepdims: bool) -> Array:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def vsum(a: Var, axis=None, keepdims: bool = False) -> Var:
    s = a.shape
    return a.tape._record(
        "sum", np.sum(a.value, axis=axis, keepdims=keepdims), (a,), lambda g: (_expand(g, s, axis, keepdims).copy(),)
    )


def mean(a: Var, axis=None, keepdims: bool = False) -> Var:
    s = a.shape
    n = a.value.size if axis is None else np.prod([s[i] for i in np.atleast_1d(axis)])
    return a.tape._record(
        "mean",
        np.mean(a.value, axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_expand(g, s, axis, keepdims) / n,),
    )


def vmax(a: Var, axis: int, keepdims: bool = False) -> Var:
    """Maximum along ``axis``; the gradient goes to the first argmax."""
    av = a.value
    idx = np.expand_dims(np.argmax(av, axis=axis), axis)
    out = np.take_along_axis(av, idx, axis=axis)

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        full = np.zeros_like(av)
        np.put_along_axis(full, idx, gk, axis=axis)
        return (full,)

    return a.tape._record("max", out if keepdims else np.squeeze(out, axis), (a,), vjp)


def cumsum(a: Var, axis: int, exclusive: bool = False) -> Var:
    av = a.value
    out = np.cumsum(av, axis=axis)
    if exclusive:
        out = out - av

    def vjp(g):
        r = np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)
        return (r - g if exclusive else r,)

    return a.tape._record("cumsum", out, (a,), vjp)


def norm(a: Var, axis: int = -1, ord: int = 2, keepdims: bool = False, eps: float = 0.0) -> Var:
    """L1 or L2 norm along ``axis``.

    ``eps`` is added under the square root so the L2 gradient stays finite at
    the origin.
    """
    if ord == 1:
        return vsum(vabs(a), axis=axis, keepdims=keepdims)
    if ord != 2:
        raise ValueError(f"unsupported norm order {ord}")
    ss = vsum(square(a), axis=axis, keepdims=keepdims)
    return sqrt(ss + eps) if eps else sqrt(ss)


def softmax(a: Var, axis: int = -1) -> Var:
    av = a.value
    e = np.exp(av - av.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return a.tape._record("softmax", s, (a,), vjp)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction, updating :class:`Param` values in place."""

    def __init__(self, params: Sequence[Param], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> bool:
        """Apply one update.  Returns False (and leaves parameters untouched)
        if any gradient is non-finite."""
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                logger.warning("non-finite gradient in %s; skipping Adam step", p.name)
                return False
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad * p.grad
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True

    def state(self) -> dict[str, Array]:
        out = {"t": np.array([self.t], dtype=np.float64)}
        for p, m, v in zip(self.params, self.m, self.v):
            out[f"m/{p.name}"] = m
            out[f"v/{p.name}"] = v
        return out

    def load_state(self, state: dict[str, Array]) -> None:
        self.t = int(state["t"][0])
        for i, p in enumerate(self.params):
            self.m[i] = np.array(state[f"m/{p.name}"], dtype=np.float64)
            self.v[i] = np.array(state[f"v/{p.name}"], dtype=np.float64)


def adam_step(params: Sequence[Param], grads: Sequence[Array], lr, beta1, beta2, eps, t, m, v) -> bool:
    """Functional Adam update for step ``t`` (1-based) with explicit moments.

    ``m`` and ``v`` are lists of moment buffers updated in place.
    """
    if not all(np.all(np.isfinite(g)) for g in grads):
        logger.warning("non-finite gradient; skipping Adam step %d", t)
        return False
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, mi, vi in zip(params, grads, m, v):
        mi *= beta1
        mi += (1.0 - beta1) * g
        vi *= beta2
        vi += (1.0 - beta2) * g * g
        p.value -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
    return True


# ---------------------------------------------------------------------------
# forward-mode spatial tangents carried as tape nodes
# ---------------------------------------------------------------------------


class Dual:
    """A value together with its derivatives w.r.t. the 3 input coordinates.

    ``tangent`` has shape ``(3, *value.shape)``.  Both parts are tape nodes
    (or plain arrays for constants), so anything built from a Dual can be
    differentiated again in reverse mode.
    """

    __slots__ = ("value", "tangent")

    def __init__(self, value, tangent):
        self.value = value
        self.tangent = tangent

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value + other.value, self.tangent + other.tangent)
        return Dual(self.value + other, self.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value - other.value, self.tangent - other.tangent)
        return Dual(self.value - other, self.tangent)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value * other.value, self.tangent * other.value + other.tangent * self.value)
        return Dual(self.value * other, self.tangent * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            raise TypeError("Dual / Dual is not needed")
        return Dual(self.value / other, self.tangent / other)

    def __matmul__(self, w):
        return Dual(matmul(self.value, w), matmul(self.tangent, w))


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x)


def dual_input(tape: Tape, x) -> Dual:
    """Seed a Dual at points ``x`` of shape (N, 3) with identity tangents."""
    x = _lift(tape, x)
    n = x.shape[0]
    eye = np.zeros((3, n, 3))
    for d in range(3):
        eye[d, :, d] = 1.0
    return Dual(x, tape.const(eye))


def dual_softplus(a: Dual, beta: float) -> Dual:
    sp, slope = softplus_and_slope(a.value, beta)
    return Dual(sp, a.tangent * slope)


def dual_relu(a: Dual) -> Dual:
    mask = (_val(a.value) > 0).astype(np.float64)
    return Dual(relu(a.value), a.tangent * mask)


def dual_sin(a: Dual) -> Dual:
    return Dual(sin(a.value), a.tangent * cos(a.value))


def dual_cos(a: Dual) -> Dual:
    return Dual(cos(a.value), -(a.tangent * sin(a.value)))


def dual_concat(xs: Sequence[Dual]) -> Dual:
    return Dual(concat([x.value for x in xs], axis=-1), concat([x.tangent for x in xs], axis=-1))


def dual_slice(a: Dual, sl: slice) -> Dual:
    return Dual(getitem(a.value, (Ellipsis, sl)), getitem(a.tangent, (Ellipsis, sl)))


def dual_norm(a: Dual) -> Dual:
    """Euclidean norm over the last axis, keepdims."""
    n = norm(a.value, axis=-1, keepdims=True)
    return Dual(n, vsum(a.tangent * a.value, axis=-1, keepdims=True) / n)


def tangent_to_gradient(t) -> Var:
    """Convert a scalar-output tangent of shape (3, N, 1) to a (N, 3) gradient."""
    if not isinstance(t, Var):
        raise TypeError("expected a tape node")
    n = t.shape[1]
    return transpose(reshape(t, (3, n)), (1, 0))


def spatial_gradient(tape: Tape, f: Callable[[Dual], Dual], x) -> tuple[Var, Var]:
    """Evaluate scalar field ``f`` at points ``x`` (N, 3) together with its
    spatial gradient.

    ``f`` must be written with Dual-aware operations.  Returns
    ``(values (N, 1), gradients (N, 3))``, both differentiable w.r.t. any
    parameters used inside ``f``.
    """
    out = f(dual_input(tape, x))
    val = out.value if isinstance(out.value, Var) else tape.const(out.value)
    tan = out.tangent if isinstance(out.tangent, Var) else tape.const(out.tangent)
    if val.ndim == 1:
        val = reshape(val, (-1, 1))
        tan = reshape(tan, (3, -1, 1))
    if val.shape[-1] != 1:
        raise ShapeError(f"spatial_gradient needs a scalar field, got output shape {val.shape}")
    return val, tangent_to_gradient(tan)
