"""A small reverse-mode differentiation engine over a fixed set of array primitives.

Graphs are built lazily from :class:`Node` objects; :func:`forward` evaluates
them for a set of input bindings and :func:`backward` pushes gradients from a
scalar loss into every :class:`Parameter` reached. Training runs in float64;
the finite-difference oracle re-evaluates in extended precision.

Subgradients at kinks are zero: ``relu'(0) = 0`` and ``d|x|/dx (0) = 0``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError

OPS = (
    "input", "const", "param", "matmul", "add", "hadamard", "relu", "sigmoid", "scale",
    "reduce_sum", "l1_to_target", "softmax_cross_entropy", "slice", "concat",
    "reshape", "transpose", "sqrt", "row_normalize",
)


class Parameter:
    """Named trainable array with a gradient slot of the same shape."""

    def __init__(self, name: str, value, trainable: bool = True):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Node:
    __slots__ = ("op", "args", "attrs", "value", "grad")

    def __init__(self, op: str, args: Sequence["Node"] = (), **attrs):
        self.op = op
        self.args = tuple(args)
        self.attrs = attrs
        self.value = None
        self.grad = None

    def __repr__(self) -> str:
        return f"Node({self.op})"

    # operator sugar; constants are wrapped automatically
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return hadamard(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(_wrap(other), self)


def _wrap(x) -> Node:
    return x if isinstance(x, Node) else const(x)


# ---------------------------------------------------------------------------
# graph construction


def inp(name: str) -> Node:
    return Node("input", name=name)


def const(value) -> Node:
    n = Node("const", value=np.asarray(value, dtype=np.float64))
    return n


def param(p: Parameter) -> Node:
    return Node("param", parameter=p)


def matmul(a, b) -> Node:
    return Node("matmul", (_wrap(a), _wrap(b)))


def add(a, b) -> Node:
    return Node("add", (_wrap(a), _wrap(b)))


def hadamard(a, b) -> Node:
    return Node("hadamard", (_wrap(a), _wrap(b)))


def relu(x) -> Node:
    return Node("relu", (_wrap(x),))


def sigmoid(x) -> Node:
    return Node("sigmoid", (_wrap(x),))


def scale(x, c: float) -> Node:
    return Node("scale", (_wrap(x),), c=float(c))


def reduce_sum(x, axis=None, keepdims: bool = False) -> Node:
    return Node("reduce_sum", (_wrap(x),), axis=axis, keepdims=keepdims, mean=False)


def l1_to_target(x, target) -> Node:
    """Mean absolute difference over all elements."""
    return Node("l1_to_target", (_wrap(x), _wrap(target)))


def softmax_cross_entropy(logits, target) -> Node:
    """Mean over rows of ``-sum(target * log_softmax(logits))`` along the last axis."""
    return Node("softmax_cross_entropy", (_wrap(logits), _wrap(target)))


def slice_(x, index) -> Node:
    return Node("slice", (_wrap(x),), index=index)


def concat(xs: Iterable, axis: int = 0) -> Node:
    return Node("concat", tuple(_wrap(x) for x in xs), axis=axis)


def reshape(x, shape) -> Node:
    return Node("reshape", (_wrap(x),), shape=tuple(shape))


def transpose(x, axes=None) -> Node:
    return Node("transpose", (_wrap(x),), axes=None if axes is None else tuple(axes))


def swap_last(x) -> Node:
    return Node("transpose", (_wrap(x),), axes="swap_last")


def sqrt(x) -> Node:
    return Node("sqrt", (_wrap(x),))


def row_normalize(x) -> Node:
    """Divide each row (last axis) by its sum."""
    return Node("row_normalize", (_wrap(x),))


def mean(x, axis=None, keepdims: bool = False) -> Node:
    """reduce_sum divided by the number of reduced elements."""
    return Node("reduce_sum", (_wrap(x),), axis=axis, keepdims=keepdims, mean=True)


# ---------------------------------------------------------------------------
# evaluation


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.sum(np.exp(z - m), axis=-1, keepdims=True))


def _axes(node: Node, ndim: int):
    axes = node.attrs["axes"]
    if axes == "swap_last":
        axes = tuple(range(ndim - 2)) + (ndim - 1, ndim - 2)
    return axes


def _eval(node: Node, vals: list) -> np.ndarray:
    op, a = node.op, node.attrs
    if op == "matmul":
        x, y = vals
        if x.ndim < 2 or y.ndim < 2 or x.shape[-1] != y.shape[-2]:
            raise ShapeError(f"matmul: {x.shape} @ {y.shape}")
        return np.matmul(x, y)
    if op in ("add", "hadamard"):
        x, y = vals
        try:
            np.broadcast_shapes(x.shape, y.shape)
        except ValueError:
            raise ShapeError(f"{op}: shapes {x.shape} and {y.shape} do not broadcast") from None
        return x + y if op == "add" else x * y
    if op == "relu":
        return np.maximum(vals[0], 0.0)
    if op == "sigmoid":
        return _stable_sigmoid(vals[0])
    if op == "scale":
        return a["c"] * vals[0]
    if op == "reduce_sum":
        s = np.sum(vals[0], axis=a["axis"], keepdims=a["keepdims"])
        return s / (vals[0].size // max(s.size, 1)) if a["mean"] else s
    if op == "l1_to_target":
        x, t = vals
        if x.shape != t.shape:
            raise ShapeError(f"l1_to_target: {x.shape} vs {t.shape}")
        return np.mean(np.abs(x - t))
    if op == "softmax_cross_entropy":
        z, t = vals
        if z.shape != t.shape:
            raise ShapeError(f"softmax_cross_entropy: {z.shape} vs {t.shape}")
        rows = z.size // z.shape[-1]
        return -np.sum(t * _log_softmax(z)) / rows
    if op == "slice":
        return vals[0][a["index"]]
    if op == "concat":
        return np.concatenate(vals, axis=a["axis"])
    if op == "reshape":
        return vals[0].reshape(a["shape"])
    if op == "transpose":
        return np.transpose(vals[0], _axes(node, vals[0].ndim))
    if op == "sqrt":
        return np.sqrt(vals[0])
    if op == "row_normalize":
        return vals[0] / vals[0].sum(axis=-1, keepdims=True)
    raise ValueError(f"unknown op {op}")


def _grads(node: Node, g: np.ndarray) -> list:
    op, a = node.op, node.attrs
    vals = [x.value for x in node.args]
    if op == "matmul":
        x, y = vals
        return [
            _unbroadcast(np.matmul(g, np.swapaxes(y, -1, -2)), x.shape),
            _unbroadcast(np.matmul(np.swapaxes(x, -1, -2), g), y.shape),
        ]
    if op == "add":
        return [_unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)]
    if op == "hadamard":
        x, y = vals
        return [_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)]
    if op == "relu":
        return [g * (vals[0] > 0)]
    if op == "sigmoid":
        s = node.value
        return [g * s * (1.0 - s)]
    if op == "scale":
        return [a["c"] * g]
    if op == "reduce_sum":
        x = vals[0]
        if a["mean"]:
            g = g / (x.size // max(np.size(node.value), 1))
        if a["axis"] is not None and not a["keepdims"]:
            g = np.expand_dims(g, a["axis"])
        return [np.broadcast_to(g, x.shape).copy()]
    if op == "l1_to_target":
        x, t = vals
        d = g * np.sign(x - t) / x.size
        return [d, -d]
    if op == "softmax_cross_entropy":
        z, t = vals
        rows = z.size // z.shape[-1]
        logp = _log_softmax(z)
        gz = (np.exp(logp) * t.sum(axis=-1, keepdims=True) - t) / rows
        return [g * gz, -g * logp / rows]
    if op == "slice":
        out = np.zeros_like(vals[0])
        np.add.at(out, a["index"], g)
        return [out]
    if op == "concat":
        sizes = np.cumsum([v.shape[a["axis"]] for v in vals])[:-1]
        return np.split(g, sizes, axis=a["axis"])
    if op == "reshape":
        return [g.reshape(vals[0].shape)]
    if op == "transpose":
        axes = _axes(node, vals[0].ndim)
        inv = None if axes is None else np.argsort(axes)
        return [np.transpose(g, inv)]
    if op == "sqrt":
        return [g * 0.5 / node.value]
    if op == "row_normalize":
        x = vals[0]
        s = x.sum(axis=-1, keepdims=True)
        return [(g - np.sum(g * node.value, axis=-1, keepdims=True)) / s]
    raise ValueError(f"no gradient rule for {op}")


def topological(outputs: Sequence[Node]) -> list[Node]:
    order, seen = [], set()
    for out in outputs:
        stack = [(out, False)]
        while stack:
            n, done = stack.pop()
            if done:
                order.append(n)
                continue
            if id(n) in seen:
                continue
            seen.add(id(n))
            stack.append((n, True))
            for arg in reversed(n.args):
                if id(arg) not in seen:
                    stack.append((arg, False))
    return order


def forward(outputs, feed: dict | None = None, dtype=np.float64, overrides: dict | None = None):
    """Evaluate ``outputs`` (a node or a list) with inputs bound by name.

    Returns the value (or list of values) and leaves node values in place for
    :func:`backward`. ``overrides`` maps ``id(parameter)`` to a replacement value.
    """
    single = isinstance(outputs, Node)
    outs = [outputs] if single else list(outputs)
    feed = feed or {}
    overrides = overrides or {}
    for n in topological(outs):
        if n.op == "input":
            name = n.attrs["name"]
            if name not in feed:
                raise KeyError(f"input {name!r} is not bound")
            n.value = np.asarray(feed[name], dtype=dtype)
        elif n.op == "const":
            n.value = n.attrs["value"].astype(dtype, copy=False)
        elif n.op == "param":
            p = n.attrs["parameter"]
            n.value = np.asarray(overrides.get(id(p), p.value), dtype=dtype)
        else:
            n.value = _eval(n, [x.value for x in n.args])
    vals = [n.value for n in outs]
    return vals[0] if single else vals


def backward(loss: Node) -> dict[str, np.ndarray]:
    """Reverse sweep from a scalar loss evaluated by the latest :func:`forward`.

    Parameter gradients are overwritten (not accumulated across calls).
    Returns ``{name: grad}`` for trainable parameters.
    """
    if loss.value is None:
        raise RuntimeError("backward before forward")
    if np.size(loss.value) != 1:
        raise ShapeError(f"loss must be scalar, got shape {np.shape(loss.value)}")
    order = topological([loss])
    for n in order:
        n.grad = None
    params = {}
    for n in order:
        if n.op == "param":
            p = n.attrs["parameter"]
            p.grad = np.zeros_like(p.value)
            params[id(p)] = p
    loss.grad = np.ones_like(loss.value)
    for n in reversed(order):
        if n.grad is None or n.op in ("input", "const"):
            continue
        if n.op == "param":
            n.attrs["parameter"].grad += n.grad
            continue
        for arg, ga in zip(n.args, _grads(n, n.grad)):
            arg.grad = ga if arg.grad is None else arg.grad + ga
    return {p.name: p.grad for p in params.values() if p.trainable}


def parameters_of(outputs) -> list[Parameter]:
    outs = [outputs] if isinstance(outputs, Node) else list(outputs)
    found, seen = [], set()
    for n in topological(outs):
        if n.op == "param":
            p = n.attrs["parameter"]
            if id(p) not in seen:
                seen.add(id(p))
                found.append(p)
    return found


# ---------------------------------------------------------------------------
# finite-difference oracle


def relative_error(a, b) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)


def _kink_signature(order: list[Node]) -> list[np.ndarray]:
    sig = []
    for n in order:
        if n.op == "relu":
            sig.append(n.args[0].value > 0)
        elif n.op == "l1_to_target":
            sig.append(np.sign(n.args[0].value - n.args[1].value))
    return sig


def _same(a: list, b: list) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check_params(loss: Node, params: Sequence[Parameter] | None = None, epsilon: float = 1e-5,
                      feed: dict | None = None, max_coords: int | None = None, seed: int = 0,
                      stats: dict | None = None) -> float:
    """Max relative error between backward() and central differences.

    Differences are taken in extended precision so that roundoff does not
    swamp small gradients. A step whose +/- probes change any ReLU or L1 sign
    pattern straddles a kink; it is retried at eps/10 and eps/100, and the
    coordinate is skipped if all three straddle. ``max_coords`` limits each
    parameter to a random subset of its entries. ``stats``, if given, receives
    ``checked`` and ``skipped`` counts.
    """
    params = parameters_of(loss) if params is None else list(params)
    hp = np.longdouble
    forward(loss, feed)
    backward(loss)
    analytic = {id(p): p.grad.copy() for p in params}
    order = topological([loss])
    forward(loss, feed, dtype=hp)
    base = _kink_signature(order)
    rng = np.random.default_rng(seed)
    worst, checked, skipped = 0.0, 0, 0
    for p in params:
        value = p.value.astype(hp)
        flat = value.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, max_coords, replace=False))
        for i in idx:
            orig = flat[i]
            fd = None
            for eps in (epsilon, epsilon / 10, epsilon / 100):
                flat[i] = orig + hp(eps)
                fp = forward(loss, feed, dtype=hp, overrides={id(p): value})
                sp = _kink_signature(order)
                flat[i] = orig - hp(eps)
                fm = forward(loss, feed, dtype=hp, overrides={id(p): value})
                sm = _kink_signature(order)
                flat[i] = orig
                if _same(sp, base) and _same(sm, base):
                    fd = float((fp - fm) / (2 * hp(eps)))
                    break
            if fd is None:
                skipped += 1
                continue
            checked += 1
            worst = max(worst, float(relative_error(analytic[id(p)].reshape(-1)[i], fd)))
    forward(loss, feed)
    if stats is not None:
        stats.update(checked=checked, skipped=skipped)
    return worst


def grad_check(f: Callable[..., Node], point, epsilon: float = 1e-5) -> float:
    """Check ``f`` (taking one node per array in ``point``) at ``point``."""
    arrays = [point] if isinstance(point, np.ndarray) or np.isscalar(point) else list(point)
    params = [Parameter(f"x{i}", a) for i, a in enumerate(arrays)]
    loss = f(*[param(p) for p in params])
    return grad_check_params(loss, params, epsilon)


def kink_margin(outputs) -> float:
    """Smallest distance of any ReLU input or L1 residual from its kink."""
    outs = [outputs] if isinstance(outputs, Node) else list(outputs)
    margin = np.inf
    for n in topological(outs):
        if n.op == "relu":
            margin = min(margin, float(np.min(np.abs(n.args[0].value), initial=np.inf)))
        elif n.op == "l1_to_target":
            margin = min(margin, float(np.min(np.abs(n.args[0].value - n.args[1].value), initial=np.inf)))
    return margin


class Adam:
    """Adam with bias correction; updates parameter values in place."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-4,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad**2
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
