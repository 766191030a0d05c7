"""Reverse-mode automatic differentiation over dense float64 arrays.

A small tape-based engine in the micrograd style, but vectorized: each
:class:`Node` wraps a numpy array, and every primitive records a
vector-Jacobian product for the reverse pass.  Only the operations the
models in this package need are provided; everything runs in float64 so
finite-difference checks are reliable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import special


class DiffError(ValueError):
    """Raised on shape mismatches, non-finite values, or invalid op arguments."""


class Node:
    """A value in the computation graph.

    ``grad`` accumulates across backward passes; callers reset it explicitly
    (``adam_step`` zeroes parameter gradients after each update).
    """

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, parents=(), vjp=None, op="const"):
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise DiffError(f"op '{op}' produced non-finite values")
        self.value = value
        self.grad = np.zeros_like(value)
        self._parents = tuple(parents)
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape


def constant(value) -> Node:
    """Wrap an array as a leaf with no parents."""
    return Node(value)


def _check_same_shape(op, a, b):
    if a.value.shape != b.value.shape and a.value.ndim != 0 and b.value.ndim != 0:
        try:
            np.broadcast_shapes(a.value.shape, b.value.shape)
        except ValueError:
            raise DiffError(
                f"op '{op}': incompatible shapes {a.value.shape} and {b.value.shape}"
            ) from None


def _unbroadcast(g, shape):
    """Reduce a broadcasted gradient back to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Node, b: Node) -> Node:
    _check_same_shape("add", a, b)
    return Node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
        op="add",
    )


def sub(a: Node, b: Node) -> Node:
    _check_same_shape("sub", a, b)
    return Node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), -_unbroadcast(g, b.value.shape)),
        op="sub",
    )


def mul(a: Node, b: Node) -> Node:
    _check_same_shape("mul", a, b)
    return Node(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        ),
        op="mul",
    )


def div(a: Node, b: Node) -> Node:
    """Elementwise division.  No implicit epsilon: callers guard denominators."""
    _check_same_shape("div", a, b)
    return Node(
        a.value / b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / b.value**2, b.value.shape),
        ),
        op="div",
    )


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise DiffError(
            f"op 'matmul': incompatible shapes {a.value.shape} and {b.value.shape}"
        )
    return Node(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
        op="matmul",
    )


def relu(x: Node) -> Node:
    mask = x.value > 0
    return Node(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), op="relu")


def softplus(x: Node) -> Node:
    value = np.logaddexp(0.0, x.value)
    sig = special.expit(x.value)
    return Node(value, (x,), lambda g: (g * sig,), op="softplus")


def exp(x: Node) -> Node:
    value = np.exp(x.value)
    return Node(value, (x,), lambda g: (g * value,), op="exp")


def log(x: Node) -> Node:
    if np.any(x.value <= 0):
        raise DiffError("op 'log': non-positive input")
    return Node(np.log(x.value), (x,), lambda g: (g / x.value,), op="log")


def powi(x: Node, n: int) -> Node:
    """Elementwise integer power with fixed exponent."""
    if not isinstance(n, (int, np.integer)):
        raise DiffError("op 'powi': exponent must be an integer")
    return Node(
        x.value**n,
        (x,),
        lambda g: (g * n * x.value ** (n - 1),),
        op="powi",
    )


def absolute(x: Node) -> Node:
    return Node(np.abs(x.value), (x,), lambda g: (g * np.sign(x.value),), op="abs")


def reduce_sum(x: Node, axis=None, keepdims=False) -> Node:
    shape = x.value.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Node(x.value.sum(axis=axis, keepdims=keepdims), (x,), vjp, op="sum")


def reduce_mean(x: Node, axis=None, keepdims=False) -> Node:
    shape = x.value.shape
    count = x.value.size if axis is None else shape[axis]

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape) / count,)

    return Node(x.value.mean(axis=axis, keepdims=keepdims), (x,), vjp, op="mean")


def concat(nodes, axis=0) -> Node:
    nodes = list(nodes)
    sizes = [n.value.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Node(
        np.concatenate([n.value for n in nodes], axis=axis), nodes, vjp, op="concat"
    )


def narrow(x: Node, axis: int, start: int, length: int) -> Node:
    """Slice ``length`` entries from ``start`` along ``axis``."""
    index = [slice(None)] * x.value.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def vjp(g):
        out = np.zeros_like(x.value)
        out[index] = g
        return (out,)

    return Node(x.value[index], (x,), vjp, op="narrow")


def broadcast_to(x: Node, shape) -> Node:
    """Broadcast a scalar (or broadcastable) node to a full shape."""
    return Node(
        np.broadcast_to(x.value, shape).copy(),
        (x,),
        lambda g: (_unbroadcast(g, x.value.shape),),
        op="broadcast",
    )


_LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_log_pdf(y, mu: Node, sigma: Node) -> Node:
    """Elementwise log N(y; mu, sigma^2) with observations ``y`` held fixed."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != mu.value.shape or mu.value.shape != sigma.value.shape:
        raise DiffError(
            f"op 'gaussian_log_pdf': shapes y={y.shape}, mu={mu.value.shape}, "
            f"sigma={sigma.value.shape} must match"
        )
    if np.any(sigma.value <= 0):
        raise DiffError("op 'gaussian_log_pdf': sigma must be positive")
    z = (y - mu.value) / sigma.value
    value = -0.5 * _LOG_2PI - np.log(sigma.value) - 0.5 * z**2

    def vjp(g):
        dmu = g * z / sigma.value
        dsigma = g * (z**2 - 1.0) / sigma.value
        return (dmu, dsigma)

    return Node(value, (mu, sigma), vjp, op="gaussian_log_pdf")


def _pad1d(x, pad, mode):
    if pad == 0:
        return x
    if mode == "zeros":
        return np.pad(x, ((0, 0), (pad, pad)))
    if mode == "circular":
        return np.pad(x, ((0, 0), (pad, pad)), mode="wrap")
    raise DiffError(f"conv1d: unknown padding mode '{mode}'")


def conv1d(x: Node, w: Node, bias: Node | None = None, padding: str = "zeros") -> Node:
    """Cross-correlation, stride 1, symmetric padding of (k-1)/2.

    ``x`` has shape (C_in, T), ``w`` has shape (C_out, C_in, k) with odd k.
    Output shape is (C_out, T): spatial extent is preserved.
    """
    if x.value.ndim != 2 or w.value.ndim != 3:
        raise DiffError(
            f"op 'conv1d': expected (C_in, T) and (C_out, C_in, k), got "
            f"{x.value.shape} and {w.value.shape}"
        )
    c_in, t = x.value.shape
    c_out, c_in_w, k = w.value.shape
    if c_in != c_in_w or k % 2 == 0:
        raise DiffError(
            f"op 'conv1d': incompatible shapes {x.value.shape} and {w.value.shape} "
            "(channel mismatch or even kernel)"
        )
    pad = (k - 1) // 2
    xp = _pad1d(x.value, pad, padding)
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)
    out = np.einsum("oik,itk->ot", w.value, windows)
    parents = [x, w]
    if bias is not None:
        if bias.value.shape != (c_out,):
            raise DiffError(
                f"op 'conv1d': bias shape {bias.value.shape} != ({c_out},)"
            )
        out = out + bias.value[:, None]
        parents.append(bias)

    def vjp(g):
        dw = np.einsum("ot,itk->oik", g, windows)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[:, j : j + t] += np.einsum("ot,oi->it", g, w.value[:, :, j])
        if pad == 0:
            dx = dxp
        elif padding == "zeros":
            dx = dxp[:, pad:-pad]
        else:  # circular: wrap the pad contributions back around
            dx = dxp[:, pad:-pad].copy()
            dx[:, -pad:] += dxp[:, :pad]
            dx[:, :pad] += dxp[:, -pad:]
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=1))
        return tuple(grads)

    return Node(out, parents, vjp, op="conv1d")


def _pad2d(x, pad, mode):
    if pad == 0:
        return x
    widths = ((0, 0), (pad, pad), (pad, pad))
    if mode == "zeros":
        return np.pad(x, widths)
    if mode == "circular":
        return np.pad(x, widths, mode="wrap")
    raise DiffError(f"conv2d: unknown padding mode '{mode}'")


def conv2d(x: Node, w: Node, bias: Node | None = None, padding: str = "zeros") -> Node:
    """Cross-correlation over (C_in, H, W) with square odd kernels, stride 1."""
    if x.value.ndim != 3 or w.value.ndim != 4:
        raise DiffError(
            f"op 'conv2d': expected (C_in, H, W) and (C_out, C_in, k, k), got "
            f"{x.value.shape} and {w.value.shape}"
        )
    c_in, h, width = x.value.shape
    c_out, c_in_w, k, k2 = w.value.shape
    if c_in != c_in_w or k != k2 or k % 2 == 0:
        raise DiffError(
            f"op 'conv2d': incompatible shapes {x.value.shape} and {w.value.shape}"
        )
    pad = (k - 1) // 2
    xp = _pad2d(x.value, pad, padding)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    out = np.einsum("oiuv,ihwuv->ohw", w.value, windows)
    parents = [x, w]
    if bias is not None:
        if bias.value.shape != (c_out,):
            raise DiffError(
                f"op 'conv2d': bias shape {bias.value.shape} != ({c_out},)"
            )
        out = out + bias.value[:, None, None]
        parents.append(bias)

    def vjp(g):
        dw = np.einsum("ohw,ihwuv->oiuv", g, windows)
        dxp = np.zeros_like(xp)
        for u in range(k):
            for v in range(k):
                dxp[:, u : u + h, v : v + width] += np.einsum(
                    "ohw,oi->ihw", g, w.value[:, :, u, v]
                )
        if pad == 0:
            dx = dxp
        elif padding == "zeros":
            dx = dxp[:, pad:-pad, pad:-pad]
        else:
            dx = dxp[:, pad:-pad, pad:-pad].copy()
            dx[:, -pad:, :] += dxp[:, :pad, pad:-pad]
            dx[:, :pad, :] += dxp[:, -pad:, pad:-pad]
            dx[:, :, -pad:] += dxp[:, pad:-pad, :pad]
            dx[:, :, :pad] += dxp[:, pad:-pad, -pad:]
            # corners wrap both axes
            dx[:, -pad:, -pad:] += dxp[:, :pad, :pad]
            dx[:, -pad:, :pad] += dxp[:, :pad, -pad:]
            dx[:, :pad, -pad:] += dxp[:, -pad:, :pad]
            dx[:, :pad, :pad] += dxp[:, -pad:, -pad:]
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2)))
        return tuple(grads)

    return Node(out, parents, vjp, op="conv2d")


def backward(loss: Node) -> None:
    """Reverse accumulation from a scalar loss.

    Gradients add into ``.grad``; calling twice without zeroing accumulates.
    Each node's vjp runs exactly once, in reverse topological order.
    """
    if loss.value.size != 1:
        raise DiffError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    order = []
    seen = set()
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    loss.grad = loss.grad + np.ones_like(loss.value)
    for node in reversed(order):
        if node._vjp is None:
            continue
        grads = node._vjp(np.asarray(node.grad))
        for parent, g in zip(node._parents, grads):
            parent.grad = parent.grad + g


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0


class ParameterStore:
    """Named, shaped trainable arrays with gradient and Adam moment slots.

    Iteration order is insertion order and therefore deterministic.
    """

    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name: str, value) -> None:
        if name in self._params:
            raise DiffError(f"duplicate parameter name '{name}'")
        value = np.array(value, dtype=np.float64)
        self._params[name] = Param(
            value=value,
            grad=np.zeros_like(value),
            m=np.zeros_like(value),
            v=np.zeros_like(value),
        )

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def leaves(self) -> dict[str, Node]:
        """Fresh leaf nodes sharing the current parameter values."""
        return {name: Node(p.value) for name, p in self._params.items()}

    def accumulate(self, leaves: dict[str, Node]) -> None:
        """Add leaf gradients from a finished backward pass into the store."""
        for name, node in leaves.items():
            self._params[name].grad += node.grad

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0.0

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, value in state.items():
            p = self._params[name]
            if p.value.shape != np.asarray(value).shape:
                raise DiffError(
                    f"parameter '{name}': shape {np.asarray(value).shape} != "
                    f"{p.value.shape}"
                )
            p.value[...] = value


def adam_step(
    store: ParameterStore,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update with bias correction and decoupled weight decay.

    Weight decay shrinks the value before the Adam delta is applied.
    Gradients are zeroed afterward; accumulation across batches happens
    before this call, never implicitly inside it.
    """
    if lr <= 0:
        raise DiffError(f"adam_step: lr must be positive, got {lr}")
    for p in store._params.values():
        if weight_decay:
            p.value -= lr * weight_decay * p.value
        p.step += 1
        p.m = beta1 * p.m + (1.0 - beta1) * p.grad
        p.v = beta2 * p.v + (1.0 - beta2) * p.grad**2
        m_hat = p.m / (1.0 - beta1**p.step)
        v_hat = p.v / (1.0 - beta2**p.step)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad[...] = 0.0


def grad_check(builder, store: ParameterStore, step: float = 1e-5) -> float:
    """Max relative error of analytic gradients vs central finite differences.

    ``builder`` maps a dict of leaf nodes to a scalar loss node and must be
    deterministic.  Relative error per element is
    |analytic - fd| / max(1e-6, |fd|, |analytic|); the absolute guard keeps
    central-difference roundoff noise (~|loss| * eps / step) from dominating
    elements whose true gradient is near zero.
    """
    leaves = store.leaves()
    loss = builder(leaves)
    backward(loss)
    analytic = {name: node.grad.copy() for name, node in leaves.items()}

    worst = 0.0
    for name, p in store.items():
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(builder(store.leaves()).value)
            flat[i] = orig - step
            lo = float(builder(store.leaves()).value)
            flat[i] = orig
            fd = (hi - lo) / (2.0 * step)
            ana = analytic[name].reshape(-1)[i]
            err = abs(ana - fd) / max(1e-6, abs(fd), abs(ana))
            worst = max(worst, err)
    return worst


CHECKPOINT_VERSION = 1


def save_checkpoint(store: ParameterStore, path) -> None:
    """Write parameters as JSON with full-precision decimal floats."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "params": [
            {
                "name": name,
                "shape": list(p.value.shape),
                "data": p.value.reshape(-1).tolist(),
            }
            for name, p in store.items()
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(store: ParameterStore, path) -> None:
    """Load a checkpoint, validating names and shapes against ``store``."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise DiffError(f"unsupported checkpoint version {doc.get('format_version')}")
    names = set()
    for entry in doc["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in store:
            raise DiffError(f"checkpoint parameter '{name}' not in model")
        p = store[name]
        if p.value.shape != shape:
            raise DiffError(
                f"checkpoint parameter '{name}': shape {shape} != {p.value.shape}"
            )
        p.value[...] = np.asarray(entry["data"], dtype=np.float64).reshape(shape)
        names.add(name)
    missing = set(store.names()) - names
    if missing:
        raise DiffError(f"checkpoint missing parameters: {sorted(missing)}")
