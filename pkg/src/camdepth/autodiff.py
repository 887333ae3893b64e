"""Minimal reverse-mode autodiff over (h, w, c) float grids.

Exactly the ops the depth network and its losses need, nothing else. Values
are numpy arrays, always rank 3; scalars are (1, 1, 1) grids. Each op builds a
Node holding the forward value and a backward closure; backward(root) runs the
tape in reverse topological order. Precision follows the input dtype, so
graphs can be built in float32 for training and float64 for gradient checks.

Gradient conventions worth noting:
  * relu/abs use the 0 subgradient at their kink.
  * sqrt propagates 0 at exactly 0 (inputs there are non-differentiable).
  * abs_floor(x, eps) = max(|x|, eps) passes gradient only where |x| > eps.
"""

from __future__ import annotations

import numpy as np

from .interp import bilinear_matrix


class Node:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "_backward_done")

    def __init__(self, value, parents=(), requires_grad=False):
        value = np.asarray(value)
        if value.ndim not in (3, 4):
            # rank 3 for (h, w, c) grids, rank 4 for conv kernels
            raise ValueError(f"grids are (h, w, c) arrays, got shape {value.shape}")
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = None
        self._backward_done = False

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


def constant(value) -> Node:
    return Node(np.asarray(value), requires_grad=False)


def parameter(value) -> Node:
    return Node(np.asarray(value), requires_grad=True)


def _from(parents) -> bool:
    return any(p.requires_grad for p in parents)


def _check_same_shape(a: Node, b: Node, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise ValueError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


# ---------------------------------------------------------------- arithmetic

def add(a: Node, b: Node) -> Node:
    _check_same_shape(a, b, "add")
    out = Node(a.value + b.value, (a, b), _from((a, b)))

    def bw():
        if a.requires_grad:
            a.grad += out.grad
        if b.requires_grad:
            b.grad += out.grad

    out._backward = bw
    return out


def sub(a: Node, b: Node) -> Node:
    _check_same_shape(a, b, "sub")
    out = Node(a.value - b.value, (a, b), _from((a, b)))

    def bw():
        if a.requires_grad:
            a.grad += out.grad
        if b.requires_grad:
            b.grad -= out.grad

    out._backward = bw
    return out


def mul(a: Node, b: Node) -> Node:
    _check_same_shape(a, b, "mul")
    out = Node(a.value * b.value, (a, b), _from((a, b)))

    def bw():
        if a.requires_grad:
            a.grad += out.grad * b.value
        if b.requires_grad:
            b.grad += out.grad * a.value

    out._backward = bw
    return out


def div(a: Node, b: Node) -> Node:
    _check_same_shape(a, b, "div")
    out = Node(a.value / b.value, (a, b), _from((a, b)))

    def bw():
        if a.requires_grad:
            a.grad += out.grad / b.value
        if b.requires_grad:
            b.grad -= out.grad * a.value / (b.value * b.value)

    out._backward = bw
    return out


def add_scalar(a: Node, s: float) -> Node:
    out = Node(a.value + s, (a,), a.requires_grad)

    def bw():
        if a.requires_grad:
            a.grad += out.grad

    out._backward = bw
    return out


def mul_scalar(a: Node, s: float) -> Node:
    out = Node(a.value * s, (a,), a.requires_grad)

    def bw():
        if a.requires_grad:
            a.grad += out.grad * s

    out._backward = bw
    return out


# ---------------------------------------------------------------- elementwise nonlinear

def relu(a: Node) -> Node:
    out = Node(np.maximum(a.value, 0), (a,), a.requires_grad)

    def bw():
        if a.requires_grad:
            a.grad += out.grad * (a.value > 0)

    out._backward = bw
    return out


def sigmoid(a: Node) -> Node:
    x = a.value
    val = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Node(val, (a,), a.requires_grad)

    def bw():
        if a.requires_grad:
            a.grad += out.grad * out.value * (1.0 - out.value)

    out._backward = bw
    return out


def softplus(a: Node) -> Node:
    out = Node(np.logaddexp(0.0, a.value), (a,), a.requires_grad)

    def bw():
        if a.requires_grad:
            x = a.value
            sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                           np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
            a.grad += out.grad * sig

    out._backward = bw
    return out


def exp(a: Node) -> Node:
    out = Node(np.exp(a.value), (a,), a.requires_grad)

    def bw():
        if a.requires_grad:
            a.grad += out.grad * out.value

    out._backward = bw
    return out


def log(a: Node) -> Node:
    if np.any(a.value <= 0):
        raise ValueError("log needs strictly positive inputs")
    out = Node(np.log(a.value), (a,), a.requires_grad)

    def bw():
        if a.requires_grad:
            a.grad += out.grad / a.value

    out._backward = bw
    return out


def sqrt(a: Node) -> Node:
    if np.any(a.value < 0):
        raise ValueError("sqrt needs non-negative inputs")
    out = Node(np.sqrt(a.value), (a,), a.requires_grad)

    def bw():
        if a.requires_grad:
            # subgradient 0 at exactly 0
            safe = np.where(out.value > 0, out.value, 1.0)
            a.grad += out.grad * np.where(out.value > 0, 0.5 / safe, 0.0)

    out._backward = bw
    return out


def absval(a: Node) -> Node:
    out = Node(np.abs(a.value), (a,), a.requires_grad)

    def bw():
        if a.requires_grad:
            a.grad += out.grad * np.sign(a.value)

    out._backward = bw
    return out


def square(a: Node) -> Node:
    out = Node(a.value * a.value, (a,), a.requires_grad)

    def bw():
        if a.requires_grad:
            a.grad += out.grad * 2.0 * a.value

    out._backward = bw
    return out


def abs_floor(a: Node, eps: float) -> Node:
    """max(|a|, eps); division-safe magnitude with gradient only where |a| > eps."""
    mag = np.abs(a.value)
    out = Node(np.maximum(mag, eps), (a,), a.requires_grad)

    def bw():
        if a.requires_grad:
            a.grad += out.grad * np.where(mag > eps, np.sign(a.value), 0.0)

    out._backward = bw
    return out


# ---------------------------------------------------------------- structure

def concat_channels(*nodes: Node) -> Node:
    if not nodes:
        raise ValueError("concat_channels needs at least one input")
    hw = nodes[0].value.shape[:2]
    for n in nodes:
        if n.value.shape[:2] != hw:
            raise ValueError(f"concat_channels: spatial mismatch {n.value.shape} vs {hw}")
    out = Node(np.concatenate([n.value for n in nodes], axis=2), nodes, _from(nodes))

    def bw():
        c0 = 0
        for n in nodes:
            c1 = c0 + n.value.shape[2]
            if n.requires_grad:
                n.grad += out.grad[:, :, c0:c1]
            c0 = c1

    out._backward = bw
    return out


def slice_channels(a: Node, c0: int, c1: int) -> Node:
    if not (0 <= c0 < c1 <= a.value.shape[2]):
        raise ValueError(f"slice_channels [{c0}:{c1}] out of range for {a.value.shape}")
    out = Node(a.value[:, :, c0:c1].copy(), (a,), a.requires_grad)

    def bw():
        if a.requires_grad:
            a.grad[:, :, c0:c1] += out.grad

    out._backward = bw
    return out


def crop(a: Node, r0: int, r1: int, c0: int, c1: int) -> Node:
    h, w, _ = a.value.shape
    if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
        raise ValueError(f"crop [{r0}:{r1}, {c0}:{c1}] out of range for {a.value.shape}")
    out = Node(a.value[r0:r1, c0:c1].copy(), (a,), a.requires_grad)

    def bw():
        if a.requires_grad:
            a.grad[r0:r1, c0:c1] += out.grad

    out._backward = bw
    return out


def sum_channels(a: Node) -> Node:
    out = Node(a.value.sum(axis=2, keepdims=True), (a,), a.requires_grad)

    def bw():
        if a.requires_grad:
            a.grad += out.grad

    out._backward = bw
    return out


def sum_all(a: Node) -> Node:
    out = Node(a.value.sum().reshape(1, 1, 1), (a,), a.requires_grad)

    def bw():
        if a.requires_grad:
            a.grad += out.grad

    out._backward = bw
    return out


def l2_normalize_channels(a: Node, eps: float = 1e-12) -> Node:
    """Per-pixel x / sqrt(sum_c x^2 + eps)."""
    sq = np.sum(a.value * a.value, axis=2, keepdims=True)
    r = np.sqrt(sq + eps)
    out = Node(a.value / r, (a,), a.requires_grad)

    def bw():
        if a.requires_grad:
            gdotx = np.sum(out.grad * a.value, axis=2, keepdims=True)
            a.grad += out.grad / r - a.value * (gdotx / (r * sq + r * eps))

    out._backward = bw
    return out


# ---------------------------------------------------------------- convolution

def _same_padding(n: int, k: int, s: int) -> tuple[int, int]:
    out = -(-n // s)  # ceil
    total = max((out - 1) * s + k - n, 0)
    return total // 2, total - total // 2


def conv2d(x: Node, kernel: Node, stride: int = 1, padding: str = "same") -> Node:
    """2-D cross-correlation. kernel is (kh, kw, cin, cout)."""
    if kernel.value.ndim != 4:
        raise ValueError(f"kernel must be (kh, kw, cin, cout), got {kernel.value.shape}")
    h, w, cin = x.value.shape
    kh, kw, kcin, cout = kernel.value.shape
    if cin != kcin:
        raise ValueError(f"conv2d: input has {cin} channels, kernel expects {kcin}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding == "same":
        pt, pb = _same_padding(h, kh, stride)
        pl, pr = _same_padding(w, kw, stride)
    elif padding == "valid":
        if h < kh or w < kw:
            raise ValueError(f"valid conv needs input >= kernel, got {x.value.shape} vs {kernel.value.shape}")
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")

    xp = np.pad(x.value, ((pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x.value
    hp, wp = xp.shape[:2]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    acc = np.zeros((ho, wo, cout), dtype=xp.dtype)
    for a in range(kh):
        for b in range(kw):
            xs = xp[a:a + (ho - 1) * stride + 1:stride, b:b + (wo - 1) * stride + 1:stride]
            acc += xs @ kernel.value[a, b]
    out = Node(acc, (x, kernel), _from((x, kernel)))

    def bw():
        gy = out.grad
        if kernel.requires_grad:
            for a in range(kh):
                for b in range(kw):
                    xs = xp[a:a + (ho - 1) * stride + 1:stride, b:b + (wo - 1) * stride + 1:stride]
                    kernel.grad[a, b] += np.einsum("ijc,ijo->co", xs, gy)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for a in range(kh):
                for b in range(kw):
                    gxp[a:a + (ho - 1) * stride + 1:stride, b:b + (wo - 1) * stride + 1:stride] += gy @ kernel.value[a, b].T
            x.grad += gxp[pt:pt + h, pl:pl + w]

    out._backward = bw
    return out


def bias_add(x: Node, bias: Node) -> Node:
    """Add a per-channel bias; bias is a (1, 1, c) grid."""
    if bias.value.shape != (1, 1, x.value.shape[2]):
        raise ValueError(f"bias shape {bias.value.shape} does not match {x.value.shape}")
    out = Node(x.value + bias.value, (x, bias), _from((x, bias)))

    def bw():
        if x.requires_grad:
            x.grad += out.grad
        if bias.requires_grad:
            bias.grad += out.grad.sum(axis=(0, 1), keepdims=True)

    out._backward = bw
    return out


def upsample_bilinear_x2(x: Node) -> Node:
    """Corner-aligned bilinear doubling of both spatial axes."""
    h, w, _ = x.value.shape
    rowm = bilinear_matrix(h, 2 * h)
    colm = bilinear_matrix(w, 2 * w)
    val = np.tensordot(rowm, x.value, axes=(1, 0))
    val = np.moveaxis(np.tensordot(colm, val, axes=(1, 1)), 0, 1)
    out = Node(val.astype(x.value.dtype, copy=False), (x,), x.requires_grad)

    def bw():
        if x.requires_grad:
            g = np.tensordot(rowm.T, out.grad, axes=(1, 0))
            g = np.moveaxis(np.tensordot(colm.T, g, axes=(1, 1)), 0, 1)
            x.grad += g.astype(x.value.dtype, copy=False)

    out._backward = bw
    return out


# ---------------------------------------------------------------- backward pass

def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into .grad for every node reachable from root.

    root must be a scalar grid. Calling backward twice on the same root
    without rebuilding the graph is an error.
    """
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.value.shape}")
    if root._backward_done:
        raise RuntimeError("backward already ran for this root; rebuild the graph first")
    root._backward_done = True
    order = _topo_order(root)
    for node in order:
        if node.requires_grad:
            node.grad = np.zeros_like(node.value)
    if not root.requires_grad:
        return
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is not None and node.requires_grad:
            node._backward()


# ---------------------------------------------------------------- finite differences

def finite_difference_grad(fn, arrays: list[np.ndarray], step: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of scalar fn(arrays) w.r.t. every element.

    The independent oracle for every analytic gradient in this module. Arrays
    should be float64; fn must be pure. Entries are perturbed in place and
    restored, so fn must not hold references across calls.
    """
    grads = []
    for base in arrays:
        g = np.zeros(base.size, dtype=np.float64)
        flat = base.reshape(-1)
        for k in range(base.size):
            orig = flat[k]
            flat[k] = orig + step
            hi = fn(arrays)
            flat[k] = orig - step
            lo = fn(arrays)
            flat[k] = orig
            g[k] = (hi - lo) / (2.0 * step)
        grads.append(g.reshape(base.shape))
    return grads


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor), the gradient-check statistic."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
