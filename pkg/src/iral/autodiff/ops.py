"""Primitive ops: forward rules, first-order pullbacks, and (for the subset on
the gradient-penalty path) pullbacks written in terms of other recorded ops.

Image tensors are NHWC; conv weights are (k, k, C_in, C_out).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Op, SecondOrderUnsupported, ShapeError, Tensor, apply, register


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _unbroadcast_t(g: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = apply("sum", [g], axis=tuple(range(extra)), keepdims=False)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = apply("sum", [g], axis=axes, keepdims=True)
    return apply("reshape", [g], shape=shape)


def _check_broadcast(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


@register
class Add(Op):
    name = "add"

    def forward(self, ctx, a, b):
        _check_broadcast(a, b)
        return a + b

    def vjp(self, node, g, i):
        return _unbroadcast(g, node._inputs[i].shape)

    def vjp_graph(self, node, g, i):
        return _unbroadcast_t(g, node._inputs[i].shape)


@register
class Sub(Op):
    name = "sub"

    def forward(self, ctx, a, b):
        _check_broadcast(a, b)
        return a - b

    def vjp(self, node, g, i):
        g = g if i == 0 else -g
        return _unbroadcast(g, node._inputs[i].shape)

    def vjp_graph(self, node, g, i):
        if i == 1:
            g = apply("scale", [g], c=-1.0)
        return _unbroadcast_t(g, node._inputs[i].shape)


@register
class Mul(Op):
    name = "mul"

    def forward(self, ctx, a, b):
        _check_broadcast(a, b)
        return a * b

    def vjp(self, node, g, i):
        other = node._inputs[1 - i].data
        return _unbroadcast(g * other, node._inputs[i].shape)

    def vjp_graph(self, node, g, i):
        return _unbroadcast_t(apply("mul", [g, node._inputs[1 - i]]), node._inputs[i].shape)


@register
class Scale(Op):
    name = "scale"

    def forward(self, ctx, x, c=1.0):
        return x * np.asarray(c, dtype=x.dtype)

    def vjp(self, node, g, i):
        return g * np.asarray(node._attrs["c"], dtype=g.dtype)

    def vjp_graph(self, node, g, i):
        return apply("scale", [g], c=node._attrs["c"])


@register
class MatMul(Op):
    """``a`` (..., k) times ``b`` (k, n)."""

    name = "matmul"

    def forward(self, ctx, a, b):
        if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
        return a @ b

    def vjp(self, node, g, i):
        a, b = node._inputs[0].data, node._inputs[1].data
        if i == 0:
            return g @ b.T
        k, n = b.shape
        return a.reshape(-1, k).T @ g.reshape(-1, n)

    def vjp_graph(self, node, g, i):
        a, b = node._inputs
        if i == 0:
            return apply("matmul", [g, apply("transpose", [b])])
        k, n = b.shape
        a2 = apply("transpose", [apply("reshape", [a], shape=(-1, k))])
        return apply("matmul", [a2, apply("reshape", [g], shape=(-1, n))])


@register
class Transpose(Op):
    name = "transpose"

    def forward(self, ctx, x):
        if x.ndim != 2:
            raise ShapeError("transpose expects a matrix")
        return x.T

    def vjp(self, node, g, i):
        return g.T

    def vjp_graph(self, node, g, i):
        return apply("transpose", [g])


@register
class Reshape(Op):
    name = "reshape"

    def forward(self, ctx, x, shape=()):
        try:
            return x.reshape(shape)
        except ValueError as exc:
            raise ShapeError(str(exc)) from exc

    def vjp(self, node, g, i):
        return g.reshape(node._inputs[0].shape)

    def vjp_graph(self, node, g, i):
        return apply("reshape", [g], shape=node._inputs[0].shape)


# -- convolution ------------------------------------------------------------

def _im2col(x, k, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    # (N, Ho, Wo, C, k, k) -> (N, Ho, Wo, k, k, C)
    return win.transpose(0, 1, 2, 4, 5, 3)


def _col2im(dcols, in_shape, k, stride, padding):
    n, h, w, c = in_shape
    ho, wo = dcols.shape[1], dcols.shape[2]
    dx = np.zeros((n, h + 2 * padding, w + 2 * padding, c), dtype=dcols.dtype)
    for di in range(k):
        for dj in range(k):
            dx[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride, :] += dcols[:, :, :, di, dj, :]
    if padding:
        dx = dx[:, padding:-padding, padding:-padding, :]
    return dx


def _conv_out(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


@register
class Conv2d(Op):
    name = "conv2d"

    def forward(self, ctx, x, w, stride=1, padding=0):
        if x.ndim != 4 or w.ndim != 4 or w.shape[0] != w.shape[1] or x.shape[3] != w.shape[2]:
            raise ShapeError(f"conv2d shapes x={x.shape} w={w.shape}")
        k = w.shape[0]
        if _conv_out(x.shape[1], k, stride, padding) < 1 or _conv_out(x.shape[2], k, stride, padding) < 1:
            raise ShapeError("conv2d kernel larger than padded input")
        cols = _im2col(x, k, stride, padding)
        n, ho, wo = cols.shape[:3]
        cols = cols.reshape(n * ho * wo, -1)
        ctx["cols"] = cols
        return (cols @ w.reshape(-1, w.shape[3])).reshape(n, ho, wo, w.shape[3])

    def vjp(self, node, g, i):
        x, w = node._inputs[0].data, node._inputs[1].data
        k, cout = w.shape[0], w.shape[3]
        a = node._attrs
        g2 = g.reshape(-1, cout)
        if i == 1:
            return (node._ctx["cols"].T @ g2).reshape(w.shape)
        dcols = (g2 @ w.reshape(-1, cout).T).reshape(g.shape[:3] + (k, k, w.shape[2]))
        return _col2im(dcols, x.shape, k, a.get("stride", 1), a.get("padding", 0))

    def vjp_graph(self, node, g, i):
        if i == 1:
            raise SecondOrderUnsupported("conv2d weight pullback is not on an input-gradient path")
        a = node._attrs
        return apply("conv2d_input_grad", [g, node._inputs[1]], in_shape=node._inputs[0].shape,
                     stride=a.get("stride", 1), padding=a.get("padding", 0))


@register
class Conv2dInputGrad(Op):
    """Pullback of conv2d w.r.t. its input (a transposed convolution)."""

    name = "conv2d_input_grad"

    def forward(self, ctx, g, w, in_shape=(), stride=1, padding=0):
        k, cout = w.shape[0], w.shape[3]
        dcols = (g.reshape(-1, cout) @ w.reshape(-1, cout).T).reshape(g.shape[:3] + (k, k, w.shape[2]))
        return _col2im(dcols, in_shape, k, stride, padding)

    def vjp(self, node, h, i):
        g, w = node._inputs[0].data, node._inputs[1].data
        a = node._attrs
        k, cout = w.shape[0], w.shape[3]
        cols = _im2col(h, k, a["stride"], a["padding"]).reshape(-1, k * k * w.shape[2])
        if i == 0:
            return (cols @ w.reshape(-1, cout)).reshape(g.shape)
        return (cols.T @ g.reshape(-1, cout)).reshape(w.shape)


# -- elementwise nonlinearities ---------------------------------------------

@register
class Relu(Op):
    name = "relu"

    def forward(self, ctx, x):
        return np.maximum(x, 0)

    def vjp(self, node, g, i):
        return g * (node._inputs[0].data > 0)

    def vjp_graph(self, node, g, i):
        mask = (node._inputs[0].data > 0).astype(g.data.dtype)
        return apply("mul", [g, Tensor(mask)])


@register
class LeakyRelu(Op):
    name = "leaky_relu"

    def forward(self, ctx, x, alpha=0.2):
        return np.where(x > 0, x, x * np.asarray(alpha, dtype=x.dtype))

    def _slope(self, node, dtype):
        x = node._inputs[0].data
        return np.where(x > 0, 1.0, node._attrs.get("alpha", 0.2)).astype(dtype)

    def vjp(self, node, g, i):
        return g * self._slope(node, g.dtype)

    def vjp_graph(self, node, g, i):
        return apply("mul", [g, Tensor(self._slope(node, g.data.dtype))])


@register
class Tanh(Op):
    name = "tanh"

    def forward(self, ctx, x):
        return np.tanh(x)

    def vjp(self, node, g, i):
        y = node.data
        return g * (1 - y * y)

    def vjp_graph(self, node, g, i):
        # g * (1 - y^2), y being this node
        return apply("sub", [g, apply("mul", [g, apply("mul", [node, node])])])


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e))


@register
class Sigmoid(Op):
    name = "sigmoid"

    def forward(self, ctx, x):
        return _sigmoid(x).astype(x.dtype, copy=False)

    def vjp(self, node, g, i):
        y = node.data
        return g * y * (1 - y)

    def vjp_graph(self, node, g, i):
        gy = apply("mul", [g, node])
        return apply("sub", [gy, apply("mul", [gy, node])])


@register
class LogSigmoid(Op):
    name = "log_sigmoid"

    def forward(self, ctx, x):
        return np.minimum(x, 0) - np.log1p(np.exp(-np.abs(x)))

    def vjp(self, node, g, i):
        return g * _sigmoid(-node._inputs[0].data).astype(g.dtype, copy=False)


@register
class SafeReciprocal(Op):
    """1/x where x > 0, else 0."""

    name = "safe_reciprocal"

    def forward(self, ctx, x):
        pos = x > 0
        return np.where(pos, 1 / np.where(pos, x, 1), 0).astype(x.dtype, copy=False)

    def vjp(self, node, g, i):
        r = node.data
        return -g * r * r

    def vjp_graph(self, node, g, i):
        return apply("scale", [apply("mul", [g, apply("mul", [node, node])])], c=-1.0)


@register
class Softmax(Op):
    name = "softmax"

    def forward(self, ctx, x, axis=-1):
        z = x - x.max(axis=axis, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=axis, keepdims=True)

    def vjp(self, node, g, i):
        y = node.data
        ax = node._attrs.get("axis", -1)
        return y * (g - (g * y).sum(axis=ax, keepdims=True))


@register
class LogSoftmax(Op):
    name = "log_softmax"

    def forward(self, ctx, x, axis=-1):
        z = x - x.max(axis=axis, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def vjp(self, node, g, i):
        ax = node._attrs.get("axis", -1)
        p = np.exp(node.data)
        return g - p * g.sum(axis=ax, keepdims=True)


# -- reductions and shape plumbing ------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand(g, in_shape, axis, keepdims):
    if not keepdims:
        for a in sorted(_norm_axis(axis, len(in_shape))):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, in_shape)


def _expand_t(g: Tensor, in_shape, axis, keepdims) -> Tensor:
    if not keepdims:
        kshape = list(in_shape)
        for a in _norm_axis(axis, len(in_shape)):
            kshape[a] = 1
        g = apply("reshape", [g], shape=tuple(kshape))
    return apply("broadcast_to", [g], shape=tuple(in_shape))


@register
class Sum(Op):
    name = "sum"

    def forward(self, ctx, x, axis=None, keepdims=False):
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def vjp(self, node, g, i):
        a = node._attrs
        return _expand(g, node._inputs[0].shape, a.get("axis"), a.get("keepdims", False))

    def vjp_graph(self, node, g, i):
        a = node._attrs
        return _expand_t(g, node._inputs[0].shape, a.get("axis"), a.get("keepdims", False))


@register
class Mean(Op):
    name = "mean"

    def forward(self, ctx, x, axis=None, keepdims=False):
        return np.asarray(x.mean(axis=axis, keepdims=keepdims))

    def _count(self, node):
        shape = node._inputs[0].shape
        return int(np.prod([shape[a] for a in _norm_axis(node._attrs.get("axis"), len(shape))]))

    def vjp(self, node, g, i):
        a = node._attrs
        return _expand(g, node._inputs[0].shape, a.get("axis"), a.get("keepdims", False)) / self._count(node)

    def vjp_graph(self, node, g, i):
        a = node._attrs
        e = _expand_t(g, node._inputs[0].shape, a.get("axis"), a.get("keepdims", False))
        return apply("scale", [e], c=1.0 / self._count(node))


@register
class BroadcastTo(Op):
    name = "broadcast_to"

    def forward(self, ctx, x, shape=()):
        try:
            return np.broadcast_to(x, shape).copy()
        except ValueError as exc:
            raise ShapeError(str(exc)) from exc

    def vjp(self, node, g, i):
        return _unbroadcast(g, node._inputs[0].shape)

    def vjp_graph(self, node, g, i):
        return _unbroadcast_t(g, node._inputs[0].shape)


@register
class SumPoolSpatial(Op):
    """Sum over the two spatial axes of (..., H, W, C)."""

    name = "sum_pool_spatial"

    def forward(self, ctx, x):
        if x.ndim < 3:
            raise ShapeError("sum_pool_spatial expects (..., H, W, C)")
        return x.sum(axis=(-3, -2))

    def vjp(self, node, g, i):
        return np.broadcast_to(g[..., None, None, :], node._inputs[0].shape)

    def vjp_graph(self, node, g, i):
        shape = node._inputs[0].shape
        g = apply("reshape", [g], shape=g.shape[:-1] + (1, 1, g.shape[-1]))
        return apply("broadcast_to", [g], shape=shape)


@register
class Concat(Op):
    name = "concat"

    def forward(self, ctx, *xs, axis=-1):
        try:
            return np.concatenate(xs, axis=axis)
        except ValueError as exc:
            raise ShapeError(str(exc)) from exc

    def _bounds(self, node, i):
        ax = node._attrs.get("axis", -1) % node.ndim
        start = sum(x.shape[ax] for x in node._inputs[:i])
        return ax, start, start + node._inputs[i].shape[ax]

    def vjp(self, node, g, i):
        ax, s, e = self._bounds(node, i)
        idx = [slice(None)] * g.ndim
        idx[ax] = slice(s, e)
        return g[tuple(idx)]

    def vjp_graph(self, node, g, i):
        ax, s, e = self._bounds(node, i)
        return apply("slice", [g], axis=ax, start=s, stop=e)


@register
class Slice(Op):
    name = "slice"

    def forward(self, ctx, x, axis=-1, start=0, stop=None):
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(start, stop)
        return x[tuple(idx)]

    def vjp(self, node, g, i):
        a = node._attrs
        out = np.zeros(node._inputs[0].shape, dtype=g.dtype)
        idx = [slice(None)] * g.ndim
        idx[a.get("axis", -1)] = slice(a.get("start", 0), a.get("stop"))
        out[tuple(idx)] = g
        return out

    def vjp_graph(self, node, g, i):
        a = node._attrs
        shape = node._inputs[0].shape
        ax = a.get("axis", -1) % len(shape)
        start = a.get("start", 0)
        stop = shape[ax] if a.get("stop") is None else a["stop"]
        parts = []
        for lo, hi in ((0, start), (stop, shape[ax])):
            if hi > lo:
                zshape = list(shape)
                zshape[ax] = hi - lo
                parts.append((lo, Tensor(np.zeros(zshape, dtype=g.data.dtype))))
        parts.append((start, g))
        parts.sort(key=lambda p: p[0])
        return apply("concat", [p[1] for p in parts], axis=ax)


@register
class EmbeddingLookup(Op):
    name = "embedding_lookup"

    def forward(self, ctx, table, ids=None):
        ids = np.asarray(ids)
        if table.ndim != 2 or ids.dtype.kind not in "iu":
            raise ShapeError("embedding_lookup needs a (V, D) table and integer ids")
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise ShapeError("embedding id out of range")
        return table[ids]

    def vjp(self, node, g, i):
        out = np.zeros(node._inputs[0].shape, dtype=g.dtype)
        np.add.at(out, np.asarray(node._attrs["ids"]), g)
        return out


@register
class BiasAdd(Op):
    name = "bias_add"

    def forward(self, ctx, x, b):
        if b.ndim != 1 or x.shape[-1] != b.shape[0]:
            raise ShapeError(f"bias_add shapes {x.shape} + {b.shape}")
        return x + b

    def vjp(self, node, g, i):
        return g if i == 0 else g.reshape(-1, g.shape[-1]).sum(axis=0)

    def vjp_graph(self, node, g, i):
        if i == 0:
            return g
        return apply("sum", [apply("reshape", [g], shape=(-1, g.shape[-1]))], axis=0)


@register
class L2Norm(Op):
    """Euclidean norm over ``axis`` (all axes by default)."""

    name = "l2_norm"

    def forward(self, ctx, x, axis=None):
        return np.asarray(np.sqrt((x * x).sum(axis=axis)))

    def vjp(self, node, g, i):
        x = node._inputs[0].data
        y = node.data
        ax = node._attrs.get("axis")
        r = np.where(y > 0, 1 / np.where(y > 0, y, 1), 0)
        return x * _expand(g * r, x.shape, ax, False)

    def vjp_graph(self, node, g, i):
        x = node._inputs[0]
        gr = apply("mul", [g, apply("safe_reciprocal", [node])])
        return apply("mul", [x, _expand_t(gr, x.shape, node._attrs.get("axis"), False)])
