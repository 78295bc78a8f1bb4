"""Thin call-style wrappers over ``apply``."""
from __future__ import annotations

from .tensor import Tensor, apply


def linear(x, w, b=None) -> Tensor:
    y = apply("matmul", [x, w])
    return apply("bias_add", [y, b]) if b is not None else y


def conv2d(x, w, b=None, stride=1, padding=0) -> Tensor:
    y = apply("conv2d", [x, w], stride=stride, padding=padding)
    return apply("bias_add", [y, b]) if b is not None else y


def relu(x) -> Tensor:
    return apply("relu", [x])


def leaky_relu(x, alpha=0.2) -> Tensor:
    return apply("leaky_relu", [x], alpha=alpha)


def tanh(x) -> Tensor:
    return apply("tanh", [x])


def sigmoid(x) -> Tensor:
    return apply("sigmoid", [x])


def softmax(x, axis=-1) -> Tensor:
    return apply("softmax", [x], axis=axis)


def log_softmax(x, axis=-1) -> Tensor:
    return apply("log_softmax", [x], axis=axis)


def log_sigmoid(x) -> Tensor:
    return apply("log_sigmoid", [x])


def l2_norm(x, axis=None) -> Tensor:
    return apply("l2_norm", [x], axis=axis)


def concat(xs, axis=-1) -> Tensor:
    return apply("concat", list(xs), axis=axis)


def embedding(table, ids) -> Tensor:
    return apply("embedding_lookup", [table], ids=ids)


def sum_pool_spatial(x) -> Tensor:
    return apply("sum_pool_spatial", [x])


def broadcast_spatial(v, height: int, width: int) -> Tensor:
    """Replicate a (N, C) vector over an (N, H, W, C) grid."""
    n, c = v.shape
    v = apply("reshape", [v], shape=(n, 1, 1, c))
    return apply("broadcast_to", [v], shape=(n, height, width, c))
