"""A small NumPy reverse-mode autodiff engine with a second-order path for
gradient penalties."""
from . import ops  # noqa: F401  (registers the primitives)
from .optim import AdamState, NonFiniteGradient, adam_step
from .tensor import (
    OPS,
    GraphConsumed,
    NonFiniteValue,
    SecondOrderUnsupported,
    ShapeError,
    Tensor,
    UnsupportedOp,
    apply,
    as_tensor,
    backward,
    default_dtype,
    grad_graph,
    input_gradient,
    no_grad,
    precision,
    stop_gradient,
)
from .functional import (
    broadcast_spatial,
    concat,
    conv2d,
    embedding,
    leaky_relu,
    linear,
    log_sigmoid,
    log_softmax,
    l2_norm,
    relu,
    sigmoid,
    softmax,
    sum_pool_spatial,
    tanh,
)

__all__ = [
    "OPS", "AdamState", "GraphConsumed", "NonFiniteGradient", "NonFiniteValue",
    "SecondOrderUnsupported", "ShapeError", "Tensor", "UnsupportedOp", "adam_step",
    "apply", "as_tensor", "backward", "default_dtype", "grad_graph", "input_gradient",
    "no_grad", "precision", "stop_gradient", "broadcast_spatial", "concat", "conv2d",
    "embedding", "leaky_relu", "linear", "log_sigmoid", "log_softmax", "l2_norm", "relu",
    "sigmoid", "softmax", "sum_pool_spatial", "tanh",
]
