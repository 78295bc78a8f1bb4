"""Tensor values and the reverse-mode graph machinery.

Every op records its output as a graph node (the output ``Tensor`` itself).
Node ids increase monotonically, so sorting reachable nodes by id in
descending order is a valid reverse topological order.
"""
from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Dict, Iterable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class UnsupportedOp(KeyError):
    pass


class GraphConsumed(RuntimeError):
    pass


class SecondOrderUnsupported(RuntimeError):
    pass


class NonFiniteValue(FloatingPointError):
    pass


_ids = itertools.count(1)
_local = threading.local()

_DTYPES = {"float32": np.float32, "float64": np.float64}


def _state():
    if not hasattr(_local, "dtype"):
        _local.dtype = np.float32
        _local.record = True
    return _local


def default_dtype():
    return _state().dtype


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the float dtype used for new tensors ("float32"/"float64")."""
    st = _state()
    old = st.dtype
    st.dtype = _DTYPES[name]
    try:
        yield
    finally:
        st.dtype = old


@contextlib.contextmanager
def no_grad():
    """Run ops without recording graph nodes."""
    st = _state()
    old = st.record
    st.record = False
    try:
        yield
    finally:
        st.record = old


def is_recording() -> bool:
    return _state().record


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_op", "_inputs",
                 "_attrs", "_ctx", "_id", "_consumed", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data)
        if arr.dtype.kind == "f" or arr.dtype.kind in "iub" and requires_grad:
            arr = arr.astype(default_dtype(), copy=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._op = None
        self._inputs: tuple = ()
        self._attrs: dict = {}
        self._ctx: dict = {}
        self._id = next(_ids)
        self._consumed = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def node_id(self):
        return self._id if (self._op is not None or self.requires_grad) else None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        op = self._op.name if self._op is not None else "leaf"
        return f"Tensor(shape={self.shape}, op={op}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return apply("add", [self, other])

    def __radd__(self, other):
        return apply("add", [other, self])

    def __sub__(self, other):
        return apply("sub", [self, other])

    def __rsub__(self, other):
        return apply("sub", [other, self])

    def __mul__(self, other):
        if np.isscalar(other):
            return apply("scale", [self], c=float(other))
        return apply("mul", [self, other])

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return apply("scale", [self], c=-1.0)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return apply("scale", [self], c=1.0 / float(other))

    def __matmul__(self, other):
        return apply("matmul", [self, other])

    def sum(self, axis=None, keepdims=False):
        return apply("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return apply("mean", [self], axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply("reshape", [self], shape=tuple(shape))

    @property
    def T(self):
        return apply("transpose", [self])

    def _free(self):
        self._inputs = ()
        self._ctx = {}
        self._consumed = True


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=default_dtype()))


# -- op registry -----------------------------------------------------------

class Op:
    """One differentiable primitive.

    ``forward`` works on raw arrays. ``vjp`` is the first-order pullback on
    arrays. ``vjp_graph`` is the same pullback expressed with recorded ops,
    which is what makes a gradient differentiable again; ops that do not
    override it cannot appear on a second-order path.
    """

    name = ""

    def forward(self, ctx, *xs, **attrs):
        raise NotImplementedError

    def vjp(self, node: Tensor, g: np.ndarray, i: int) -> np.ndarray:
        raise NotImplementedError

    def vjp_graph(self, node: Tensor, g: Tensor, i: int) -> Tensor:
        raise SecondOrderUnsupported(f"op '{self.name}' has no second-order rule")


OPS: Dict[str, Op] = {}


def register(cls):
    inst = cls()
    OPS[inst.name] = inst
    return cls


def apply(op_kind: str, inputs: Sequence, **attrs) -> Tensor:
    """Run ``op_kind`` on ``inputs`` and record the result in the graph."""
    op = OPS.get(op_kind)
    if op is None:
        raise UnsupportedOp(op_kind)
    ins = tuple(as_tensor(x) for x in inputs)
    ctx: dict = {}
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = op.forward(ctx, *(t.data for t in ins), **attrs)
    if out.dtype.kind == "f" and not np.isfinite(out).all():
        raise NonFiniteValue(f"non-finite output from '{op_kind}'")
    t = Tensor(out)
    if is_recording() and any(x.requires_grad for x in ins):
        t.requires_grad = True
        t._op = op
        t._inputs = ins
        t._attrs = attrs
        t._ctx = ctx
    return t


# -- traversal ---------------------------------------------------------------

def _reachable(root: Tensor) -> list:
    seen = {}
    stack = [root]
    while stack:
        n = stack.pop()
        if n._id in seen:
            continue
        seen[n._id] = n
        for x in n._inputs:
            if x.requires_grad and x._id not in seen:
                stack.append(x)
    return sorted(seen.values(), key=lambda n: n._id, reverse=True)


def backward(loss: Tensor, wrt: Optional[Iterable[Tensor]] = None,
             retain_graph: bool = False) -> Dict[Tensor, Tensor]:
    """Propagate d(loss) back to every leaf that requires grad.

    Returns a map leaf -> gradient tensor and also stores ``leaf.grad``.
    Leaves listed in ``wrt`` that the loss does not depend on get zeros.
    The graph is freed afterwards unless ``retain_graph`` is set.
    """
    if loss._consumed:
        raise GraphConsumed("backward() on a freed graph")
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    result: Dict[Tensor, Tensor] = {}
    if loss.requires_grad:
        order = _reachable(loss)
        grads = {loss._id: np.ones_like(loss.data)}
        for node in order:
            g = grads.pop(node._id, None)
            if g is None:
                continue
            if node._op is None:
                node.grad = g
                result[node] = Tensor(node.grad)
                continue
            if node._consumed:
                raise GraphConsumed("graph node already freed")
            for i, x in enumerate(node._inputs):
                if not x.requires_grad:
                    continue
                gi = node._op.vjp(node, g, i)
                prev = grads.get(x._id)
                grads[x._id] = gi if prev is None else prev + gi
        if not retain_graph:
            for node in order:
                if node._op is not None:
                    node._free()
            loss._consumed = True
    elif not retain_graph:
        loss._consumed = True
    if wrt is not None:
        for p in wrt:
            if p not in result:
                p.grad = np.zeros_like(p.data)
                result[p] = Tensor(p.grad)
    return result


def grad_graph(out: Tensor, x: Tensor) -> Tensor:
    """d(out)/dx as a recorded tensor, differentiable w.r.t. everything upstream."""
    if out.size != 1:
        raise ShapeError("grad_graph needs a scalar output")
    if not out.requires_grad:
        return Tensor(np.zeros_like(x.data))
    order = _reachable(out)
    on_path = {x._id}
    for node in reversed(order):
        if any(inp._id in on_path for inp in node._inputs):
            on_path.add(node._id)
    if out._id not in on_path:
        return Tensor(np.zeros_like(x.data))
    grads: Dict[int, Tensor] = {out._id: Tensor(np.ones_like(out.data))}
    for node in order:
        if node._id not in on_path or node is x:
            continue
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node._consumed:
            raise GraphConsumed("graph node already freed")
        for i, inp in enumerate(node._inputs):
            if inp._id not in on_path:
                continue
            gi = node._op.vjp_graph(node, g, i)
            prev = grads.get(inp._id)
            grads[inp._id] = gi if prev is None else apply("add", [prev, gi])
    return grads.get(x._id, Tensor(np.zeros_like(x.data)))


def input_gradient(scalar_fn: Callable[[Tensor], Tensor], x) -> Tensor:
    """Gradient of ``scalar_fn`` at ``x``, returned as a differentiable tensor.

    Used for the gradient penalty: the result can feed further ops and a
    later ``backward`` reaches the parameters inside ``scalar_fn``.
    """
    xt = Tensor(x.data if isinstance(x, Tensor) else x, requires_grad=True)
    return grad_graph(scalar_fn(xt), xt)


def stop_gradient(t: Tensor) -> Tensor:
    return Tensor(t.data)
