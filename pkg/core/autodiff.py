#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Every network and loss in the project is written against the operations in this
module. A :class:`Tape` is opened for each forward pass (define-by-run); while it
is the active tape of the current thread, every operation that touches a tensor
with ``requires_grad`` is recorded on it together with its backward rule.
Outside an active tape (or inside :func:`no_grad`) operations only compute
values, which is how frozen networks and momentum key branches are evaluated.

Operands must have equal shapes; 0-d tensors and Python numbers act as scalars.
The row-wise helpers (:func:`add_row`, :func:`mul_row`) are the only places a
vector is combined with a matrix.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from core.errors import ContractError, DimensionError, DomainError, NumericError

Number = Union[int, float]
BackwardRule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

LAYERNORM_EPS = 1e-5

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def current_tape() -> Optional["Tape"]:
    """Return the tape recording on this thread, or None when gradients are off."""
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate operations without recording them on any tape."""
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


@dataclass(frozen=True)
class TapeRecord:
    """One recorded operation: input node ids, output node id and the backward rule."""
    op: str
    input_ids: Tuple[int, ...]
    output_id: int
    backward_rule: BackwardRule


class Tape:
    """Ordered record of the operations of one forward pass."""

    def __init__(self) -> None:
        self._records: List[TapeRecord] = []
        self._nodes: List["DiffTensor"] = []
        self._index: dict = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    @property
    def records(self) -> Tuple[TapeRecord, ...]:
        return tuple(self._records)

    def node_id(self, tensor: "DiffTensor") -> int:
        """Return the node id of ``tensor`` on this tape, registering leaves on first use."""
        key = id(tensor)
        if key not in self._index:
            self._index[key] = len(self._nodes)
            self._nodes.append(tensor)
        return self._index[key]

    def contains(self, tensor: "DiffTensor") -> bool:
        return id(tensor) in self._index

    def leaves(self) -> List["DiffTensor"]:
        """Tensors with ``requires_grad`` that entered the tape without being produced on it."""
        produced = {record.output_id for record in self._records}
        return [node for i, node in enumerate(self._nodes) if i not in produced and node.requires_grad]

    def record(self, op: str, inputs: Sequence["DiffTensor"], output: "DiffTensor", rule: BackwardRule) -> int:
        input_ids = tuple(self.node_id(t) for t in inputs)
        output_id = self.node_id(output)
        self._records.append(TapeRecord(op, input_ids, output_id, rule))
        output.node_id = output_id
        output._tape = self
        return output_id

    def backward(self, root: "DiffTensor") -> None:
        """Propagate d(root)/d(node) to every node, accumulating into leaf gradients."""
        if root.values.size != 1:
            raise ContractError(f"backward() needs a scalar root, got shape {root.shape}")
        if root._tape is not self:
            raise ContractError("backward() root was not produced on this tape")

        produced = {record.output_id for record in self._records}
        for node_id in produced:
            self._nodes[node_id].grad = None
        root.grad = np.ones_like(root.values)

        for record in reversed(self._records):
            output = self._nodes[record.output_id]
            if output.grad is None:
                continue
            grads = record.backward_rule(output.grad)
            for input_id, grad in zip(record.input_ids, grads):
                node = self._nodes[input_id]
                if grad is None or not node.requires_grad:
                    continue
                node._accumulate(grad)


class DiffTensor:
    """n-dimensional float64 buffer participating in the active tape."""

    __array_ufunc__ = None

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None) -> None:
        self.values = np.array(values, dtype=np.float64, order="C")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id: Optional[int] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"DiffTensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        grad = np.asarray(grad, dtype=np.float64).reshape(self.values.shape)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self._tape is None:
            raise ContractError("backward() called on a tensor that was not recorded on a tape")
        self._tape.backward(self)

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.values.copy())

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, key): return take(self, key)

    @property
    def T(self) -> "DiffTensor":
        return transpose(self)


def parameter(values, name: Optional[str] = None) -> DiffTensor:
    return DiffTensor(values, requires_grad=True, name=name)


def _as_tensor(value) -> DiffTensor:
    return value if isinstance(value, DiffTensor) else DiffTensor(value)


def _result(op: str, values: np.ndarray, inputs: Sequence[DiffTensor], rule: BackwardRule) -> DiffTensor:
    out = DiffTensor(values)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, rule)
    return out


def _check_same_shape(op: str, a: DiffTensor, b: DiffTensor) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise DimensionError(f"{op}: operand shapes {a.shape} and {b.shape} differ")


def _fit(grad: np.ndarray, target: DiffTensor) -> np.ndarray:
    """Reduce a gradient to the operand shape (sums over scalar broadcasts)."""
    if target.ndim == 0 and grad.ndim != 0:
        return np.asarray(grad.sum())
    return grad


# --------------------------------------------------------------------------- elementwise

def add(a, b) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("add", a, b)
    return _result("add", a.values + b.values, (a, b), lambda g: (_fit(g, a), _fit(g, b)))


def sub(a, b) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("sub", a, b)
    return _result("sub", a.values - b.values, (a, b), lambda g: (_fit(g, a), _fit(-g, b)))


def mul(a, b) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("mul", a, b)
    return _result(
        "mul", a.values * b.values, (a, b),
        lambda g: (_fit(g * b.values, a), _fit(g * a.values, b)),
    )


def div(a, b) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("div", a, b)
    if np.any(b.values == 0.0):
        raise DomainError("div: division by zero")
    return _result(
        "div", a.values / b.values, (a, b),
        lambda g: (_fit(g / b.values, a), _fit(-g * a.values / (b.values ** 2), b)),
    )


def exp(x) -> DiffTensor:
    x = _as_tensor(x)
    out = np.exp(x.values)
    return _result("exp", out, (x,), lambda g: (g * out,))


def log(x) -> DiffTensor:
    x = _as_tensor(x)
    if np.any(x.values <= 0.0):
        raise DomainError("log: non-positive argument")
    return _result("log", np.log(x.values), (x,), lambda g: (g / x.values,))


def relu(x) -> DiffTensor:
    x = _as_tensor(x)
    active = x.values > 0.0
    return _result("relu", np.where(active, x.values, 0.0), (x,), lambda g: (g * active,))


def tanh(x) -> DiffTensor:
    x = _as_tensor(x)
    out = np.tanh(x.values)
    return _result("tanh", out, (x,), lambda g: (g * (1.0 - out ** 2),))


def clip(x, low: float, high: float) -> DiffTensor:
    x = _as_tensor(x)
    inside = (x.values >= low) & (x.values <= high)
    return _result("clip", np.clip(x.values, low, high), (x,), lambda g: (g * inside,))


def minimum(a, b) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("minimum", a, b)
    pick_a = a.values <= b.values
    return _result(
        "minimum", np.minimum(a.values, b.values), (a, b),
        lambda g: (_fit(g * pick_a, a), _fit(g * ~pick_a, b)),
    )


def elementwise(op: str, *operands) -> DiffTensor:
    """Dispatch one of relu, tanh, add, mul, sub, div, exp, log by name."""
    table = {"relu": relu, "tanh": tanh, "add": add, "mul": mul, "sub": sub, "div": div, "exp": exp, "log": log}
    if op not in table:
        raise ContractError(f"unknown elementwise op: {op}")
    return table[op](*operands)


# --------------------------------------------------------------------------- structure

def matmul(a, b) -> DiffTensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    return _result(
        "matmul", a.values @ b.values, (a, b),
        lambda g: (g @ b.values.T, a.values.T @ g),
    )


def transpose(x) -> DiffTensor:
    x = _as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {x.shape}")
    return _result("transpose", x.values.T.copy(), (x,), lambda g: (g.T,))


def reshape(x, shape: Sequence[int]) -> DiffTensor:
    x = _as_tensor(x)
    try:
        out = x.values.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"reshape: cannot view shape {x.shape} as {tuple(shape)}") from e
    return _result("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def take(x, key) -> DiffTensor:
    """Basic or advanced indexing; gradients scatter-add back to the indexed entries."""
    x = _as_tensor(x)
    out = np.array(x.values[key], dtype=np.float64)

    def rule(g):
        grad = np.zeros_like(x.values)
        np.add.at(grad, key, g)
        return (grad,)

    return _result("take", out, (x,), rule)


def concat(tensors: Sequence, axis: int = 0) -> DiffTensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from e
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result("concat", out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> DiffTensor:
    tensors = [_as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.values for t in tensors], axis=axis)
    return _result(
        "stack", out, tensors,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))),
    )


def sum(x, axis: Optional[int] = None) -> DiffTensor:  # noqa: A001 - mirrors numpy naming
    x = _as_tensor(x)
    out = np.sum(x.values, axis=axis)

    def rule(g):
        if axis is None:
            return (np.full(x.shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _result("sum", out, (x,), rule)


def mean(x, axis: Optional[int] = None) -> DiffTensor:
    x = _as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / count)


def add_row(x, row) -> DiffTensor:
    """Add a vector of width n to every n-wide row of ``x``."""
    x, row = _as_tensor(x), _as_tensor(row)
    if row.ndim != 1 or x.shape[-1] != row.shape[0]:
        raise DimensionError(f"add_row: row shape {row.shape} does not match {x.shape}")
    width = row.shape[0]
    return _result(
        "add_row", x.values + row.values, (x, row),
        lambda g: (g, g.reshape(-1, width).sum(axis=0)),
    )


def mul_row(x, row) -> DiffTensor:
    """Scale every n-wide row of ``x`` elementwise by a vector of width n."""
    x, row = _as_tensor(x), _as_tensor(row)
    if row.ndim != 1 or x.shape[-1] != row.shape[0]:
        raise DimensionError(f"mul_row: row shape {row.shape} does not match {x.shape}")
    width = row.shape[0]
    return _result(
        "mul_row", x.values * row.values, (x, row),
        lambda g: (g * row.values, (g * x.values).reshape(-1, width).sum(axis=0)),
    )


# --------------------------------------------------------------------------- normalisations

def softmax(x, axis: int = -1) -> DiffTensor:
    x = _as_tensor(x)
    if np.any(np.isnan(x.values)):
        raise NumericError("softmax: NaN input")
    shifted = x.values - np.max(x.values, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)
    return _result(
        "softmax", out, (x,),
        lambda g: (out * (g - np.sum(g * out, axis=axis, keepdims=True)),),
    )


def log_softmax(x, axis: int = -1) -> DiffTensor:
    """Log-sum-exp stabilised log of :func:`softmax`."""
    x = _as_tensor(x)
    if np.any(np.isnan(x.values)):
        raise NumericError("log_softmax: NaN input")
    shifted = x.values - np.max(x.values, axis=axis, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - log_norm
    probs = np.exp(out)
    return _result(
        "log_softmax", out, (x,),
        lambda g: (g - probs * np.sum(g, axis=axis, keepdims=True),),
    )


def layernorm(x, gain=None, bias=None, eps: float = LAYERNORM_EPS) -> DiffTensor:
    """Normalise the last axis to zero mean and unit variance, then apply ``gain``/``bias``."""
    x = _as_tensor(x)
    width = x.shape[-1] if x.ndim else 0
    if width < 2:
        raise DimensionError(f"layernorm: last axis must have at least 2 entries, got shape {x.shape}")
    gain = _as_tensor(np.ones(width)) if gain is None else _as_tensor(gain)
    bias = _as_tensor(np.zeros(width)) if bias is None else _as_tensor(bias)
    if gain.shape != (width,) or bias.shape != (width,):
        raise DimensionError(f"layernorm: gain {gain.shape} / bias {bias.shape} do not match width {width}")

    mu = x.values.mean(axis=-1, keepdims=True)
    centered = x.values - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std
    out = x_hat * gain.values + bias.values

    def rule(g):
        d_hat = g * gain.values
        dx = inv_std * (
            d_hat
            - d_hat.mean(axis=-1, keepdims=True)
            - x_hat * (d_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * x_hat).reshape(-1, width).sum(axis=0), g.reshape(-1, width).sum(axis=0)

    return _result("layernorm", out, (x, gain, bias), rule)


def normalize_rows(x, axis: int = -1) -> DiffTensor:
    """Scale vectors along ``axis`` to unit Euclidean norm."""
    x = _as_tensor(x)
    norms = np.sqrt(np.sum(x.values ** 2, axis=axis, keepdims=True))
    if np.any(norms == 0.0):
        raise NumericError("normalize_rows: zero-norm vector, cosine similarity undefined")
    out = x.values / norms
    return _result(
        "normalize_rows", out, (x,),
        lambda g: ((g - out * np.sum(g * out, axis=axis, keepdims=True)) / norms,),
    )


# --------------------------------------------------------------------------- convolution

def conv2d(x, w, stride: int = 1, bias=None) -> DiffTensor:
    """Valid (unpadded) cross-correlation of ``x`` (C×H×W or N×C×H×W) with ``w`` (O×C×kh×kw)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if stride < 1:
        raise ContractError(f"conv2d: stride must be positive, got {stride}")
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or w.ndim != 4:
        raise DimensionError(f"conv2d: expected input C×H×W or N×C×H×W and kernel O×C×kh×kw, got {x.shape} and {w.shape}")
    xv = x.values if batched else x.values[None]
    n, channels, height, width = xv.shape
    out_channels, in_channels, kh, kw = w.shape
    if in_channels != channels:
        raise DimensionError(f"conv2d: input has {channels} channels, kernel expects {in_channels}")
    if kh > height or kw > width:
        raise DimensionError(f"conv2d: kernel {kh}×{kw} larger than input {height}×{width}")
    out_h = (height - kh) // stride + 1
    out_w = (width - kw) // stride + 1

    windows = sliding_window_view(xv, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, w.values, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (out_channels,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} does not match {out_channels} output channels")
        out = out + bias.values[None, :, None, None]
    out = np.ascontiguousarray(out if batched else out[0])

    def rule(g):
        gb = g if batched else g[None]
        grad_w = np.tensordot(gb, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_x = np.zeros_like(xv)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(gb, w.values[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                grad_x[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += contrib
        grads = [grad_x if batched else grad_x[0], grad_w]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 2, 3)))
        return tuple(grads)

    inputs = (x, w) if bias is None else (x, w, bias)
    return _result("conv2d", out, inputs, rule)
