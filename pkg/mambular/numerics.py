"""Dense float64 tensors with reverse-mode gradients.

Every model operation in the package is built from the functions in this
module. A `Tensor` wraps an immutable numpy array; operations on tensors that
require gradients record their parents and a backward rule, and `backward`
replays those rules in reverse topological order.
"""

from __future__ import annotations

import itertools
import logging
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

_node_ids = itertools.count()

SOFTPLUS_LINEAR_ABOVE = 30.0

Axis = Union[int, Tuple[int, ...], None]


class DimensionError(ValueError):
    """Raised when operand shapes violate an operation's shape contract."""


class Tensor:
    """A node in a computation graph.

    `data` holds the value (float64, never mutated in place), `grad` is
    populated by `backward`, and `node_id` orders nodes deterministically.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name", "_parents", "_backward")

    # ndarray on the left defers to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self.name = name
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: Sequence[Tensor], rule) -> Tensor:
    needs_grad = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        out._parents = tuple(parents)
        out._backward = rule
    return out


def record(data: np.ndarray, parents: Sequence[Tensor], rule) -> Tensor:
    """Graph node for a fused operation; `rule(g)` returns one gradient per parent."""
    return _result(data, parents, rule)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    """Right-aligned broadcast of two shapes; singleton axes stretch."""
    try:
        return tuple(np.broadcast_shapes(a, b))
    except ValueError:
        raise DimensionError(f"Shapes {a} and {b} are not broadcast-compatible") from None


# ---------------------------------------------------------------------------
# Binary operations
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)

    def rule(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), rule)


def broadcast_mul(a, b) -> Tensor:
    """Elementwise product where singleton axes stretch to the partner's length."""
    return mul(a, b)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)

    def rule(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _result(a.data / b.data, (a, b), rule)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _result(-x.data, (x,), lambda g: (-g,))


def power(x, exponent: float) -> Tensor:
    x = as_tensor(x)
    exponent = float(exponent)

    def rule(g):
        return (g * exponent * np.power(x.data, exponent - 1.0),)

    return _result(np.power(x.data, exponent), (x,), rule)


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes with broadcast leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} are incompatible")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(
            f"matmul leading axes of {a.shape} and {b.shape} do not broadcast"
        ) from None

    def rule(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(np.matmul(a.data, b.data), (a, b), rule)


# ---------------------------------------------------------------------------
# Elementwise functions
# ---------------------------------------------------------------------------

def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


def neg_exp(x) -> Tensor:
    x = as_tensor(x)
    out = -np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)

    def rule(g):
        return (g * s * (1.0 + x.data * (1.0 - s)),)

    return _result(x.data * s, (x,), rule)


def softplus_values(values: np.ndarray) -> np.ndarray:
    """log(1 + e^x), linear above the overflow threshold."""
    values = np.asarray(values, dtype=np.float64)
    safe = np.log1p(np.exp(np.minimum(values, SOFTPLUS_LINEAR_ABOVE)))
    return np.where(values > SOFTPLUS_LINEAR_ABOVE, values, safe)


def softplus(x) -> Tensor:
    x = as_tensor(x)

    def rule(g):
        slope = np.where(x.data > SOFTPLUS_LINEAR_ABOVE, 1.0, expit(x.data))
        return (g * slope,)

    return _result(softplus_values(x.data), (x,), rule)


def relu(x) -> Tensor:
    x = as_tensor(x)
    return _result(np.maximum(x.data, 0.0), (x,), lambda g: (g * (x.data > 0.0),))


ELEMENTWISE: Dict[str, Callable[[Tensor], Tensor]] = {
    "exp": exp,
    "silu": silu,
    "softplus": softplus,
    "sigmoid": sigmoid,
    "neg-exp": neg_exp,
}


def elementwise(kind: str, x) -> Tensor:
    if kind not in ELEMENTWISE:
        raise ValueError(f"Unknown elementwise function: {kind}. Available: {list(ELEMENTWISE)}")
    return ELEMENTWISE[kind](x)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def _normalize_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    normalized = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"Axis {ax} is out of range for a {ndim}-d tensor")
        normalized.append(ax % ndim)
    return tuple(sorted(normalized))


def _check_nonempty(x: Tensor, axes: Tuple[int, ...]) -> None:
    for ax in axes:
        if x.shape[ax] == 0:
            raise DimensionError(f"Cannot reduce over empty axis {ax} of shape {x.shape}")


def reduce_sum(x, axis: Axis = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    _check_nonempty(x, axes)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(x.data.sum(axis=axes, keepdims=keepdims), (x,), rule)


def reduce_mean(x, axis: Axis = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    _check_nonempty(x, axes)
    count = float(np.prod([x.shape[ax] for ax in axes])) if axes else 1.0
    return mul(reduce_sum(x, axes, keepdims), 1.0 / count)


def reduce_max(x, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; the gradient flows to the first maximal element."""
    x = as_tensor(x)
    (ax,) = _normalize_axes(axis, x.ndim)
    _check_nonempty(x, (ax,))
    idx = np.expand_dims(np.argmax(x.data, axis=ax), ax)
    out = np.take_along_axis(x.data, idx, axis=ax)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        grad = np.zeros_like(x.data)
        np.put_along_axis(grad, idx, g, axis=ax)
        return (grad,)

    return _result(out if keepdims else np.squeeze(out, axis=ax), (x,), rule)


REDUCTIONS = {"sum": reduce_sum, "mean": reduce_mean, "max": reduce_max}


def reduce(kind: str, x, axis) -> Tensor:
    if kind not in REDUCTIONS:
        raise ValueError(f"Unknown reduction: {kind}. Available: {list(REDUCTIONS)}")
    return REDUCTIONS[kind](x, axis)


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------

def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"Cannot reshape {x.shape} into {tuple(shape)}") from None
    return _result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def swapaxes(x, axis1: int, axis2: int) -> Tensor:
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
    return transpose(x, axes)


def flip(x, axis: int) -> Tensor:
    x = as_tensor(x)
    return _result(np.flip(x.data, axis=axis).copy(), (x,), lambda g: (np.flip(g, axis=axis).copy(),))


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


def getitem(x, index) -> Tensor:
    """Indexing; integer-array indices accumulate gradients for repeated rows."""
    x = as_tensor(x)
    basic = _is_basic_index(index)

    def rule(g):
        grad = np.zeros_like(x.data)
        if basic:
            grad[index] += g
        else:
            np.add.at(grad, index, g)
        return (grad,)

    return _result(np.array(x.data[index]), (x,), rule)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"Cannot concatenate shapes {shapes} on axis {axis}: {exc}") from None
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(out, tensors, rule)


def stack(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"Cannot stack tensors of shapes {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def rule(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(out, tensors, rule)


# ---------------------------------------------------------------------------
# Composite layers
# ---------------------------------------------------------------------------

def depthwise_causal_conv(x, kernels, bias) -> Tensor:
    """Per-channel 1-D convolution along axis 1, left-padded with K-1 zeros.

    Output position j sees input positions j-K+1..j only; the last kernel tap
    multiplies the current position.
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if x.ndim != 3:
        raise DimensionError(f"depthwise_causal_conv expects [N, J, C] input, got {x.shape}")
    n, length, channels = x.shape
    if kernels.ndim != 2 or kernels.shape[0] != channels:
        raise DimensionError(
            f"Kernel shape {kernels.shape} does not match input channels of {x.shape}"
        )
    if bias.shape != (channels,):
        raise DimensionError(f"Bias shape {bias.shape} does not match input channels of {x.shape}")
    width = kernels.shape[1]
    if width < 1:
        raise DimensionError("Kernel size must be at least 1")

    padded = np.concatenate([np.zeros((n, width - 1, channels)), x.data], axis=1)
    out = np.zeros_like(x.data)
    for m in range(width):
        out += padded[:, m:m + length, :] * kernels.data[:, m]
    out += bias.data

    def rule(g):
        grad_padded = np.zeros_like(padded)
        grad_kernels = np.empty_like(kernels.data)
        for m in range(width):
            grad_padded[:, m:m + length, :] += g * kernels.data[:, m]
            grad_kernels[:, m] = np.sum(g * padded[:, m:m + length, :], axis=(0, 1))
        return grad_padded[:, width - 1:, :], grad_kernels, g.sum(axis=(0, 1))

    return _result(out, (x, kernels, bias), rule)


def rmsnorm(x, weight, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ValueError(f"rmsnorm eps must be positive, got {eps}")
    x = as_tensor(x)
    mean_square = reduce_mean(x * x, axis=-1, keepdims=True)
    return x * power(mean_square + eps, -0.5) * weight


def layernorm(x, weight, bias, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    centered = x - reduce_mean(x, axis=-1, keepdims=True)
    variance = reduce_mean(centered * centered, axis=-1, keepdims=True)
    return centered * power(variance + eps, -0.5) * weight + bias


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _result(s, (x,), rule)


def dropout(x, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when `rng` is None (evaluation mode) or rate is 0."""
    if rng is None or rate <= 0.0:
        return as_tensor(x)
    x = as_tensor(x)
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack_: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in visited:
            continue
        visited.add(node.node_id)
        stack_.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and parent.node_id not in visited:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every node reachable from a scalar `loss`."""
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("Loss does not depend on any trainable tensor")
    order = _topological_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)

    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g.copy() if parent.grad is None else parent.grad + g

    for node in order:
        if node.grad is None:
            node.grad = np.zeros_like(node.data)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

class ParamSet:
    """Named trainable leaves, enumerated in insertion order."""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"Duplicate parameter name: {name}")
        tensor = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        unexpected = set(state) - set(self._params)
        if missing or unexpected:
            raise ValueError(
                f"Parameter names differ: missing {sorted(missing)}, unexpected {sorted(unexpected)}"
            )
        for name, p in self._params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"Parameter {name}: expected {p.shape}, got {value.shape}")
            p.data = value.copy()


def gradient_errors(
    f: Callable[[], Tensor], params: ParamSet, step: float = 1e-5
) -> Dict[str, float]:
    """Worst relative error per parameter between analytic and central-difference gradients."""
    if step <= 0:
        raise ValueError(f"Finite-difference step must be positive, got {step}")
    params.zero_grad()
    backward(f())
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    errors: Dict[str, float] = {}
    for name, p in params.items():
        base = p.data
        worst = 0.0
        for idx in np.ndindex(base.shape):
            shifted = base.copy()
            shifted[idx] += step
            p.data = shifted
            f_plus = f().item()
            shifted = base.copy()
            shifted[idx] -= step
            p.data = shifted
            f_minus = f().item()
            p.data = base

            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[name][idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
        errors[name] = worst
        logger.debug("gradient check %s: max relative error %.3e", name, worst)
    return errors


def check_gradients(f: Callable[[], Tensor], params: ParamSet, step: float = 1e-5) -> float:
    """Worst relative gradient error across every entry of every parameter."""
    errors = gradient_errors(f, params, step)
    return max(errors.values()) if errors else 0.0
