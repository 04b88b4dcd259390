"""Dense float64 arrays with tape-based reverse-mode differentiation.

Every differentiable operation records a :class:`_Node` on its output that
holds the inputs and a local backward rule.  :func:`backward` collects the
nodes reachable from a scalar loss, orders them by creation id (which is a
topological order, since inputs always exist before their consumers) and
replays the resulting :class:`Tape` in reverse.
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_node_ids = itertools.count()

# op name -> multiplier applied to that op's local gradients (fault injection)
_GRAD_FAULTS: dict[str, float] = {}

# every op name passed to record(); the spectral transforms live in spectral.py
GRADIENT_OPS = frozenset({
    "add", "sub", "mul", "div", "power", "exp", "log", "tanh", "sigmoid", "softplus", "abs",
    "maximum", "minimum", "transpose", "reshape", "index", "concat", "sum", "mean", "matmul",
    "softmax", "layer_norm", "l2_normalize", "conv1d", "dft_re", "dft_im", "idft",
})


@dataclass
class _Node:
    id: int
    op: str
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """A dense row-major float64 array with an optional gradient slot."""

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: _Node | None = None
        self.name = name

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- operators ----------------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, key):
        return index(self, key)


def _not_scalar(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def record(data: np.ndarray, inputs: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    """Wrap ``data`` as the output of ``op`` and put it on the tape.

    ``backward_fn`` maps the upstream gradient (shape of ``data``) to one
    gradient per input, in the input's (possibly broadcast) shape.  Nothing is
    recorded when no input requires a gradient.
    """
    out = Tensor(data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = _Node(next(_node_ids), op, tuple(inputs), backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Tape and backward


@dataclass
class TapeEntry:
    output: Tensor
    node: _Node


@dataclass
class Tape:
    """Operations reachable from one output, in creation (topological) order."""

    entries: list[TapeEntry] = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        seen: dict[int, TapeEntry] = {}
        stack = [out]
        while stack:
            t = stack.pop()
            if t.node is None or t.node.id in seen:
                continue
            seen[t.node.id] = TapeEntry(t, t.node)
            stack.extend(t.node.inputs)
        return cls([seen[k] for k in sorted(seen)])

    def is_topological(self) -> bool:
        position = {e.node.id: i for i, e in enumerate(self.entries)}
        for i, e in enumerate(self.entries):
            for inp in e.node.inputs:
                if inp.node is not None and position.get(inp.node.id, -1) >= i:
                    return False
        return True

    def __len__(self) -> int:
        return len(self.entries)


def backward(loss: Tensor, params: Sequence[Tensor] | None = None) -> list[np.ndarray] | None:
    """Propagate d(loss)/d(.) to every leaf that requires a gradient.

    Leaf gradients are accumulated into ``.grad``.  If ``params`` is given,
    the gradients of those tensors from this call alone are returned, with
    zeros for parameters the loss does not depend on.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = Tape.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaf_grads: dict[int, np.ndarray] = {}
    leaves: dict[int, Tensor] = {}

    if loss.node is None and loss.requires_grad:
        leaf_grads[id(loss)] = grads[id(loss)]
        leaves[id(loss)] = loss

    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        local = entry.node.backward(g)
        scale = _GRAD_FAULTS.get(entry.node.op)
        for inp, lg in zip(entry.node.inputs, local):
            if lg is None or not inp.requires_grad:
                continue
            lg = _unbroadcast(np.asarray(lg, dtype=np.float64), inp.shape)
            if scale is not None:
                lg = lg * scale
            target = grads if inp.node is not None else leaf_grads
            if inp.node is None:
                leaves[id(inp)] = inp
            if id(inp) in target:
                target[id(inp)] = target[id(inp)] + lg
            else:
                target[id(inp)] = lg

    for key, g in leaf_grads.items():
        leaf = leaves[key]
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g

    if params is None:
        return None
    return [leaf_grads.get(id(p), np.zeros_like(p.data)).copy() for p in params]


@contextlib.contextmanager
def inject_gradient_fault(op: str, factor: float = 1.5):
    """Scale the local gradient of every ``op`` node by ``factor`` (testing aid)."""
    if op not in GRADIENT_OPS:
        raise ValueError(f"unknown op {op!r}")
    _GRAD_FAULTS[op] = factor
    try:
        yield
    finally:
        _GRAD_FAULTS.pop(op, None)


# ---------------------------------------------------------------------------
# Elementwise arithmetic (numpy broadcasting, gradients summed back)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return record(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    return record(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),), "power")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return record(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return record(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return record(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Tensor:
    """log(1 + exp(a)), evaluated without overflow."""
    a = as_tensor(a)
    return record(np.logaddexp(0.0, a.data), (a,), lambda g: (g * _sigmoid(a.data),), "softplus")


def log_sigmoid(a) -> Tensor:
    return -softplus(-as_tensor(a))


def abs(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    return record(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data
    out = np.where(pick_a, a.data, b.data)
    return record(out, (a, b), lambda g: (g * pick_a, g * ~pick_a), "maximum")


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    out = np.where(pick_a, a.data, b.data)
    return record(out, (a, b), lambda g: (g * pick_a, g * ~pick_a), "minimum")


# ---------------------------------------------------------------------------
# Shape manipulation


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return record(a.data.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def index(a, key) -> Tensor:
    a = as_tensor(a)

    def _back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return record(a.data[key], (a,), _back, "index")


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _back(g):
        return tuple(np.split(g, splits, axis=axis))

    return record(np.concatenate([t.data for t in tensors], axis=axis), tensors, _back, "concat")


# ---------------------------------------------------------------------------
# Reductions


def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)

    def _back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return record(a.data.sum(axis=axis, keepdims=keepdims), (a,), _back, "sum")


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]

    def _back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape) / count,)

    return record(a.data.mean(axis=axis, keepdims=keepdims), (a,), _back, "mean")


# ---------------------------------------------------------------------------
# Linear algebra and fused normalizations


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    return record(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"axis {axis} out of range for shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def _back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record(out, (a,), _back, "softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then ``gain * x + bias``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def _back(g):
        gx = g * gain.data
        n = x.shape[-1]
        dx = inv / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
        return dx, g * xhat, g

    return record(out, (x, gain, bias), _back, "layer_norm")


def l2_normalize(x, axis: int = -1) -> Tensor:
    """Scale slices along ``axis`` to unit L2 norm; all-zero slices stay zero."""
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    safe = np.where(norm > 0, norm, 1.0)
    out = np.where(norm > 0, x.data / safe, 0.0)

    def _back(g):
        proj = (g * out).sum(axis=axis, keepdims=True)
        return (np.where(norm > 0, (g - out * proj) / safe, 0.0),)

    return record(out, (x,), _back, "l2_normalize")


def conv1d(x, weight, padding: str = "zeros") -> Tensor:
    """Depthwise 1-D cross-correlation along axis 0.

    ``x`` is (T, C) and ``weight`` is (C, K) with odd K; channel ``c`` of the
    output is ``sum_d weight[c, d] * x[t + d - K//2, c]``.  ``padding`` is
    ``"zeros"`` or ``"circular"``; either way the output length equals T.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or weight.shape[0] != x.shape[1]:
        raise ValueError(f"conv1d shapes incompatible: x {x.shape}, weight {weight.shape}")
    k = weight.shape[1]
    if k % 2 == 0:
        raise ValueError("conv1d kernel width must be odd")
    if padding not in ("zeros", "circular"):
        raise ValueError(f"unknown padding {padding!r}")
    t, half = x.shape[0], k // 2

    def shifted(a: np.ndarray, offset: int) -> np.ndarray:
        # s[i] = a[i + offset], zero or wrapped outside [0, t)
        if padding == "circular":
            return np.roll(a, -offset, axis=0)
        s = np.zeros_like(a)
        if offset >= 0:
            s[: max(t - offset, 0)] = a[offset:]
        else:
            s[-offset:] = a[: t + offset]
        return s

    out = np.zeros_like(x.data)
    for d in range(k):
        out += weight.data[:, d] * shifted(x.data, d - half)

    def _back(g):
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(weight.data)
        for d in range(k):
            gx += shifted(g * weight.data[:, d], half - d)
            gw[:, d] = (g * shifted(x.data, d - half)).sum(axis=0)
        return gx, gw

    return record(out, (x, weight), _back, "conv1d")


# ---------------------------------------------------------------------------
# Finite-difference verification


@dataclass
class GradReport:
    """Analytic vs central-difference gradients for a list of parameters."""

    names: list[str]
    analytic: list[np.ndarray]
    numeric: list[np.ndarray]
    max_rel_error: float

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol

    def worst(self) -> tuple[str, tuple[int, ...], float]:
        """(parameter name, coordinate, relative error) of the largest error."""
        best = ("", (), -1.0)
        for name, a, n in zip(self.names, self.analytic, self.numeric):
            if a.size == 0:
                continue
            err = relative_error(a, n)
            i = np.unravel_index(int(np.argmax(err)), err.shape)
            if err[i] > best[2]:
                best = (name, tuple(int(v) for v in i), float(err[i]))
        return best


def relative_error(a, n) -> np.ndarray:
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> GradReport:
    """Compare :func:`backward` against central differences of ``f``.

    ``f`` takes no arguments and reads the current values of ``params``;
    each coordinate is perturbed in place by +/- ``h`` and restored.
    """
    names = [p.name or f"param{i}" for i, p in enumerate(params)]
    saved = [p.grad for p in params]
    analytic = backward(as_tensor(f()), params)
    for p, g in zip(params, saved):
        p.grad = g

    numeric = []
    for name, p in zip(names, params):
        num = np.zeros_like(p.data)
        flat = p.data.reshape(-1)  # view: edits write through
        for i in range(flat.size):
            orig = flat[i]
            with np.errstate(all="ignore"):
                flat[i] = orig + h
                fp = as_tensor(f()).item()
                flat[i] = orig - h
                fm = as_tensor(f()).item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                coord = [int(c) for c in np.unravel_index(i, p.shape)]
                raise FloatingPointError(f"non-finite objective at {name}{coord}")
            num.reshape(-1)[i] = (fp - fm) / (2.0 * h)
        numeric.append(num)

    worst = max((float(relative_error(a, n).max()) for a, n in zip(analytic, numeric) if a.size), default=0.0)
    return GradReport(names, analytic, numeric, worst)
