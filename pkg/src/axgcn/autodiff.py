"""Dense double-precision tensors with tape-based reverse-mode differentiation.

Operations are recorded on the innermost active :class:`Tape` of the calling
thread whenever at least one operand requires a gradient.  With no tape
active, operations simply compute values, which is what the finite-difference
checker relies on.

Broadcasting is deliberately narrow: elementwise operations accept either
equal shapes or a scalar operand.  Anything else goes through the explicit
:func:`broadcast_to` primitive so every backward rule stays easy to audit.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericalError, ParameterError, SingularityError

DTYPE = np.float64
DIV_GUARD = 1e-12

_local = threading.local()


def _tape_stack() -> list["Tape"]:
    try:
        return _local.stack
    except AttributeError:
        _local.stack = []
        return _local.stack


def active_tape() -> "Tape | None":
    try:
        stack = _local.stack
    except AttributeError:
        return None
    return stack[-1] if stack else None


class Tensor:
    """An n-dimensional array of float64 values.

    ``requires_grad`` marks leaves (parameters) whose gradients the tape
    reports, and is propagated to every recorded result.
    """

    __slots__ = ("data", "requires_grad", "name", "_leaf")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        if any(d < 1 for d in arr.shape):
            raise DimensionError(f"tensor extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._leaf = True

    @classmethod
    def _result(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        if type(data) is not np.ndarray or data.dtype != DTYPE:
            data = np.asarray(data, dtype=DTYPE)
        out.data = data
        out.requires_grad = requires_grad
        out.name = None
        out._leaf = False
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._leaf

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # Python operators -------------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    # method forms -------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)


class GradientMap(dict):
    """Maps each parameter tensor (by identity) to its gradient tensor."""

    def by_name(self) -> dict[str, Tensor]:
        return {p.name if p.name else f"param{i}": g for i, (p, g) in enumerate(self.items())}


class _Record:
    __slots__ = ("out", "inputs", "vjp", "op")

    def __init__(self, out, inputs, vjp, op):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp
        self.op = op


class Tape:
    """Ordered record of primitive operations.

    Use as a context manager; every primitive evaluated inside the ``with``
    block whose operands require gradients is appended.  :meth:`backward`
    does not consume the tape and can be replayed.
    """

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:
            stack.remove(self)

    def __len__(self) -> int:
        return len(self._records)

    @property
    def ops(self) -> list[str]:
        return [r.op for r in self._records]

    def record(self, out: Tensor, inputs: tuple, vjp: Callable, op: str) -> None:
        self._records.append(_Record(out, inputs, vjp, op))

    def backward(self, loss: Tensor) -> GradientMap:
        if not isinstance(loss, Tensor) or loss.size != 1:
            shape = getattr(loss, "shape", None)
            raise DimensionError(f"backward needs a scalar loss, got shape {shape}")
        if not self._records:
            raise NumericalError("backward called on an empty tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(self._records):
            g = grads.get(id(rec.out))
            if g is None:
                continue
            in_grads = rec.vjp(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if t._leaf:
                    leaves.setdefault(id(t), t)
                key = id(t)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
        out = GradientMap()
        for rec in self._records:
            for t in rec.inputs:
                if isinstance(t, Tensor) and t.requires_grad and t._leaf and t not in out:
                    g = grads.get(id(t))
                    out[t] = Tensor(np.zeros_like(t.data) if g is None else g)
        return out


def grad(loss_fn: Callable[[], Tensor], params: Sequence[Tensor]) -> tuple[Tensor, list[Tensor]]:
    """Evaluate ``loss_fn`` on a fresh tape; return the loss and per-param gradients."""
    with Tape() as tape:
        loss = loss_fn()
    gm = tape.backward(loss)
    return loss, [gm[p] if p in gm else Tensor(np.zeros_like(p.data)) for p in params]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def as_tensor(x) -> Tensor:
    return x if type(x) is Tensor else Tensor(x)


def _emit(data: np.ndarray, inputs: tuple, vjp: Callable, op: str) -> Tensor:
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._result(data, track)
    if track:
        tape.record(out, inputs, vjp, op)
    return out


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape} "
                             "(only equal shapes or a scalar operand are supported)")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    # scalar operand receives the summed gradient
    if _is_scalar(t) and g.ndim != 0:
        return np.asarray(g.sum())
    return g


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "add")
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_reduce_to(g, a), _reduce_to(g, b)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "sub")
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_reduce_to(g, a), _reduce_to(-g, b)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b),
                 lambda g: (_reduce_to(g * bd, a), _reduce_to(g * ad, b)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "div")
    small = np.abs(b.data) < DIV_GUARD
    if small.any():
        positions = [tuple(int(i) for i in p) for p in np.argwhere(small)[:10]]
        raise SingularityError(f"division by near-zero divisor at positions {positions}")
    ad, bd = a.data, b.data
    out = ad / bd
    return _emit(out, (a, b),
                 lambda g: (_reduce_to(g / bd, a), _reduce_to(-g * out / bd, b)), "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,), "neg")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _emit(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def log_sigmoid(a) -> Tensor:
    """log(sigmoid(x)) evaluated without underflow."""
    a = as_tensor(a)
    x = a.data
    y = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    s = _sigmoid(x)
    return _emit(y, (a,), lambda g: (g * (1.0 - s),), "log_sigmoid")


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _emit(y, (a,), lambda g: (g * y,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericalError("log of non-positive value")
    x = a.data
    return _emit(np.log(x), (a,), lambda g: (g / x,), "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def min_with_scalar(a, c: float) -> Tensor:
    """Elementwise ``min(a, c)``; gradient passes where ``a < c``."""
    a = as_tensor(a)
    mask = a.data < c
    return _emit(np.where(mask, a.data, c), (a,), lambda g: (g * mask,), "min_with_scalar")


def elementwise(op: str, *args) -> Tensor:
    """Dispatch an elementwise primitive by name."""
    table = {"add": add, "mul": mul, "sub": sub, "div": div, "tanh": tanh,
             "sigmoid": sigmoid, "exp": exp, "relu": relu, "min_with_scalar": min_with_scalar,
             "log": log, "neg": neg, "log_sigmoid": log_sigmoid}
    try:
        fn = table[op]
    except KeyError:
        raise ParameterError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# linear algebra, reductions, shape ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _emit(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(a.data.sum(axis=axes, keepdims=keepdims), (a,), vjp, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    shape = a.shape

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _emit(a.data.mean(axis=axes, keepdims=keepdims), (a,), vjp, "mean")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot reshape {old} to {tuple(shape)}") from exc
    return _emit(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _emit(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def broadcast_to(a, shape) -> Tensor:
    """Explicit broadcast following numpy rules; backward sums the expanded axes."""
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise DimensionError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from exc
    src = a.shape
    lead = len(shape) - len(src)

    def vjp(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, d in enumerate(src) if d == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g.reshape(src),)

    return _emit(out, (a,), vjp, "broadcast_to")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]
    if isinstance(out, np.ndarray) and any(d < 1 for d in out.shape):
        raise DimensionError(f"getitem: empty selection {index!r} from {a.shape}")
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _emit(np.array(out), (a,), vjp, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in ts]} along axis {axis}") from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit(out, ts, vjp, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise DimensionError(f"stack: mismatched shapes {[t.shape for t in ts]}")
    out = np.stack([t.data for t in ts], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _emit(out, ts, vjp, "stack")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit(y, (a,), vjp, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def vjp(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _emit(y, (a,), vjp, "log_softmax")


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

def finite_diff_check(f: Callable[[Sequence[Tensor]], Tensor], params: Sequence[Tensor],
                      eps: float = 1e-5, return_details: bool = False):
    """Compare reverse-mode gradients of ``f(params)`` with central differences.

    Returns the max over all coordinates of ``|g_ad - g_fd| / max(1, |g_fd|)``.
    With ``return_details`` a ``(error, worst)`` pair is returned where
    ``worst`` describes the offending coordinate.
    """
    if not 0 < eps <= 1e-2:
        raise ParameterError(f"eps must lie in (0, 1e-2], got {eps}")
    params = list(params)
    _, ad = grad(lambda: f(params), params)

    worst_err, worst = 0.0, None
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)  # view, mutated in place
        g_ad = ad[pi].data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = f(params).item()
            flat[j] = orig - eps
            fm = f(params).item()
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                label = p.name or f"param{pi}"
                raise NumericalError(f"non-finite objective when perturbing {label}[{j}]")
            g_fd = (fp - fm) / (2.0 * eps)
            err = abs(g_ad[j] - g_fd) / max(1.0, abs(g_fd))
            if err > worst_err or worst is None:
                worst_err = max(worst_err, err)
                worst = {"param": p.name or f"param{pi}", "index": j,
                         "ad": float(g_ad[j]), "fd": float(g_fd)}
    if return_details:
        return float(worst_err), worst
    return float(worst_err)


def parameters_size(params: Iterable[Tensor]) -> int:
    return int(sum(p.size for p in params))
