"""Dense float64 tensors with a reverse-mode gradient tape.

Every op returns a new ``Tensor`` that remembers its parents and a closure
mapping the output gradient to per-parent gradients.  ``backward`` replays the
reachable part of that record in reverse execution order.  Leading batch axes
are allowed (``(B, n, d)`` arrays go through ``matmul`` unchanged) because the
extractor runs a whole minibatch at once.
"""
from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_counter = itertools.count()
_faults: set[str] = set()
_grad_enabled = True
_relu_masks: list | None = None  # filled by relu while grad_check probes for kinks


def _as_array(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "name", "requires_grad", "_parents", "_backward", "_seq", "_track", "op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = _as_array(data)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite value in tensor {name or ''}".rstrip())
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._seq = next(_counter)
        self._track = requires_grad
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    # operator sugar; scalars are promoted to constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise ContractError("division only by scalars")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Param(Tensor):
    """Trainable leaf tensor with a gradient slot of the same shape."""

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True, name=name)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(out: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{op} produced a non-finite value")
    t = Tensor.__new__(Tensor)
    t.data = out
    t.requires_grad = False
    t.name = None
    t.grad = None
    t._seq = next(_counter)
    t.op = op
    t._track = _grad_enabled and any(p._track for p in parents)
    if t._track:
        t._parents = parents
        t._backward = backward
    else:
        t._parents = ()
        t._backward = None
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording them."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def inject_fault(op: str):
    """Corrupt the backward rule of ``op`` while the context is active.

    Only used to prove that gradient checking catches a broken rule.
    """
    _faults.add(op)
    try:
        yield
    finally:
        _faults.discard(op)


# --- ops -------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}") from None

    def backward(g):
        ga = gb = None
        if a._track:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b._track:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _node(out, (a, b), backward, "matmul")


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    """Elementwise product."""
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a._track else None
        gb = _unbroadcast(g * a.data, b.shape) if b._track else None
        return ga, gb

    return _node(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        return (g * c,)

    return _node(a.data * c, (a,), backward, "scale")


def add_scalar(a: Tensor, c: float) -> Tensor:
    def backward(g):
        return (g,)

    return _node(a.data + c, (a,), backward, "add_scalar")


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    if _relu_masks is not None:
        _relu_masks.append(a.data > 0)

    def backward(g):
        gx = np.where(out > 0, g, 0.0)
        if "relu" in _faults:
            gx *= 0.5
        return (gx,)

    return _node(out, (a,), backward, "relu")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow is reported by _node as NumericError
        out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _node(out, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log of a non-positive value")

    def backward(g):
        return (g / a.data,)

    return _node(np.log(a.data), (a,), backward, "log")


def sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    if axis is None:
        out = a.data.sum().reshape(1, 1)
    else:
        out = a.data.sum(axis=axis, keepdims=keepdims)
        if out.ndim < 2:
            out = out.reshape(1, -1) if out.ndim == 1 else out.reshape(1, 1)
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g.reshape(()), shape).copy(),)
        gk = g.reshape(np.sum(a.data, axis=axis, keepdims=True).shape)
        return (np.broadcast_to(gk, shape).copy(),)

    return _node(out, (a,), backward, "sum")


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis), 1.0 / count)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: {a.shape} -> {shape}") from None
    src = a.shape

    def backward(g):
        return (g.reshape(src),)

    return _node(out, (a,), backward, "reshape")


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        return (np.swapaxes(g, -1, -2),)

    return _node(np.swapaxes(a.data, -1, -2).copy(), (a,), backward, "transpose")


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(tensors), backward, "concat")


def softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _node(out, (a,), backward, "softmax")


def log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean softmax cross-entropy over rows of a ``(B, k)`` logit matrix.

    ``target`` is either integer class indices (0-based) of length B or a
    ``(B, k)`` matrix of target probabilities (one-hot rows).
    """
    if logits.data.ndim != 2:
        raise DimensionError(f"cross_entropy expects (B, k) logits, got {logits.shape}")
    n, k = logits.shape
    target = np.asarray(target)
    if target.ndim == 1 and np.issubdtype(target.dtype, np.integer):
        if target.shape[0] != n:
            raise DimensionError(f"{target.shape[0]} labels for {n} rows")
        if target.size and (target.min() < 0 or target.max() >= k):
            raise ContractError(f"label out of range 0..{k - 1}")
        onehot = np.zeros((n, k))
        onehot[np.arange(n), target] = 1.0
    else:
        onehot = np.asarray(target, dtype=np.float64)
        if onehot.shape != (n, k):
            raise DimensionError(f"target shape {onehot.shape} vs logits {logits.shape}")
    logp = log_softmax(logits.data)
    out = np.array([[-(onehot * logp).sum() / n]])

    def backward(g):
        return (g.reshape(()) * (np.exp(logp) * onehot.sum(axis=1, keepdims=True) - onehot) / n,)

    return _node(out, (logits,), backward, "cross_entropy")


def l2_normalize(a: Tensor, min_norm: float = 1e-12) -> Tensor:
    """Scale each row (last axis) to unit Euclidean length."""
    norm = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    if np.any(norm <= min_norm):
        raise NumericError("cannot normalize a vector with near-zero norm")
    out = a.data / norm

    def backward(g):
        return ((g - out * (g * out).sum(axis=-1, keepdims=True)) / norm,)

    return _node(out, (a,), backward, "l2_normalize")


# --- tape -------------------------------------------------------------------

@dataclass
class Tape:
    """Tracked nodes reachable from a root, in execution order."""

    nodes: list[Tensor]

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        seen: dict[int, Tensor] = {}
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen or not node._track:
                continue
            seen[id(node)] = node
            stack.extend(node._parents)
        return cls(sorted(seen.values(), key=lambda t: t._seq))

    def replay_backward(self, root: Tensor, seed: np.ndarray) -> list[Tensor]:
        grads = {id(root): seed}
        visited = []
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            visited.append(node)
            if node.requires_grad:
                node.grad += g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent._track:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        return visited


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(param) into every reachable ``Param.grad``."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape.from_root(loss)
    tape.replay_backward(loss, np.ones_like(loss.data))
    return tape


def zero_grad(params) -> None:
    for p in params:
        p.zero_grad()


# --- gradient checking ------------------------------------------------------

@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)
    reduced: dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.max_rel_error.values())

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "passed": self.passed,
            "params": {
                name: {"max_rel_error": err, "entries_checked": self.checked[name],
                       "step_reduced": self.reduced.get(name, 0)}
                for name, err in self.max_rel_error.items()
            },
        }


def rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def _masked_eval(fn) -> tuple[float, list]:
    global _relu_masks
    _relu_masks = []
    try:
        with no_grad():
            value = fn().item()
        return value, _relu_masks
    finally:
        _relu_masks = None


def _same_branch(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(fn, params, tolerance: float = 1e-4, eps: float = 1e-4,
               max_entries: int | None = None, seed: int = 0, shrink: int = 4) -> GradCheckReport:
    """Compare analytic gradients of ``fn()`` with central differences.

    ``fn`` must be deterministic and return a scalar tensor.  When a parameter
    has more than ``max_entries`` entries, half of the probed entries are the
    largest-magnitude analytic gradients and half are drawn at random.

    A step that flips any ReLU unit straddles a kink, where the difference
    quotient measures neither one-sided derivative.  Such steps are divided
    by 10 up to ``shrink`` times; the count of shrunk entries is reported.
    """
    zero_grad(params)
    backward(fn())
    analytic = [p.grad.copy() for p in params]
    _, base = _masked_eval(fn)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance)
    for i, (p, ga) in enumerate(zip(params, analytic)):
        flat = p.data.reshape(-1)
        size = flat.size
        if max_entries is None or size <= max_entries:
            idx = np.arange(size)
        else:
            top = np.argsort(-np.abs(ga.reshape(-1)), kind="stable")[: max_entries // 2]
            rest = np.setdiff1d(np.arange(size), top)
            idx = np.concatenate([top, rng.choice(rest, max_entries - top.size, replace=False)])
        worst, reduced = 0.0, 0
        for j in idx:
            orig = flat[j]
            h = eps
            for attempt in range(shrink + 1):
                flat[j] = orig + h
                fp, mp = _masked_eval(fn)
                flat[j] = orig - h
                fm, mm = _masked_eval(fn)
                flat[j] = orig
                if (_same_branch(mp, base) and _same_branch(mm, base)) or attempt == shrink:
                    break
                h /= 10
            reduced += h != eps
            numeric = (fp - fm) / (2 * h)
            worst = max(worst, rel_error(float(ga.reshape(-1)[j]), numeric))
        name = p.name or f"param{i}"
        report.max_rel_error[name] = worst
        report.checked[name] = int(idx.size)
        report.reduced[name] = int(reduced)
    zero_grad(params)
    return report
