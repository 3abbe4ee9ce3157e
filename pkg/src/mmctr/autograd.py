"""Dense float tensors with reverse-mode differentiation on a per-pass tape.

The engine is define-by-run: while a Graph is active (used as a context
manager), every differentiable operation appends itself to the tape, and
Graph.backward replays the tape in reverse to accumulate gradients into
every tensor that requires them. Values are float32 by default; float64
is supported so gradient checks can run at tighter tolerances.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

_SUPPORTED = (np.dtype(np.float32), np.dtype(np.float64))

_active_graph = None


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class Tensor:
    """Dense n-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _SUPPORTED:
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return (f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, "
                f"requires_grad={self.requires_grad})")


class Graph:
    """Tape of operations recorded during one forward pass.

    Use as a context manager around the forward computation, then call
    backward(loss) after exiting. Recording order is a topological order,
    so the reverse sweep visits each operation exactly once with its
    output gradient fully accumulated.
    """

    def __init__(self):
        self._tape = []
        self._produced = set()

    def __enter__(self):
        global _active_graph
        if _active_graph is not None:
            raise RuntimeError("a Graph is already recording; graphs do not nest")
        _active_graph = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _active_graph
        _active_graph = None
        return False

    def _record(self, out, backward):
        self._tape.append((out, backward))
        self._produced.add(id(out))

    def __len__(self):
        return len(self._tape)

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(tensor) into .grad across the whole tape."""
        if _active_graph is self:
            raise RuntimeError("exit the recording context before calling backward")
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise ValueError("loss tensor was not produced by this graph")
        loss.grad = np.ones_like(loss.data)
        for out, backward in reversed(self._tape):
            if out.grad is None:
                continue
            backward(out.grad)


def accumulate_grad(t: Tensor, g: np.ndarray):
    """Add g into t.grad, allocating a zero gradient on first touch."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def record(out_data: np.ndarray, inputs, backward) -> Tensor:
    """Wrap an op result, taping `backward` if any input requires grad.

    Sibling modules use this to define domain-specific operations (embedding
    gather, sequence readout, loss) with their own backward rules.
    """
    out = Tensor(out_data)
    if _active_graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _active_graph._record(out, backward)
    return out


def _check_dtypes(*tensors):
    d = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != d:
            raise ValueError(f"mixed tensor dtypes: {d} vs {t.dtype}")


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2-d operands follow the usual m*k @ k*n rule; higher
    ranks are stacks of matrices whose leading dimensions must match exactly
    (no broadcasting)."""
    _check_dtypes(a, b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.ndim != b.data.ndim:
        raise ShapeError(f"matmul needs equal-rank operands of rank >= 2, "
                         f"got {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")
    out = a.data @ b.data

    def backward(g):
        accumulate_grad(a, g @ np.swapaxes(b.data, -1, -2))
        accumulate_grad(b, np.swapaxes(a.data, -1, -2) @ g)

    return record(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of identically shaped tensors."""
    _check_dtypes(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")

    def backward(g):
        accumulate_grad(a, g)
        accumulate_grad(b, g)

    return record(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of identically shaped tensors."""
    _check_dtypes(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")

    def backward(g):
        accumulate_grad(a, g * b.data)
        accumulate_grad(b, g * a.data)

    return record(a.data * b.data, (a, b), backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-d bias vector to every row of x (last axis d).

    This is the only broadcast the engine supports; all other shape mixing
    is rejected.
    """
    _check_dtypes(x, b)
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias of shape {b.shape} does not broadcast over {x.shape}")

    def backward(g):
        accumulate_grad(x, g)
        accumulate_grad(b, g.reshape(-1, b.shape[0]).sum(axis=0))

    return record(x.data + b.data, (x, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)

    def backward(g):
        accumulate_grad(x, g * c)

    return record(x.data * np.asarray(c, dtype=x.dtype), (x,), backward)


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0

    def backward(g):
        accumulate_grad(x, g * keep)

    return record(np.where(keep, x.data, 0), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)

    def backward(g):
        accumulate_grad(x, g * y * (1 - y))

    return record(y, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")

    def backward(g):
        accumulate_grad(x, g.reshape(x.shape))

    return record(x.data.reshape(shape), (x,), backward)


def swapaxes(x: Tensor, ax1: int, ax2: int) -> Tensor:
    def backward(g):
        accumulate_grad(x, np.swapaxes(g, ax1, ax2))

    return record(np.ascontiguousarray(np.swapaxes(x.data, ax1, ax2)), (x,), backward)


def concat(parts, axis: int = -1) -> Tensor:
    """Concatenate tensors along one axis; all other axes must agree."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    _check_dtypes(*parts)
    ndim = parts[0].data.ndim
    ax = axis % ndim
    ref = parts[0].shape
    for p in parts[1:]:
        if p.data.ndim != ndim or any(
                i != ax and p.shape[i] != ref[i] for i in range(ndim)):
            raise ShapeError(f"concat shapes incompatible: {[p.shape for p in parts]}")
    sizes = [p.shape[ax] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * ndim
            idx[ax] = slice(lo, hi)
            accumulate_grad(p, g[tuple(idx)])

    return record(np.concatenate([p.data for p in parts], axis=ax), tuple(parts), backward)


def sum_all(x: Tensor) -> Tensor:
    """Sum of every element, as a scalar tensor."""

    def backward(g):
        accumulate_grad(x, g + np.zeros_like(x.data))

    return record(np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward)


def dropout(x: Tensor, p: float, rng, training: bool) -> Tensor:
    """Inverted dropout: kept units are scaled by 1/(1-p) at train time,
    so the eval-time forward is the identity and needs no mask."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / np.asarray(1.0 - p, dtype=x.dtype)

    def backward(g):
        accumulate_grad(x, g * keep)

    return record(x.data * keep, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply a learned gain and bias."""
    _check_dtypes(x, gain, bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm params must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        accumulate_grad(bias, g.reshape(-1, d).sum(axis=0))
        accumulate_grad(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        accumulate_grad(x, (dxhat - m1 - xhat * m2) * inv)

    return record(out, (x, gain, bias), backward)


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------

def grad_check(f, x: Tensor, eps: float = 1e-3, mask=None) -> float:
    """Max relative disagreement between reverse-mode and central differences.

    f must map x to a scalar Tensor and be deterministic. For each coordinate
    the numeric gradient is (f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps) and the
    reported error is |analytic - numeric| / max(1e-8, |analytic| + |numeric|),
    maximized over coordinates. Coordinates where mask is False are skipped
    (structurally frozen entries).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    was_required = x.requires_grad
    x.requires_grad = True
    x.grad = None
    try:
        with Graph() as g:
            y = f(x)
        if y.size != 1:
            raise ValueError("grad_check needs a scalar-valued function")
        g.backward(y)
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        worst = _numeric_sweep(f_eval=lambda: f(x).item(), data=x.data,
                               analytic=analytic, eps=eps, mask=mask)
    finally:
        x.requires_grad = was_required
        x.grad = None
    return worst


def full_grad_check(loss_fn, params, eps: float = 1e-3, masks=None):
    """Check every (name, tensor) in params against central differences.

    loss_fn takes no arguments and must rebuild the forward pass on each
    call. Returns (max relative error, {name: per-tensor max error}).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    params = list(params)
    for _, p in params:
        p.grad = None
    with Graph() as g:
        y = loss_fn()
    if y.size != 1:
        raise ValueError("full_grad_check needs a scalar-valued loss")
    g.backward(y)
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params}
    report = {}
    worst = 0.0
    for name, p in params:
        mask = masks.get(name) if masks else None
        err = _numeric_sweep(f_eval=lambda: loss_fn().item(), data=p.data,
                             analytic=analytic[name], eps=eps, mask=mask)
        report[name] = err
        worst = max(worst, err)
    for _, p in params:
        p.grad = None
    return worst, report


def _numeric_sweep(f_eval, data, analytic, eps, mask):
    flat = data.reshape(-1)
    a = analytic.reshape(-1)
    if mask is None:
        active = range(flat.size)
    else:
        active = np.flatnonzero(np.asarray(mask).reshape(-1))
    worst = 0.0
    for i in active:
        orig = flat[i]
        flat[i] = orig + eps
        fp = f_eval()
        flat[i] = orig - eps
        fm = f_eval()
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * eps)
        ai = float(a[i])
        rel = abs(ai - numeric) / max(1e-8, abs(ai) + abs(numeric))
        worst = max(worst, rel)
    return worst
