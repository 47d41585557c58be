"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation the network needs is defined here as a
function that records its adjoint rule on an ambient tape. Calling
``backward`` on a scalar replays the tape in reverse execution order and
accumulates gradients into every ``requires_grad`` leaf exactly once.

Conventions:
  * all data is float64, row-major;
  * convolutions are cross-correlations (no kernel flip);
  * "same" padding is symmetric with the extra sample on the right;
  * tensors are immutable values once produced, a tape belongs to one
    logical thread.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np


class Tape:
    """Ordered record of executed operations and their adjoint rules.

    A record is ``(out, inputs, adjoint)`` where ``adjoint(grad_out)``
    returns one gradient array per input (or None for non-differentiable
    slots). The tape is consumed by a single ``backward`` call; the epoch
    counter detects stale reuse.
    """

    def __init__(self):
        self.records: list[tuple["Tensor", tuple["Tensor", ...], Callable]] = []
        self.epoch = 0

    def record(self, out: "Tensor", inputs: tuple["Tensor", ...], adjoint: Callable) -> None:
        out._tape = self
        out._epoch = self.epoch
        self.records.append((out, inputs, adjoint))


_TAPE = Tape()
_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (pure forward evaluation)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


@contextlib.contextmanager
def fresh_tape():
    """Run with a private tape, restoring the ambient one afterwards."""
    global _TAPE
    saved = _TAPE
    _TAPE = Tape()
    try:
        yield _TAPE
    finally:
        _TAPE = saved


class Tensor:
    """n-dimensional float64 array participating in reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "_grad", "_tape", "_epoch")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._grad: np.ndarray | None = None
        self._tape: Tape | None = None
        self._epoch: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self) -> np.ndarray | None:
        """Accumulated gradient; zeros for an untouched requires_grad leaf."""
        if self._grad is not None:
            return self._grad
        if self.requires_grad:
            return np.zeros_like(self.data)
        return None

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars and arrays are lifted to constant tensors.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t._grad is None:
        t._grad = np.zeros_like(t.data)
    t._grad += g


def _make_out(data: np.ndarray, inputs: tuple[Tensor, ...], adjoint: Callable) -> Tensor:
    needs = _GRAD_ENABLED[-1] and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        _TAPE.record(out, inputs, adjoint)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    def adjoint(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make_out(a.data + b.data, (a, b), adjoint)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def adjoint(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make_out(a.data - b.data, (a, b), adjoint)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def adjoint(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make_out(a.data * b.data, (a, b), adjoint)


def div(a: Tensor, b: Tensor) -> Tensor:
    def adjoint(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make_out(a.data / b.data, (a, b), adjoint)


def neg(a: Tensor) -> Tensor:
    return _make_out(-a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _make_out(out_data, (a,), lambda g: (g * out_data,))


def log(a: Tensor) -> Tensor:
    """Natural log; the caller guards the domain (see clip)."""
    return _make_out(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)
    return _make_out(out_data, (a,), lambda g: (g / (2.0 * out_data),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the clamp is inactive."""
    inside = (a.data >= lo) & (a.data <= hi)
    return _make_out(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make_out(a.data * mask, (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split form stays finite for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _make_out(s, (a,), lambda g: (g * s * (1.0 - s),))


def swish(a: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    s = _sigmoid(a.data)
    out_data = a.data * s
    return _make_out(out_data, (a,), lambda g: (g * (s + out_data * (1.0 - s)),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _make_out(t, (a,), lambda g: (g * (1.0 - t * t),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Probability map along ``axis``; max-subtraction keeps it stable."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def adjoint(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _make_out(s, (a,), adjoint)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.data.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def adjoint(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make_out(out_data, (a,), adjoint)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.data.ndim)
    if axes is None:
        count = a.data.size
    else:
        count = int(np.prod([a.shape[ax] for ax in axes]))
    out_data = a.data.mean(axis=axes, keepdims=keepdims)

    def adjoint(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy() / count,)

    return _make_out(out_data, (a,), adjoint)


def global_avg_pool(a: Tensor) -> Tensor:
    """Per-channel temporal mean: [C,N] -> [C] or [B,C,N] -> [B,C]."""
    if a.data.ndim not in (2, 3):
        raise ValueError(f"global_avg_pool expects [C,N] or [B,C,N], got shape {a.shape}")
    if a.shape[-1] < 1:
        raise ValueError("global_avg_pool: empty time axis")
    return tmean(a, axis=-1)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def adjoint(g):
        return (g.reshape(a.shape),)

    return _make_out(a.data.reshape(shape), (a,), adjoint)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose expects a 2-d tensor, got shape {a.shape}")
    return _make_out(a.data.T.copy(), (a,), lambda g: (g.T.copy(),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; every other extent must match."""
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty tensor list")
    ndim = tensors[0].data.ndim
    axis = axis % ndim if ndim else 0
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != ndim or any(
            i != axis and other[i] != ref[i] for i in range(ndim)
        ):
            raise ValueError(
                f"concat: shape {tuple(other)} incompatible with {tuple(ref)} on axis {axis}"
            )
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def adjoint(g):
        pieces = []
        for i in range(len(tensors)):
            sl = [slice(None)] * ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)].copy())
        return tuple(pieces)

    return _make_out(out_data, tuple(tensors), adjoint)


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup ``table[indices]``; gradient flows only to the taken rows."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        bad = idx[(idx < 0) | (idx >= table.shape[0])][0]
        raise IndexError(f"gather_rows: index {bad} out of range for table with {table.shape[0]} rows")

    def adjoint(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make_out(table.data[idx].copy(), (table,), adjoint)


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner extents differ, {a.shape} x {b.shape}")

    def adjoint(g):
        return g @ b.data.T, a.data.T @ g

    return _make_out(a.data @ b.data, (a, b), adjoint)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product [B,M,K] @ [B,K,P] (or a shared [K,P])."""
    if a.data.ndim != 3 or b.data.ndim not in (2, 3):
        raise ValueError(f"bmm expects [B,M,K] @ [B,K,P]|[K,P], got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2 if b.data.ndim == 3 else 0]:
        raise ValueError(f"bmm: inner extents differ, {a.shape} x {b.shape}")

    def adjoint(g):
        if b.data.ndim == 3:
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
        else:
            ga = g @ b.data.T
            gb = np.einsum("bmk,bmp->kp", a.data, g)
        return ga, gb

    return _make_out(a.data @ b.data, (a, b), adjoint)


def swap_last2(a: Tensor) -> Tensor:
    """Transpose the trailing two axes (batched transpose)."""
    if a.data.ndim < 2:
        raise ValueError(f"swap_last2 needs >= 2 dims, got shape {a.shape}")
    return _make_out(
        np.swapaxes(a.data, -1, -2).copy(), (a,),
        lambda g: (np.swapaxes(g, -1, -2).copy(),),
    )


def _pad_amount(n: int, k: int, stride: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        n_out = -(-n // stride)  # ceil
        total = max(0, (n_out - 1) * stride + k - n)
        left = total // 2
        return left, total - left
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv1d(x: Tensor, kernels: Tensor, stride: int = 1, padding: str = "valid") -> Tensor:
    """Cross-correlate [C_in,N] (or [B,C_in,N]) with kernels [C_out,C_in,K].

    Output length is floor((N + pad_total - K)/stride) + 1; "same" with
    stride 1 preserves N.
    """
    if stride < 1:
        raise ValueError(f"conv1d: stride must be positive, got {stride}")
    if kernels.data.ndim != 3:
        raise ValueError(f"conv1d: kernels must be [C_out,C_in,K], got shape {kernels.shape}")
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ValueError(f"conv1d: input must be [C,N] or [B,C,N], got shape {x.shape}")
    c_out, c_in, k = kernels.shape
    if xd.shape[1] != c_in:
        raise ValueError(
            f"conv1d: kernels expect C_in={c_in} but input has C_in={xd.shape[1]}"
        )
    n = xd.shape[2]
    pad_l, pad_r = _pad_amount(n, k, stride, padding)
    if k > n + pad_l + pad_r:
        raise ValueError(f"conv1d: kernel size {k} exceeds padded length {n + pad_l + pad_r}")
    xp = np.pad(xd, ((0, 0), (0, 0), (pad_l, pad_r)))
    n_out = (xp.shape[2] - k) // stride + 1
    wd = kernels.data
    out = np.zeros((xd.shape[0], c_out, n_out))
    for j in range(k):
        xs = xp[:, :, j : j + stride * n_out : stride]
        out += np.einsum("bcn,oc->bon", xs, wd[:, :, j])

    def adjoint(g):
        gb = g[None] if squeeze else g
        gx_p = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        for j in range(k):
            xs = xp[:, :, j : j + stride * n_out : stride]
            gw[:, :, j] = np.einsum("bon,bcn->oc", gb, xs)
            gx_p[:, :, j : j + stride * n_out : stride] += np.einsum(
                "bon,oc->bcn", gb, wd[:, :, j]
            )
        gx = gx_p[:, :, pad_l : pad_l + n]
        return (gx[0] if squeeze else gx), gw

    return _make_out(out[0] if squeeze else out, (x, kernels), adjoint)


def depthwise_conv1d(x: Tensor, kernels: Tensor, stride: int = 1, padding: str = "valid") -> Tensor:
    """Per-channel cross-correlation with one kernel per channel [C,K].

    Channels never mix: output channel c depends only on input channel c.
    """
    if stride < 1:
        raise ValueError(f"depthwise_conv1d: stride must be positive, got {stride}")
    if kernels.data.ndim != 2:
        raise ValueError(f"depthwise_conv1d: kernels must be [C,K], got shape {kernels.shape}")
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ValueError(f"depthwise_conv1d: input must be [C,N] or [B,C,N], got shape {x.shape}")
    c, k = kernels.shape
    if xd.shape[1] != c:
        raise ValueError(
            f"depthwise_conv1d: kernel channel count {c} != input channel count {xd.shape[1]}"
        )
    n = xd.shape[2]
    pad_l, pad_r = _pad_amount(n, k, stride, padding)
    if k > n + pad_l + pad_r:
        raise ValueError(f"depthwise_conv1d: kernel size {k} exceeds padded length {n + pad_l + pad_r}")
    xp = np.pad(xd, ((0, 0), (0, 0), (pad_l, pad_r)))
    n_out = (xp.shape[2] - k) // stride + 1
    wd = kernels.data
    out = np.zeros((xd.shape[0], c, n_out))
    for j in range(k):
        out += xp[:, :, j : j + stride * n_out : stride] * wd[None, :, j, None]

    def adjoint(g):
        gb = g[None] if squeeze else g
        gx_p = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        for j in range(k):
            xs = xp[:, :, j : j + stride * n_out : stride]
            gw[:, j] = np.einsum("bcn,bcn->c", gb, xs)
            gx_p[:, :, j : j + stride * n_out : stride] += gb * wd[None, :, j, None]
        gx = gx_p[:, :, pad_l : pad_l + n]
        return (gx[0] if squeeze else gx), gw

    return _make_out(out[0] if squeeze else out, (x, kernels), adjoint)


# ---------------------------------------------------------------------------
# backward pass and the finite-difference oracle
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    The tape that produced ``loss`` is consumed; calling backward again
    without a new forward pass raises.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        # a bare leaf: gradient of itself
        if loss.requires_grad:
            loss._grad = np.ones_like(loss.data)
        return
    if loss._epoch != tape.epoch:
        raise RuntimeError("backward: tape already consumed; run a new forward pass")
    loss._grad = np.ones_like(loss.data)
    for out, inputs, adjoint in reversed(tape.records):
        if out._grad is None:
            continue
        grads = adjoint(out._grad)
        for t, g in zip(inputs, grads):
            if g is not None and (t.requires_grad or t._tape is not None):
                _accumulate(t, g)
    tape.records.clear()
    tape.epoch += 1


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between the autodiff gradient of ``f`` at ``x``
    and central differences (f(x+eps e) - f(x-eps e)) / 2 eps per coordinate.

    Relative error uses a max(|a|,|b|,1e-8) denominator.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    with fresh_tape():
        out = f(probe)
        if out.data.size != 1:
            raise ValueError("grad_check: f must map to a scalar")
        backward(out)
        analytic = probe.grad.copy()

    flat = probe.data.reshape(-1)
    numeric = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f(probe).data)
            flat[i] = orig - eps
            f_minus = float(f(probe).data)
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * eps)

    a = analytic.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(a - numeric) / denom))
