"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive op executes eagerly on numpy arrays and, when gradients are
being tracked, appends one node to the active tape. The tape is append-only
and therefore topologically ordered by construction; ``backward`` walks it in
exact reverse order, accumulates gradients with sum semantics on fan-out, and
clears the tape. One tape lives per thread, so independent folds can train
concurrently.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


class TapeError(RuntimeError):
    """Raised on misuse of the gradient tape (non-scalar loss, empty tape)."""


class Tensor:
    """A dense float64 array, optionally participating in gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars are wrapped as constant tensors
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


class TapeNode:
    """One recorded primitive: inputs, output, and its backward rule."""

    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name: str, inputs: tuple[Tensor, ...], output: Tensor,
                 backward: Callable[[np.ndarray], tuple]):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Append-only record of primitive ops in execution (topological) order."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[TapeNode] = []


class _ThreadState(threading.local):
    def __init__(self):
        self.tape = Tape()
        self.grad_enabled = True


_STATE = _ThreadState()


def active_tape() -> Tape:
    return _STATE.tape


class no_grad:
    """Context manager disabling tape recording (evaluation, numeric probes)."""

    def __enter__(self):
        self._prev = _STATE.grad_enabled
        _STATE.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _STATE.grad_enabled = self._prev
        return False


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(name: str, out_data: np.ndarray, inputs: tuple[Tensor, ...],
            backward: Callable[[np.ndarray], tuple]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    track = _STATE.grad_enabled and any(t.requires_grad for t in inputs)
    out.requires_grad = track
    if track:
        _STATE.tape.nodes.append(TapeNode(name, inputs, out, backward))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g)  # copy: g may alias another tensor's grad buffer
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to an operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data
    ash, bsh = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _record("add", out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data
    ash, bsh = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _record("sub", out, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data
    ad, bd = a.data, b.data
    ash, bsh = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g * bd, ash), _unbroadcast(g * ad, bsh)

    return _record("mul", out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data
    ad, bd = a.data, b.data
    ash, bsh = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g / bd, ash), _unbroadcast(-g * ad / (bd * bd), bsh)

    return _record("div", out, (a, b), backward)


def pow_scalar(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    out = a.data ** exponent
    ad = a.data

    def backward(g):
        return (g * exponent * ad ** (exponent - 1.0),)

    return _record("pow", out, (a,), backward)


def clamp_min(a, floor: float) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, floor)
    mask = a.data >= floor

    def backward(g):
        return (g * mask,)

    return _record("clamp_min", out, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _record("exp", out, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = np.log(a.data)
    ad = a.data

    def backward(g):
        return (g / ad,)

    return _record("log", out, (a,), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0.0

    def backward(g):
        return (g * mask,)

    return _record("relu", out, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _record("sigmoid", out, (a,), backward)


def gelu(a) -> Tensor:
    """Exact-erf GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    out = x * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return _record("gelu", out, (a,), backward)


def softmax(a) -> Tensor:
    """Max-subtracted softmax over the last axis; rows sum to 1."""
    a = _as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _record("softmax", out, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra and structure


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    ad, bd = a.data, b.data
    ash, bsh = a.shape, b.shape

    def backward(g):
        da = _unbroadcast(g @ bd.swapaxes(-1, -2), ash)
        db = _unbroadcast(ad.swapaxes(-1, -2) @ g, bsh)
        return da, db

    return _record("matmul", out, (a, b), backward)


def permute(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    out = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return _record("permute", out, (a,), backward)


def transpose(a) -> Tensor:
    return permute(a, (1, 0))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    orig = a.shape
    out = a.data.reshape(tuple(shape))

    def backward(g):
        return (g.reshape(orig),)

    return _record("reshape", out, (a,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record("concat", out, ts, backward)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` entries along `axis`, starting at `start`."""
    a = _as_tensor(a)
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}] out of range for "
                         f"axis {axis} of shape {a.shape}")
    idx = (slice(None),) * axis + (slice(start, start + length),)
    out = a.data[idx]
    ash = a.shape

    def backward(g):
        full = np.zeros(ash, dtype=np.float64)
        full[idx] = g
        return (full,)

    return _record("narrow", out, (a,), backward)


def tensor_sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    ash = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, ash).astype(np.float64, copy=True),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, ash).astype(np.float64, copy=True),)

    return _record("sum", np.asarray(out), (a,), backward)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Per-token normalization over the last axis with population variance."""
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} "
                         f"do not match feature width {d}")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out = xhat * gamma.data + beta.data
    gd = gamma.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gd
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv_std * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return _record("layer_norm", out, (a, gamma, beta), backward)


def conv1d_temporal(x, w, bias, padding: int = 0) -> Tensor:
    """Cross-correlation over the last axis: x (Cin, L), w (Cout, Cin, k).

    Output length is L + 2*padding - k + 1; with odd k and padding k//2 the
    temporal length is preserved.
    """
    x, w, bias = _as_tensor(x), _as_tensor(w), _as_tensor(bias)
    if x.ndim != 2 or w.ndim != 3:
        raise ShapeError(f"conv1d expects x (Cin, L) and w (Cout, Cin, k), "
                         f"got {x.shape} and {w.shape}")
    cin, length = x.shape
    cout, w_cin, k = w.shape
    if w_cin != cin:
        raise ShapeError(f"conv1d channel mismatch: x has {cin}, w expects {w_cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv1d bias shape {bias.shape} != ({cout},)")
    out_len = length + 2 * padding - k + 1
    if out_len < 1:
        raise ShapeError(f"conv1d output length {out_len} < 1 "
                         f"(L={length}, k={k}, padding={padding})")
    xp = np.pad(x.data, ((0, 0), (padding, padding))) if padding else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)  # (Cin, L', k)
    cols = windows.reshape(cin, out_len, k).transpose(1, 0, 2).reshape(out_len, cin * k)
    wmat = w.data.reshape(cout, cin * k)
    out = cols @ wmat.T + bias.data  # (L', Cout)
    out = np.ascontiguousarray(out.T)

    def backward(g):
        gl = g.T  # (L', Cout)
        db = gl.sum(axis=0)
        dw = (gl.T @ cols).reshape(cout, cin, k)
        dxp = np.zeros((cin, length + 2 * padding), dtype=np.float64)
        gw = gl @ wmat  # (L', Cin*k)
        gw = gw.reshape(out_len, cin, k)
        for j in range(k):
            dxp[:, j:j + out_len] += gw[:, :, j].T
        dx = dxp[:, padding:padding + length] if padding else dxp
        return dx, dw, db

    return _record("conv1d", out, (x, w, bias), backward)


def conv2d(x, w, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation: x (Cin, H, W) or (B, Cin, H, W), w (Cout, Cin, kh, kw).

    Spatial extents follow floor((H + 2*padding - kh) / stride) + 1. A batch
    axis processes frames independently with shared weights.
    """
    x, w, bias = _as_tensor(x), _as_tensor(w), _as_tensor(bias)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects x (B, Cin, H, W) and w (Cout, Cin, kh, kw), "
                         f"got {x.shape} and {w.shape}")
    b_n, cin, h, wd_ = xd.shape
    cout, w_cin, kh, kw = w.shape
    if w_cin != cin:
        raise ShapeError(f"conv2d channel mismatch: x has {cin}, w expects {w_cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({cout},)")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd_ + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d output {oh}x{ow} < 1 (input {h}x{wd_}, "
                         f"k={kh}x{kw}, stride={stride}, padding={padding})")
    if padding:
        xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = xd
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    view = view[:, :, ::stride, ::stride][:, :, :oh, :ow]  # (B, Cin, oh, ow, kh, kw)
    cols = view.transpose(0, 2, 3, 1, 4, 5).reshape(b_n * oh * ow, cin * kh * kw)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out = (cols @ wmat.T + bias.data).reshape(b_n, oh, ow, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out[0] if squeeze else out)
    ph, pw = h + 2 * padding, wd_ + 2 * padding

    def backward(g):
        gb = g[None] if squeeze else g
        gl = gb.transpose(0, 2, 3, 1).reshape(b_n * oh * ow, cout)
        db = gl.sum(axis=0)
        dw = (gl.T @ cols).reshape(cout, cin, kh, kw)
        gcols = gl @ wmat  # (B*oh*ow, Cin*kh*kw)
        gcols = gcols.reshape(b_n, oh, ow, cin, kh, kw)
        dxp = np.zeros((b_n, cin, ph, pw), dtype=np.float64)
        for i in range(kh):
            hi = i + stride * oh
            for j in range(kw):
                wj = j + stride * ow
                dxp[:, :, i:hi:stride, j:wj:stride] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, padding:padding + h, padding:padding + wd_] if padding else dxp
        return (dx[0] if squeeze else dx), dw, db

    return _record("conv2d", out, (x, w, bias), backward)


# ---------------------------------------------------------------------------
# reverse pass and gradient checking


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; clears the active tape."""
    tape = _STATE.tape
    if loss.data.size != 1:
        tape.nodes.clear()
        raise TapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not tape.nodes:
        raise TapeError("backward called with no recorded operations on the tape")
    try:
        _accumulate(loss, np.ones_like(loss.data))
        for node in reversed(tape.nodes):
            g = node.output.grad
            if g is None:
                continue
            grads = node.backward(g)
            for t, gt in zip(node.inputs, grads):
                if gt is not None and t.requires_grad:
                    _accumulate(t, gt)
    finally:
        tape.nodes.clear()


@dataclass
class GradCheckReport:
    """Worst-coordinate comparison of analytic vs central-difference gradients."""

    max_rel_err: float
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor,
               h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare the analytic gradient of a scalar function against central
    finite differences, coordinate by coordinate.

    Relative error is |a - n| / max(|a|, |n|, 1e-8). The function must be
    deterministic.
    """
    saved_grad = x.grad
    x.grad = None
    loss = f(x)
    backward(loss)
    analytic = np.zeros_like(x.data) if x.grad is None else np.array(x.grad)
    x.grad = None

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(x).item()
            flat[i] = orig - h
            down = f(x).item()
            flat[i] = orig
            num_flat[i] = (up - down) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel))
    idx = np.unravel_index(worst, x.data.shape) if x.data.ndim else ()
    report = GradCheckReport(
        max_rel_err=float(rel.reshape(-1)[worst]),
        worst_index=tuple(int(i) for i in idx),
        analytic=float(analytic.reshape(-1)[worst]),
        numeric=float(num_flat[worst]),
        tol=tol,
    )
    x.grad = saved_grad
    return report
