"""Dense float32 tensors and a define-by-run reverse-mode autodiff tape.

Every differentiable computation in the package is assembled from the ops in
this module.  Ops evaluate eagerly with numpy and, while a Tape is active,
append a record holding the output tensor plus one pullback closure per input
that requires grad.  The tape is rebuilt on every forward pass; backward()
walks it once in reverse and accumulates gradients, so a tensor used in
several places receives the sum of all its downstream contributions.

Tensors are float32 by default.  A float64 instance can be constructed
explicitly (dtype=np.float64); ops propagate the dtype of their inputs, which
is what the finite-difference shadow evaluation in gradcheck relies on.

Each op checks its forward result for NaN/Inf and raises NumericError at the
op that produced the bad value rather than letting it propagate.
"""

from __future__ import annotations

import math
import threading

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, UsageError, ValidationError

_DEFAULT_DTYPE = np.float32


class Tensor:
    """An n-d array with an optional gradient buffer of the same shape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=_DEFAULT_DTYPE if dtype is None else dtype)
        if arr.dtype not in (np.float32, np.float64):
            raise ValidationError(f"tensors are float32/float64, got {arr.dtype}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{flag})"


def _fresh(out_data) -> Tensor:
    # construct without the __init__ copy; out_data is always a new array we own
    t = Tensor.__new__(Tensor)
    t.data = out_data
    t.requires_grad = False
    t.grad = None
    return t


_tls = threading.local()


def _stack():
    s = getattr(_tls, "stack", None)
    if s is None:
        s = _tls.stack = []
    return s


def _active_tape():
    s = _stack()
    return s[-1] if s else None


class Tape:
    """Ordered record of one forward pass, consumed by backward().

    Entering the tape as a context manager makes it the recording target for
    ops executed on the same thread.  Records are appended in execution order,
    so a reverse walk sees each output after everything that consumed it.
    """

    def __init__(self):
        self._records = []  # (out_tensor, [(input_tensor, pullback), ...], op_name)
        self._produced = set()

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self, "tape contexts must nest"
        return False

    def _record(self, out, pulls, op):
        self._records.append((out, pulls, op))
        self._produced.add(id(out))

    def __len__(self):
        return len(self._records)


class pause_tape:
    """Suspends recording inside a `with` block; used for stop-gradient paths."""

    def __enter__(self):
        _stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _stack().pop()
        return False


def _finite_or_raise(arr, op):
    if not np.isfinite(arr).all():
        raise NumericError(f"{op} produced non-finite values")


def _emit(out_data, op, pulls):
    """Wrap a raw result; record pullbacks for grad-requiring inputs if a tape is live."""
    _finite_or_raise(out_data, op)
    out = _fresh(out_data)
    live = [(t, pb) for t, pb in pulls if t.requires_grad]
    if live:
        out.requires_grad = True
        tape = _active_tape()
        if tape is not None:
            tape._record(out, live, op)
    return out


def backward(loss, tape: Tape):
    """Populate .grad on every requires_grad tensor that feeds `loss`.

    Gradients add into existing .grad buffers, so leaves keep accumulating
    across calls until zero_grads() clears them.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward expects a scalar loss, got shape {tuple(loss.shape)}")
    if id(loss) not in tape._produced:
        raise UsageError("loss was not produced under this tape")
    flowing = {id(loss): np.ones_like(loss.data)}
    for out, pulls, op in reversed(tape._records):
        g = flowing.pop(id(out), None)
        if g is None:
            continue
        _finite_or_raise(g, f"backward of {op}")
        out.grad = g if out.grad is None else out.grad + g
        for t, pb in pulls:
            contrib = pb(g)
            tid = id(t)
            if tid in tape._produced:
                # intermediate: park until its defining record is reached
                flowing[tid] = contrib if tid not in flowing else flowing[tid] + contrib
            else:
                t.grad = contrib if t.grad is None else t.grad + contrib


def zero_grads(params):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.data.ndim}-d and {b.data.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def pull_a(g):
        return g @ b.data.T

    def pull_b(g):
        return a.data.T @ g

    return _emit(out, "matmul", [(a, pull_a), (b, pull_b)])


def _im2col(xp, kh, kw, stride):
    # xp already padded, layout (N, C, Hp, Wp)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(n * ho * wo, c * kh * kw), ho, wo


def _corr2d_raw(x, w, stride, pads):
    """Plain cross-correlation on ndarrays.  Returns (out, cols) with the
    im2col matrix kept so conv2d's weight pullback is a single gemm."""
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    ph, pw = pads
    if cw != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {cw}")
    hp, wp = h + 2 * ph, wd + 2 * pw
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    if (hp - kh) % stride or (wp - kw) % stride:
        raise ShapeError("conv2d output extent is not integral for this stride/pad")
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    out = cols @ w.reshape(f, -1).T
    out = np.ascontiguousarray(out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))
    return out, cols, ho, wo


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation, NCHW input against (F, C, kh, kw) kernels."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d expects a 4-d input and a 4-d kernel")
    if stride < 1 or pad < 0:
        raise ShapeError(f"bad stride/pad: {stride}/{pad}")
    out, cols, ho, wo = _corr2d_raw(x.data, w.data, stride, (pad, pad))
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape

    def pull_w(g):
        gf = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, f)
        return (gf.T @ cols).reshape(w.shape)

    def pull_x(g):
        # dilate by the stride, then full-correlate with the flipped kernel
        if stride > 1:
            gd = np.zeros((n, f, (ho - 1) * stride + 1, (wo - 1) * stride + 1), g.dtype)
            gd[:, :, ::stride, ::stride] = g
        else:
            gd = g
        wf = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        full, _, _, _ = _corr2d_raw(gd, wf, 1, (kh - 1, kw - 1))
        return np.ascontiguousarray(full[:, :, pad:pad + h, pad:pad + wd])

    return _emit(out, "conv2d", [(x, pull_x), (w, pull_w)])


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    mask = x.data > 0  # subgradient 0 at the kink

    def pull(g):
        return g * mask

    return _emit(out, "relu", [(x, pull)])


def avgpool2d(x: Tensor, k: int) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError("avgpool2d expects a 4-d input")
    n, c, h, w = x.shape
    if k < 1 or h % k or w % k:
        raise ShapeError(f"pool window {k} does not tile {h}x{w}")
    ho, wo = h // k, w // k
    out = x.data.reshape(n, c, ho, k, wo, k).mean(axis=(3, 5))
    inv = 1.0 / (k * k)

    def pull(g):
        spread = np.broadcast_to((g * inv)[:, :, :, None, :, None], (n, c, ho, k, wo, k))
        return spread.reshape(n, c, h, w)

    return _emit(out, "avgpool2d", [(x, pull)])


def flatten(x: Tensor) -> Tensor:
    if x.data.ndim < 2:
        raise ShapeError("flatten expects at least 2-d input")
    n = x.shape[0]
    out = x.data.reshape(n, -1)

    def pull(g):
        return g.reshape(x.shape)

    return _emit(out, "flatten", [(x, pull)])


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    if b.data.ndim != 1:
        raise ShapeError("bias must be 1-d")
    if x.data.ndim == 2:
        if b.shape[0] != x.shape[1]:
            raise ShapeError(f"bias length {b.shape[0]} vs feature dim {x.shape[1]}")
        out = x.data + b.data

        def pull_b(g):
            return g.sum(axis=0)

    elif x.data.ndim == 4:
        if b.shape[0] != x.shape[1]:
            raise ShapeError(f"bias length {b.shape[0]} vs channel dim {x.shape[1]}")
        out = x.data + b.data.reshape(1, -1, 1, 1)

        def pull_b(g):
            return g.sum(axis=(0, 2, 3))

    else:
        raise ShapeError("bias_add supports 2-d or 4-d inputs")

    def pull_x(g):
        return g

    return _emit(out, "bias_add", [(x, pull_x), (b, pull_b)])


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = a.data + b.data

    def pull_a(g):
        return g if a.data.shape == out.shape else np.asarray(g.sum(), a.data.dtype)

    def pull_b(g):
        return g if b.data.shape == out.shape else np.asarray(g.sum(), b.data.dtype)

    return _emit(out, "add", [(a, pull_a), (b, pull_b)])


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    out = a.data - b.data

    def pull_a(g):
        return g

    def pull_b(g):
        return -g

    return _emit(out, "sub", [(a, pull_a), (b, pull_b)])


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = a.data * b.data

    def pull_a(g):
        return g * b.data

    def pull_b(g):
        return g * a.data

    return _emit(out, "mul", [(a, pull_a), (b, pull_b)])


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    if not math.isfinite(c):
        raise ValidationError(f"scale factor must be finite, got {c}")
    out = x.data * c

    def pull(g):
        return g * c

    return _emit(out, "scale", [(x, pull)])


def scale_add(a: Tensor, b: Tensor, lam: float) -> Tensor:
    """lam * a + (1 - lam) * b, the linear mixing primitive."""
    lam = float(lam)
    if not math.isfinite(lam):
        raise ValidationError(f"mixing ratio must be finite, got {lam}")
    if a.shape != b.shape:
        raise ShapeError(f"scale_add shape mismatch: {a.shape} vs {b.shape}")
    out = lam * a.data + (1.0 - lam) * b.data

    def pull_a(g):
        return g * lam

    def pull_b(g):
        return g * (1.0 - lam)

    return _emit(out, "scale_add", [(a, pull_a), (b, pull_b)])


def tsum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), x.data.dtype)

    def pull(g):
        return np.broadcast_to(g, x.shape)

    return _emit(out, "tsum", [(x, pull)])


def tmean(x: Tensor) -> Tensor:
    out = np.asarray(x.data.mean(), x.data.dtype)
    inv = 1.0 / x.data.size

    def pull(g):
        return np.broadcast_to(g * inv, x.shape)

    return _emit(out, "tmean", [(x, pull)])


def l2_norm(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Smoothed Euclidean norm sqrt(sum(x^2) + eps) of the whole tensor.

    The eps keeps the gradient x/norm finite at the origin.
    """
    sq = np.asarray((x.data * x.data).sum(), x.data.dtype)
    out = np.sqrt(sq + np.asarray(eps, x.data.dtype))

    def pull(g):
        return (g / out) * x.data

    return _emit(np.asarray(out, x.data.dtype), "l2_norm", [(x, pull)])


def mean_row_norm(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Mean over rows of the smoothed per-row Euclidean norm (2-d input)."""
    if x.data.ndim != 2:
        raise ShapeError("mean_row_norm expects a 2-d input")
    n = x.shape[0]
    sq = (x.data * x.data).sum(axis=1)
    norms = np.sqrt(sq + np.asarray(eps, x.data.dtype))
    out = np.asarray(norms.mean(), x.data.dtype)

    def pull(g):
        return (g / n) * (x.data / norms[:, None])

    return _emit(out, "mean_row_norm", [(x, pull)])


def mean_row_sumsq(x: Tensor) -> Tensor:
    """Mean over rows of the per-row squared Euclidean norm (2-d input)."""
    if x.data.ndim != 2:
        raise ShapeError("mean_row_sumsq expects a 2-d input")
    n = x.shape[0]
    out = np.asarray((x.data * x.data).sum() / n, x.data.dtype)

    def pull(g):
        return g * (2.0 / n) * x.data

    return _emit(out, "mean_row_sumsq", [(x, pull)])


def softmax_cross_entropy(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean cross-entropy between softmax(logits) and soft target rows.

    Targets are treated as constants: they never receive gradient.  Rows must
    lie on the probability simplex to 1e-5.  Uses the max-shift trick so large
    logits cannot overflow.
    """
    if logits.data.ndim != 2 or logits.shape != targets.shape:
        raise ShapeError(f"logits {logits.shape} vs targets {targets.shape}")
    n, k = logits.shape
    if k < 2:
        raise ValidationError("need at least 2 classes")
    rowsum = targets.data.sum(axis=1)
    bad = np.abs(rowsum - 1.0) > 1e-5
    if bad.any():
        i = int(np.argmax(bad))
        raise ValidationError(f"target row {i} sums to {rowsum[i]!r}, not 1")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    se = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(se)
    out = np.asarray(-(targets.data * logp).sum(axis=1).mean(), logits.data.dtype)
    soft = ez / se

    def pull(g):
        return (soft - targets.data) * (g / n)

    return _emit(out, "softmax_cross_entropy", [(logits, pull)])


# ---------------------------------------------------------------------------
# optimizer


def make_velocities(params):
    """One zero buffer per parameter, consumed by sgd_step."""
    return [np.zeros_like(p.data) for p in params]


def sgd_step(params, velocities, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
    """v <- momentum*v + grad + weight_decay*param;  param <- param - lr*v.

    Updates happen in place.  A parameter whose grad is None is treated as
    having zero gradient (weight decay and momentum still apply).
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if len(params) != len(velocities):
        raise UsageError("params and velocities must align")
    for p, v in zip(params, velocities):
        g = p.grad if p.grad is not None else 0.0
        np.multiply(v, momentum, out=v)
        v += g
        if weight_decay:
            v += weight_decay * p.data
        p.data -= lr * v
