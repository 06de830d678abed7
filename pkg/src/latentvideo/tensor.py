"""Reverse-mode automatic differentiation on numpy arrays.

A ``Tensor`` wraps a float array plus an optional gradient buffer. Executing
an op while a ``Tape`` is active appends one record (inputs, output, backward
rule) in execution order; ``backward`` walks the records in reverse and
accumulates gradients additively. Outside a tape, ops run forward-only.

Float32 is the working precision. Tests may construct float64 tensors for
finite-difference headroom; every op preserves the dtype of its inputs.
"""

from __future__ import annotations

import math
import threading

import numpy as np

from .errors import DimensionError, NumericError

DEFAULT_DTYPE = np.float32


class Tensor:
    """N-dimensional float array with an optional same-shape gradient."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

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
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    def __radd__(self, other):
        return add_scalar(self, float(other))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, float(other))

    def __rmul__(self, other):
        return mul_scalar(self, float(other))

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class OpRecord:
    """One executed op: input/output references plus its backward rule."""

    __slots__ = ("name", "inputs", "output", "backward_fn")

    def __init__(self, name, inputs, output, backward_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of ops executed while this tape is active.

    Usable as a context manager; tapes nest, and the innermost active one
    receives the records. ``no_grad`` suspends recording entirely. The
    active-tape stack is thread-local, so forward-only work (encoding,
    rollouts) can fan out across threads.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def zero_grads(self):
        """Clear the gradient of every tensor touched by this tape."""
        for rec in self.records:
            rec.output.grad = None
            for t in rec.inputs:
                t.grad = None


class no_grad:
    """Context manager that disables recording (forward-only execution)."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False


_TLS = threading.local()


def _tape_stack():
    stack = getattr(_TLS, "tape_stack", None)
    if stack is None:
        stack = []
        _TLS.tape_stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


def _make_output(data, inputs, name, backward_fn):
    """Wrap op output; record on the active tape when a grad path exists."""
    tape = _active_tape()
    requires = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    if requires:
        tape.records.append(OpRecord(name, tuple(inputs), out, backward_fn))
    return out


def _accumulate(tensor, grad, claimed=None):
    if grad is None or not tensor.requires_grad:
        return
    if tensor.grad is not None:
        tensor.grad += grad.astype(tensor.data.dtype, copy=False)
        return
    # adopt the pass buffer when it is exclusively ours; otherwise copy so
    # two tensors never alias one gradient buffer
    exclusive = (
        claimed is not None
        and grad.base is None
        and grad.dtype == tensor.data.dtype
        and id(grad) not in claimed
    )
    if exclusive:
        tensor.grad = grad
        claimed.add(id(grad))
    else:
        tensor.grad = np.array(grad, dtype=tensor.data.dtype)


def backward(tape, root):
    """Propagate d(root)/d(tensor) into every reachable tensor's ``grad``.

    ``root`` must be scalar. Each call is one independent reverse pass over
    the tape (every record visited at most once); its results add into the
    persistent ``grad`` buffers, so repeated calls accumulate unless
    ``tape.zero_grads()`` clears them in between.
    """
    if root.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.shape}")
    pass_grads = {id(root): (root, np.ones_like(root.data))}
    for rec in reversed(tape.records):
        entry = pass_grads.get(id(rec.output))
        if entry is None:
            continue
        grads = rec.backward_fn(entry[1])
        for tensor, grad in zip(rec.inputs, grads):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in pass_grads:
                pass_grads[key] = (tensor, pass_grads[key][1] + grad)
            else:
                pass_grads[key] = (tensor, grad)
    claimed = set()
    for tensor, grad in pass_grads.values():
        _accumulate(tensor, grad, claimed)


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    _check_same_shape(a, b, "add")
    return _make_output(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a, b):
    _check_same_shape(a, b, "sub")
    return _make_output(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a, b):
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make_output(ad * bd, (a, b), "mul", lambda g: (g * bd, g * ad))


def add_scalar(a, c):
    return _make_output(a.data + c, (a,), "add_scalar", lambda g: (g,))


def mul_scalar(a, c):
    return _make_output(a.data * c, (a,), "mul_scalar", lambda g: (g * c,))


def add_bias(x, b):
    """Add a vector along the trailing axis (the one permitted broadcast)."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias: input {x.shape} vs bias {b.shape}")
    lead = tuple(range(x.ndim - 1))

    def bwd(g):
        return g, g.sum(axis=lead)

    return _make_output(x.data + b.data, (x, b), "add_bias", bwd)


# ---------------------------------------------------------------------------
# matrix products


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not chain")
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _make_output(ad @ bd, (a, b), "matmul", bwd)


def bmm(a, b):
    """Batched matmul: [B,M,K] @ [B,K,N] -> [B,M,N]."""
    if (
        a.ndim != 3
        or b.ndim != 3
        or a.shape[0] != b.shape[0]
        or a.shape[2] != b.shape[1]
    ):
        raise DimensionError(f"bmm: shapes {a.shape} and {b.shape} do not chain")
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g

    return _make_output(ad @ bd, (a, b), "bmm", bwd)


# ---------------------------------------------------------------------------
# activations


def relu(x):
    mask = x.data > 0
    return _make_output(
        np.where(mask, x.data, 0), (x,), "relu", lambda g: (g * mask,)
    )


def leaky_relu(x, alpha=0.2):
    mask = x.data > 0
    slope = np.where(mask, 1.0, alpha).astype(x.data.dtype)
    return _make_output(x.data * slope, (x,), "leaky_relu", lambda g: (g * slope,))


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x):
    """Tanh-approximation GELU: 0.5 x (1 + tanh(c (x + a x^3)))."""
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_C * (xd + _GELU_A * (x2 * xd)))
    out = 0.5 * xd * (1.0 + t)

    def bwd(g):
        dinner = _GELU_C * (1.0 + (3.0 * _GELU_A) * x2)
        return (g * (0.5 * (1.0 + t) + (0.5 * xd) * ((1.0 - t * t) * dinner)),)

    return _make_output(out, (x,), "gelu", bwd)


def tanh(x):
    y = np.tanh(x.data)
    return _make_output(y, (x,), "tanh", lambda g: (g * (1.0 - y * y),))


def softplus(x):
    """log(1 + e^x), numerically stable; backward is the logistic sigmoid."""
    xd = x.data
    out = np.logaddexp(0.0, xd).astype(xd.dtype)

    def bwd(g):
        sig = 0.5 * (1.0 + np.tanh(0.5 * xd))
        return (g * sig,)

    return _make_output(out, (x,), "softplus", bwd)


# ---------------------------------------------------------------------------
# normalization and probability


def softmax(x, axis=-1):
    """Max-stabilized softmax along ``axis``. Rejects NaN inputs."""
    xd = x.data
    if np.isnan(xd).any():
        raise NumericError("softmax: NaN in input")
    shifted = xd - np.max(xd, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return ((g - inner) * y,)

    return _make_output(y, (x,), "softmax", bwd)


_STRICT_UPPER_CACHE: dict = {}


def _strict_upper(n):
    mask = _STRICT_UPPER_CACHE.get(n)
    if mask is None:
        mask = np.triu(np.ones((n, n), dtype=bool), k=1)
        _STRICT_UPPER_CACHE[n] = mask
    return mask


def causal_softmax(scores, scale=1.0):
    """Scaled, causally masked softmax over the last axis of [B, L, L] scores.

    Row i keeps columns <= i; later columns get exactly zero weight, so the
    output at row i is independent of any future key. Fused so the attention
    hot path touches the L x L buffers as few times as possible.
    """
    xd = scores.data
    if xd.ndim != 3 or xd.shape[1] != xd.shape[2]:
        raise DimensionError(f"causal_softmax: need [B, L, L] scores, got {xd.shape}")
    if np.isnan(xd).any():
        raise NumericError("causal_softmax: NaN in input")
    n = xd.shape[1]
    x = xd * scale
    x[:, _strict_upper(n)] = -np.inf
    x -= x.max(axis=2, keepdims=True)
    np.exp(x, out=x)
    x /= x.sum(axis=2, keepdims=True)
    y = x

    def bwd(g):
        inner = np.einsum("bij,bij->bi", g, y)
        out = g - inner[:, :, None]
        out *= y
        if scale != 1.0:
            out *= scale
        return (out,)

    return _make_output(y, (scores,), "causal_softmax", bwd)


def cross_entropy(logits, targets):
    """Mean negative log-likelihood of integer ``targets`` under row logits.

    Gradient is (softmax - one_hot) / N, the usual fused form.
    """
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be 2-d, got {logits.shape}")
    targets = np.asarray(targets)
    n, v = logits.shape
    if targets.shape != (n,):
        raise DimensionError(
            f"cross_entropy: targets {targets.shape} vs logits rows {n}"
        )
    if targets.min(initial=0) < 0 or targets.max(initial=-1) >= v:
        raise IndexError(f"cross_entropy: target outside [0, {v})")
    xd = logits.data
    m = xd.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(xd - m).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    nll = lse[:, 0] - xd[rows, targets]
    out = nll.mean(dtype=xd.dtype)

    def bwd(g):
        p = np.exp(xd - lse)
        p[rows, targets] -= 1.0
        return (p * (g / n),)

    return _make_output(out, (logits,), "cross_entropy", bwd)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the trailing axis to zero mean, unit variance, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: params {gain.shape}/{bias.shape} vs last axis {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gain.data + bias.data
    lead = tuple(range(x.ndim - 1))

    def bwd(g):
        gh = g * gain.data
        m1 = gh.mean(axis=-1, keepdims=True)
        m2 = (gh * xhat).mean(axis=-1, keepdims=True)
        dx = (gh - m1 - xhat * m2) * inv
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make_output(out.astype(xd.dtype), (x, gain, bias), "layer_norm", bwd)


def l2_normalize(x, axis, eps=1e-8):
    """Scale vectors along ``axis`` to unit Euclidean norm."""
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True) + eps)
    y = xd / norm

    def bwd(g):
        inner = (g * xd).sum(axis=axis, keepdims=True)
        return (g / norm - xd * (inner / norm**3),)

    return _make_output(y.astype(xd.dtype), (x,), "l2_normalize", bwd)


# ---------------------------------------------------------------------------
# structure


def reshape(x, shape):
    in_shape = x.shape
    return _make_output(
        x.data.reshape(shape), (x,), "reshape", lambda g: (g.reshape(in_shape),)
    )


def transpose(x, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make_output(
        x.data.transpose(axes), (x,), "transpose", lambda g: (g.transpose(inv),)
    )


def gather_rows(x, indices):
    """Select rows of a 2-d tensor; backward scatter-adds into them.

    Serves both embedding lookup (``x`` a table) and position selection
    (``x`` an activation).
    """
    if x.ndim != 2:
        raise DimensionError(f"gather_rows: need 2-d input, got {x.shape}")
    indices = np.asarray(indices)
    if indices.ndim != 1:
        raise DimensionError(f"gather_rows: need 1-d indices, got {indices.shape}")
    if indices.size and (indices.min() < 0 or indices.max() >= x.shape[0]):
        raise IndexError(f"gather_rows: index outside [0, {x.shape[0]})")

    def bwd(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, indices, g)
        return (dx,)

    return _make_output(x.data[indices], (x,), "gather_rows", bwd)


embedding = gather_rows


def masked_fill(x, mask, value):
    """Replace entries where ``mask`` is False by ``value`` (a constant)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError(f"masked_fill: mask {mask.shape} vs input {x.shape}")
    out = np.where(mask, x.data, x.data.dtype.type(value))
    return _make_output(out, (x,), "masked_fill", lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions


def sum_all(x):
    def bwd(g):
        return (np.full_like(x.data, g.reshape(())),)

    return _make_output(x.data.sum(dtype=x.data.dtype), (x,), "sum_all", bwd)


def mean_all(x):
    n = x.size

    def bwd(g):
        return (np.full_like(x.data, g.reshape(()) / n),)

    return _make_output(x.data.mean(dtype=x.data.dtype), (x,), "mean_all", bwd)


def mse(a, b):
    """Mean squared difference, composed from primitive ops."""
    d = sub(a, b)
    return mean_all(mul(d, d))


# ---------------------------------------------------------------------------
# gradient routing


def stop_gradient(x):
    """Forward identity (shared buffer, bit-identical), no gradient path."""
    return Tensor(x.data, requires_grad=False)


def straight_through(x, values):
    """Output ``values`` verbatim; pass the upstream gradient to ``x``.

    ``values`` must match ``x``'s shape. The output holds ``values``
    bit-for-bit, while backward treats the op as identity on ``x``.
    """
    values = np.asarray(values, dtype=x.data.dtype)
    if values.shape != x.shape:
        raise DimensionError(f"straight_through: {values.shape} vs {x.shape}")
    return _make_output(values, (x,), "straight_through", lambda g: (g,))
