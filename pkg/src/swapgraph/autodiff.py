"""Reverse-mode automatic differentiation over dense float64 tensors.

A ``Tape`` records every differentiable operation in execution order while it
is active (``with Tape() as tape: ...``).  ``tape.backward(loss)`` replays the
record in reverse, accumulating gradients into every ``requires_grad`` leaf.
Outside a tape, all ops run as plain numpy forward computations.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "concat",
    "take",
    "transpose",
    "clamp",
    "power",
    "absolute",
    "matmul",
    "conv2d",
    "maxpool2d",
    "upsample2x",
    "broadcast_hw",
    "cosine_similarity",
    "cosine_rows",
    "softmax_cross_entropy",
    "binary_cross_entropy",
    "finite_diff_check",
    "check_gradients",
]

_EPS_NORM = 1e-12
_EPS_PROB = 1e-7


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Value-only copy; gradients never flow through it."""
        return Tensor(self.data, requires_grad=False)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return _reduce(self, np.sum, axis, keepdims, mean=False)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return _reduce(self, np.mean, axis, keepdims, mean=True)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)

    def relu(self) -> "Tensor":
        return _relu(self)

    def sigmoid(self) -> "Tensor":
        return _sigmoid(self)

    def exp(self) -> "Tensor":
        return _exp(self)

    def log(self) -> "Tensor":
        return _log(self)

    def __add__(self, other):
        return _add(self, _as_tensor(other))

    def __radd__(self, other):
        return _add(_as_tensor(other), self)

    def __sub__(self, other):
        return _add(self, _neg(_as_tensor(other)))

    def __rsub__(self, other):
        return _add(_as_tensor(other), _neg(self))

    def __mul__(self, other):
        return _mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return _mul(_as_tensor(other), self)

    def __neg__(self):
        return _neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, idx):
        return take(self, idx)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of executed ops; reverse traversal drives backprop.

    Ops append themselves while the tape is the innermost active context, so
    record order is a topological order by construction and the backward pass
    visits each recorded node exactly once.
    """

    def __init__(self):
        self._nodes = []  # (output tensor, backward closure)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every requires_grad leaf."""
        if loss.data.shape != ():
            raise ValueError(
                f"backward expects a scalar loss, got shape {loss.data.shape}"
            )
        if loss.grad is None:
            loss.grad = np.zeros((), dtype=np.float64)
        loss.grad = loss.grad + 1.0
        for out, fn in reversed(self._nodes):
            if out.grad is not None:
                fn(out.grad)


_TAPE_STACK: list[Tape] = []


def _record(out: Tensor, backward_fn) -> None:
    if out.requires_grad and _TAPE_STACK:
        _TAPE_STACK[-1]._nodes.append((out, backward_fn))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and structural primitives


def _add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    _record(out, backward)
    return out


def _mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    _record(out, backward)
    return out


def _neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, requires_grad=a.requires_grad)

    def backward(g):
        _accum(a, -g)

    _record(out, backward)
    return out


def _relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor(a.data * mask, requires_grad=a.requires_grad)

    def backward(g):
        _accum(a, g * mask)

    _record(out, backward)
    return out


def _sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s, requires_grad=a.requires_grad)

    def backward(g):
        _accum(a, g * s * (1.0 - s))

    _record(out, backward)
    return out


def _exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    out = Tensor(e, requires_grad=a.requires_grad)

    def backward(g):
        _accum(a, g * e)

    _record(out, backward)
    return out


def _log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), requires_grad=a.requires_grad)

    def backward(g):
        _accum(a, g / a.data)

    _record(out, backward)
    return out


def absolute(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data), requires_grad=a.requires_grad)
    sign = np.sign(a.data)

    def backward(g):
        _accum(a, g * sign)

    _record(out, backward)
    return out


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only through the strict interior."""
    out = Tensor(np.clip(a.data, lo, hi), requires_grad=a.requires_grad)
    interior = (a.data > lo) & (a.data < hi)

    def backward(g):
        _accum(a, g * interior)

    _record(out, backward)
    return out


def power(a: Tensor, p: float) -> Tensor:
    """a**p for strictly positive a (used for degree rescaling)."""
    out = Tensor(a.data**p, requires_grad=a.requires_grad)

    def backward(g):
        _accum(a, g * p * a.data ** (p - 1.0))

    _record(out, backward)
    return out


def _reduce(a: Tensor, op, axis, keepdims, mean: bool) -> Tensor:
    out = Tensor(op(a.data, axis=axis, keepdims=keepdims), requires_grad=a.requires_grad)
    if axis is None:
        axes = tuple(range(a.data.ndim))
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
    n = 1
    for ax in axes:
        n *= a.data.shape[ax]

    def backward(g):
        if not keepdims and a.data.ndim:
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
        g = np.broadcast_to(g, a.data.shape)
        _accum(a, g / n if mean else g.copy())

    _record(out, backward)
    return out


def _reshape(a: Tensor, shape: tuple) -> Tensor:
    out = Tensor(a.data.reshape(shape), requires_grad=a.requires_grad)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    _record(out, backward)
    return out


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = Tensor(
        np.concatenate([p.data for p in parts], axis=axis),
        requires_grad=any(p.requires_grad for p in parts),
    )
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, offsets, axis=axis)):
            _accum(p, piece)

    _record(out, backward)
    return out


def take(a: Tensor, idx) -> Tensor:
    """Index along axis 0 with an int, slice, or index array; the gradient
    scatter-adds back into the source."""
    out = Tensor(a.data[idx], requires_grad=a.requires_grad)

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        _accum(a, ga)

    _record(out, backward)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose expects a matrix, got shape {a.data.shape}")
    out = Tensor(a.data.T.copy(), requires_grad=a.requires_grad)

    def backward(g):
        _accum(a, g.T)

    _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul expects matrices, got shapes {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# image ops (NCHW, 3x3 same-padding convolution, 2x2 pooling)


def _im2col3(xp: np.ndarray, height: int, width: int) -> np.ndarray:
    n, c = xp.shape[0], xp.shape[1]
    cols = np.empty((n, c, 3, 3, height, width), dtype=np.float64)
    for di in range(3):
        for dj in range(3):
            cols[:, :, di, dj] = xp[:, :, di : di + height, dj : dj + width]
    return cols.reshape(n, c * 9, height * width)


def conv2d(x: Tensor, kernels: Tensor) -> Tensor:
    """3x3 cross-correlation with zero same-padding, stride 1.

    Accepts a single image (C,H,W) or a batch (N,C,H,W); kernels are
    (C_out, C_in, 3, 3).  Output spatial size equals input spatial size.
    """
    single = x.data.ndim == 3
    xin = x.reshape((1,) + x.data.shape) if single else x
    if xin.data.ndim != 4:
        raise ValueError(f"conv2d expects (N,C,H,W) input, got shape {x.data.shape}")
    if kernels.data.ndim != 4 or kernels.data.shape[2:] != (3, 3):
        raise ValueError(
            f"conv2d kernels must be (C_out,C_in,3,3), got shape {kernels.data.shape}"
        )
    n, c_in, h, w = xin.data.shape
    c_out, c_k = kernels.data.shape[0], kernels.data.shape[1]
    if c_k != c_in:
        raise ValueError(
            f"conv2d channel mismatch: input has {c_in} channels, kernels expect {c_k}"
        )

    xp = np.pad(xin.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _im2col3(xp, h, w)  # (N, C_in*9, H*W)
    kmat = kernels.data.reshape(c_out, c_in * 9)
    out_data = np.matmul(kmat, cols).reshape(n, c_out, h, w)
    out = Tensor(out_data, requires_grad=xin.requires_grad or kernels.requires_grad)

    def backward(g):
        g2 = g.reshape(n, c_out, h * w)
        if kernels.requires_grad:
            gk = np.einsum("nop,nkp->ok", g2, cols).reshape(kernels.data.shape)
            _accum(kernels, gk)
        if xin.requires_grad:
            gcols = np.matmul(kmat.T, g2).reshape(n, c_in, 3, 3, h, w)
            gxp = np.zeros_like(xp)
            for di in range(3):
                for dj in range(3):
                    gxp[:, :, di : di + h, dj : dj + w] += gcols[:, :, di, dj]
            _accum(xin, gxp[:, :, 1 : h + 1, 1 : w + 1])

    _record(out, backward)
    return out.reshape(c_out, h, w) if single else out


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; ties route to the first cell in row-major order."""
    single = x.data.ndim == 3
    xin = x.reshape((1,) + x.data.shape) if single else x
    if xin.data.ndim != 4:
        raise ValueError(f"maxpool2d expects (N,C,H,W) input, got shape {x.data.shape}")
    n, c, h, w = xin.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2d needs even spatial extents, got {h}x{w}")
    ho, wo = h // 2, w // 2
    windows = (
        xin.data.reshape(n, c, ho, 2, wo, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, ho, wo, 4)
    )
    arg = windows.argmax(axis=-1)  # first max wins: row-major within window
    out = Tensor(
        np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0],
        requires_grad=xin.requires_grad,
    )

    def backward(g):
        gw = np.zeros((n, c, ho, wo, 4), dtype=np.float64)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gx = (
            gw.reshape(n, c, ho, wo, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        _accum(xin, gx)

    _record(out, backward)
    return out.reshape(c, ho, wo) if single else out


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling of an (N,C,H,W) tensor."""
    n, c, h, w = x.data.shape
    out = Tensor(
        np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3),
        requires_grad=x.requires_grad,
    )

    def backward(g):
        _accum(x, g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    _record(out, backward)
    return out


def broadcast_hw(v: Tensor, h: int, w: int) -> Tensor:
    """Tile per-channel values (N,C) across an h x w spatial grid."""
    n, c = v.data.shape
    out = Tensor(
        np.broadcast_to(v.data[:, :, None, None], (n, c, h, w)).copy(),
        requires_grad=v.requires_grad,
    )

    def backward(g):
        _accum(v, g.sum(axis=(2, 3)))

    _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# similarity and loss primitives


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """cos(u, v) in [-1, 1]; near-zero-norm inputs yield 0 with zero gradient."""
    if u.data.shape != v.data.shape or u.data.ndim != 1:
        raise ValueError(
            f"cosine_similarity expects equal-length vectors, got {u.data.shape} and {v.data.shape}"
        )
    sq_u = float(u.data @ u.data)
    sq_v = float(v.data @ v.data)
    if sq_u < _EPS_NORM**2 or sq_v < _EPS_NORM**2:
        out = Tensor(0.0, requires_grad=u.requires_grad or v.requires_grad)
        _record(out, lambda g: None)
        return out
    # sqrt(sq_u * sq_v) rather than norm(u) * norm(v): for parallel inputs the
    # quotient then lands on +/-1.0 exactly
    denom = float(np.sqrt(sq_u * sq_v))
    c = float(u.data @ v.data) / denom
    out = Tensor(c, requires_grad=u.requires_grad or v.requires_grad)

    def backward(g):
        _accum(u, g * (v.data / denom - c * u.data / sq_u))
        _accum(v, g * (u.data / denom - c * v.data / sq_v))

    _record(out, backward)
    return out


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity of (w,d) rows against a single (d,) anchor.

    Rows (or an anchor) with near-zero norm score 0 and receive no gradient,
    mirroring the scalar op's degenerate-input policy.
    """
    if a.data.ndim != 2 or b.data.ndim != 1 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"cosine_rows expects (w,d) rows and a (d,) anchor, got {a.data.shape} and {b.data.shape}"
        )
    sq_rows = np.einsum("ij,ij->i", a.data, a.data)
    sq_b = float(b.data @ b.data)
    valid = sq_rows >= _EPS_NORM**2
    if sq_b < _EPS_NORM**2:
        valid = np.zeros_like(valid)
        sq_b = 1.0
    safe_sq = np.where(valid, sq_rows, 1.0)
    denom = np.sqrt(safe_sq * sq_b)
    cos = np.where(valid, (a.data @ b.data) / denom, 0.0)
    out = Tensor(cos, requires_grad=a.requires_grad or b.requires_grad)

    def backward(g):
        gv = g * valid
        if a.requires_grad:
            ga = (gv / denom)[:, None] * b.data[None, :] - (
                gv * cos / safe_sq
            )[:, None] * a.data
            _accum(a, ga)
        if b.requires_grad:
            gb = (gv / denom) @ a.data - (gv @ cos) * b.data / sq_b
            _accum(b, gb)

    _record(out, backward)
    return out


def softmax_cross_entropy(logits: Tensor, label) -> Tensor:
    """Cross-entropy of softmax(logits) against integer labels, max-shifted.

    1-D logits with a scalar label give the single-sample loss; 2-D logits of
    shape (n, n_classes) with a length-n label vector give the batch mean.
    """
    if logits.data.ndim == 1:
        lg = logits.data[None, :]
        labels = np.asarray([label], dtype=np.int64)
        batched = False
    elif logits.data.ndim == 2:
        lg = logits.data
        labels = np.asarray(label, dtype=np.int64)
        if labels.shape != (lg.shape[0],):
            raise ValueError(
                f"expected {lg.shape[0]} labels for logits {logits.data.shape}, got {labels.shape}"
            )
        batched = True
    else:
        raise ValueError(f"logits must be 1-D or 2-D, got shape {logits.data.shape}")
    n, k = lg.shape
    if labels.min() < 0 or labels.max() >= k:
        raise IndexError(
            f"label out of range: got {labels[(labels < 0) | (labels >= k)][0]} for {k} classes"
        )
    shifted = lg - lg.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    losses = logz - shifted[np.arange(n), labels]
    out = Tensor(losses.mean(), requires_grad=logits.requires_grad)

    def backward(g):
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(n), labels] -= 1.0
        grad = g * probs / n
        _accum(logits, grad if batched else grad[0])

    _record(out, backward)
    return out


def binary_cross_entropy(p: Tensor, target: float) -> Tensor:
    """Elementwise BCE against a constant 0/1 target; p is clamped to
    [1e-7, 1-1e-7] and the gradient flows only through the clamp interior."""
    t = float(target)
    pc = np.clip(p.data, _EPS_PROB, 1.0 - _EPS_PROB)
    interior = (p.data > _EPS_PROB) & (p.data < 1.0 - _EPS_PROB)
    out = Tensor(
        -(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)),
        requires_grad=p.requires_grad,
    )

    def backward(g):
        _accum(p, g * interior * (pc - t) / (pc * (1.0 - pc)))

    _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between backward() gradients and central differences.

    ``f`` must map a Tensor to a scalar Tensor.  The relative error denominator
    is max(|analytic|, |numeric|, 1e-8) per coordinate.
    """
    xt = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(xt)
    tape.backward(y)
    analytic = (
        np.zeros_like(xt.data) if xt.grad is None else np.asarray(xt.grad, dtype=np.float64)
    )

    flat = xt.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Tensor(xt.data)).data)
        flat[i] = orig - eps
        lo = float(f(Tensor(xt.data)).data)
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * eps)
    numeric = numeric.reshape(xt.data.shape)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(loss_fn, params, eps: float = 1e-5) -> float:
    """Finite-difference check of ``loss_fn()`` against taped gradients of
    ``params``, perturbing each parameter tensor in place.

    Returns the max relative error over all coordinates of all params.
    """
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(loss_fn().data)
            flat[i] = orig - eps
            lo = float(loss_fn().data)
            flat[i] = orig
            num = (hi - lo) / (2.0 * eps)
            denom = max(abs(aflat[i]), abs(num), 1e-8)
            worst = max(worst, abs(aflat[i] - num) / denom)
    return worst
