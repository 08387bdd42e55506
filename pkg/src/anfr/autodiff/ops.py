"""Differentiable operators over :class:`Tensor`.

Broadcasting is deliberately limited to bias-add and per-channel or
per-position scaling (``channel_scale``, ``spatial_scale``,
``channel_affine``). Anything else needs an explicit ``reshape``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, logsumexp

from ..errors import ConfigError, ShapeError
from .tensor import Tensor

_from_op = Tensor._from_op


def _require_same_shape(op, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def _require_rank(op, x: Tensor, rank: int) -> None:
    if x.ndim != rank:
        raise ShapeError(op, x.shape, detail=f"expected rank {rank}")


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return _from_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    return _from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _from_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _from_op(x.data * c, (x,), lambda g: (g * c,))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError("reshape", old, shape) from exc
    return _from_op(out, (x,), lambda g: (g.reshape(old),))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _from_op(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _from_op(np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def concat_channels(xs: list[Tensor]) -> Tensor:
    """Concatenate rank-4 tensors along the channel axis."""
    for t in xs:
        _require_rank("concat_channels", t, 4)
        if t.shape[0] != xs[0].shape[0] or t.shape[2:] != xs[0].shape[2:]:
            raise ShapeError("concat_channels", xs[0].shape, t.shape)
    splits = np.cumsum([t.shape[1] for t in xs])[:-1]
    out = np.concatenate([t.data for t in xs], axis=1)
    return _from_op(out, tuple(xs), lambda g: tuple(np.split(g, splits, axis=1)))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return _from_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "identity":
        return x
    raise ConfigError(f"unknown activation '{kind}'", field="activation")


# ---------------------------------------------------------------------------
# convolution and dense maps
# ---------------------------------------------------------------------------

def conv_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or span % stride != 0:
        raise ConfigError(
            f"conv output extent ({size} + 2*{padding} - {kernel})/{stride} + 1 is not a positive integer",
            field="conv2d")
    return span // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Gather input windows as ``[C, kh, kw, B, Ho, Wo]`` (contiguous slice copies)."""
    b, c = xp.shape[:2]
    cols = np.empty((c, kh, kw, b, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride].transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, b * ho * wo)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x[B,C_in,H,W]`` with ``weight[C_out,C_in,kH,kW]``."""
    _require_rank("conv2d", x, 4)
    _require_rank("conv2d", weight, 4)
    if stride < 1 or padding < 0:
        raise ConfigError(f"stride must be >= 1 and padding >= 0, got {stride}, {padding}", field="conv2d")
    b, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError("conv2d", x.shape, weight.shape, detail="input channels disagree")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError("conv2d", weight.shape, bias.shape, detail="bias must be [C_out]")
    ho = conv_output_extent(h, kh, stride, padding)
    wo = conv_output_extent(w, kw, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(cout, -1)
    out = (wmat @ cols).reshape(cout, b, ho, wo)
    if bias is not None:
        out += bias.data[:, None, None, None]
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))

    def backward(g):
        g_cb = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, -1)
        dw = (g_cb @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (wmat.T @ g_cb).reshape(cin, kh, kw, b, ho, wo)
            dxp = np.zeros((cin, b) + xp.shape[2:])
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
            dx = np.ascontiguousarray(dxp[:, :, padding:padding + h, padding:padding + w].transpose(1, 0, 2, 3))
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _from_op(out, parents, backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for ``x[B,F_in]``, ``weight[F_out,F_in]``."""
    _require_rank("linear", x, 2)
    _require_rank("linear", weight, 2)
    if x.shape[1] != weight.shape[1]:
        raise ShapeError("linear", x.shape, weight.shape, detail="inner dimensions disagree")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError("linear", weight.shape, bias.shape, detail="bias must be [F_out]")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        dx = g @ wd if x.requires_grad else None
        dw = g.T @ xd if weight.requires_grad else None
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _from_op(out, parents, backward)


def conv1d_channels(z: Tensor, kernel: Tensor) -> Tensor:
    """Zero-padded 'same' 1-D cross-correlation along the channel axis of ``z[B,C]``."""
    _require_rank("conv1d_channels", z, 2)
    _require_rank("conv1d_channels", kernel, 1)
    k = kernel.shape[0]
    if k % 2 == 0:
        raise ConfigError(f"channel conv kernel size must be odd, got {k}", field="eca.k")
    pad = k // 2
    b, c = z.shape
    zp = np.pad(z.data, ((0, 0), (pad, pad)))
    win = sliding_window_view(zp, k, axis=1)  # [B, C, k]
    out = win @ kernel.data

    def backward(g):
        dk = np.einsum("bc,bck->k", g, win) if kernel.requires_grad else None
        dz = None
        if z.requires_grad:
            dzp = np.zeros(zp.shape)
            for j in range(k):
                dzp[:, j:j + c] += g * kernel.data[j]
            dz = dzp[:, pad:pad + c]
        return dz, dk

    return _from_op(out, (z, kernel), backward)


# ---------------------------------------------------------------------------
# pooling and broadcasting scales
# ---------------------------------------------------------------------------

def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: ``[B,C,H,W] -> [B,C]``."""
    _require_rank("global_avg_pool", x, 4)
    b, c, h, w = x.shape
    n = h * w
    out = x.data.mean(axis=(2, 3))
    return _from_op(out, (x,), lambda g: (np.broadcast_to((g / n)[:, :, None, None], x.shape).copy(),))


def global_max_pool(x: Tensor) -> Tensor:
    """Per-channel spatial max; the gradient goes to the first maximal position."""
    _require_rank("global_max_pool", x, 4)
    b, c, h, w = x.shape
    flat = x.data.reshape(b, c, h * w)
    idx = flat.argmax(axis=2)
    out = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]

    def backward(g):
        d = np.zeros((b, c, h * w))
        np.put_along_axis(d, idx[:, :, None], g[:, :, None], axis=2)
        return (d.reshape(x.shape),)

    return _from_op(out, (x,), backward)


def channel_pool(x: Tensor) -> Tensor:
    """Stack channel-wise mean and max: ``[B,C,H,W] -> [B,2,H,W]``."""
    _require_rank("channel_pool", x, 4)
    b, c, h, w = x.shape
    avg = x.data.mean(axis=1)
    idx = x.data.argmax(axis=1)
    mx = np.take_along_axis(x.data, idx[:, None], axis=1)[:, 0]
    out = np.stack([avg, mx], axis=1)

    def backward(g):
        d = np.broadcast_to(g[:, 0:1] / c, x.shape).copy()
        np.put_along_axis(d, idx[:, None], np.take_along_axis(d, idx[:, None], axis=1) + g[:, 1:2], axis=1)
        return (d,)

    return _from_op(out, (x,), backward)


def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    """Scale each channel map of ``x[B,C,H,W]`` by ``s[B,C]``."""
    _require_rank("channel_scale", x, 4)
    if s.shape != x.shape[:2]:
        raise ShapeError("channel_scale", x.shape, s.shape, detail="scale must be [B,C]")
    sd = s.data[:, :, None, None]
    xd = x.data
    return _from_op(xd * sd, (x, s), lambda g: (g * sd, (g * xd).sum(axis=(2, 3))))


def spatial_scale(x: Tensor, m: Tensor) -> Tensor:
    """Scale every channel of ``x[B,C,H,W]`` by the map ``m[B,1,H,W]``."""
    _require_rank("spatial_scale", x, 4)
    if m.shape != (x.shape[0], 1) + x.shape[2:]:
        raise ShapeError("spatial_scale", x.shape, m.shape, detail="map must be [B,1,H,W]")
    md, xd = m.data, x.data
    return _from_op(xd * md, (x, m), lambda g: (g * md, (g * xd).sum(axis=1, keepdims=True)))


def channel_affine(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """``gamma[c] * x[:,c] + beta[c]`` for rank-4 ``x``."""
    _require_rank("channel_affine", x, 4)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("channel_affine", x.shape, gamma.shape, beta.shape)
    gd = gamma.data[None, :, None, None]
    xd = x.data
    out = xd * gd + beta.data[None, :, None, None]
    return _from_op(out, (x, gamma, beta),
                    lambda g: (g * gd, (g * xd).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))))


# ---------------------------------------------------------------------------
# standardization over axes (shared by batch/group/layer norms)
# ---------------------------------------------------------------------------

def standardize(x: Tensor, axes: tuple[int, ...], eps: float) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Return ``(x - mean) / sqrt(var + eps)`` over ``axes`` plus the batch mean and variance.

    Variance is the biased (population) estimate.
    """
    xd = x.data
    mu = xd.mean(axis=axes, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * xhat).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return _from_op(xhat, (x,), backward), mu, var


def shift_scale_fixed(x: Tensor, shift: np.ndarray, inv_scale: np.ndarray) -> Tensor:
    """``(x - shift) * inv_scale`` with constant (non-learnable) broadcastable arrays."""
    out = (x.data - shift) * inv_scale
    return _from_op(out, (x,), lambda g: (g * inv_scale,))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _check_class_targets(logits: Tensor, target) -> np.ndarray:
    _require_rank("loss", logits, 2)
    t = np.asarray(target)
    if t.ndim != 1 or t.shape[0] != logits.shape[0]:
        raise ShapeError("loss", logits.shape, t.shape, detail="targets must be [B] class indices")
    if not np.issubdtype(t.dtype, np.integer):
        if not np.all(np.equal(np.mod(t, 1), 0)):
            raise ShapeError("loss", logits.shape, t.shape, detail="targets must be integer class indices")
        t = t.astype(np.int64)
    k = logits.shape[1]
    if t.size and (t.min() < 0 or t.max() >= k):
        raise ValueError(f"target class index out of range [0, {k}): min={t.min()}, max={t.max()}")
    return t


def _class_weight_vector(class_weights, k: int) -> np.ndarray:
    if class_weights is None:
        return np.ones(k)
    w = np.asarray(class_weights, dtype=np.float64)
    if w.shape != (k,):
        raise ShapeError("loss", (k,), w.shape, detail="class_weights must have one entry per class")
    return w


def cross_entropy(logits: Tensor, target, class_weights=None) -> Tensor:
    """Mean over the batch of ``-w[y] * log softmax(logits)[y]``."""
    t = _check_class_targets(logits, target)
    b, k = logits.shape
    w = _class_weight_vector(class_weights, k)[t]
    logp = logits.data - logsumexp(logits.data, axis=1, keepdims=True)
    rows = np.arange(b)
    loss = -(w * logp[rows, t]).mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, t] -= 1.0
        return (d * (w / b * float(g))[:, None],)

    return _from_op(np.asarray(loss), (logits,), backward)


def focal(logits: Tensor, target, gamma: float = 2.0, class_weights=None) -> Tensor:
    """Mean of ``-w[y] * (1 - p_y)**gamma * log p_y``; ``gamma = 0`` is cross-entropy."""
    if gamma < 0:
        raise ConfigError(f"focal gamma must be >= 0, got {gamma}", field="loss.gamma")
    t = _check_class_targets(logits, target)
    b, k = logits.shape
    w = _class_weight_vector(class_weights, k)[t]
    logp = logits.data - logsumexp(logits.data, axis=1, keepdims=True)
    rows = np.arange(b)
    logpt = logp[rows, t]
    pt = np.exp(logpt)
    one_minus = -np.expm1(logpt)
    mod = one_minus ** gamma
    loss = -(w * mod * logpt).mean()

    def backward(g):
        # d/dz of -(1-p)^g log p is c * (softmax - onehot) with
        # c = (1-p)^g - g * p * (1-p)^(g-1) * log p
        if gamma == 0:
            extra = np.zeros(b)
        else:
            safe = np.where(one_minus > 0, one_minus, 1.0)
            extra = np.where(one_minus > 0, gamma * pt * mod / safe * logpt, 0.0)
        coef = w * (mod - extra) / b * float(g)
        d = np.exp(logp)
        d[rows, t] -= 1.0
        return (d * coef[:, None],)

    return _from_op(np.asarray(loss), (logits,), backward)


def bce_with_logits(logits: Tensor, target, class_weights=None) -> Tensor:
    """Multi-label binary cross-entropy, mean over all ``B*K`` entries."""
    _require_rank("loss", logits, 2)
    t = np.asarray(target, dtype=np.float64)
    if t.shape != logits.shape:
        raise ShapeError("bce", logits.shape, t.shape)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("bce targets must lie in [0, 1]")
    w = _class_weight_vector(class_weights, logits.shape[1])[None, :]
    z = logits.data
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    loss = (w * per).sum() / n

    def backward(g):
        return (w * (expit(z) - t) / n * float(g),)

    return _from_op(np.asarray(loss), (logits,), backward)


def loss(pred: Tensor, target, kind: str = "cross_entropy", class_weights=None, focal_gamma: float = 2.0) -> Tensor:
    if kind == "cross_entropy":
        return cross_entropy(pred, target, class_weights)
    if kind == "focal":
        return focal(pred, target, focal_gamma, class_weights)
    if kind == "bce":
        return bce_with_logits(pred, target, class_weights)
    raise ConfigError(f"unknown loss kind '{kind}'", field="loss")
