"""Differentiable neural-network operators built on :mod:`mfhca.core.autodiff`."""

from __future__ import annotations

import threading
import zlib
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Tensor, as_tensor, make_result
from .errors import DataError, ShapeError

Pair = tuple[int, int]
Padding = tuple[int, int] | tuple[int, int, int, int]
ActivationKind = Literal["swish", "sigmoid", "relu", "tanh"]

_kinks = threading.local()


@contextmanager
def record_kinks() -> Iterator[list[int]]:
    """Collect fingerprints of the branch choices made by relu and max-pool.

    Two forward passes that yield equal fingerprint lists took the same
    piecewise-linear branches, so a finite difference between them is valid.
    """
    previous = getattr(_kinks, "log", None)
    _kinks.log = []
    try:
        yield _kinks.log
    finally:
        _kinks.log = previous


def _note_kink(pattern: np.ndarray) -> None:
    log = getattr(_kinks, "log", None)
    if log is not None:
        log.append(zlib.crc32(np.ascontiguousarray(pattern).tobytes()))


def _expect_ndim(tensor: Tensor, ndim: int, what: str) -> None:
    if tensor.ndim != ndim:
        raise ShapeError(f"{what}: expected {ndim}-D tensor, got shape {tensor.shape}")


def _pair(value: int | Sequence[int]) -> Pair:
    if isinstance(value, int):
        return (value, value)
    first, second = value
    return (int(first), int(second))


def same_padding(kernel: Pair) -> tuple[int, int, int, int]:
    """Zero padding (top, bottom, left, right) that keeps the size at stride 1.

    Even kernels get the extra row/column on the high side.
    """
    kh, kw = kernel
    top, left = (kh - 1) // 2, (kw - 1) // 2
    return (top, kh - 1 - top, left, kw - 1 - left)


def _normalize_padding(padding: Padding) -> tuple[int, int, int, int]:
    if len(padding) == 2:
        ph, pw = padding
        return (ph, ph, pw, pw)
    top, bottom, left, right = padding  # type: ignore[misc]
    return (top, bottom, left, right)


# -- convolution and pooling ------------------------------------------------


def pad2d(x: Tensor, padding: Padding) -> Tensor:
    """Zero-pad the last two axes of an N×C×H×W tensor."""
    top, bottom, left, right = _normalize_padding(padding)
    if not any((top, bottom, left, right)):
        return x
    h, w = x.shape[-2:]
    widths = ((0, 0),) * (x.ndim - 2) + ((top, bottom), (left, right))
    return make_result(
        np.pad(x.data, widths),
        (x,),
        "pad2d",
        lambda g: (g[..., top : top + h, left : left + w],),
    )


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int | Pair = 1,
    padding: Padding = (0, 0),
) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is N×C×H×W, ``weight`` is Co×C×kh×kw. ``padding`` is either
    (ph, pw) applied to both sides or (top, bottom, left, right).
    """
    _expect_ndim(x, 4, "conv2d input")
    _expect_ndim(weight, 4, "conv2d kernel")
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(
            f"conv2d: kernel {weight.shape} expects {ci} input channels, input {x.shape} has {c}"
        )
    if bias is not None and bias.shape != (co,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {co} output channels")
    top, bottom, left, right = _normalize_padding(padding)
    sh, sw = _pair(stride)
    hp, wp = h + top + bottom, w + left + right
    if hp < kh or wp < kw:
        raise ShapeError(
            f"conv2d: padded input {hp}x{wp} is smaller than kernel {kh}x{kw} (input {x.shape})"
        )
    ho, wo = (hp - kh) // sh + 1, (wp - kw) // sw + 1

    xp = pad2d(x, (top, bottom, left, right)) if (top or bottom or left or right) else x
    windows = sliding_window_view(xp.data, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    kernel = weight.data
    out = np.tensordot(windows, kernel, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g: np.ndarray) -> tuple[np.ndarray, ...]:
        grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_xp = np.zeros(xp.shape, dtype=np.result_type(g, kernel))
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(kernel[:, :, i, j], g, axes=([0], [1]))
                grad_xp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += contrib.transpose(
                    1, 0, 2, 3
                )
        grads: list[np.ndarray] = [grad_xp, grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (xp, weight) if bias is None else (xp, weight, bias)
    return make_result(out, parents, "conv2d", backward)


def _pool_geometry(x: Tensor, kernel: int | Pair, stride: int | Pair | None, what: str):
    _expect_ndim(x, 4, what)
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride if stride is not None else (kh, kw))
    h, w = x.shape[2:]
    if kh > h or kw > w:
        raise ShapeError(f"{what}: kernel {kh}x{kw} larger than input {h}x{w}")
    return kh, kw, sh, sw, (h - kh) // sh + 1, (w - kw) // sw + 1


def avg_pool2d(x: Tensor, kernel: int | Pair, stride: int | Pair | None = None) -> Tensor:
    """Average pooling, floor-mode output size; stride defaults to the kernel."""
    kh, kw, sh, sw, ho, wo = _pool_geometry(x, kernel, stride, "avg_pool2d")
    windows = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    out = windows.mean(axis=(-2, -1))
    shape = x.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros(shape, dtype=g.dtype)
        share = g / (kh * kw)
        for i in range(kh):
            for j in range(kw):
                grad[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += share
        return (grad,)

    return make_result(out, (x,), "avg_pool2d", backward)


def max_pool2d(x: Tensor, kernel: int | Pair, stride: int | Pair | None = None) -> Tensor:
    """Max pooling; the gradient goes to the first maximum in row-major order."""
    kh, kw, sh, sw, ho, wo = _pool_geometry(x, kernel, stride, "max_pool2d")
    windows = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    flat = windows.reshape(*windows.shape[:4], kh * kw)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    _note_kink(argmax)
    shape = x.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros(shape, dtype=g.dtype)
        for k in range(kh * kw):
            i, j = divmod(k, kw)
            grad[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += np.where(argmax == k, g, 0)
        return (grad,)

    return make_result(out, (x,), "max_pool2d", backward)


def interpolation_matrix(n_in: int, n_out: int, dtype: np.dtype | type = np.float64) -> np.ndarray:
    """Linear-interpolation weights (n_out × n_in), half-pixel centers, edge clamp."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    low = np.floor(src).astype(int)
    high = np.minimum(low + 1, n_in - 1)
    frac = src - low
    matrix = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(matrix, (rows, low), 1.0 - frac)
    np.add.at(matrix, (rows, high), frac)
    return matrix.astype(dtype)


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of an N×C×h×w tensor to out_h×out_w (align_corners=False)."""
    _expect_ndim(x, 4, "bilinear_upsample input")
    h, w = x.shape[2:]
    if out_h < h or out_w < w:
        raise ShapeError(f"bilinear_upsample: cannot downscale {h}x{w} to {out_h}x{out_w}")
    rows = interpolation_matrix(h, out_h, x.dtype)
    cols = interpolation_matrix(w, out_w, x.dtype)
    out = rows @ x.data @ cols.T
    return make_result(out, (x,), "bilinear_upsample", lambda g: (rows.T @ g @ cols,))


# -- normalization ------------------------------------------------------------


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization of an N×C×H×W tensor.

    In training mode the batch statistics (biased variance) normalize the
    input and ``running_mean``/``running_var`` are updated in place; the
    running variance tracks the unbiased estimate. Evaluation mode reads the
    running statistics only.
    """
    _expect_ndim(x, 4, "batchnorm2d input")
    n, c, h, w = x.shape
    if gamma.shape != (c,):
        raise ShapeError(f"batchnorm2d: state has {gamma.shape[0]} channels, input has {c}")
    count = n * h * w
    data = x.data
    if training:
        if count < 2:
            raise ShapeError("batchnorm2d: training needs at least 2 values per channel")
        mean = data.mean(axis=(0, 2, 3))
        var = data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / (count - 1)
    else:
        mean, var = running_mean.astype(data.dtype), running_var.astype(data.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)
    g_scale = gamma.data.reshape(1, c, 1, 1)
    s = inv_std.reshape(1, c, 1, 1)

    def backward(g: np.ndarray) -> tuple[np.ndarray, ...]:
        grad_gamma = (g * xhat).sum(axis=(0, 2, 3))
        grad_beta = g.sum(axis=(0, 2, 3))
        dxhat = g * g_scale
        if training:
            sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            grad_x = s / count * (count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        else:
            grad_x = dxhat * s
        return grad_x, grad_gamma, grad_beta

    return make_result(out, (x, gamma, beta), "batchnorm2d", backward)


# -- activations ------------------------------------------------------------


def _stable_sigmoid(a: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(a.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    out = _stable_sigmoid(x.data)
    return make_result(out, (x,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _note_kink(mask)
    return make_result(np.where(mask, x.data, 0), (x,), "relu", lambda g: (g * mask,))


def swish(x: Tensor) -> Tensor:
    a = x.data
    s = _stable_sigmoid(a)
    return make_result(a * s, (x,), "swish", lambda g: (g * (s + a * s * (1.0 - s)),))


def tanh(x: Tensor) -> Tensor:
    return x.tanh()


def activation(x: Tensor, kind: ActivationKind) -> Tensor:
    """Elementwise activation by name."""
    if kind == "swish":
        return swish(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return make_result(
        out,
        (x,),
        "softmax",
        lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),),
    )


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)
    return make_result(
        out,
        (x,),
        "log_softmax",
        lambda g: (g - probs * g.sum(axis=axis, keepdims=True),),
    )


# -- linear algebra and layout -------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batch axes broadcast."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return make_result(
        np.matmul(ad, bd),
        (a, b),
        "matmul",
        lambda g: (
            _sum_to(np.matmul(g, np.swapaxes(bd, -1, -2)), a.shape),
            _sum_to(np.matmul(np.swapaxes(ad, -1, -2), g), b.shape),
        ),
    )


def _sum_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along ``axis``; every other axis must agree."""
    if not tensors:
        raise ShapeError("concat: no tensors given")
    first = tensors[0]
    ax = axis % first.ndim
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            t.shape[i] != first.shape[i] for i in range(first.ndim) if i != ax
        ):
            raise ShapeError(
                f"concat: shapes {[t.shape for t in tensors]} disagree outside axis {axis}"
            )
    if len(tensors) == 1:
        return first
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return make_result(
        np.concatenate([t.data for t in tensors], axis=ax),
        tuple(tensors),
        "concat",
        lambda g: tuple(np.split(g, bounds, axis=ax)),
    )


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    """Inverse of :func:`concat`: cut ``x`` into consecutive pieces of ``sizes``."""
    ax = axis % x.ndim
    if sum(sizes) != x.shape[ax]:
        raise ShapeError(f"split: sizes {list(sizes)} do not add up to axis length {x.shape[ax]}")
    pieces = []
    start = 0
    for size in sizes:
        index = (slice(None),) * ax + (slice(start, start + size),)
        pieces.append(x[index])
        start += size
    return pieces


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("stack: no tensors given")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {sorted(shapes)}")
    ax = axis % (tensors[0].ndim + 1)
    return make_result(
        np.stack([t.data for t in tensors], axis=ax),
        tuple(tensors),
        "stack",
        lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(tensors))),
    )


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map on the last axis: ``x @ weight.T + bias``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = matmul(x, weight.T)
    return out + bias if bias is not None else out


# -- recurrent -------------------------------------------------------------------


@dataclass
class LstmWeights:
    """Weights of one LSTM direction; gates ordered input, forget, cell, output."""

    w_ih: Tensor  # 4H × Din
    w_hh: Tensor  # 4H × H
    bias: Tensor  # 4H


def lstm(seq: Tensor, weights: LstmWeights, reverse: bool = False) -> Tensor:
    """Run one LSTM direction over an N×T×Din sequence with zero initial state."""
    _expect_ndim(seq, 3, "lstm input")
    n, steps, _ = seq.shape
    if steps < 1:
        raise ShapeError("lstm: empty sequence")
    hidden = weights.w_hh.shape[1]
    projected = linear(seq, weights.w_ih, weights.bias)
    w_hh_t = weights.w_hh.T
    h = as_tensor(np.zeros((n, hidden), dtype=seq.dtype))
    c = as_tensor(np.zeros((n, hidden), dtype=seq.dtype))
    outputs: list[Tensor | None] = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        z = projected[:, t, :] + matmul(h, w_hh_t)
        i = sigmoid(z[:, :hidden])
        f = sigmoid(z[:, hidden : 2 * hidden])
        g = z[:, 2 * hidden : 3 * hidden].tanh()
        o = sigmoid(z[:, 3 * hidden :])
        c = f * c + i * g
        h = o * c.tanh()
        outputs[t] = h
    return stack([out for out in outputs if out is not None], axis=1)


def bilstm(seq: Tensor, forward: LstmWeights, backward: LstmWeights) -> Tensor:
    """Bidirectional LSTM: T×Din → T×2H, or N×T×Din → N×T×2H."""
    squeeze = seq.ndim == 2
    if squeeze:
        seq = seq.reshape(1, *seq.shape)
    _expect_ndim(seq, 3, "bilstm input")
    if seq.shape[1] < 1:
        raise ShapeError("bilstm: empty sequence")
    out = concat([lstm(seq, forward), lstm(seq, backward, reverse=True)], axis=-1)
    return out.reshape(*out.shape[1:]) if squeeze else out


# -- loss -------------------------------------------------------------------------


def cross_entropy(logits: Tensor, labels: np.ndarray | Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    _expect_ndim(logits, 2, "cross_entropy logits")
    n, k = logits.shape
    targets = np.asarray(labels, dtype=np.int64)
    if targets.shape != (n,):
        raise ShapeError(f"cross_entropy: {targets.shape[0]} labels for {n} rows")
    if n == 0:
        raise ShapeError("cross_entropy: empty batch")
    if targets.min() < 0 or targets.max() >= k:
        raise DataError(f"cross_entropy: labels must lie in [0, {k}), got {targets.tolist()}")
    data = logits.data
    shifted = data - data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -log_probs[rows, targets].mean()

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        return (grad * (g / n),)

    return make_result(np.asarray(loss, dtype=data.dtype), (logits,), "cross_entropy", backward)
