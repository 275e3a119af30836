"""Differentiable operations on :class:`~ocgan.tensor.Tensor`.

Convolutions reduce over (kernel row, kernel column, input channel) through a
single fixed-shape ``tensordot`` so repeated calls on identical inputs are
bitwise reproducible.  Gradient scatter for the input side loops over kernel
taps in a fixed order.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_result


def _data(x) -> np.ndarray | float:
    return x.data if isinstance(x, Tensor) else x


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary(name, a, b, fwd, da, db):
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if ta and tb and a.dtype != b.dtype:
        raise TypeError(f"{name}: dtype mismatch {a.dtype} vs {b.dtype}")
    av, bv = _data(a), _data(b)
    dtype = a.dtype if ta else b.dtype
    out = np.asarray(fwd(av, bv), dtype=dtype)
    operands = [t for t in (a, b) if isinstance(t, Tensor)]

    def backward_fn(g):
        grads = []
        if ta:
            grads.append(_unbroadcast(np.asarray(da(g, av, bv), dtype=dtype), a.shape))
        if tb:
            grads.append(_unbroadcast(np.asarray(db(g, av, bv), dtype=dtype), b.shape))
        return grads

    return make_result(name, out, operands, backward_fn)


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape

    def backward_fn(g):
        return (np.broadcast_to(g, shape).astype(x.dtype),)

    return make_result("sum", np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward_fn)


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size

    def backward_fn(g):
        return (np.full(shape, g / n, dtype=x.dtype),)

    return make_result("mean", np.asarray(x.data.mean(), dtype=x.dtype), (x,), backward_fn)


def mean_per_sample(x: Tensor) -> Tensor:
    """Average over every axis except the first: N x ... -> N."""
    n = x.shape[0]
    count = x.size // n
    flat = x.data.reshape(n, -1)

    def backward_fn(g):
        return (np.broadcast_to((g / count).reshape((n,) + (1,) * (x.ndim - 1)), x.shape).astype(x.dtype),)

    return make_result("mean_per_sample", flat.mean(axis=1).astype(x.dtype), (x,), backward_fn)


def abs(x: Tensor) -> Tensor:  # noqa: A001
    return make_result("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def log(x: Tensor) -> Tensor:
    return make_result("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input lies inside."""
    inside = (x.data >= lo) & (x.data <= hi)
    return make_result("clamp", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return make_result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


# ---------------------------------------------------------------------------
# elementwise activations


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return make_result("relu", np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return make_result("leaky_relu", x.data * factor, (x,), lambda g: (g * factor,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_result("tanh", y, (x,), lambda g: (g * (1 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so neither branch overflows
    v = x.data
    e = np.exp(-np.abs(v))
    y = np.where(v >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return make_result("sigmoid", y, (x,), lambda g: (g * y * (1 - y),))


def dropout(x: Tensor, rate: float, seed) -> Tensor:
    """Zero each element with probability ``rate``, scale survivors by 1/(1-rate).

    The keep mask is a pure function of ``seed`` and the input shape.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return make_result("dropout", x.data.copy(), (x,), lambda g: (g,))
    rng = np.random.default_rng(seed)
    keep = rng.random(x.shape) >= rate
    scale = np.where(keep, 1.0 / (1.0 - rate), 0.0).astype(x.dtype)
    return make_result("dropout", x.data * scale, (x,), lambda g: (g * scale,))


def elementwise(kind: str, x: Tensor, **kw) -> Tensor:
    """Dispatch by name: leaky_relu(slope), relu, tanh, sigmoid, dropout(rate, seed)."""
    table = {"leaky_relu": leaky_relu, "relu": relu, "tanh": tanh, "sigmoid": sigmoid, "dropout": dropout}
    try:
        fn = table[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}; expected one of {sorted(table)}") from None
    return fn(x, **kw)


# ---------------------------------------------------------------------------
# normalization and channel plumbing


def instance_norm(x: Tensor, gain: Tensor, shift: Tensor, epsilon: float = 1e-5) -> Tensor:
    """Standardize each (sample, channel) plane, then apply per-channel gain and shift."""
    if x.ndim != 4:
        raise ValueError(f"instance_norm expects N x C x H x W, got {x.shape}")
    n, c, h, w = x.shape
    if gain.shape != (c,) or shift.shape != (c,):
        raise ValueError(f"instance_norm: gain {gain.shape} / shift {shift.shape} do not match {c} channels")
    v = x.data
    mu = v.mean(axis=(2, 3), keepdims=True)
    centered = v - mu
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    inv_std = (1.0 / np.sqrt(var + epsilon)).astype(x.dtype)
    xhat = centered * inv_std
    gv = gain.data.reshape(1, c, 1, 1)
    out = xhat * gv + shift.data.reshape(1, c, 1, 1)

    def backward_fn(g):
        d_gain = (g * xhat).sum(axis=(0, 2, 3))
        d_shift = g.sum(axis=(0, 2, 3))
        gx = g * gv
        d_x = inv_std * (gx - gx.mean(axis=(2, 3), keepdims=True)
                         - xhat * (gx * xhat).mean(axis=(2, 3), keepdims=True))
        return d_x, d_gain, d_shift

    return make_result("instance_norm", out.astype(x.dtype), (x, gain, shift), backward_fn)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 4 or b.ndim != 4:
        raise ValueError(f"concat_channels expects 4-d tensors, got {a.shape} and {b.shape}")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ValueError(f"concat_channels: batch/spatial mismatch between {a.shape} and {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return make_result("concat_channels", out, (a, b), lambda g: (g[:, :ca], g[:, ca:]))


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def backward_fn(g):
        full = np.zeros(shape, dtype=x.dtype)
        full[:, start:stop] = g
        return (full,)

    return make_result("slice_channels", x.data[:, start:stop].copy(), (x,), backward_fn)


# ---------------------------------------------------------------------------
# convolution


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """N x C x Ho x Wo x kH x kW strided view of a padded input."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _correlate(x: np.ndarray, k: np.ndarray, stride: int, padding: int) -> tuple[np.ndarray, np.ndarray]:
    """Cross-correlation without bias.  Returns (N x Cout x Ho x Wo, windows)."""
    n, _, h, w = x.shape
    _, _, kh, kw = k.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    win = _windows(xp, kh, kw, stride, ho, wo)
    out = np.tensordot(win, k, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, Cout
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), win


def _kernel_grad(g: np.ndarray, win: np.ndarray) -> np.ndarray:
    """d/dk of sum(g * correlate(x, k)); g is N x Cout x Ho x Wo."""
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # Cout, Cin, kH, kW


def _scatter(g: np.ndarray, k: np.ndarray, stride: int, padding: int, h: int, w: int) -> np.ndarray:
    """Adjoint of :func:`_correlate` w.r.t. its input: N x Cout x Ho x Wo -> N x Cin x H x W."""
    n, _, ho, wo = g.shape
    _, cin, kh, kw = k.shape
    cols = np.tensordot(g, k, axes=([1], [0]))  # N, Ho, Wo, Cin, kH, kW
    hp, wp = h + 2 * padding, w + 2 * padding
    # room for taps that land beyond the padded extent (they are discarded)
    full = np.zeros((n, cin, max(hp, (ho - 1) * stride + kh), max(wp, (wo - 1) * stride + kw)), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return full[:, :, padding : padding + h, padding : padding + w]


def _check_conv(name, x: Tensor, k: Tensor, bias: Tensor, cin_axis: int, cout_axis: int, stride, padding):
    if x.ndim != 4 or k.ndim != 4:
        raise ValueError(f"{name}: expected 4-d input and kernel, got input {x.shape} and kernel {k.shape}")
    if x.shape[1] != k.shape[cin_axis]:
        raise ValueError(
            f"{name}: input channels do not match kernel; input shape {x.shape}, kernel shape {k.shape}"
        )
    if bias is not None and bias.shape != (k.shape[cout_axis],):
        raise ValueError(f"{name}: bias shape {bias.shape} does not match kernel shape {k.shape}")
    if not isinstance(stride, int) or stride < 1:
        raise ValueError(f"{name}: stride must be a positive int, got {stride!r}")
    if not isinstance(padding, int) or padding < 0:
        raise ValueError(f"{name}: padding must be a non-negative int, got {padding!r}")
    if x.dtype != k.dtype:
        raise TypeError(f"{name}: dtype mismatch, input {x.dtype} vs kernel {k.dtype}")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation: N x Cin x H x W with Cout x Cin x kH x kW -> N x Cout x H' x W'."""
    _check_conv("conv2d", x, kernel, bias, 1, 0, stride, padding)
    _, _, h, w = x.shape
    _, _, kh, kw = kernel.shape
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ValueError(
            f"conv2d: padded input smaller than kernel; input shape {x.shape}, kernel shape {kernel.shape}, "
            f"padding {padding}"
        )
    out, win = _correlate(x.data, kernel.data, stride, padding)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)
    k = kernel.data

    def backward_fn(g):
        grads = [_scatter(g, k, stride, padding, h, w), _kernel_grad(g, win)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    operands = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result("conv2d", out, operands, backward_fn)


def conv_transpose2d(
    x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Adjoint of :func:`conv2d`: N x Cin x H x W with Cin x Cout x kH x kW -> N x Cout x H'' x W''.

    ``H'' = (H - 1) * stride - 2 * padding + kH``.
    """
    _check_conv("conv_transpose2d", x, kernel, bias, 0, 1, stride, padding)
    _, _, h, w = x.shape
    _, _, kh, kw = kernel.shape
    ho = conv_transpose_output_size(h, kh, stride, padding)
    wo = conv_transpose_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(
            f"conv_transpose2d: empty output; input shape {x.shape}, kernel shape {kernel.shape}, "
            f"padding {padding}"
        )
    k = kernel.data
    out = _scatter(x.data, k, stride, padding, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)

    def backward_fn(g):
        gx, gwin = _correlate(g, k, stride, padding)
        grads = [gx, _kernel_grad(x.data, gwin)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    operands = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result("conv_transpose2d", out, operands, backward_fn)
