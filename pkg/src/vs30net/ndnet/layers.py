"""Neural-network layer operations on the autodiff tensor core.

Convolutions are lowered to matrix multiplies: windows are gathered
with stride tricks, flattened to a column matrix, and hit with the
reshaped kernel. Backward recomputes the column matrix from the saved
input instead of keeping it alive, trading a little time for memory.

All ops accept and return Tensor; shapes are channels-first. conv1d and
conv2d accept a single sample ([C, L] / [C, H, W]) or a batch with a
leading N axis and return the same rank they were given.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, DimensionError
from .tensor import DTYPE, Tensor, accumulate_grad, as_tensor, node, tmean

_PAD_1D = ("causal", "same", "none")
_PAD_2D = ("same", "none")


def conv_output_length(length: int, kernel: int, dilation: int, stride: int,
                       padding: str) -> int:
    """Closed-form output length for one convolved axis."""
    span = (kernel - 1) * dilation + 1
    if padding == "none":
        if span > length:
            raise DimensionError(
                f"kernel span {span} exceeds input length {length} with no padding")
        return (length - span) // stride + 1
    # causal and same both preserve ceil(L / stride)
    return -(-length // stride)


def _padding_1d(length: int, kernel: int, dilation: int, stride: int, padding: str):
    span = (kernel - 1) * dilation + 1
    if padding == "causal":
        return span - 1, 0
    if padding == "same":
        out = -(-length // stride)
        total = max(0, (out - 1) * stride + span - length)
        return total // 2, total - total // 2
    return 0, 0


def conv1d(x, weight, bias, dilation: int = 1, stride: int = 1,
           padding: str = "causal") -> Tensor:
    """Cross-correlate [*, C_in, L] with weight [C_out, C_in, K].

    causal mode left-pads (K-1)*dilation zeros so output[t] sees only
    input[0..t]; with stride 1 the length is preserved.
    """
    if padding not in _PAD_1D:
        raise ConfigError(f"conv1d padding must be one of {_PAD_1D}, got {padding!r}")
    if dilation < 1 or stride < 1:
        raise ConfigError(f"dilation and stride must be >= 1, got {dilation}, {stride}")
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    single = x.data.ndim == 2
    xd = x.data[None] if single else x.data
    if xd.ndim != 3:
        raise DimensionError(f"conv1d input must be [C,L] or [N,C,L], got {x.shape}")
    if weight.data.ndim != 3:
        raise DimensionError(f"conv1d weight must be [C_out,C_in,K], got {weight.shape}")
    n, c_in, length = xd.shape
    c_out, w_cin, kernel = weight.data.shape
    if w_cin != c_in:
        raise DimensionError(f"input has {c_in} channels but weight expects {w_cin}")
    if bias.data.shape != (c_out,):
        raise DimensionError(f"bias shape {bias.data.shape} != ({c_out},)")
    if length == 0:
        raise DimensionError("conv1d on zero-length input")
    if kernel < 1:
        raise DimensionError("kernel size must be >= 1")
    span = (kernel - 1) * dilation + 1
    left, right = _padding_1d(length, kernel, dilation, stride, padding)
    if padding == "none" and span > length:
        raise DimensionError(
            f"kernel span {span} exceeds input length {length} with no padding")

    def columns(data):
        padded = np.pad(data, ((0, 0), (0, 0), (left, right)))
        win = sliding_window_view(padded, span, axis=2)[..., ::dilation]
        win = win[:, :, ::stride, :]                      # [N, C, L_out, K]
        l_out = win.shape[2]
        cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3))
        return cols.reshape(n * l_out, c_in * kernel), l_out

    cols, l_out = columns(xd)
    w2 = weight.data.reshape(c_out, c_in * kernel)
    out = (cols @ w2.T).reshape(n, l_out, c_out).transpose(0, 2, 1)
    out = out + bias.data[None, :, None]
    if single:
        out = out[0]

    def backward(g):
        gq = g[None] if single else g
        g2 = np.ascontiguousarray(gq.transpose(0, 2, 1)).reshape(n * l_out, c_out)
        if weight.requires_grad:
            bcols, _ = columns(xd)
            accumulate_grad(weight, (g2.T @ bcols).reshape(c_out, c_in, kernel))
        if bias.requires_grad:
            accumulate_grad(bias, gq.sum(axis=(0, 2), dtype=DTYPE))
        if x.requires_grad:
            gcol = (g2 @ w2).reshape(n, l_out, c_in, kernel).transpose(0, 2, 1, 3)
            gpad = np.zeros((n, c_in, length + left + right), dtype=DTYPE)
            last = (l_out - 1) * stride
            for k in range(kernel):
                off = k * dilation
                gpad[:, :, off:off + last + 1:stride] += gcol[:, :, :, k]
            gx = gpad[:, :, left:left + length]
            accumulate_grad(x, gx[0] if single else gx)

    return node(np.ascontiguousarray(out), (x, weight, bias), backward)


def conv2d(x, weight, bias, stride=1, padding: str = "same") -> Tensor:
    """Cross-correlate [*, C_in, H, W] with weight [C_out, C_in, Kh, Kw]."""
    if padding not in _PAD_2D:
        raise ConfigError(f"conv2d padding must be one of {_PAD_2D}, got {padding!r}")
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4:
        raise DimensionError(f"conv2d input must be [C,H,W] or [N,C,H,W], got {x.shape}")
    if weight.data.ndim != 4:
        raise DimensionError(
            f"conv2d weight must be [C_out,C_in,Kh,Kw], got {weight.shape}")
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    if sh < 1 or sw < 1:
        raise ConfigError(f"stride must be >= 1, got {(sh, sw)}")
    n, c_in, height, width = xd.shape
    c_out, w_cin, kh, kw = weight.data.shape
    if w_cin != c_in:
        raise DimensionError(f"input has {c_in} channels but weight expects {w_cin}")
    if bias.data.shape != (c_out,):
        raise DimensionError(f"bias shape {bias.data.shape} != ({c_out},)")
    if height == 0 or width == 0:
        raise DimensionError("conv2d on empty input")
    ph = _padding_1d(height, kh, 1, sh, padding)
    pw = _padding_1d(width, kw, 1, sw, padding)
    if padding == "none" and (kh > height or kw > width):
        raise DimensionError(
            f"kernel {(kh, kw)} exceeds input {(height, width)} with no padding")

    def columns(data):
        padded = np.pad(data, ((0, 0), (0, 0), ph, pw))
        win = sliding_window_view(padded, (kh, kw), axis=(2, 3))
        win = win[:, :, ::sh, ::sw]                       # [N, C, Ho, Wo, Kh, Kw]
        h_out, w_out = win.shape[2], win.shape[3]
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
        return cols.reshape(n * h_out * w_out, c_in * kh * kw), h_out, w_out

    cols, h_out, w_out = columns(xd)
    w2 = weight.data.reshape(c_out, c_in * kh * kw)
    out = (cols @ w2.T).reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2)
    out = out + bias.data[None, :, None, None]
    if single:
        out = out[0]

    def backward(g):
        gq = g[None] if single else g
        g2 = np.ascontiguousarray(gq.transpose(0, 2, 3, 1)).reshape(-1, c_out)
        if weight.requires_grad:
            bcols, _, _ = columns(xd)
            accumulate_grad(weight, (g2.T @ bcols).reshape(c_out, c_in, kh, kw))
        if bias.requires_grad:
            accumulate_grad(bias, gq.sum(axis=(0, 2, 3), dtype=DTYPE))
        if x.requires_grad:
            gcol = (g2 @ w2).reshape(n, h_out, w_out, c_in, kh, kw)
            gcol = gcol.transpose(0, 3, 1, 2, 4, 5)       # [N, C, Ho, Wo, Kh, Kw]
            gpad = np.zeros((n, c_in, height + sum(ph), width + sum(pw)), dtype=DTYPE)
            lh, lw = (h_out - 1) * sh, (w_out - 1) * sw
            for i in range(kh):
                for j in range(kw):
                    gpad[:, :, i:i + lh + 1:sh, j:j + lw + 1:sw] += gcol[:, :, :, :, i, j]
            gx = gpad[:, :, ph[0]:ph[0] + height, pw[0]:pw[0] + width]
            accumulate_grad(x, gx[0] if single else gx)

    return node(np.ascontiguousarray(out), (x, weight, bias), backward)


def max_pool(x, window) -> Tensor:
    """Non-overlapping max pool; stride equals window, remainder dropped.

    window: int pools the last axis of [N, C, L]; (int, int) pools the
    last two axes of [N, C, H, W]. Gradient goes to the first maximal
    element of each window.
    """
    x = as_tensor(x)
    if isinstance(window, int):
        if x.data.ndim != 3:
            raise DimensionError(f"1-D max_pool needs [N,C,L], got {x.shape}")
        n, c, length = x.data.shape
        if window < 1 or window > length:
            raise DimensionError(f"window {window} invalid for axis length {length}")
        l_out = length // window
        win = x.data[:, :, :l_out * window].reshape(n, c, l_out, window)
        out = win.max(axis=3)
        idx = win.argmax(axis=3)

        def backward(g):
            if not x.requires_grad:
                return
            gwin = np.zeros((n, c, l_out, window), dtype=DTYPE)
            np.put_along_axis(gwin, idx[..., None], g[..., None], axis=3)
            gx = np.zeros_like(x.data)
            gx[:, :, :l_out * window] = gwin.reshape(n, c, l_out * window)
            accumulate_grad(x, gx)

        return node(out, (x,), backward)

    wh, ww = window
    if x.data.ndim != 4:
        raise DimensionError(f"2-D max_pool needs [N,C,H,W], got {x.shape}")
    n, c, height, width = x.data.shape
    if wh < 1 or wh > height or ww < 1 or ww > width:
        raise DimensionError(f"window {window} invalid for axes {(height, width)}")
    h_out, w_out = height // wh, width // ww
    win = x.data[:, :, :h_out * wh, :w_out * ww]
    win = win.reshape(n, c, h_out, wh, w_out, ww).transpose(0, 1, 2, 4, 3, 5)
    win = np.ascontiguousarray(win).reshape(n, c, h_out, w_out, wh * ww)
    out = win.max(axis=4)
    idx = win.argmax(axis=4)

    def backward(g):
        if not x.requires_grad:
            return
        gwin = np.zeros((n, c, h_out, w_out, wh * ww), dtype=DTYPE)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=4)
        gwin = gwin.reshape(n, c, h_out, w_out, wh, ww).transpose(0, 1, 2, 4, 3, 5)
        gx = np.zeros_like(x.data)
        gx[:, :, :h_out * wh, :w_out * ww] = gwin.reshape(n, c, h_out * wh, w_out * ww)
        accumulate_grad(x, gx)

    return node(out, (x,), backward)


def batch_norm(x, gamma, beta, running_mean, running_var, mode: str,
               momentum: float = 0.1, epsilon: float = 1e-5) -> Tensor:
    """Per-channel normalization over the batch and spatial axes.

    Channel axis is 1. Train mode uses biased batch statistics and
    updates the running buffers in place (new = (1-m)*old + m*batch);
    eval mode reads the buffers and is stateless.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    x = as_tensor(x)
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    if x.data.ndim < 2:
        raise DimensionError(f"batch_norm input must be [N,C,...], got {x.shape}")
    channels = x.data.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.data.shape != (channels,):
            raise DimensionError(f"{name} shape {t.data.shape} != ({channels},)")
    axes = (0,) + tuple(range(2, x.data.ndim))
    shape = (1, channels) + (1,) * (x.data.ndim - 2)

    if mode == "train":
        if x.data.shape[0] == 1:
            raise DimensionError("batch_norm train mode needs batch size > 1 "
                                 "(variance is degenerate at N == 1)")
        mean = x.data.mean(axis=axes, dtype=DTYPE)
        var = x.data.var(axis=axes, dtype=DTYPE)
        running_mean.data *= np.float32(1.0 - momentum)
        running_mean.data += np.float32(momentum) * mean
        running_var.data *= np.float32(1.0 - momentum)
        running_var.data += np.float32(momentum) * var
    else:
        mean = running_mean.data
        var = running_var.data

    invstd = np.float32(1.0) / np.sqrt(var + np.float32(epsilon))
    xhat = (x.data - mean.reshape(shape)) * invstd.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)
    count = x.data.size // channels

    def backward(g):
        if gamma.requires_grad:
            accumulate_grad(gamma, (g * xhat).sum(axis=axes, dtype=DTYPE))
        if beta.requires_grad:
            accumulate_grad(beta, g.sum(axis=axes, dtype=DTYPE))
        if not x.requires_grad:
            return
        gs = gamma.data.reshape(shape) * invstd.reshape(shape)
        if mode == "eval":
            accumulate_grad(x, g * gs)
            return
        # train mode: mean and variance depend on x
        m = np.float32(count)
        gsum = g.sum(axis=axes, dtype=DTYPE).reshape(shape)
        gdot = (g * xhat).sum(axis=axes, dtype=DTYPE).reshape(shape)
        gx = gs * (g - gsum / m - xhat * gdot / m)
        accumulate_grad(x, gx.astype(DTYPE, copy=False))

    return node(out.astype(DTYPE, copy=False), (x, gamma, beta), backward)


def dense(x, weight, bias) -> Tensor:
    """Affine map: [N, F_in] @ weight[F_out, F_in].T + bias[F_out]."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 2:
        raise DimensionError(f"dense input must be [N,F_in], got {x.shape}")
    f_out, f_in = weight.data.shape
    if x.data.shape[1] != f_in:
        raise DimensionError(f"input width {x.data.shape[1]} != weight F_in {f_in}")
    if bias.data.shape != (f_out,):
        raise DimensionError(f"bias shape {bias.data.shape} != ({f_out},)")
    out = x.data @ weight.data.T + bias.data

    def backward(g):
        if x.requires_grad:
            accumulate_grad(x, g @ weight.data)
        if weight.requires_grad:
            accumulate_grad(weight, g.T @ x.data)
        if bias.requires_grad:
            accumulate_grad(bias, g.sum(axis=0, dtype=DTYPE))

    return node(out, (x, weight, bias), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        if x.requires_grad:
            accumulate_grad(x, g * mask)

    return node(x.data * mask, (x,), backward)


def dropout(x, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: train zeroes with prob rate and scales by 1/(1-rate).

    Eval mode returns the input tensor itself (exact identity).
    """
    if not (0.0 <= rate < 1.0):
        raise ConfigError(f"dropout rate must be in [0,1), got {rate}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    x = as_tensor(x)
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in train mode requires an rng")
    keep = (rng.random(x.data.shape) >= rate)
    scale = np.float32(1.0 / (1.0 - rate))
    mask = keep.astype(DTYPE) * scale

    def backward(g):
        if x.requires_grad:
            accumulate_grad(x, g * mask)

    return node(x.data * mask, (x,), backward)


def loss(pred, target, kind: str) -> Tensor:
    """MSE = mean((pred-target)^2); MAE = mean(|pred-target|)."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise DimensionError(
            f"loss shapes differ: pred {pred.data.shape}, target {target.data.shape}")
    if kind == "MSE":
        from .tensor import square
        return tmean(square(pred - target))
    if kind == "MAE":
        from .tensor import absolute
        return tmean(absolute(pred - target))
    raise ConfigError(f"loss kind must be 'MSE' or 'MAE', got {kind!r}")


def global_avg_pool(x) -> Tensor:
    """Mean over all spatial axes of [N, C, ...] -> [N, C]."""
    x = as_tensor(x)
    if x.data.ndim < 3:
        raise DimensionError(f"global_avg_pool needs [N,C,spatial...], got {x.shape}")
    return tmean(x, axis=tuple(range(2, x.data.ndim)))


def take_time_index(x, index: int) -> Tensor:
    """Select one position on the last axis: [N, C, L] -> [N, C]."""
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise DimensionError(f"take_time_index needs [N,C,L], got {x.shape}")
    length = x.data.shape[2]
    if not -length <= index < length:
        raise DimensionError(f"index {index} out of range for length {length}")
    pos = index % length
    out = np.ascontiguousarray(x.data[:, :, pos])

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, :, pos] = g
            accumulate_grad(x, gx)

    return node(out, (x,), backward)


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator):
    """Uniform(-sqrt(6/(fan_in+fan_out)), +...) initial weights."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)
