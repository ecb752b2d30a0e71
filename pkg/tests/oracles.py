"""Float64 reference implementations used only by the test suite.

Everything here is written the slow, obvious way (explicit loops,
textbook formulas) so it shares no code paths with the library. All
arithmetic is 64-bit; library outputs are compared against these at
float32-appropriate tolerances.
"""

import numpy as np


def pad_amounts_1d(length, kernel, dilation, stride, padding):
    span = (kernel - 1) * dilation + 1
    if padding == "causal":
        return span - 1, 0
    if padding == "same":
        out = int(np.ceil(length / stride))
        total = max(0, (out - 1) * stride + span - length)
        return total // 2, total - total // 2
    return 0, 0


def conv1d_ref(x, w, b, dilation=1, stride=1, padding="causal"):
    """Direct tap-sum cross-correlation, [N,C,L] in, [N,Cout,Lout] out."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    n, c_in, length = x.shape
    c_out, _, kernel = w.shape
    left, right = pad_amounts_1d(length, kernel, dilation, stride, padding)
    xp = np.zeros((n, c_in, length + left + right))
    xp[:, :, left:left + length] = x
    span = (kernel - 1) * dilation + 1
    l_out = (xp.shape[2] - span) // stride + 1
    out = np.zeros((n, c_out, l_out))
    for i in range(n):
        for o in range(c_out):
            for t in range(l_out):
                acc = b[o]
                for c in range(c_in):
                    for k in range(kernel):
                        acc += w[o, c, k] * xp[i, c, t * stride + k * dilation]
                out[i, o, t] = acc
    return out[0] if single else out


def conv2d_ref(x, w, b, stride=1, padding="same"):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    n, c_in, height, width = x.shape
    c_out, _, kh, kw = w.shape
    ph = pad_amounts_1d(height, kh, 1, sh, padding)
    pw = pad_amounts_1d(width, kw, 1, sw, padding)
    xp = np.zeros((n, c_in, height + sum(ph), width + sum(pw)))
    xp[:, :, ph[0]:ph[0] + height, pw[0]:pw[0] + width] = x
    h_out = (xp.shape[2] - kh) // sh + 1
    w_out = (xp.shape[3] - kw) // sw + 1
    out = np.zeros((n, c_out, h_out, w_out))
    for i in range(n):
        for o in range(c_out):
            for r in range(h_out):
                for s in range(w_out):
                    acc = b[o]
                    for c in range(c_in):
                        for a in range(kh):
                            for bb in range(kw):
                                acc += w[o, c, a, bb] * xp[i, c, r * sh + a, s * sw + bb]
                    out[i, o, r, s] = acc
    return out[0] if single else out


def maxpool1d_ref(x, window):
    x = np.asarray(x, dtype=np.float64)
    n, c, length = x.shape
    l_out = length // window
    out = np.zeros((n, c, l_out))
    for i in range(n):
        for ch in range(c):
            for t in range(l_out):
                out[i, ch, t] = max(x[i, ch, t * window:(t + 1) * window])
    return out


def maxpool2d_ref(x, wh, ww):
    x = np.asarray(x, dtype=np.float64)
    n, c, height, width = x.shape
    h_out, w_out = height // wh, width // ww
    out = np.zeros((n, c, h_out, w_out))
    for i in range(n):
        for ch in range(c):
            for r in range(h_out):
                for s in range(w_out):
                    out[i, ch, r, s] = x[i, ch, r * wh:(r + 1) * wh,
                                         s * ww:(s + 1) * ww].max()
    return out


def batchnorm_train_ref(x, gamma, beta, epsilon=1e-5):
    """Returns (output, batch_mean, biased_batch_var), channel axis 1."""
    x = np.asarray(x, dtype=np.float64)
    axes = (0,) + tuple(range(2, x.ndim))
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)  # biased
    shape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    xhat = (x - mean.reshape(shape)) / np.sqrt(var.reshape(shape) + epsilon)
    g = np.asarray(gamma, dtype=np.float64).reshape(shape)
    b = np.asarray(beta, dtype=np.float64).reshape(shape)
    return g * xhat + b, mean, var


def batchnorm_eval_ref(x, gamma, beta, running_mean, running_var, epsilon=1e-5):
    x = np.asarray(x, dtype=np.float64)
    shape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    mean = np.asarray(running_mean, dtype=np.float64).reshape(shape)
    var = np.asarray(running_var, dtype=np.float64).reshape(shape)
    xhat = (x - mean) / np.sqrt(var + epsilon)
    g = np.asarray(gamma, dtype=np.float64).reshape(shape)
    b = np.asarray(beta, dtype=np.float64).reshape(shape)
    return g * xhat + b


def dense_ref(x, w, b):
    x = np.asarray(x, dtype=np.float64)
    return x @ np.asarray(w, dtype=np.float64).T + np.asarray(b, dtype=np.float64)


def adam_single_ref(p0, grads, lr, beta1=0.9, beta2=0.999, epsilon=1e-8):
    """Hand-evaluated Adam recurrence for one scalar over a grad sequence."""
    p, m, v = float(p0), 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p -= lr * mhat / (np.sqrt(vhat) + epsilon)
    return p


def fd_grad(fn, arrays, argnum, h=1e-3):
    """Central-difference gradient of scalar fn w.r.t. arrays[argnum].

    fn receives float64 copies of the arrays and must return a python
    float. Perturbation is elementwise.
    """
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[argnum]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        hi = fn(*base)
        flat[i] = keep - h
        lo = fn(*base)
        flat[i] = keep
        gflat[i] = (hi - lo) / (2 * h)
    return grad


def grads_agree(g, ref, rel=1e-4):
    """|g - ref| <= rel * max(1, |g|, |ref|) elementwise; returns (ok, worst)."""
    g = np.asarray(g, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(g), np.abs(ref)))
    err = np.abs(g - ref) / scale
    return bool((err <= rel).all()), float(err.max()) if err.size else 0.0
