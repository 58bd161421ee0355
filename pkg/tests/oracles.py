"""Loop-based reference implementations the vectorized operators are checked against."""

import numpy as np


def conv2d(x, w, b=None, stride=(1, 1), padding=(0, 0, 0, 0)):
    top, bottom, left, right = padding
    xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    n, c, h, wd = xp.shape
    co, _, kh, kw = w.shape
    sh, sw = stride
    ho, wo = (h - kh) // sh + 1, (wd - kw) // sw + 1
    out = np.zeros((n, co, ho, wo))
    for i in range(n):
        for o in range(co):
            for r in range(ho):
                for s in range(wo):
                    patch = xp[i, :, r * sh : r * sh + kh, s * sw : s * sw + kw]
                    out[i, o, r, s] = (patch * w[o]).sum() + (b[o] if b is not None else 0.0)
    return out


def pool2d(x, kernel, reduce):
    kh, kw = kernel
    n, c, h, w = x.shape
    ho, wo = h // kh, w // kw
    out = np.zeros((n, c, ho, wo))
    for r in range(ho):
        for s in range(wo):
            out[:, :, r, s] = reduce(x[:, :, r * kh : (r + 1) * kh, s * kw : (s + 1) * kw])
    return out


def resize_linear_1d(v, n_out):
    n_in = len(v)
    out = np.zeros(n_out)
    for i in range(n_out):
        src = min(max((i + 0.5) * n_in / n_out - 0.5, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        t = src - lo
        out[i] = (1 - t) * v[lo] + t * v[hi]
    return out


def bilinear(x, out_h, out_w):
    n, c, h, w = x.shape
    rows = np.zeros((n, c, h, out_w))
    for i in range(n):
        for k in range(c):
            for r in range(h):
                rows[i, k, r] = resize_linear_1d(x[i, k, r], out_w)
    out = np.zeros((n, c, out_h, out_w))
    for i in range(n):
        for k in range(c):
            for s in range(out_w):
                out[i, k, :, s] = resize_linear_1d(rows[i, k, :, s], out_h)
    return out


def matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            out[i, j] = sum(a[i, k] * b[k, j] for k in range(a.shape[1]))
    return out


def softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def lstm(seq, w_ih, w_hh, bias, reverse=False):
    """Single-sequence LSTM, gates ordered i, f, g, o."""
    hidden = w_hh.shape[1]
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    out = np.zeros((len(seq), hidden))
    steps = range(len(seq) - 1, -1, -1) if reverse else range(len(seq))
    for t in steps:
        z = w_ih @ seq[t] + w_hh @ h + bias
        i = sigmoid(z[:hidden])
        f = sigmoid(z[hidden : 2 * hidden])
        g = np.tanh(z[2 * hidden : 3 * hidden])
        o = sigmoid(z[3 * hidden :])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = h
    return out


def coordinate_pool(x):
    n, c, h, w = x.shape
    z_h = np.zeros((n, c, h))
    z_w = np.zeros((n, c, w))
    for r in range(h):
        z_h[:, :, r] = x[:, :, r, :].mean(axis=-1)
    for s in range(w):
        z_w[:, :, s] = x[:, :, :, s].mean(axis=-1)
    return z_h, z_w


def coattention(f_spec, enc, proj):
    out = np.zeros((f_spec.shape[0], f_spec.shape[1] + proj.shape[1]))
    for i in range(f_spec.shape[0]):
        weights = softmax(np.array([f_spec[i] @ enc[j] for j in range(enc.shape[0])]))
        out[i, : f_spec.shape[1]] = f_spec[i]
        out[i, f_spec.shape[1] :] = sum(weights[j] * proj[j] for j in range(proj.shape[0]))
    return out
