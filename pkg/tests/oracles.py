"""Loop-based reference implementations, written for clarity rather than speed."""

import numpy as np


def conv2d(x, w, b=None, stride=1, pad=0, groups=1):
    n, c, h, wd = x.shape
    co, cig, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    cog = co // groups
    out = np.zeros((n, co, ho, wo))
    for i in range(n):
        for o in range(co):
            g = o // cog
            for y in range(ho):
                for z in range(wo):
                    acc = 0.0
                    for ci in range(cig):
                        for a in range(kh):
                            for d in range(kw):
                                acc += xp[i, g * cig + ci, y * stride + a, z * stride + d] * w[o, ci, a, d]
                    out[i, o, y, z] = acc + (b[o] if b is not None else 0.0)
    return out


def conv3d_plane(x, k):
    """Single-plane 3x3x3 correlation with unit zero padding."""
    n, c, t, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    out = np.zeros((n, 1, t, h, w))
    for i in range(n):
        for f in range(t):
            for y in range(h):
                for z in range(w):
                    acc = 0.0
                    for ci in range(c):
                        for a in range(3):
                            for b in range(3):
                                for d in range(3):
                                    acc += xp[i, ci, f + a, y + b, z + d] * k[ci, a, b, d]
                    out[i, 0, f, y, z] = acc
    return out


def pool2d(x, kind, k, stride, pad):
    n, c, h, w = x.shape
    fill = -np.inf if kind == "max" else 0.0
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=fill)
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    out = np.zeros((n, c, ho, wo))
    for i in range(n):
        for ch in range(c):
            for y in range(ho):
                for z in range(wo):
                    win = xp[i, ch, y * stride:y * stride + k, z * stride:z * stride + k]
                    out[i, ch, y, z] = win.max() if kind == "max" else win.sum() / (k * k)
    return out


def shift_fw(x):
    out = np.zeros_like(x)
    for t in range(1, x.shape[2]):
        out[:, :, t] = x[:, :, t - 1]
    return out


def shift_bw(x):
    out = np.zeros_like(x)
    for t in range(x.shape[2] - 1):
        out[:, :, t] = x[:, :, t + 1]
    return out


def gate_activation(v, kind):
    return np.tanh(v) if kind == "tanh" else 1.0 / (1.0 + np.exp(-v))


def gsm(x, k1, k2, kind="tanh"):
    """The module written out line by line from the defining equations."""
    c = x.shape[1]
    x1, x2 = x[:, : c // 2], x[:, c // 2:]
    y1 = gate_activation(conv3d_plane(x1, k1), kind) * x1
    y2 = gate_activation(conv3d_plane(x2, k2), kind) * x2
    r1 = x1 - y1
    r2 = x2 - y2
    z1 = shift_fw(y1) + r1
    z2 = shift_bw(y2) + r2
    return np.concatenate([z1, z2], axis=1)


def batch_norm_train(x, gamma, beta, eps=1e-5):
    axes = (0,) + tuple(range(2, x.ndim))
    shape = (1, -1) + (1,) * (x.ndim - 2)
    mean = x.mean(axis=axes).reshape(shape)
    var = x.var(axis=axes).reshape(shape)
    return (x - mean) / np.sqrt(var + eps) * gamma.reshape(shape) + beta.reshape(shape)


def linear(x, w, b):
    out = np.zeros((x.shape[0], w.shape[0]))
    for i in range(x.shape[0]):
        for k in range(w.shape[0]):
            out[i, k] = sum(x[i, f] * w[k, f] for f in range(x.shape[1])) + b[k]
    return out


def softmax_xent(z, labels):
    total = 0.0
    for row, y in zip(z, labels):
        m = max(row)
        lse = m + np.log(sum(np.exp(v - m) for v in row))
        total += lse - row[y]
    return total / len(labels)
