"""Differentiable primitives with hand-written backward passes.

Convolutions are cross-correlations (no kernel flip) with zero padding.
Per-image matrix products go through stacked ``np.matmul`` so that the
result for one image never depends on which other images share the batch;
the exact order-invariance tests downstream rely on that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor, make_result

ACTIVATIONS = ("tanh", "sigmoid", "relu")


def _pair(v, name: str) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def _out_extent(size: int, k: int, s: int, p: int, axis: str) -> int:
    span = size + 2 * p - k
    if span < 0:
        raise ShapeError(f"kernel {k} larger than padded {axis} extent {size + 2 * p}")
    if span % s:
        raise ShapeError(
            f"non-integer output extent on {axis}: ({size} + 2*{p} - {k}) / {s} is not whole"
        )
    return span // s + 1


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)
        return make_result(a.data * c, (a,), lambda g: (_unbroadcast(g * c, a.shape),), "mul")
    return make_result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def activation_map(x: Tensor, kind: str) -> Tensor:
    """Elementwise tanh, sigmoid or relu."""
    x = as_tensor(x)
    if kind == "tanh":
        y = np.tanh(x.data)
        return make_result(y, (x,), lambda g: (g * (1 - y * y),), "tanh")
    if kind == "sigmoid":
        y = _sigmoid(x.data)
        return make_result(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")
    if kind == "relu":
        mask = x.data > 0
        return make_result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1 + e)
    return out


def relu(x: Tensor) -> Tensor:
    return activation_map(x, "relu")


def hadamard_broadcast(gate: Tensor, x: Tensor) -> Tensor:
    """Multiply a single-plane gate (N,1,T,H,W) into every channel of x (N,C,T,H,W)."""
    gate, x = as_tensor(gate), as_tensor(x)
    if gate.ndim != x.ndim or gate.shape[1] != 1:
        raise ShapeError(f"gate must have one channel and rank {x.ndim}, got {gate.shape}")
    for ax, (a, b) in enumerate(zip(gate.shape, x.shape)):
        if ax != 1 and a != b:
            raise ShapeError(f"gate/input extent mismatch on axis {ax}: {a} vs {b}")
    return make_result(
        gate.data * x.data,
        (gate, x),
        lambda g: ((g * x.data).sum(axis=1, keepdims=True), g * gate.data),
        "hadamard",
    )


def grad_scale(x: Tensor, scale: float) -> Tensor:
    """Identity in the forward pass, multiplies the gradient by ``scale``."""
    x = as_tensor(x)
    return make_result(x.data.copy(), (x,), lambda g: (g * scale,), "grad_scale")


# ----------------------------------------------------------------- structural


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return make_result(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (np.ascontiguousarray(g.transpose(inv)),),
        "transpose",
    )


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        idx = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return out

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return make_result(x.data[idx].copy(), (x,), backward, "slice")


def video_to_frames(x: Tensor) -> Tensor:
    """(N,C,T,H,W) -> (N*T,C,H,W), frame-major within each clip."""
    n, c, t, h, w = x.shape
    return reshape(transpose(x, (0, 2, 1, 3, 4)), (n * t, c, h, w))


def frames_to_video(x: Tensor, frames: int) -> Tensor:
    nt, c, h, w = x.shape
    if nt % frames:
        raise ShapeError(f"{nt} frames not divisible into clips of {frames}")
    return transpose(reshape(x, (nt // frames, frames, c, h, w)), (0, 2, 1, 3, 4))


# --------------------------------------------------------------- convolutions


def conv2d(x, weight, bias=None, stride=1, padding=0, groups: int = 1) -> Tensor:
    """2D cross-correlation of (N,C,H,W) with (Co, C/groups, kh, kw)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be (N,C,H,W), got rank {x.ndim}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be (Co,Ci/g,kh,kw), got rank {weight.ndim}")
    n, c, h, w = x.shape
    co, cig, kh, kw = weight.shape
    sh, sw = _pair(stride, "stride")
    ph, pw = _pair(padding, "padding")
    if groups < 1 or c % groups:
        raise ShapeError(f"input channel axis ({c}) not divisible by groups={groups}")
    if co % groups:
        raise ShapeError(f"output channel axis ({co}) not divisible by groups={groups}")
    if cig != c // groups:
        raise ShapeError(f"weight input-channel axis is {cig}, expected C/groups = {c // groups}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (co,):
            raise ShapeError(f"bias must have shape ({co},), got {bias.shape}")
    ho = _out_extent(h, kh, sh, ph, "height")
    wo = _out_extent(w, kw, sw, pw, "width")

    pointwise = kh == kw == 1 and sh == sw == 1 and ph == pw == 0
    xp = x.data if pointwise else np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cog = co // groups
    k = cig * kh * kw
    cols, wmats = [], []
    y = np.empty((n, co, ho * wo), dtype=x.dtype)
    for gi in range(groups):
        xg = xp[:, gi * cig:(gi + 1) * cig]
        if pointwise:
            col = xg.reshape(n, k, ho * wo)
        else:
            win = sliding_window_view(xg, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
            col = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, k, ho * wo)
        wm = weight.data[gi * cog:(gi + 1) * cog].reshape(cog, k).astype(x.dtype)
        # (Co,K) @ (N,K,P): one product per image
        y[:, gi * cog:(gi + 1) * cog] = np.matmul(wm, col)
        cols.append(col)
        wmats.append(wm)
    y = y.reshape(n, co, ho, wo)
    if bias is not None:
        y += bias.data.astype(x.dtype)[None, :, None, None]

    def backward(g):
        gm = g.reshape(n, co, ho * wo)
        gw = np.empty_like(weight.data)
        gxp = np.zeros_like(xp)
        for gi in range(groups):
            gg = gm[:, gi * cog:(gi + 1) * cog]
            gw[gi * cog:(gi + 1) * cog] = (
                np.matmul(gg, cols[gi].transpose(0, 2, 1)).sum(axis=0).reshape(cog, cig, kh, kw)
            )
            gcol = np.matmul(wmats[gi].T, gg)
            if pointwise:
                gxp[:, gi * cig:(gi + 1) * cig] = gcol.reshape(n, cig, h, w)
                continue
            gcol = gcol.reshape(n, cig, kh, kw, ho, wo)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, gi * cig:(gi + 1) * cig, i:i + sh * ho:sh, j:j + sw * wo:sw] += gcol[:, :, i, j]
        gx = gxp if pointwise else np.ascontiguousarray(gxp[:, :, ph:ph + h, pw:pw + w])
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)).astype(bias.dtype))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(y, parents, backward, "conv2d")


def conv3d_plane(x, kernel, padding=(1, 1, 1)) -> Tensor:
    """Single-output-plane 3D cross-correlation, stride 1, no bias.

    x is (N,Cg,T,H,W), kernel is (Cg,kt,kh,kw); returns (N,1,T',H',W').
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 5:
        raise ShapeError(f"conv3d_plane input must be (N,C,T,H,W), got rank {x.ndim}")
    if kernel.ndim != 4:
        raise ShapeError(f"conv3d_plane kernel must be (C,kt,kh,kw), got rank {kernel.ndim}")
    if kernel.shape[0] != x.shape[1]:
        raise ShapeError(
            f"kernel channel axis ({kernel.shape[0]}) != input channel axis ({x.shape[1]})"
        )
    n, c, t, h, w = x.shape
    _, kt, kh, kw = kernel.shape
    pt, ph, pw = padding
    to = _out_extent(t, kt, 1, pt, "time")
    ho = _out_extent(h, kh, 1, ph, "height")
    wo = _out_extent(w, kw, 1, pw, "width")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    tp, hp, wp = xp.shape[2:]
    offsets = [(a, b, d) for a in range(kt) for b in range(kh) for d in range(kw)]
    km = kernel.data.reshape(c, len(offsets)).astype(x.dtype)
    xm = xp.reshape(n, c, tp * hp * wp)
    # contract channels for every kernel tap at once, then add the shifted taps
    taps = np.matmul(km.T, xm).reshape(n, len(offsets), tp, hp, wp)
    y = np.zeros((n, 1, to, ho, wo), dtype=x.dtype)
    for o, (a, b, d) in enumerate(offsets):
        y[:, 0] += taps[:, o, a:a + to, b:b + ho, d:d + wo]

    def backward(g):
        placed = np.zeros((n, len(offsets), tp, hp, wp), dtype=x.dtype)
        for o, (a, b, d) in enumerate(offsets):
            placed[:, o, a:a + to, b:b + ho, d:d + wo] = g[:, 0]
        placed = placed.reshape(n, len(offsets), tp * hp * wp)
        gk = np.matmul(xm, placed.transpose(0, 2, 1)).sum(axis=0)
        gxp = np.matmul(km, placed).reshape(n, c, tp, hp, wp)
        gx = np.ascontiguousarray(gxp[:, :, pt:pt + t, ph:ph + h, pw:pw + w])
        return gx, gk.reshape(kernel.shape).astype(kernel.dtype)

    return make_result(y, (x, kernel), backward, "conv3d_plane")


# -------------------------------------------------------------------- pooling


def _window_reduce(xp, kind, kh, kw, sh, sw, ho, wo):
    out = None
    for i in range(kh):
        for j in range(kw):
            v = xp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]
            if out is None:
                out = v.copy()
            elif kind == "max":
                np.maximum(out, v, out=out)
            else:
                out += v
    return out


def pool2d(x, kind: str, kernel, stride=None, padding=0) -> Tensor:
    """Max or average pooling over (N,C,H,W); averages count padded zeros."""
    x = as_tensor(x)
    if kind == "global_avg":
        return global_avg_pool(x)
    if kind not in ("max", "avg"):
        raise ValueError(f"unknown pool kind {kind!r}")
    if x.ndim != 4:
        raise ShapeError(f"pool input must be (N,C,H,W), got rank {x.ndim}")
    kh, kw = _pair(kernel, "kernel")
    sh, sw = _pair(stride if stride is not None else kernel, "stride")
    ph, pw = _pair(padding, "padding")
    n, c, h, w = x.shape
    ho = _out_extent(h, kh, sh, ph, "height")
    wo = _out_extent(w, kw, sw, pw, "width")
    fill = -np.inf if kind == "max" else 0
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=fill)
    y = _window_reduce(xp, kind, kh, kw, sh, sw, ho, wo)

    if kind == "avg":
        scale = 1.0 / (kh * kw)
        y *= np.asarray(scale, dtype=y.dtype)

        def backward(g):
            gxp = np.zeros_like(xp)
            gs = g * scale
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += gs
            return (gxp[:, :, ph:ph + h, pw:pw + w].copy(),)

        return make_result(y, (x,), backward, "avg_pool")

    def backward(g):
        gxp = np.zeros_like(xp)
        taken = np.zeros(y.shape, dtype=bool)
        for i in range(kh):
            for j in range(kw):
                # ties go to the first window position in row-major order
                sel = (xp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] == y) & ~taken
                taken |= sel
                gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += g * sel
        return (gxp[:, :, ph:ph + h, pw:pw + w].copy(),)

    return make_result(y, (x,), backward, "max_pool")


def global_avg_pool(x) -> Tensor:
    """Average over every axis after the channel axis; those axes become 1."""
    x = as_tensor(x)
    n, c = x.shape[:2]
    rest = x.shape[2:]
    count = int(np.prod(rest))
    y = x.data.reshape(n, c, count).mean(axis=2).reshape((n, c) + (1,) * len(rest))
    return make_result(
        y,
        (x,),
        lambda g: (np.broadcast_to(g / count, x.shape).astype(x.dtype),),
        "global_avg_pool",
    )


# -------------------------------------------------------------- normalization


@dataclass
class BatchNormState:
    """Per-channel affine parameters and running statistics."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.float32) -> "BatchNormState":
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def _channel_sum(a: np.ndarray, dtype=None) -> np.ndarray:
    """Sum over every axis except axis 1, innermost contiguous axes first."""
    return a.reshape(a.shape[0], a.shape[1], -1).sum(axis=2, dtype=dtype).sum(axis=0)


def batch_norm(x, state: BatchNormState, training: bool) -> Tensor:
    x = as_tensor(x)
    c = x.shape[1]
    if c != state.channels:
        raise ShapeError(f"channel axis is {c}, batch-norm state has {state.channels}")
    bshape = (1, c) + (1,) * (x.ndim - 2)
    gamma, beta = state.gamma, state.beta
    dt = x.dtype

    if not training:
        inv = (1.0 / np.sqrt(state.running_var.astype(np.float64) + state.eps)).astype(dt)
        scale = (gamma.data * inv).reshape(bshape)
        xhat = (x.data - state.running_mean.astype(dt).reshape(bshape)) * inv.reshape(bshape)
        y = x.data * scale + (beta.data - state.running_mean * gamma.data * inv).astype(dt).reshape(bshape)

        def backward_eval(g):
            return g * scale, _channel_sum(g * xhat), _channel_sum(g)

        return make_result(y.astype(dt), (x, gamma, beta), backward_eval, "batch_norm")

    m = x.size // c
    if m < 2:
        raise ShapeError("batch_norm in train mode needs more than one value per channel")
    mean = _channel_sum(x.data, np.float64) / m
    var = _channel_sum((x.data - mean.reshape(bshape)) ** 2) / m
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean.astype(dt).reshape(bshape)) * inv.astype(dt).reshape(bshape)
    y = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    mo = state.momentum
    state.running_mean[...] = (1 - mo) * state.running_mean + mo * mean
    state.running_var[...] = (1 - mo) * state.running_var + mo * var * m / (m - 1)

    def backward(g):
        dxhat = g * gamma.data.reshape(bshape)
        s1 = _channel_sum(dxhat).reshape(bshape)
        s2 = _channel_sum(dxhat * xhat).reshape(bshape)
        dx = inv.astype(dt).reshape(bshape) / m * (m * dxhat - s1 - xhat * s2)
        return dx, _channel_sum(g * xhat), _channel_sum(g)

    return make_result(y.astype(dt), (x, gamma, beta), backward, "batch_norm")


# ---------------------------------------------------------------- classifier


def linear(x, weight, bias=None) -> Tensor:
    """x (N,F) times weight (K,F) transposed, plus bias (K)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"linear expects (N,F) and (K,F), got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"feature axis mismatch: input {x.shape[1]} vs weight {weight.shape[1]}")
    wt = weight.data.T.astype(x.dtype)
    # row-stacked product keeps every row's result independent of the batch
    y = np.matmul(x.data[:, None, :], wt)[:, 0, :]
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"bias must have shape ({weight.shape[0]},), got {bias.shape}")
        y = y + bias.data.astype(x.dtype)
        parents.append(bias)

    def backward(g):
        grads = [g @ weight.data.astype(x.dtype), (g.T @ x.data).astype(weight.dtype)]
        if bias is not None:
            grads.append(g.sum(axis=0).astype(bias.dtype))
        return grads

    return make_result(y, parents, backward, "linear")


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    x = as_tensor(x)
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / np.asarray(1 - rate, dtype=x.dtype)
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (N,K), got {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.asarray((lse - z[rows, labels]).mean(), dtype=logits.dtype)
    p = np.exp(z - lse[:, None])
    p[rows, labels] -= 1

    return make_result(loss, (logits,), lambda g: (p * (g / n),), "softmax_cross_entropy")
