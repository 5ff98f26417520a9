"""Randomised gradient-check suites for the primitives, the GSM layer and a small net.

Every case builder takes a generator and returns ``(fn, inputs)`` for
:func:`grad_check`.  Inputs near non-differentiable points are kept away from
them (relu inputs bounded away from zero, max-pool inputs distinct).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .backbone import build_mini_net, tsn_consensus
from .gradcheck import GradCheckReport, grad_check
from .gsm import GsmParams, gsm_forward, gsm_forward_residual_form, shift_bw, shift_fw, spatial_gate
from .ops import BatchNormState
from .tensor import Tensor

SCOPES = ("primitives", "gsm", "net")
DEFAULT_TOL = {"primitives": 1e-5, "gsm": 1e-4, "net": 1e-4}
DEFAULT_EPS = {"primitives": 1e-4, "gsm": 1e-5, "net": 1e-6}
FAULT_SCALE = 1.01


@dataclass(frozen=True)
class Case:
    name: str
    build: Callable
    max_checks: int | None = None


def _normal(rng, *shape):
    return rng.standard_normal(shape)


def _away_from_zero(rng, *shape):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.1, 1.0, size=shape)


def _distinct(rng, *shape):
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.01 - 0.005 * n).reshape(shape)


def _dims(rng, lo=2, hi=4, k=3):
    return tuple(int(v) for v in rng.integers(lo, hi + 1, size=k))


def _conv2d_case(rng):
    groups = int(rng.integers(1, 3))
    k = int(rng.choice([1, 3]))
    s = int(rng.integers(1, 3))
    p = int(rng.integers(0, 2)) if k == 3 else 0
    out_extent = int(rng.integers(2, 4))
    h = (out_extent - 1) * s + k - 2 * p
    cin, cout = groups * int(rng.integers(1, 3)), groups * int(rng.integers(1, 3))
    n = int(rng.integers(1, 3))
    x = _normal(rng, n, cin, h, h)
    w = _normal(rng, cout, cin // groups, k, k)
    if rng.random() < 0.5:
        return (lambda x, w, b: ops.conv2d(x, w, b, stride=s, padding=p, groups=groups)), [x, w, _normal(rng, cout)]
    return (lambda x, w: ops.conv2d(x, w, stride=s, padding=p, groups=groups)), [x, w]


def _pool_case(kind):
    def build(rng):
        k = int(rng.integers(2, 4))
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, k // 2 + 1))
        out_extent = int(rng.integers(2, 4))
        h = (out_extent - 1) * s + k - 2 * p
        x = _distinct(rng, 2, 2, h, h)
        return (lambda x: ops.pool2d(x, kind, k, s, p)), [x]
    return build


def _bn_case(training):
    def build(rng):
        c = int(rng.integers(1, 4))
        x = _normal(rng, 3, c, 2, 3)
        rm, rv = _normal(rng, c), rng.uniform(0.5, 2.0, c)

        def fn(x, g, b):
            return ops.batch_norm(x, BatchNormState(g, b, rm.copy(), rv.copy()), training)

        return fn, [x, rng.uniform(0.5, 1.5, c), _normal(rng, c)]
    return build


def _dropout_case(rng):
    x = _normal(rng, 3, 5)
    seed = int(rng.integers(0, 2**31))
    return (lambda x: ops.dropout(x, 0.4, True, np.random.default_rng(seed))), [x]


def _xent_case(rng):
    n, k = int(rng.integers(1, 5)), int(rng.integers(2, 5))
    labels = rng.integers(0, k, n)
    return (lambda z: ops.softmax_cross_entropy(z, labels)), [_normal(rng, n, k)]


def _linear_case(rng):
    n, f, k = _dims(rng, 1, 4)
    return (lambda x, w, b: ops.linear(x, w, b)), [_normal(rng, n, f), _normal(rng, k, f), _normal(rng, k)]


def _conv3d_case(rng):
    n, c = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    t, h, w = _dims(rng, 2, 4)
    return (lambda x, k: ops.conv3d_plane(x, k)), [_normal(rng, n, c, t, h, w), _normal(rng, c, 3, 3, 3)]


def _video(rng, c=None):
    n = int(rng.integers(1, 3))
    c = c if c is not None else int(rng.integers(1, 4))
    t, h, w = _dims(rng, 2, 4)
    return _normal(rng, n, c, t, h, w)


def _hadamard_case(rng):
    x = _video(rng)
    g = _normal(rng, x.shape[0], 1, *x.shape[2:])
    return ops.hadamard_broadcast, [g, x]


def _concat_case(rng):
    a, b = _normal(rng, 2, 2, 3), _normal(rng, 2, 3, 3)
    return (lambda a, b: ops.concat([a, b], axis=1)), [a, b]


def _slice_case(rng):
    x = _normal(rng, 2, 5, 3)
    lo = int(rng.integers(0, 3))
    return (lambda x: ops.slice_axis(x, 1, lo, lo + 2)), [x]


def _broadcast_binary(op):
    def build(rng):
        a = _normal(rng, 2, 3, 4)
        shape = [(2, 3, 4), (1, 3, 1), (4,)][int(rng.integers(0, 3))]
        return op, [a, _normal(rng, *shape)]
    return build


PRIMITIVE_CASES = [
    Case("add", _broadcast_binary(ops.add)),
    Case("sub", _broadcast_binary(ops.sub)),
    Case("mul", _broadcast_binary(ops.mul)),
    Case("tanh", lambda r: ((lambda x: ops.activation_map(x, "tanh")), [_normal(r, 3, 4)])),
    Case("sigmoid", lambda r: ((lambda x: ops.activation_map(x, "sigmoid")), [_normal(r, 3, 4) * 3])),
    Case("relu", lambda r: (ops.relu, [_away_from_zero(r, 3, 4)])),
    Case("hadamard_broadcast", _hadamard_case),
    Case("reshape", lambda r: ((lambda x: ops.reshape(x, (6, 4))), [_normal(r, 2, 3, 4)])),
    Case("transpose", lambda r: ((lambda x: ops.transpose(x, (2, 0, 1))), [_normal(r, 2, 3, 4)])),
    Case("concat", _concat_case),
    Case("slice_axis", _slice_case),
    Case("video_to_frames", lambda r: (ops.video_to_frames, [_video(r)])),
    Case("conv2d", _conv2d_case),
    Case("conv3d_plane", _conv3d_case),
    Case("max_pool", _pool_case("max")),
    Case("avg_pool", _pool_case("avg")),
    Case("global_avg_pool", lambda r: (ops.global_avg_pool, [_video(r)])),
    Case("batch_norm_train", _bn_case(True)),
    Case("batch_norm_eval", _bn_case(False)),
    Case("linear", _linear_case),
    Case("dropout", _dropout_case),
    Case("softmax_cross_entropy", _xent_case),
    Case("shift_fw", lambda r: (shift_fw, [_video(r)])),
    Case("shift_bw", lambda r: (shift_bw, [_video(r)])),
    Case("tsn_consensus", lambda r: (tsn_consensus, [_normal(r, 2, 4, 3)])),
]


def _gsm_case(activation, spatial=False, residual=False):
    def build(rng):
        c = 2 * int(rng.integers(1, 3))
        cin = int(rng.integers(1, 3)) if spatial else c
        x = _video(rng, cin)
        k1, k2 = 0.5 * _normal(rng, c // 2, 3, 3, 3), 0.5 * _normal(rng, c // 2, 3, 3, 3)
        fwd = gsm_forward_residual_form if residual else (lambda *a: gsm_forward(*a)[0])

        if spatial:
            def fn(x, k1, k2, w):
                return fwd(x, GsmParams(c, k1, k2, w, activation))
            return fn, [x, k1, k2, 0.5 * _normal(rng, c, cin, 3, 3)]

        def fn(x, k1, k2):
            return fwd(x, GsmParams(c, k1, k2, None, activation))
        return fn, [x, k1, k2]
    return build


def _gate_case(rng):
    x = _video(rng)
    k = 0.5 * _normal(rng, x.shape[1], 3, 3, 3)
    return (lambda x, k: spatial_gate(x, k, "tanh")), [x, k]


GSM_CASES = [
    Case("spatial_gate", _gate_case),
    Case("gsm_forward[tanh]", _gsm_case("tanh")),
    Case("gsm_forward[sigmoid]", _gsm_case("sigmoid")),
    Case("gsm_forward[spatial conv]", _gsm_case("tanh", spatial=True)),
    Case("gsm_residual_form", _gsm_case("tanh", residual=True)),
]


def _net_case(rng):
    net = build_mini_net(num_classes=3, frames=4, width=2, seed=int(rng.integers(0, 2**31)), dtype=np.float64)
    names = list(net.parameters())
    for name in names:
        if ".gsm." in name:
            net.parameters()[name].data[...] = 0.3 * _normal(rng, *net.parameters()[name].shape)
    clip = _normal(rng, 2, 3, 4, 16, 16)
    labels = rng.integers(0, 3, 2)
    drop_seed = int(rng.integers(0, 2**31))

    def fn(clip, *params):
        net.replace_parameters(dict(zip(names, params)))
        frames = net.forward_clip(clip, training=True, rng=np.random.default_rng(drop_seed))
        return ops.softmax_cross_entropy(tsn_consensus(frames), labels)

    return fn, [clip] + [net.parameters()[n].data.copy() for n in names]


NET_CASES = [Case("mini_gsm_net", _net_case, max_checks=4)]

_SUITES = {"primitives": PRIMITIVE_CASES, "gsm": GSM_CASES, "net": NET_CASES}


def run_suite(scope: str, seed: int = 0, eps: float | None = None, tol: float | None = None,
              instances: int = 20, inject_fault: bool = False) -> list[GradCheckReport]:
    """Worst report per case over ``instances`` random draws.

    ``inject_fault`` scales every analytic gradient by 1.01 so the harness
    itself can be shown to catch errors.
    """
    if scope not in _SUITES:
        raise ValueError(f"unknown scope {scope!r}; expected one of {SCOPES}")
    eps = DEFAULT_EPS[scope] if eps is None else eps
    tol = DEFAULT_TOL[scope] if tol is None else tol
    reports = []
    for ci, case in enumerate(_SUITES[scope]):
        rng = np.random.default_rng((seed, ci))
        worst = None
        for i in range(instances):
            fn, inputs = case.build(rng)
            if inject_fault:
                fn = _faulty(fn)
            r = grad_check(fn, inputs, eps=eps, tol=tol, seed=seed + i, name=case.name, max_checks=case.max_checks)
            if worst is None or not r.passed or r.max_rel_error > worst.max_rel_error:
                worst = r
            if not r.passed:
                break
        reports.append(worst)
    return reports


def _faulty(fn):
    def wrapped(*args) -> Tensor:
        return ops.grad_scale(fn(*args), FAULT_SCALE)
    return wrapped
