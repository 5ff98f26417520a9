"""Gate-Shift Module: grouped spatial gating routed through temporal shifts.

The input (N,C,T,H,W) is split into two channel halves.  Each half gets a
single gating plane from a 3x3x3 convolution followed by tanh (or sigmoid),
the gated part is shifted one frame forward (first half) or backward (second
half), and the ungated remainder is added back::

    Y = gate(W * X) . X
    R = X - Y
    Z = shift(Y) + R
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor, as_tensor, make_result

GATE_KERNEL = (3, 3, 3)


class GateMode(enum.Enum):
    LEARNED = "learned"
    FORCED_ZERO = "forced-zero"
    FORCED_ONE = "forced-one"


def _shift_array(x: np.ndarray, forward: bool) -> np.ndarray:
    out = np.zeros_like(x)
    if forward:
        out[:, :, 1:] = x[:, :, :-1]
    else:
        out[:, :, :-1] = x[:, :, 1:]
    return out


def shift_fw(x) -> Tensor:
    """out[:, :, t] = x[:, :, t-1]; frame 0 is zero-filled."""
    x = as_tensor(x)
    if x.ndim != 5:
        raise ShapeError(f"shift expects (N,C,T,H,W), got rank {x.ndim}")
    return make_result(
        _shift_array(x.data, True), (x,), lambda g: (_shift_array(g, False),), "shift_fw"
    )


def shift_bw(x) -> Tensor:
    """out[:, :, t] = x[:, :, t+1]; the last frame is zero-filled."""
    x = as_tensor(x)
    if x.ndim != 5:
        raise ShapeError(f"shift expects (N,C,T,H,W), got rank {x.ndim}")
    return make_result(
        _shift_array(x.data, False), (x,), lambda g: (_shift_array(g, True),), "shift_bw"
    )


def spatial_gate(x_group, kernel, activation: str = "tanh") -> Tensor:
    """Gating plane (N,1,T,H,W) for one channel group."""
    if activation not in ("tanh", "sigmoid"):
        raise ValueError(f"gate activation must be tanh or sigmoid, got {activation!r}")
    return ops.activation_map(ops.conv3d_plane(x_group, kernel, padding=(1, 1, 1)), activation)


@dataclass
class GsmParams:
    """Learnable state of one GSM layer.

    ``spatial_conv`` is the optional per-frame 1x3x3 convolution (Co, Ci, 3, 3)
    applied before the split; GSM layers placed inside Inception branches
    leave it out.
    """

    channels: int
    gate_kernel_1: Tensor
    gate_kernel_2: Tensor
    spatial_conv: Tensor | None = None
    gate_activation: str = "tanh"

    @classmethod
    def create(
        cls,
        channels: int,
        gate_activation: str = "tanh",
        spatial_in: int | None = None,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ) -> "GsmParams":
        if channels < 2 or channels % 2:
            raise ValueError(f"GSM needs an even channel count >= 2, got {channels}")
        if gate_activation not in ("tanh", "sigmoid"):
            raise ValueError(f"gate activation must be tanh or sigmoid, got {gate_activation!r}")
        half = channels // 2
        spatial = None
        if spatial_in is not None:
            rng = rng if rng is not None else np.random.default_rng(0)
            std = np.sqrt(2.0 / (spatial_in * 9))
            spatial = Tensor(
                (rng.standard_normal((channels, spatial_in, 3, 3)) * std).astype(dtype),
                requires_grad=True,
            )
        return cls(
            channels=channels,
            gate_kernel_1=Tensor(np.zeros((half,) + GATE_KERNEL, dtype=dtype), requires_grad=True),
            gate_kernel_2=Tensor(np.zeros((half,) + GATE_KERNEL, dtype=dtype), requires_grad=True),
            spatial_conv=spatial,
            gate_activation=gate_activation,
        )

    def gate_parameter_count(self) -> int:
        return self.gate_kernel_1.size + self.gate_kernel_2.size


@dataclass
class GsmIntermediates:
    x1: Tensor
    x2: Tensor
    y1: Tensor
    y2: Tensor
    r1: Tensor
    r2: Tensor
    z1: Tensor
    z2: Tensor


def gsm_param_count(channels: int) -> int:
    """Gating parameters of a GSM layer on ``channels`` channels: 27 * C."""
    if channels < 2 or channels % 2:
        raise ValueError(f"GSM needs an even channel count >= 2, got {channels}")
    return 2 * (int(np.prod(GATE_KERNEL)) * (channels // 2))


def _prepare(x, params: GsmParams) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 5:
        raise ShapeError(f"GSM input must be (N,C,T,H,W), got rank {x.ndim}")
    if params.spatial_conv is not None:
        t = x.shape[2]
        frames = ops.conv2d(ops.video_to_frames(x), params.spatial_conv, padding=1)
        x = ops.frames_to_video(frames, t)
    c = x.shape[1]
    if c % 2:
        raise ShapeError(f"GSM channel axis must be even, got {c}")
    if c != params.channels:
        raise ShapeError(f"GSM built for {params.channels} channels, input has {c}")
    return x


def _gate(x_group: Tensor, kernel: Tensor, params: GsmParams, mode: GateMode) -> Tensor:
    if mode is GateMode.LEARNED:
        return spatial_gate(x_group, kernel, params.gate_activation)
    n, _, t, h, w = x_group.shape
    value = 0.0 if mode is GateMode.FORCED_ZERO else 1.0
    return Tensor(np.full((n, 1, t, h, w), value, dtype=x_group.dtype))


def _gated_halves(x, params: GsmParams, mode: GateMode):
    x = _prepare(x, params)
    half = x.shape[1] // 2
    x1 = ops.slice_axis(x, 1, 0, half)
    x2 = ops.slice_axis(x, 1, half, 2 * half)
    y1 = ops.hadamard_broadcast(_gate(x1, params.gate_kernel_1, params, mode), x1)
    y2 = ops.hadamard_broadcast(_gate(x2, params.gate_kernel_2, params, mode), x2)
    return x1, x2, y1, y2


def gsm_forward(x, params: GsmParams, mode: GateMode = GateMode.LEARNED):
    """Apply the module; returns (Z, intermediates)."""
    x1, x2, y1, y2 = _gated_halves(x, params, mode)
    r1 = ops.sub(x1, y1)
    r2 = ops.sub(x2, y2)
    z1 = ops.add(shift_fw(y1), r1)
    z2 = ops.add(shift_bw(y2), r2)
    z = ops.concat([z1, z2], axis=1)
    return z, GsmIntermediates(x1, x2, y1, y2, r1, r2, z1, z2)


def gsm_forward_residual_form(x, params: GsmParams, mode: GateMode = GateMode.LEARNED) -> Tensor:
    """Same map written as X + (shift(Y) - Y)."""
    x1, x2, y1, y2 = _gated_halves(x, params, mode)
    z1 = ops.add(x1, ops.sub(shift_fw(y1), y1))
    z2 = ops.add(x2, ops.sub(shift_bw(y2), y2))
    return ops.concat([z1, z2], axis=1)
