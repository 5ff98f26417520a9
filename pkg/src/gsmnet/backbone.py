"""A miniature GSM network for desk-scale experiments.

Structure: a per-frame 2D stem, Inception-style blocks whose pooling branch
(the one with the fewest convolutions) ends in a GSM layer, and a per-frame
classifier whose scores are averaged over time.  All 2D layers share weights
across frames, so only the GSM layers mix information between frames.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import analysis, ops
from .checkpoint import read_checkpoint, write_checkpoint
from .gsm import GateMode, GsmParams, gsm_forward
from .ops import BatchNormState
from .tensor import ShapeError, Tensor, make_result


@dataclass(frozen=True)
class ConvLayer:
    out: int
    kernel: int = 1
    stride: int = 1
    padding: int | None = None

    @property
    def pad(self) -> int:
        return self.kernel // 2 if self.padding is None else self.padding


@dataclass(frozen=True)
class PoolLayer:
    kind: str = "avg"
    kernel: int = 3
    stride: int = 1
    padding: int = 1


Layer = Union[ConvLayer, PoolLayer]


@dataclass(frozen=True)
class InceptionBlockSpec:
    branches: tuple[tuple[Layer, ...], ...]
    gsm_branch: int | None = None


@dataclass(frozen=True)
class StemSpec:
    out: int = 16
    kernel: int = 4
    stride: int = 2
    padding: int = 1
    pool_kernel: int = 2
    pool_stride: int = 2


def default_blocks(width: int = 8) -> list[InceptionBlockSpec]:
    """Two three-branch blocks (1x1 | 1x1->3x3 | pool->1x1->GSM)."""
    w = width
    return [
        InceptionBlockSpec(
            branches=(
                (ConvLayer(2 * w),),
                (ConvLayer(2 * w), ConvLayer(3 * w, kernel=3)),
                (PoolLayer("avg"), ConvLayer(2 * w)),
            ),
            gsm_branch=2,
        ),
        InceptionBlockSpec(
            branches=(
                (ConvLayer(3 * w),),
                (ConvLayer(3 * w), ConvLayer(4 * w, kernel=3)),
                (PoolLayer("avg"), ConvLayer(3 * w)),
            ),
            gsm_branch=2,
        ),
    ]


def _branch_channels(branch, c_in: int) -> int:
    c = c_in
    for layer in branch:
        if isinstance(layer, ConvLayer):
            c = layer.out
    return c


@dataclass
class _ConvUnit:
    weight: Tensor
    bn: BatchNormState
    spec: ConvLayer


@dataclass
class _Block:
    branches: list[list[Union[_ConvUnit, PoolLayer]]]
    gsm: GsmParams | None
    gsm_branch: int | None
    spec: InceptionBlockSpec


@dataclass
class MiniGsmNet:
    frames: int
    num_classes: int
    in_channels: int
    stem_spec: StemSpec
    stem: _ConvUnit
    blocks: list[_Block]
    fc_weight: Tensor
    fc_bias: Tensor
    dropout_rate: float = 0.5
    gate_mode: GateMode = GateMode.LEARNED
    width: int = 0

    # ------------------------------------------------------------ bookkeeping

    def _slots(self):
        """(name, owner, attribute) for every learnable tensor, gates included."""
        yield "stem.conv.weight", self.stem, "weight"
        yield "stem.bn.gamma", self.stem.bn, "gamma"
        yield "stem.bn.beta", self.stem.bn, "beta"
        for bi, block in enumerate(self.blocks):
            for ri, branch in enumerate(block.branches):
                for li, unit in enumerate(branch):
                    if isinstance(unit, _ConvUnit):
                        p = f"block{bi}.branch{ri}.layer{li}"
                        yield f"{p}.conv.weight", unit, "weight"
                        yield f"{p}.bn.gamma", unit.bn, "gamma"
                        yield f"{p}.bn.beta", unit.bn, "beta"
            if block.gsm is not None:
                yield f"block{bi}.gsm.gate_kernel_1", block.gsm, "gate_kernel_1"
                yield f"block{bi}.gsm.gate_kernel_2", block.gsm, "gate_kernel_2"
        yield "fc.weight", self, "fc_weight"
        yield "fc.bias", self, "fc_bias"

    def parameters(self) -> dict[str, Tensor]:
        """Every learnable tensor by name, gates included."""
        return {name: getattr(owner, attr) for name, owner, attr in self._slots()}

    def replace_parameters(self, tensors: dict[str, Tensor]) -> None:
        """Swap in new tensor objects (same shapes) by name."""
        for name, owner, attr in list(self._slots()):
            if name in tensors:
                old = getattr(owner, attr)
                if tensors[name].shape != old.shape:
                    raise ShapeError(f"{name}: shape {tensors[name].shape} != {old.shape}")
                setattr(owner, attr, tensors[name])

    def trainable_parameters(self) -> dict[str, Tensor]:
        """Parameters the optimizer updates; gates drop out unless learned."""
        params = self.parameters()
        if self.gate_mode is not GateMode.LEARNED:
            params = {k: v for k, v in params.items() if ".gsm." not in k}
        return params

    def batch_norms(self) -> dict[str, BatchNormState]:
        out = {"stem.bn": self.stem.bn}
        for bi, block in enumerate(self.blocks):
            for ri, branch in enumerate(block.branches):
                for li, unit in enumerate(branch):
                    if isinstance(unit, _ConvUnit):
                        out[f"block{bi}.branch{ri}.layer{li}.bn"] = unit.bn
        return out

    def gsm_layers(self) -> list[GsmParams]:
        return [b.gsm for b in self.blocks if b.gsm is not None]

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def gate_activation(self) -> str:
        layers = self.gsm_layers()
        return layers[0].gate_activation if layers else "tanh"

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.data.copy() for k, v in self.parameters().items()}
        for k, bn in self.batch_norms().items():
            state[f"{k}.running_mean"] = bn.running_mean.copy()
            state[f"{k}.running_var"] = bn.running_var.copy()
        state["meta.arch"] = np.array([self.frames, self.num_classes, self.width], dtype=np.float32)
        state["meta.gate"] = np.array(
            [_ACT_CODES.index(self.gate_activation()), _MODE_CODES.index(self.gate_mode)],
            dtype=np.float32,
        )
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        missing = sorted(set(expected) - set(state))
        extra = sorted(set(state) - set(expected))
        if missing or extra:
            raise ShapeError(f"checkpoint mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for k, ref in expected.items():
            if state[k].shape != ref.shape:
                raise ShapeError(f"{k}: checkpoint shape {state[k].shape} != model shape {ref.shape}")
        if not np.array_equal(state["meta.arch"], expected["meta.arch"]):
            raise ShapeError(f"architecture mismatch: {state['meta.arch']} vs {expected['meta.arch']}")
        for k, t in self.parameters().items():
            t.data[...] = state[k]
        for k, bn in self.batch_norms().items():
            bn.running_mean[...] = state[f"{k}.running_mean"]
            bn.running_var[...] = state[f"{k}.running_var"]
        act = _ACT_CODES[int(state["meta.gate"][0])]
        for g in self.gsm_layers():
            g.gate_activation = act
        self.gate_mode = _MODE_CODES[int(state["meta.gate"][1])]

    def to_archspec(self, height: int, width: int) -> analysis.ArchSpec:
        """The same network as a cost-analysis table."""
        s = self.stem_spec
        entries: list = [
            _conv_entry(self.in_channels, s.out, s.kernel, s.stride, s.padding, "stem"),
            analysis.Pool("max", (s.pool_kernel,) * 2, (s.pool_stride,) * 2, (0, 0), name="stem.pool"),
        ]
        c = s.out
        for bi, block in enumerate(self.blocks):
            branches = []
            for ri, branch in enumerate(block.spec.branches):
                items, cb = [], c
                for li, layer in enumerate(branch):
                    if isinstance(layer, ConvLayer):
                        items.append(_conv_entry(cb, layer.out, layer.kernel, layer.stride, layer.pad,
                                                 f"block{bi}.b{ri}.l{li}"))
                        cb = layer.out
                    else:
                        items.append(analysis.Pool(layer.kind, (layer.kernel,) * 2, (layer.stride,) * 2,
                                                   (layer.padding,) * 2, name=f"block{bi}.b{ri}.l{li}"))
                if ri == block.gsm_branch:
                    items.append(analysis.Gsm(cb, name=f"block{bi}.gsm"))
                branches.append(tuple(items))
            entries.append(analysis.Inception(tuple(branches), name=f"block{bi}"))
            c = sum(_branch_channels(br, c) for br in block.spec.branches)
        entries.append(analysis.Pool("global", name="head.pool"))
        entries.append(analysis.Linear(c, self.num_classes, True, name="fc"))
        spec = analysis.ArchSpec(self.in_channels, self.frames, height, width, tuple(entries))
        analysis.resolve(spec)
        return spec

    # ---------------------------------------------------------------- forward

    def _unit(self, unit: _ConvUnit, x: Tensor, training: bool) -> Tensor:
        y = ops.conv2d(x, unit.weight, stride=unit.spec.stride, padding=unit.spec.pad)
        return ops.relu(ops.batch_norm(y, unit.bn, training))

    def _features(self, x: Tensor, training: bool, with_gsm: bool) -> Tensor:
        """(N*T, C, H, W) frames -> pooled features (N*T, F)."""
        s = self.stem_spec
        x = ops.conv2d(x, self.stem.weight, stride=s.stride, padding=s.padding)
        x = ops.relu(ops.batch_norm(x, self.stem.bn, training))
        x = ops.pool2d(x, "max", s.pool_kernel, s.pool_stride, 0)
        for block in self.blocks:
            outs = []
            for ri, branch in enumerate(block.branches):
                y = x
                for unit in branch:
                    if isinstance(unit, _ConvUnit):
                        y = self._unit(unit, y, training)
                    else:
                        y = ops.pool2d(y, unit.kind, unit.kernel, unit.stride, unit.padding)
                if with_gsm and ri == block.gsm_branch:
                    video = ops.frames_to_video(y, self.frames)
                    video, _ = gsm_forward(video, block.gsm, self.gate_mode)
                    y = ops.video_to_frames(video)
                outs.append(y)
            x = ops.concat(outs, axis=1)
        x = ops.global_avg_pool(x)
        return ops.reshape(x, (x.shape[0], x.shape[1]))

    def _classify(self, feats: Tensor, training: bool, rng) -> Tensor:
        feats = ops.dropout(feats, self.dropout_rate, training, rng)
        return ops.linear(feats, self.fc_weight, self.fc_bias)

    def forward_clip(self, clip, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Per-frame class scores (N, T, K) for clips (N, 3, T, H, W)."""
        clip = clip if isinstance(clip, Tensor) else Tensor(clip)
        if clip.ndim != 5:
            raise ShapeError(f"clip must be (N,C,T,H,W), got rank {clip.ndim}")
        n, c, t = clip.shape[:3]
        if c != self.in_channels:
            raise ShapeError(f"clip has {c} channels, network expects {self.in_channels}")
        if t != self.frames:
            raise ShapeError(f"clip has {t} frames, network expects {self.frames}")
        feats = self._features(ops.video_to_frames(clip), training, with_gsm=True)
        logits = self._classify(feats, training, rng)
        return ops.reshape(logits, (n, t, self.num_classes))

    def forward_frames(self, frames) -> Tensor:
        """Eval-mode scores (M, K) for independent frames (M, 3, H, W), GSM layers skipped."""
        frames = frames if isinstance(frames, Tensor) else Tensor(frames)
        return self._classify(self._features(frames, False, with_gsm=False), False, None)

    def set_gate_activation(self, activation: str) -> None:
        for g in self.gsm_layers():
            g.gate_activation = activation


_ACT_CODES = ("tanh", "sigmoid")
_MODE_CODES = (GateMode.LEARNED, GateMode.FORCED_ZERO, GateMode.FORCED_ONE)


def _conv_entry(cin, cout, k, s, p, name) -> analysis.Conv:
    return analysis.Conv(2, (k, k), (s, s), (p, p), cin, cout, 1, False, True, "exact", name)


def _he(rng, shape, fan_in, dtype) -> Tensor:
    return Tensor((rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype), requires_grad=True)


def build_mini_net(
    blocks: list[InceptionBlockSpec] | None = None,
    stem: StemSpec | None = None,
    num_classes: int = 2,
    frames: int = 8,
    seed: int = 0,
    in_channels: int = 3,
    gate_activation: str = "tanh",
    dropout_rate: float = 0.5,
    width: int = 8,
    dtype=np.float32,
) -> MiniGsmNet:
    """Build a net with He-initialised convolutions and all-zero gates.

    ``width`` only matters when ``blocks`` is omitted (see :func:`default_blocks`).
    """
    if blocks is None:
        blocks = default_blocks(width)
    else:
        width = 0
    stem = stem if stem is not None else StemSpec(out=2 * width if width else 16)
    rng = np.random.default_rng(seed)

    def conv_unit(cin: int, spec: ConvLayer) -> _ConvUnit:
        fan_in = cin * spec.kernel * spec.kernel
        return _ConvUnit(_he(rng, (spec.out, cin, spec.kernel, spec.kernel), fan_in, dtype),
                         BatchNormState.create(spec.out, dtype), spec)

    stem_unit = conv_unit(in_channels, ConvLayer(stem.out, stem.kernel, stem.stride, stem.padding))
    c = stem.out
    built = []
    for bi, spec in enumerate(blocks):
        if not spec.branches:
            raise ValueError(f"block {bi}: no branches")
        branches = []
        for ri, branch in enumerate(spec.branches):
            units, cb = [], c
            for layer in branch:
                if isinstance(layer, ConvLayer):
                    units.append(conv_unit(cb, layer))
                    cb = layer.out
                elif isinstance(layer, PoolLayer):
                    if layer.kind not in ("max", "avg"):
                        raise ValueError(f"block {bi}, branch {ri}: unknown pool kind {layer.kind!r}")
                    units.append(layer)
                else:
                    raise ValueError(f"block {bi}, branch {ri}: unknown layer {layer!r}")
                if layer.stride != 1:
                    raise ValueError(f"block {bi}, branch {ri}: strided layers would break the channel concat")
            branches.append(units)
        gsm = None
        if spec.gsm_branch is not None:
            if not 0 <= spec.gsm_branch < len(spec.branches):
                raise ValueError(f"block {bi}: gsm_branch {spec.gsm_branch} out of range")
            gc = _branch_channels(spec.branches[spec.gsm_branch], c)
            if gc % 2:
                raise ValueError(f"block {bi}: GSM branch has odd channel count {gc}")
            gsm = GsmParams.create(gc, gate_activation, dtype=dtype)
        built.append(_Block(branches, gsm, spec.gsm_branch, spec))
        c = sum(_branch_channels(br, c) for br in spec.branches)

    fc_w = _he(rng, (num_classes, c), c, dtype)
    fc_b = Tensor(np.zeros(num_classes, dtype=dtype), requires_grad=True)
    return MiniGsmNet(frames, num_classes, in_channels, stem, stem_unit, built, fc_w, fc_b,
                      dropout_rate=dropout_rate, width=width)


def tsn_consensus(frame_logits) -> Tensor:
    """Average frame scores (N, T, K) over time.

    The sum runs over the values sorted along time, which makes the result
    bitwise independent of frame order.
    """
    x = frame_logits if isinstance(frame_logits, Tensor) else Tensor(frame_logits)
    if x.ndim != 3:
        raise ShapeError(f"frame logits must be (N,T,K), got rank {x.ndim}")
    t = x.shape[1]
    s = np.sort(x.data, axis=1)
    total = s[:, 0].copy()
    for i in range(1, t):
        total += s[:, i]
    out = total / np.asarray(t, dtype=x.dtype)
    return make_result(
        out, (x,), lambda g: (np.broadcast_to(g[:, None, :] / t, x.shape).astype(x.dtype),), "tsn_consensus"
    )


def ensemble_average(scores) -> np.ndarray:
    """Elementwise mean of several models' (N, K) scores."""
    scores = [np.asarray(s.data if isinstance(s, Tensor) else s) for s in scores]
    if not scores:
        raise ValueError("ensemble needs at least one score tensor")
    for i, s in enumerate(scores[1:], start=1):
        if s.shape != scores[0].shape:
            raise ShapeError(f"score tensor {i} has shape {s.shape}, expected {scores[0].shape}")
    total = scores[0].copy()
    for s in scores[1:]:
        total = total + s
    return total / len(scores)


def save_net(net: MiniGsmNet, path) -> None:
    write_checkpoint(path, net.state_dict())


def load_net(path, dropout_rate: float = 0.5) -> MiniGsmNet:
    """Rebuild a default-architecture net from a checkpoint."""
    state = read_checkpoint(path)
    if "meta.arch" not in state:
        raise ShapeError("checkpoint has no meta.arch entry")
    frames, classes, width = (int(v) for v in state["meta.arch"])
    if width < 1:
        raise ShapeError("checkpoint was not built from the default architecture")
    net = build_mini_net(num_classes=classes, frames=frames, width=width, dropout_rate=dropout_rate)
    net.load_state_dict(state)
    return net
