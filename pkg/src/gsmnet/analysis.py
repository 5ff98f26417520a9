"""Parameter and FLOP accounting over declarative architecture tables.

Spec files are UTF-8 text, one entry per line, ``#`` starts a comment.
The first entry must be ``input C T H W``.  Entries::

    conv2d k=KHxKW s=S p=P in=I out=O [groups=G] [bias=0|1] [bn=0|1] [round=R] [name=N]
    conv3d k=KTxKHxKW s=S p=P in=I out=O [groups=G] [bias=0|1] [bn=0|1] [round=R] [name=N]
    pool max|avg k=KHxKW s=S p=P [round=R] [name=N]
    pool global [name=N]
    linear in=I out=O [bias=0|1] [name=N]
    gsm c=C [name=N]
    inception begin [name=N]
    branch
    inception end

``s`` and ``p`` take a single integer or one value per kernel axis
(``2x2``).  ``round`` is ``exact`` (default: a fractional output extent is an
error), ``floor`` or ``ceil``.  ``bn=1`` attaches a batch-norm layer to the
convolution.  Branches of an inception block all read the block input and
are concatenated along channels; blocks may nest inside a branch.

Counting conventions: one multiply-accumulate is one FLOP.  Batch-norm,
activations, pooling and bias additions are reported as auxiliary work and
kept out of the totals.  A GSM entry costs its 3x3x3 gating convolution plus
three elementwise ops (gate multiply, residual subtract, fuse add) per
element; the time shifts are free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Union

from .gsm import gsm_param_count


class ArchSpecError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Conv:
    dims: int
    kernel: tuple[int, ...]
    stride: tuple[int, ...]
    padding: tuple[int, ...]
    in_ch: int
    out_ch: int
    groups: int = 1
    bias: bool = False
    bn: bool = False
    round: str = "exact"
    name: str = ""
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Pool:
    kind: str
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    round: str = "exact"
    name: str = ""
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Linear:
    in_features: int
    out_features: int
    bias: bool = True
    name: str = ""
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Gsm:
    channels: int
    name: str = ""
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Inception:
    branches: tuple[tuple["Entry", ...], ...]
    name: str = ""
    line: int = field(default=0, compare=False)

    @property
    def gsm_branch(self) -> int | None:
        for i, br in enumerate(self.branches):
            if any(_contains_gsm(e) for e in br):
                return i
        return None


def _contains_gsm(e) -> bool:
    if isinstance(e, Gsm):
        return True
    return isinstance(e, Inception) and any(_contains_gsm(x) for br in e.branches for x in br)


Entry = Union[Conv, Pool, Linear, Gsm, Inception]


@dataclass(frozen=True)
class ArchSpec:
    channels: int
    frames: int
    height: int
    width: int
    entries: tuple[Entry, ...]

    def with_frames(self, frames: int) -> "ArchSpec":
        return replace(self, frames=frames)


@dataclass
class LayerCost:
    name: str
    kind: str
    out_shape: tuple[int, int, int, int]
    params: int
    flops: int
    aux_flops: int
    is_gsm: bool


@dataclass
class CostReport:
    frames: int
    layers: list[LayerCost]

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def total_flops(self) -> int:
        return sum(l.flops for l in self.layers)

    @property
    def aux_flops(self) -> int:
        return sum(l.aux_flops for l in self.layers)

    @property
    def gsm_params(self) -> int:
        return sum(l.params for l in self.layers if l.is_gsm)

    @property
    def gsm_flops(self) -> int:
        return sum(l.flops for l in self.layers if l.is_gsm)

    @property
    def param_overhead_pct(self) -> float:
        base = self.total_params - self.gsm_params
        return 100.0 * self.gsm_params / base if base else 0.0

    @property
    def flop_overhead_pct(self) -> float:
        base = self.total_flops - self.gsm_flops
        return 100.0 * self.gsm_flops / base if base else 0.0

    def render(self, fmt: str = "table") -> str:
        return _render_tsv(self) if fmt == "tsv" else _render_table(self)


# --------------------------------------------------------------------- parsing


def _ints(text: str, line: int, key: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split("x"))
    except ValueError:
        raise ArchSpecError(line, f"{key}={text!r} is not an integer or AxB list") from None
    if any(v < 0 for v in vals):
        raise ArchSpecError(line, f"{key}={text!r} must be non-negative")
    return vals


def _expand(vals: tuple[int, ...], n: int, line: int, key: str) -> tuple[int, ...]:
    if len(vals) == 1:
        return vals * n
    if len(vals) != n:
        raise ArchSpecError(line, f"{key} needs 1 or {n} values, got {len(vals)}")
    return vals


def _options(tokens: list[str], line: int, allowed: set[str]) -> dict[str, str]:
    opts = {}
    for tok in tokens:
        if "=" not in tok:
            raise ArchSpecError(line, f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        if k not in allowed:
            raise ArchSpecError(line, f"unknown option {k!r}")
        if k in opts:
            raise ArchSpecError(line, f"option {k!r} given twice")
        opts[k] = v
    return opts


def _flag(opts: dict, key: str, default: bool, line: int) -> bool:
    v = opts.get(key)
    if v is None:
        return default
    if v not in ("0", "1"):
        raise ArchSpecError(line, f"{key} must be 0 or 1")
    return v == "1"


def _round_mode(opts: dict, line: int) -> str:
    mode = opts.get("round", "exact")
    if mode not in ("exact", "floor", "ceil"):
        raise ArchSpecError(line, f"round must be exact, floor or ceil, got {mode!r}")
    return mode


def _positive(opts: dict, key: str, line: int) -> int:
    if key not in opts:
        raise ArchSpecError(line, f"missing {key}=")
    (v,) = _expand(_ints(opts[key], line, key), 1, line, key)
    if v < 1:
        raise ArchSpecError(line, f"{key} must be >= 1")
    return v


def _parse_entry(tokens: list[str], line: int) -> Entry:
    kind = tokens[0]
    if kind in ("conv2d", "conv3d"):
        dims = 2 if kind == "conv2d" else 3
        opts = _options(tokens[1:], line, {"k", "s", "p", "in", "out", "groups", "bias", "bn", "round", "name"})
        if "k" not in opts:
            raise ArchSpecError(line, "missing k=")
        kernel = _ints(opts["k"], line, "k")
        if len(kernel) != dims or min(kernel) < 1:
            raise ArchSpecError(line, f"{kind} kernel needs {dims} positive extents")
        stride = _expand(_ints(opts.get("s", "1"), line, "s"), dims, line, "s")
        if min(stride) < 1:
            raise ArchSpecError(line, "stride must be >= 1")
        return Conv(
            dims=dims,
            kernel=kernel,
            stride=stride,
            padding=_expand(_ints(opts.get("p", "0"), line, "p"), dims, line, "p"),
            in_ch=_positive(opts, "in", line),
            out_ch=_positive(opts, "out", line),
            groups=_positive(opts, "groups", line) if "groups" in opts else 1,
            bias=_flag(opts, "bias", False, line),
            bn=_flag(opts, "bn", False, line),
            round=_round_mode(opts, line),
            name=opts.get("name", ""),
            line=line,
        )
    if kind == "pool":
        if len(tokens) < 2 or tokens[1] not in ("max", "avg", "global"):
            raise ArchSpecError(line, "pool needs a type: max, avg or global")
        ptype = tokens[1]
        if ptype == "global":
            opts = _options(tokens[2:], line, {"name"})
            return Pool(kind="global", name=opts.get("name", ""), line=line)
        opts = _options(tokens[2:], line, {"k", "s", "p", "round", "name"})
        if "k" not in opts:
            raise ArchSpecError(line, "missing k=")
        kernel = _expand(_ints(opts["k"], line, "k"), 2, line, "k")
        stride = _expand(_ints(opts.get("s", opts["k"]), line, "s"), 2, line, "s")
        if min(kernel) < 1 or min(stride) < 1:
            raise ArchSpecError(line, "pool kernel and stride must be >= 1")
        return Pool(
            kind=ptype,
            kernel=kernel,
            stride=stride,
            padding=_expand(_ints(opts.get("p", "0"), line, "p"), 2, line, "p"),
            round=_round_mode(opts, line),
            name=opts.get("name", ""),
            line=line,
        )
    if kind == "linear":
        opts = _options(tokens[1:], line, {"in", "out", "bias", "name"})
        return Linear(
            in_features=_positive(opts, "in", line),
            out_features=_positive(opts, "out", line),
            bias=_flag(opts, "bias", True, line),
            name=opts.get("name", ""),
            line=line,
        )
    if kind == "gsm":
        opts = _options(tokens[1:], line, {"c", "name"})
        return Gsm(channels=_positive(opts, "c", line), name=opts.get("name", ""), line=line)
    raise ArchSpecError(line, f"unknown entry kind {kind!r}")


def parse_archspec(text: str) -> ArchSpec:
    """Parse and validate spec text; geometry errors carry the line number."""
    header = None
    top: list[Entry] = []
    stack: list[dict] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        tokens = content.split()
        if header is None:
            if tokens[0] != "input" or len(tokens) != 5:
                raise ArchSpecError(lineno, "first entry must be 'input C T H W'")
            try:
                header = tuple(int(v) for v in tokens[1:])
            except ValueError:
                raise ArchSpecError(lineno, "input extents must be integers") from None
            if min(header) < 1:
                raise ArchSpecError(lineno, "input extents must be >= 1")
            continue
        if tokens[0] == "input":
            raise ArchSpecError(lineno, "duplicate input line")
        if tokens[0] == "branch":
            if not stack:
                raise ArchSpecError(lineno, "branch outside an inception block")
            if len(tokens) != 1:
                raise ArchSpecError(lineno, "branch takes no options")
            stack[-1]["branches"].append([])
            continue
        if tokens[0] == "inception" and tokens[1:2] == ["end"]:
            if not stack:
                raise ArchSpecError(lineno, "inception end without begin")
            block = stack.pop()
            if not block["branches"]:
                raise ArchSpecError(lineno, "inception block has no branches")
            entry: Entry = Inception(
                branches=tuple(tuple(b) for b in block["branches"]),
                name=block["name"],
                line=block["line"],
            )
        elif tokens[0] == "inception":
            if tokens[1:2] != ["begin"]:
                raise ArchSpecError(lineno, "expected 'inception begin' or 'inception end'")
            opts = _options(tokens[2:], lineno, {"name"})
            if stack and not stack[-1]["branches"]:
                raise ArchSpecError(lineno, "entry inside inception block before the first branch")
            stack.append({"line": lineno, "name": opts.get("name", ""), "branches": []})
            continue
        else:
            entry = _parse_entry(tokens, lineno)
        if stack:
            if not stack[-1]["branches"]:
                raise ArchSpecError(lineno, "entry inside inception block before the first branch")
            stack[-1]["branches"][-1].append(entry)
        else:
            top.append(entry)
    if header is None:
        raise ArchSpecError(0, "empty spec: missing 'input C T H W'")
    if stack:
        raise ArchSpecError(stack[-1]["line"], "inception block not closed")
    spec = ArchSpec(*header, entries=tuple(top))
    resolve(spec)
    return spec


def load_archspec(path) -> ArchSpec:
    return parse_archspec(Path(path).read_text(encoding="utf-8"))


def shipped_spec(name: str) -> str:
    """Text of a spec bundled with the package, e.g. ``bn_inception_gsm``."""
    return resources.files("gsmnet").joinpath("specs", f"{name}.spec").read_text(encoding="utf-8")


# ----------------------------------------------------------------- serializing


def _dims(vals) -> str:
    return "x".join(str(v) for v in vals)


def _name(e) -> str:
    return f" name={e.name}" if e.name else ""


def _serialize_entry(e: Entry, out: list[str], indent: str) -> None:
    if isinstance(e, Conv):
        out.append(
            f"{indent}conv{e.dims}d k={_dims(e.kernel)} s={_dims(e.stride)} p={_dims(e.padding)}"
            f" in={e.in_ch} out={e.out_ch} groups={e.groups} bias={int(e.bias)} bn={int(e.bn)}"
            f" round={e.round}{_name(e)}"
        )
    elif isinstance(e, Pool):
        if e.kind == "global":
            out.append(f"{indent}pool global{_name(e)}")
        else:
            out.append(
                f"{indent}pool {e.kind} k={_dims(e.kernel)} s={_dims(e.stride)} p={_dims(e.padding)}"
                f" round={e.round}{_name(e)}"
            )
    elif isinstance(e, Linear):
        out.append(f"{indent}linear in={e.in_features} out={e.out_features} bias={int(e.bias)}{_name(e)}")
    elif isinstance(e, Gsm):
        out.append(f"{indent}gsm c={e.channels}{_name(e)}")
    else:
        out.append(f"{indent}inception begin{_name(e)}")
        for br in e.branches:
            out.append(f"{indent}branch")
            for sub in br:
                _serialize_entry(sub, out, indent + "  ")
        out.append(f"{indent}inception end")


def serialize_archspec(spec: ArchSpec) -> str:
    out = [f"input {spec.channels} {spec.frames} {spec.height} {spec.width}"]
    for e in spec.entries:
        _serialize_entry(e, out, "")
    return "\n".join(out) + "\n"


# -------------------------------------------------------------------- geometry


def _extent(size: int, k: int, s: int, p: int, mode: str, line: int, axis: str) -> int:
    span = size + 2 * p - k
    if span < 0:
        raise ArchSpecError(line, f"kernel {k} exceeds padded {axis} extent {size + 2 * p}")
    if mode == "exact" and span % s:
        raise ArchSpecError(line, f"non-integer output {axis}: ({size} + 2*{p} - {k}) / {s}")
    q = span // s if mode != "ceil" else -(-span // s)
    return q + 1


def _cost(e: Entry, shape, path: str, idx: int, rows: list[LayerCost]):
    """Append cost rows for ``e`` applied to ``shape`` (C,T,H,W); return the output shape."""
    c, t, h, w = shape
    label = e.name or f"{path}{idx}"
    if isinstance(e, Conv):
        if e.in_ch != c:
            raise ArchSpecError(e.line, f"in={e.in_ch} but incoming channel count is {c}")
        if c % e.groups or e.out_ch % e.groups:
            raise ArchSpecError(e.line, f"channels {c}->{e.out_ch} not divisible by groups={e.groups}")
        if e.dims == 2:
            to = t
            ho = _extent(h, e.kernel[0], e.stride[0], e.padding[0], e.round, e.line, "height")
            wo = _extent(w, e.kernel[1], e.stride[1], e.padding[1], e.round, e.line, "width")
        else:
            to = _extent(t, e.kernel[0], e.stride[0], e.padding[0], e.round, e.line, "time")
            ho = _extent(h, e.kernel[1], e.stride[1], e.padding[1], e.round, e.line, "height")
            wo = _extent(w, e.kernel[2], e.stride[2], e.padding[2], e.round, e.line, "width")
        per_out = (c // e.groups) * math.prod(e.kernel)
        outs = e.out_ch * to * ho * wo
        params = e.out_ch * per_out + (e.out_ch if e.bias else 0)
        rows.append(
            LayerCost(label, f"conv{e.dims}d", (e.out_ch, to, ho, wo), params, outs * per_out,
                      outs if e.bias else 0, False)
        )
        if e.bn:
            rows.append(LayerCost(label + "/bn", "bn", (e.out_ch, to, ho, wo), 2 * e.out_ch, 0, 2 * outs, False))
        return e.out_ch, to, ho, wo
    if isinstance(e, Pool):
        if e.kind == "global":
            rows.append(LayerCost(label, "pool global", (c, t, 1, 1), 0, 0, c * t * h * w, False))
            return c, t, 1, 1
        ho = _extent(h, e.kernel[0], e.stride[0], e.padding[0], e.round, e.line, "height")
        wo = _extent(w, e.kernel[1], e.stride[1], e.padding[1], e.round, e.line, "width")
        aux = c * t * ho * wo * e.kernel[0] * e.kernel[1]
        rows.append(LayerCost(label, f"pool {e.kind}", (c, t, ho, wo), 0, 0, aux, False))
        return c, t, ho, wo
    if isinstance(e, Linear):
        if h != 1 or w != 1:
            raise ArchSpecError(e.line, f"linear needs 1x1 spatial input, got {h}x{w}")
        if e.in_features != c:
            raise ArchSpecError(e.line, f"in={e.in_features} but incoming channel count is {c}")
        params = e.out_features * e.in_features + (e.out_features if e.bias else 0)
        rows.append(
            LayerCost(label, "linear", (e.out_features, t, 1, 1), params,
                      t * e.in_features * e.out_features, t * e.out_features if e.bias else 0, False)
        )
        return e.out_features, t, 1, 1
    if isinstance(e, Gsm):
        if e.channels != c:
            raise ArchSpecError(e.line, f"gsm c={e.channels} but incoming channel count is {c}")
        if c % 2:
            raise ArchSpecError(e.line, f"gsm needs an even channel count, got {c}")
        elems = c * t * h * w
        gate = 27 * (c // 2) * 2 * t * h * w
        rows.append(LayerCost(label, "gsm", (c, t, h, w), gsm_param_count(c), gate + 3 * elems, elems, True))
        return shape
    # inception
    outs = []
    for bi, br in enumerate(e.branches):
        s = shape
        for si, sub in enumerate(br):
            s = _cost(sub, s, f"{label}.b{bi + 1}.", si + 1, rows)
        outs.append((s, br[-1].line if br else e.line))
    ref = outs[0][0]
    for s, line in outs[1:]:
        if s[1:] != ref[1:]:
            raise ArchSpecError(
                line, f"branch output {s[1]}x{s[2]}x{s[3]} does not match {ref[1]}x{ref[2]}x{ref[3]} for concat"
            )
    return sum(s[0] for s, _ in outs), ref[1], ref[2], ref[3]


def resolve(spec: ArchSpec) -> list[LayerCost]:
    """Validate the channel/geometry chain and return per-layer costs."""
    rows: list[LayerCost] = []
    shape = (spec.channels, spec.frames, spec.height, spec.width)
    for i, e in enumerate(spec.entries):
        shape = _cost(e, shape, "L", i + 1, rows)
    return rows


def report(spec: ArchSpec, frames: int | None = None) -> CostReport:
    if frames is not None:
        spec = spec.with_frames(frames)
    return CostReport(spec.frames, resolve(spec))


def count_params(spec: ArchSpec) -> int:
    return report(spec).total_params


def count_flops(spec: ArchSpec, frames: int | None = None) -> int:
    return report(spec, frames).total_flops


def strip_gsm(spec: ArchSpec) -> ArchSpec:
    """The same architecture with every gsm entry removed."""

    def keep(entries):
        out = []
        for e in entries:
            if isinstance(e, Gsm):
                continue
            if isinstance(e, Inception):
                e = replace(e, branches=tuple(tuple(keep(b)) for b in e.branches))
            out.append(e)
        return out

    return replace(spec, entries=tuple(keep(spec.entries)))


def count_inception_blocks(spec: ArchSpec) -> int:
    return sum(isinstance(e, Inception) for e in spec.entries)


# ------------------------------------------------------------------- rendering


def _human(n: float) -> str:
    for div, suffix in ((1e9, "G"), (1e6, "M"), (1e3, "K")):
        if abs(n) >= div:
            return f"{n / div:.2f}{suffix}"
    return str(int(n))


def _render_table(r: CostReport) -> str:
    width = max([len(l.name) for l in r.layers] + [5])
    lines = [
        f"{'layer':<{width}}  {'kind':<12} {'output (CxTxHxW)':<20} {'params':>12} {'flops':>16}",
        "-" * (width + 66),
    ]
    for l in r.layers:
        shape = "x".join(str(v) for v in l.out_shape)
        lines.append(f"{l.name:<{width}}  {l.kind:<12} {shape:<20} {l.params:>12,d} {l.flops:>16,d}")
    lines += [
        "-" * (width + 66),
        f"frames                {r.frames}",
        f"total params          {r.total_params:,d} ({_human(r.total_params)})",
        f"total flops           {r.total_flops:,d} ({_human(r.total_flops)})",
        f"aux flops (bn/act/pool/bias, excluded) {r.aux_flops:,d}",
        f"gsm params            {r.gsm_params:,d}",
        f"gsm flops             {r.gsm_flops:,d}",
        f"overhead params +{r.param_overhead_pct:.2f}%",
        f"overhead flops +{r.flop_overhead_pct:.2f}%",
    ]
    return "\n".join(lines) + "\n"


def _render_tsv(r: CostReport) -> str:
    lines = ["layer\tkind\toutput\tparams\tflops\taux_flops\tgsm"]
    for l in r.layers:
        shape = "x".join(str(v) for v in l.out_shape)
        lines.append(f"{l.name}\t{l.kind}\t{shape}\t{l.params}\t{l.flops}\t{l.aux_flops}\t{int(l.is_gsm)}")
    lines += [
        f"#total_params\t{r.total_params}",
        f"#total_flops\t{r.total_flops}",
        f"#gsm_params\t{r.gsm_params}",
        f"#gsm_flops\t{r.gsm_flops}",
        f"#overhead_params_pct\t{r.param_overhead_pct:.4f}",
        f"#overhead_flops_pct\t{r.flop_overhead_pct:.4f}",
    ]
    return "\n".join(lines) + "\n"
