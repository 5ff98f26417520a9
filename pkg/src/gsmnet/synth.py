"""Order-sensitive synthetic video tasks and their on-disk format.

Every clip comes with a twin that is its exact time reversal and carries the
other label.  Both classes therefore contain the same frames; only the order
differs, so a model that ignores frame order cannot beat chance.

Tasks:

* ``direction``: a bright square sweeps horizontally across a dark field.
  Class 0 moves left to right, class 1 is the reversed clip.
* ``grow_shrink``: a centred square grows by one pixel per frame (class 0);
  class 1 is the reversed clip.

On disk a dataset is a directory of ``NNNNN.gsmv`` files plus ``manifest.tsv``.
Each sample file is ``b"GSMV"``, rank, extents (u32 LE) and float32 LE
elements in row-major order.  The manifest header carries the per-channel
normalisation statistics; each following line is
``file<TAB>label<TAB>pair_id<TAB>split``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TASKS = ("direction", "grow_shrink")
SAMPLE_MAGIC = b"GSMV"
MANIFEST = "manifest.tsv"
_U32 = struct.Struct("<I")
_MAX_RANK = 8


class DatasetFormatError(ValueError):
    def __init__(self, where: str, offset: int, message: str):
        super().__init__(f"{where}: offset {offset}: {message}")
        self.offset = offset


@dataclass(frozen=True)
class SyntheticTaskSpec:
    task: str = "direction"
    frames: int = 8
    size: int = 32
    object_size: int = 6
    noise: float = 0.0
    per_class: int = 500
    seed: int = 0

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.frames < 2:
            raise ValueError(f"need at least 2 frames, got {self.frames}")
        if self.size < 8:
            raise ValueError(f"spatial size must be at least 8, got {self.size}")
        if self.object_size < 1 or self.object_size > self.size:
            raise ValueError(f"object size {self.object_size} does not fit in a {self.size}x{self.size} frame")
        if self.task == "direction" and self.size - self.object_size < self.frames - 1:
            raise ValueError(
                f"a {self.object_size}px object cannot take {self.frames} distinct positions "
                f"in a {self.size}px frame"
            )
        if self.task == "grow_shrink" and self.object_size < self.frames:
            raise ValueError(
                f"growing over {self.frames} frames needs object size >= {self.frames}, got {self.object_size}"
            )
        if self.noise < 0:
            raise ValueError(f"noise sigma must be non-negative, got {self.noise}")
        if self.per_class < 1:
            raise ValueError(f"per_class must be positive, got {self.per_class}")


@dataclass(frozen=True)
class SyntheticSample:
    clip: np.ndarray
    label: int
    pair_id: int


@dataclass
class Dataset:
    """Clips (N,3,T,S,S) float32 with labels, pair ids and a train/test split."""

    clips: np.ndarray
    labels: np.ndarray
    pair_ids: np.ndarray
    is_train: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def sample(self, i: int) -> SyntheticSample:
        return SyntheticSample(self.clips[i], int(self.labels[i]), int(self.pair_ids[i]))

    def subset(self, train: bool) -> "Dataset":
        m = self.is_train == train
        return Dataset(self.clips[m], self.labels[m], self.pair_ids[m], self.is_train[m], self.mean, self.std)

    def normalize(self, clips: np.ndarray) -> np.ndarray:
        """Per-channel standardisation with the training-split statistics."""
        shape = (1, -1, 1, 1, 1)
        return ((clips - self.mean.reshape(shape)) / self.std.reshape(shape)).astype(np.float32)


def _direction_clip(spec: SyntheticTaskSpec, rng: np.random.Generator) -> np.ndarray:
    s, o, t = spec.size, spec.object_size, spec.frames
    step = int(rng.integers(1, (s - o) // (t - 1) + 1))
    span = step * (t - 1)
    x0 = int(rng.integers(0, s - o - span + 1))
    y0 = int(rng.integers(0, s - o + 1))
    color = rng.uniform(0.5, 1.0, size=3).astype(np.float32)
    clip = np.zeros((3, t, s, s), dtype=np.float32)
    for f in range(t):
        x = x0 + f * step
        clip[:, f, y0:y0 + o, x:x + o] = color[:, None, None]
    return clip


def _grow_clip(spec: SyntheticTaskSpec, rng: np.random.Generator) -> np.ndarray:
    s, o, t = spec.size, spec.object_size, spec.frames
    cy = int(rng.integers(0, s - o + 1))
    cx = int(rng.integers(0, s - o + 1))
    color = rng.uniform(0.5, 1.0, size=3).astype(np.float32)
    clip = np.zeros((3, t, s, s), dtype=np.float32)
    for f in range(t):
        side = o - (t - 1 - f)
        off = (o - side) // 2
        clip[:, f, cy + off:cy + off + side, cx + off:cx + off + side] = color[:, None, None]
    return clip


def generate(spec: SyntheticTaskSpec) -> Dataset:
    """Deterministic paired dataset; pairs never straddle the 80/20 split."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    make = _direction_clip if spec.task == "direction" else _grow_clip
    n = 2 * spec.per_class
    clips = np.empty((n, 3, spec.frames, spec.size, spec.size), dtype=np.float32)
    for p in range(spec.per_class):
        base = make(spec, rng)
        if spec.noise > 0:
            base = base + rng.normal(0.0, spec.noise, size=base.shape).astype(np.float32)
        clips[2 * p] = base
        clips[2 * p + 1] = base[:, ::-1]
    labels = np.tile(np.array([0, 1], dtype=np.int64), spec.per_class)
    pair_ids = np.repeat(np.arange(spec.per_class, dtype=np.int64), 2)

    order = rng.permutation(spec.per_class)
    n_train = int(round(0.8 * spec.per_class))
    if spec.per_class > 1:
        n_train = min(max(n_train, 1), spec.per_class - 1)
    train_pairs = np.zeros(spec.per_class, dtype=bool)
    train_pairs[order[:n_train]] = True
    is_train = train_pairs[pair_ids]

    train = clips[is_train] if is_train.any() else clips
    mean = train.mean(axis=(0, 2, 3, 4), dtype=np.float64)
    std = train.std(axis=(0, 2, 3, 4), dtype=np.float64)
    std = np.where(std > 0, std, 1.0)
    return Dataset(clips, labels, pair_ids, is_train, mean, std)


# ------------------------------------------------------------------ file format


def encode_sample(clip: np.ndarray) -> bytes:
    arr = np.asarray(clip, dtype="<f4", order="C")
    head = [SAMPLE_MAGIC, _U32.pack(arr.ndim)] + [_U32.pack(n) for n in arr.shape]
    return b"".join(head) + arr.tobytes()


def decode_sample(buf: bytes, where: str = "<buffer>") -> np.ndarray:
    if buf[:4] != SAMPLE_MAGIC:
        raise DatasetFormatError(where, 0, "bad magic, not a GSMV sample")
    pos = 4

    def u32() -> int:
        nonlocal pos
        if pos + 4 > len(buf):
            raise DatasetFormatError(where, pos, "truncated header")
        (v,) = _U32.unpack_from(buf, pos)
        pos += 4
        return v

    rank = u32()
    if rank > _MAX_RANK:
        raise DatasetFormatError(where, 4, f"rank {rank} exceeds {_MAX_RANK}")
    shape = tuple(u32() for _ in range(rank))
    count = math.prod(shape)
    need = 4 * count
    if pos + need > len(buf):
        raise DatasetFormatError(where, pos, f"extents {shape} need {need} bytes, {len(buf) - pos} remain")
    if pos + need != len(buf):
        raise DatasetFormatError(where, pos + need, "trailing bytes after elements")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)


def _fmt_stats(values: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in values)


def write_dataset(ds: Dataset, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [f"#mean\t{_fmt_stats(ds.mean)}\tstd\t{_fmt_stats(ds.std)}"]
    for i in range(len(ds)):
        name = f"{i:05d}.gsmv"
        (d / name).write_bytes(encode_sample(ds.clips[i]))
        split = "train" if ds.is_train[i] else "test"
        lines.append(f"{name}\t{int(ds.labels[i])}\t{int(ds.pair_ids[i])}\t{split}")
    (d / MANIFEST).write_text("\n".join(lines) + "\n")


def read_dataset(directory) -> Dataset:
    d = Path(directory)
    path = d / MANIFEST
    text = path.read_text()
    rows = text.splitlines()
    if not rows or not rows[0].startswith("#mean\t"):
        raise DatasetFormatError(str(path), 0, "missing statistics header line")
    head = rows[0].split("\t")
    if len(head) != 4 or head[2] != "std":
        raise DatasetFormatError(str(path), 0, "malformed statistics header")
    try:
        mean = np.array([float(v) for v in head[1].split(",")])
        std = np.array([float(v) for v in head[3].split(",")])
    except ValueError as exc:
        raise DatasetFormatError(str(path), 0, f"bad statistics value: {exc}") from None

    clips, labels, pairs, train = [], [], [], []
    offset = len(rows[0]) + 1
    for row in rows[1:]:
        cols = row.split("\t")
        if len(cols) != 4 or cols[3] not in ("train", "test"):
            raise DatasetFormatError(str(path), offset, f"malformed manifest record {row!r}")
        try:
            label, pair = int(cols[1]), int(cols[2])
        except ValueError:
            raise DatasetFormatError(str(path), offset, f"non-integer label or pair id in {row!r}") from None
        sample_path = d / cols[0]
        clips.append(decode_sample(sample_path.read_bytes(), str(sample_path)))
        labels.append(label)
        pairs.append(pair)
        train.append(cols[3] == "train")
        offset += len(row) + 1
    if not clips:
        raise DatasetFormatError(str(path), offset, "manifest lists no samples")
    shapes = {c.shape for c in clips}
    if len(shapes) != 1:
        raise DatasetFormatError(str(path), 0, f"samples have differing shapes {sorted(shapes)}")
    return Dataset(
        np.stack(clips),
        np.array(labels, dtype=np.int64),
        np.array(pairs, dtype=np.int64),
        np.array(train, dtype=bool),
        mean,
        std,
    )
