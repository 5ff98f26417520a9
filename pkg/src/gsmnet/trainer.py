"""SGD with momentum, warmup into cosine decay, and frame-order evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .backbone import MiniGsmNet, save_net, tsn_consensus
from .runtime import thread_limit
from .synth import Dataset
from .tensor import no_grad

METRIC_COLUMNS = ("epoch", "lr", "train_loss", "train_acc", "eval_acc")


class NonFiniteError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 20
    warmup_epochs: int = 3
    batch_size: int = 16
    dropout_rate: float = 0.5
    seed: int = 0
    deterministic: bool = False

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.epochs > 0 and not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(f"need 0 <= warmup_epochs < epochs, got {self.warmup_epochs} and {self.epochs}")
        if not self.base_lr > 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")


@dataclass(frozen=True)
class EvalOptions:
    """Frame order applied to every clip: natural, reversed or a permutation.

    A permutation is either given explicitly as ``perm`` or drawn from ``seed``.
    """

    frame_order: str = "natural"
    seed: int = 0
    perm: tuple[int, ...] | None = None

    @classmethod
    def parse(cls, text: str) -> "EvalOptions":
        if text in ("natural", "reversed"):
            return cls(text)
        if text.startswith("permute:"):
            arg = text.split(":", 1)[1]
            try:
                if "," in arg:
                    return cls("permutation", perm=tuple(int(v) for v in arg.split(",")))
                return cls("permutation", int(arg))
            except ValueError:
                pass
        raise ValueError(
            f"frame order must be natural, reversed, permute:SEED or permute:I,J,..., got {text!r}"
        )

    def order(self, frames: int) -> np.ndarray:
        if self.frame_order == "natural":
            return np.arange(frames)
        if self.frame_order == "reversed":
            return np.arange(frames)[::-1].copy()
        if self.frame_order == "permutation":
            if self.perm is None:
                return np.random.default_rng(self.seed).permutation(frames)
            perm = np.asarray(self.perm, dtype=np.int64)
            if sorted(perm.tolist()) != list(range(frames)):
                raise ValueError(f"{self.perm} is not a permutation of {frames} frames")
            return perm
        raise ValueError(f"unknown frame order {self.frame_order!r}")


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Linear warmup from base/W to base, then half-cosine decay."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    w = config.warmup_epochs
    if epoch < w:
        return config.base_lr * (epoch + 1) / w
    return config.base_lr * 0.5 * (1 + math.cos(math.pi * (epoch - w) / (config.epochs - w)))


def sgd_momentum_step(params, grads, velocity, lr: float, momentum: float):
    """Heavy-ball update in place: v = m*v + g, p -= lr*v.

    All three arguments are dicts of arrays keyed by parameter name; missing
    velocity entries start at zero.  Returns (params, velocity).
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p)
        v *= momentum
        v += g
        p -= np.asarray(lr, dtype=p.dtype) * v
    return params, velocity


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    eval_acc: float

    def tsv(self) -> str:
        return "\t".join(
            [str(self.epoch), repr(self.lr), repr(self.train_loss), repr(self.train_acc), repr(self.eval_acc)]
        )


def format_metrics(rows: list[EpochMetrics]) -> str:
    return "\n".join(["\t".join(METRIC_COLUMNS)] + [r.tsv() for r in rows]) + "\n"


@dataclass
class EvalResult:
    accuracy: float
    per_class: np.ndarray
    mean_logits: np.ndarray
    logits: np.ndarray = field(repr=False)
    predictions: np.ndarray = field(repr=False)


def clip_logits(net: MiniGsmNet, clips: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Eval-mode consensus logits (N, K)."""
    out = []
    with no_grad():
        for lo in range(0, len(clips), batch_size):
            frames = net.forward_clip(clips[lo:lo + batch_size], training=False)
            out.append(tsn_consensus(frames).data)
    return np.concatenate(out, axis=0)


def evaluate(net: MiniGsmNet, dataset: Dataset, options: EvalOptions = EvalOptions(),
             batch_size: int = 64) -> EvalResult:
    """Accuracy of argmax consensus predictions; ties go to the lower class."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    order = options.order(dataset.clips.shape[2])
    clips = dataset.normalize(dataset.clips[:, :, order])
    logits = clip_logits(net, clips, batch_size)
    pred = np.argmax(logits, axis=1)
    labels = dataset.labels
    per_class = np.array(
        [np.mean(pred[labels == k] == k) if np.any(labels == k) else np.nan for k in range(net.num_classes)]
    )
    return EvalResult(float(np.mean(pred == labels)), per_class, logits.mean(axis=0), logits, pred)


@dataclass
class TrainResult:
    net: MiniGsmNet
    metrics: list[EpochMetrics]

    def metrics_tsv(self) -> str:
        return format_metrics(self.metrics)


def train(net: MiniGsmNet, dataset: Dataset, config: TrainConfig, checkpoint=None, log=None) -> TrainResult:
    """Mini-batch SGD over the training split, evaluated on the test split each epoch.

    ``log`` is called with every metrics row as it is produced.
    """
    config.validate()
    net.dropout_rate = config.dropout_rate
    train_ds = dataset.subset(True)
    test_ds = dataset.subset(False)
    if len(train_ds) == 0 and config.epochs > 0:
        raise ValueError("training split is empty")
    rng = np.random.default_rng(config.seed)
    train_clips = train_ds.normalize(train_ds.clips) if len(train_ds) else train_ds.clips
    params = net.trainable_parameters()
    velocity: dict[str, np.ndarray] = {}
    metrics: list[EpochMetrics] = []

    with thread_limit(config.deterministic):
        for epoch in range(config.epochs):
            lr = lr_at(config, epoch)
            order = rng.permutation(len(train_ds))
            loss_sum, correct = 0.0, 0
            for step, lo in enumerate(range(0, len(order), config.batch_size)):
                idx = order[lo:lo + config.batch_size]
                frames = net.forward_clip(train_clips[idx], training=True, rng=rng)
                scores = tsn_consensus(frames)
                loss = ops.softmax_cross_entropy(scores, train_ds.labels[idx])
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NonFiniteError(f"epoch {epoch} step {step}: loss is {value}")
                for p in params.values():
                    p.zero_grad()
                loss.backward()
                grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
                try:
                    sgd_momentum_step({k: p.data for k, p in params.items()}, grads, velocity, lr, config.momentum)
                except NonFiniteError as exc:
                    raise NonFiniteError(f"epoch {epoch} step {step}: {exc}") from None
                loss_sum += value * len(idx)
                correct += int(np.sum(np.argmax(scores.data, axis=1) == train_ds.labels[idx]))
            eval_acc = evaluate(net, test_ds).accuracy if len(test_ds) else float("nan")
            row = EpochMetrics(epoch, lr, loss_sum / len(train_ds), correct / len(train_ds), eval_acc)
            metrics.append(row)
            if log is not None:
                log(row)
    for p in net.parameters().values():
        p.zero_grad()
    if checkpoint is not None:
        save_net(net, Path(checkpoint))
    return TrainResult(net, metrics)
