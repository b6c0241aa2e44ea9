"""Adam, the mini-batch training loop, and evaluation metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .chargrains import EncodedSample
from .model import ModelParams, forward_batch, loss, predict_batch
from .tensorcore import NonFiniteError, Tape

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """Training produced a non-finite value."""


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray], **hyper) -> AdamState:
        return cls(
            {k: np.zeros_like(v) for k, v in params.items()},
            {k: np.zeros_like(v) for k, v in params.items()},
            **hyper,
        )


def adam_step(
    params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update.  ``params`` entries are replaced by
    new arrays; the returned dict is ``params`` itself."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ValueError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        params[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# -- metrics ------------------------------------------------------------------


def confusion_matrix(gold: Sequence[int], pred: Sequence[int], num_classes: int) -> np.ndarray:
    """Rows are gold classes, columns predictions."""
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gold.shape != pred.shape:
        raise ValueError("gold and predicted label lists differ in length")
    return np.bincount(gold * num_classes + pred, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes
    )


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    return _ratio(2 * precision * recall, precision + recall)


@dataclass
class Metrics:
    confusion: np.ndarray
    precision: np.ndarray  # per class
    recall: np.ndarray  # per class
    macro_precision: float
    macro_recall: float
    f1: float

    @property
    def accuracy(self) -> float:
        return _ratio(float(np.trace(self.confusion)), float(self.confusion.sum()))

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @classmethod
    def from_confusion(cls, confusion: np.ndarray) -> Metrics:
        confusion = np.asarray(confusion, dtype=np.int64)
        tp = np.diag(confusion)
        predicted = confusion.sum(axis=0)
        actual = confusion.sum(axis=1)
        precision = np.array([_ratio(t, p) for t, p in zip(tp, predicted)])
        recall = np.array([_ratio(t, a) for t, a in zip(tp, actual)])
        macro_p = float(precision.mean())
        macro_r = float(recall.mean())
        return cls(confusion, precision, recall, macro_p, macro_r, f1_score(macro_p, macro_r))

    @classmethod
    def from_labels(cls, gold, pred, num_classes: int) -> Metrics:
        return cls.from_confusion(confusion_matrix(gold, pred, num_classes))


def evaluate(params: ModelParams, samples: Sequence[EncodedSample], batch_size: int = 256) -> Metrics:
    if not samples:
        raise ValueError("cannot evaluate on an empty corpus")
    probs = predict_batch(samples, params, batch_size)
    pred = np.argmax(probs, axis=1)
    gold = [s.class_id for s in samples]
    return Metrics.from_labels(gold, pred, params.config.num_classes)


# -- training -------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 32
    max_epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ValueError(f"max epochs must be >= 0, got {self.max_epochs}")


@dataclass
class EpochRecord:
    epoch: int
    split: str
    loss: float
    metrics: Metrics

    def tsv(self) -> str:
        m = self.metrics
        return (
            f"{self.epoch}\t{self.split}\t{self.loss:.10f}\t{m.accuracy:.6f}\t"
            f"{m.macro_precision:.6f}\t{m.macro_recall:.6f}\t{m.f1:.6f}"
        )


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord] = field(default_factory=list)
    state: AdamState | None = None

    def losses(self, split: str = "train") -> list[float]:
        return [r.loss for r in self.history if r.split == split]


def rng_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent generators for shuffling and dropout."""
    shuffle, drop = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(shuffle), np.random.default_rng(drop)


def batch_loss(params: ModelParams, batch: Sequence[EncodedSample], rng) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss over ``batch`` and its gradient for every parameter."""
    tape = Tape()
    bound = params.bind(tape)
    res = forward_batch(batch, bound, params.config, training=True, rng=rng)
    value = loss(res.probabilities, [s.class_id for s in batch])
    grads = tape.backward(value)
    return float(value.data), {k: grads[t] for k, t in bound.tensors.items()}


def _mean_loss(params: ModelParams, samples: Sequence[EncodedSample]) -> float:
    probs = predict_batch(samples, params)
    gold = np.array([s.class_id for s in samples])
    picked = np.maximum(probs[np.arange(len(samples)), gold], 1e-12)
    return float(-np.log(picked).mean())


def train(
    params: ModelParams,
    samples: Sequence[EncodedSample],
    config: TrainConfig,
    dev: Sequence[EncodedSample] | None = None,
    on_epoch: Callable[[EpochRecord, ModelParams], None] | None = None,
) -> TrainResult:
    """Shuffled mini-batch Adam.  ``params`` is not modified.

    After each epoch the train split is logged with the mean mini-batch loss
    and eval-mode metrics; ``dev`` (when given) is logged with eval-mode loss
    and metrics.  ``on_epoch`` receives every record together with the
    current parameters.
    """
    if not samples:
        raise ValueError("cannot train on an empty corpus")
    params = params.copy()
    shuffle_rng, drop_rng = rng_streams(config.seed)
    state = AdamState.zeros_like(params.arrays, lr=config.lr)
    result = TrainResult(params, state=state)
    n = len(samples)
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        weighted = 0.0
        for start in range(0, n, config.batch_size):
            batch = [samples[i] for i in order[start : start + config.batch_size]]
            try:
                value, grads = batch_loss(params, batch, drop_rng)
            except NonFiniteError as e:
                raise NumericError(f"epoch {epoch}: {e}") from e
            if not math.isfinite(value):
                raise NumericError(f"epoch {epoch}: loss is {value}")
            weighted += value * len(batch)
            adam_step(params.arrays, grads, state)
        records = [EpochRecord(epoch, "train", weighted / n, evaluate(params, samples))]
        if dev:
            records.append(EpochRecord(epoch, "dev", _mean_loss(params, dev), evaluate(params, dev)))
        for rec in records:
            log.info("epoch %d %s loss %.6f acc %.4f F1 %.4f", epoch, rec.split, rec.loss, rec.metrics.accuracy, rec.metrics.f1)
            result.history.append(rec)
        if on_epoch is not None:
            for rec in records:
                on_epoch(rec, params)
    return result


LOG_HEADER = "epoch\tsplit\tloss\taccuracy\tmacroP\tmacroR\tF1"
