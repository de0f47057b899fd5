"""KL-divergence objective, Adam, and the between-class training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .augment import sample_bc_batch, stack_batch
from .model import Model
from .tensor import Tensor

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 100
    learning_rate: float = 1e-4
    conv_dropout: float = 0.25
    rnn_dropout: float = 0.1
    seed: int = 0
    model: str = "att_crnn"
    standardize: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        for rate in (self.conv_dropout, self.rnn_dropout):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout rate {rate} outside [0, 1)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


# ---------------------------------------------------------------------------
# losses


def _xlogx(y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y, dtype=np.float64)
    pos = y > 0
    out[pos] = y[pos] * np.log(y[pos])
    return out


def kl_loss(y, y_hat: Tensor) -> Tensor:
    """``sum_c y_c log(y_c / y_hat_c)`` with ``0 log 0 = 0``; averaged over leading batch axes."""
    y_hat = y_hat if isinstance(y_hat, Tensor) else Tensor(y_hat)
    y = np.asarray(y, dtype=y_hat.dtype)
    if y.shape != y_hat.shape:
        raise ValueError(f"kl_loss: label shape {y.shape} != prediction shape {y_hat.shape}")
    neg_entropy = _xlogx(y).sum(axis=-1).astype(y_hat.dtype)
    cross = -tn.sum_(Tensor(y) * tn.log(tn.clamp_min(y_hat, PROB_CLAMP)), axis=-1)
    per_item = cross + Tensor(neg_entropy)
    if per_item.ndim == 0:
        return per_item
    return tn.mean(per_item)


def cross_entropy(y, p) -> float:
    return float(-(np.asarray(y) * np.log(np.maximum(np.asarray(p), PROB_CLAMP))).sum())


def entropy(y) -> float:
    return float(-_xlogx(np.asarray(y, dtype=np.float64)).sum())


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update of ``params`` (name -> array)."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


# ---------------------------------------------------------------------------
# training loop


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    seg_accuracy: float


@dataclass
class TrainResult:
    history: list
    best_accuracy: float
    best_epoch: int
    best_state: dict


def segment_accuracy(model: Model, images, labels, batch_size: int = 100) -> float:
    _, probs = model.predict(images, batch_size)
    return float(np.mean(probs.argmax(axis=1) == np.asarray(labels)))


def train(model: Model, images: np.ndarray, labels: np.ndarray, config: TrainConfig,
          eval_images: np.ndarray | None = None, eval_labels: np.ndarray | None = None,
          on_epoch=None) -> TrainResult:
    """Train on freshly drawn between-class batches with the KL objective.

    An epoch is ``ceil(len(images) / batch_size)`` batches.  After each epoch
    the segment accuracy on the evaluation set (the training set when none
    is given) is recorded; the model ends holding the best-scoring weights.
    """
    labels = np.asarray(labels)
    if eval_images is None:
        eval_images, eval_labels = images, labels
    model.config.conv_dropout = config.conv_dropout
    model.config.rnn_dropout = config.rnn_dropout
    if config.standardize:
        model.fit_normalizer(images)
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    n_classes = model.config.n_classes
    dtype = next(iter(model.params.values())).dtype
    n_batches = math.ceil(len(images) / config.batch_size)
    history, best_acc, best_epoch, best_state = [], -1.0, 0, model.copy_state()

    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for _ in range(n_batches):
            S, y = stack_batch(sample_bc_batch(images, labels, n_classes, config.batch_size, rng))
            model.zero_grad()
            _, y_hat = model.forward(Tensor(S.astype(dtype)), training=True, rng=rng)
            loss = kl_loss(y, y_hat)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}")
            tn.backward(loss)
            adam_step({k: p.data for k, p in model.params.items()},
                      {k: p.grad for k, p in model.params.items()}, state, config.learning_rate)
            total += value
        acc = segment_accuracy(model, eval_images, eval_labels, config.batch_size)
        record = EpochRecord(epoch, total / n_batches, acc)
        history.append(record)
        log.info("epoch %d loss %.5f seg_acc %.4f", epoch, record.train_loss, acc)
        if acc > best_acc:
            best_acc, best_epoch, best_state = acc, epoch, model.copy_state()
        if on_epoch is not None:
            on_epoch(record)
    model.load_state(best_state)
    return TrainResult(history, best_acc, best_epoch, best_state)


def write_history(path, history: list[EpochRecord]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "seg_accuracy"])
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.train_loss), repr(rec.seg_accuracy)])


def read_history(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        return [EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["seg_accuracy"]))
                for r in csv.DictReader(fh)]
