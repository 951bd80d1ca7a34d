"""Training loop, SGD with momentum, cross-entropy loss and evaluation metrics.

Everything is deterministic given the config seed: the split, each epoch's
shuffle and every dropout mask come from streams derived with fixed labels,
so two runs with the same seed produce bit-identical parameters, records
and metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, backward
from .data import Dataset
from .errors import (
    BadFractions,
    ClassCountMismatch,
    ConfigError,
    EmptyDataset,
    LabelOutOfRange,
    ShapeMismatch,
)
from .model import Model, predict, record_forward
from .params import ParamSet
from .rng import RandomStream, derive_seed

_EVAL_BATCH = 64


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        self.split = tuple(float(f) for f in self.split)
        # lr 0 is allowed: it is the documented degenerate no-op step
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        _check_fractions(self.split)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_accuracy: float


@dataclass
class Metrics:
    confusion: np.ndarray  # rows = true class, cols = predicted class
    accuracy: float
    per_class_precision: list[float]
    per_class_recall: list[float]
    per_class_f1: list[float]
    macro_f1: float


def _check_fractions(fractions) -> None:
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise BadFractions(f"need three non-negative fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions {fractions} sum to {sum(fractions)}, not 1")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def cross_entropy(probs: np.ndarray, labels) -> float:
    """Mean negative log-probability of the true class, clamped at 1e-12."""
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeMismatch(f"probs {probs.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise LabelOutOfRange(f"labels must lie in [0, {probs.shape[1]})")
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(-np.log(np.maximum(picked, 1e-12)).mean())


def sgd_momentum_step(params: ParamSet, grads: dict[str, np.ndarray],
                      lr: float, momentum: float) -> ParamSet:
    """v <- momentum*v + g; theta <- theta - lr*v, trainable entries only."""
    for name in params.trainable_names():
        entry = params[name]
        if name not in grads:
            raise ShapeMismatch(f"missing gradient for trainable parameter {name!r}")
        g = grads[name]
        if g.shape != entry.value.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != {entry.value.shape} for {name!r}")
        np.multiply(entry.momentum, entry.momentum.dtype.type(momentum), out=entry.momentum)
        entry.momentum += g
        entry.value -= entry.value.dtype.type(lr) * entry.momentum
    return params


def split_dataset(dataset: Dataset, fractions, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle, then contiguous train/val/test partition.

    Val and test sizes are round(n*f) half-up; train takes the remainder.
    """
    _check_fractions(fractions)
    n = len(dataset.samples)
    if n == 0:
        raise EmptyDataset("cannot split an empty dataset")
    perm = RandomStream(seed).permutation(n)
    n_val = min(_round_half_up(n * fractions[1]), n)
    n_test = min(_round_half_up(n * fractions[2]), n - n_val)
    n_train = n - n_val - n_test
    order = [dataset.samples[i] for i in perm]
    return (
        Dataset(samples=order[:n_train], class_names=dataset.class_names),
        Dataset(samples=order[n_train:n_train + n_val], class_names=dataset.class_names),
        Dataset(samples=order[n_train + n_val:], class_names=dataset.class_names),
    )


def _stack_batch(samples, dtype) -> tuple[np.ndarray, np.ndarray]:
    xs = np.stack([s[0] for s in samples]).astype(dtype)
    ys = np.asarray([s[1] for s in samples], dtype=np.int64)
    return xs, ys


def train(model: Model, dataset: Dataset, cfg: TrainConfig) -> tuple[Model, list[EpochRecord]]:
    """Mini-batch SGD training with an internal train/val/test split.

    The split uses ``derive_seed(cfg.seed, "split")``; callers that need the
    held-out test slice can call split_dataset with the same derived seed and
    get the identical partition.
    """
    if not dataset.samples:
        raise EmptyDataset("training needs a non-empty dataset")
    if len(dataset.class_names) != model.config.n_classes:
        raise ClassCountMismatch(
            f"dataset has {len(dataset.class_names)} classes, model expects {model.config.n_classes}")
    sample_shape = tuple(dataset.samples[0][0].shape)
    if sample_shape != tuple(model.config.input_shape):
        raise ShapeMismatch(f"sample shape {sample_shape} does not match input_shape {model.config.input_shape}")

    train_set, val_set, _ = split_dataset(dataset, cfg.split, derive_seed(cfg.seed, "split"))
    if not train_set.samples:
        raise EmptyDataset("train split is empty")
    dropout_rng = RandomStream(derive_seed(cfg.seed, "dropout"))
    dtype = model.dtype
    n_train = len(train_set.samples)

    records: list[EpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        perm = RandomStream(derive_seed(cfg.seed, f"shuffle:{epoch}")).permutation(n_train)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n_train, cfg.batch_size):
            batch = [train_set.samples[i] for i in perm[start:start + cfg.batch_size]]
            xs, ys = _stack_batch(batch, dtype)
            tape = Tape()
            out, leaf_ids = record_forward(model, xs, tape, dropout_rng)
            loss_id = tape.cross_entropy(out, ys)
            grads_by_id = backward(tape, loss_id)
            grads = {name: grads_by_id[nid] for name, nid in leaf_ids.items()}
            sgd_momentum_step(model.params, grads, cfg.learning_rate, cfg.momentum)
            loss_sum += float(tape.value(loss_id)) * len(batch)
            correct += int((np.argmax(tape.value(out), axis=1) == ys).sum())
        val_acc = evaluate(model, val_set).accuracy if val_set.samples else 0.0
        records.append(EpochRecord(
            epoch=epoch,
            train_loss=loss_sum / n_train,
            train_accuracy=correct / n_train,
            val_accuracy=val_acc,
        ))
    return model, records


def evaluate(model: Model, dataset: Dataset) -> Metrics:
    """Eval-mode metrics; argmax predictions, lowest class index wins ties."""
    if not dataset.samples:
        raise EmptyDataset("cannot evaluate an empty dataset")
    c = model.config.n_classes
    if len(dataset.class_names) != c:
        raise ClassCountMismatch(f"dataset has {len(dataset.class_names)} classes, model expects {c}")
    confusion = np.zeros((c, c), dtype=np.int64)
    for start in range(0, len(dataset.samples), _EVAL_BATCH):
        xs, ys = _stack_batch(dataset.samples[start:start + _EVAL_BATCH], model.dtype)
        preds = np.argmax(predict(model, xs), axis=1)
        np.add.at(confusion, (ys, preds), 1)
    return metrics_from_confusion(confusion)


def metrics_from_confusion(confusion: np.ndarray) -> Metrics:
    """Accuracy plus per-class precision/recall/F1 and their macro mean.

    Zero-support or never-predicted classes contribute 0 instead of 0/0.
    """
    confusion = np.asarray(confusion, dtype=np.int64)
    total = int(confusion.sum())
    diag = np.diag(confusion)
    accuracy = float(diag.sum() / total) if total else 0.0
    precision, recall, f1 = [], [], []
    for i in range(confusion.shape[0]):
        col = int(confusion[:, i].sum())
        row = int(confusion[i, :].sum())
        p = diag[i] / col if col else 0.0
        r = diag[i] / row if row else 0.0
        precision.append(float(p))
        recall.append(float(r))
        f1.append(float(2 * p * r / (p + r)) if p + r else 0.0)
    return Metrics(
        confusion=confusion,
        accuracy=accuracy,
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        macro_f1=float(np.mean(f1)) if f1 else 0.0,
    )


def records_to_csv(records: list[EpochRecord]) -> str:
    """Training-curve CSV: full-precision floats, '.' decimals, \\n newlines."""
    lines = ["epoch,train_loss,train_acc,val_acc"]
    for r in records:
        lines.append(f"{r.epoch},{float(r.train_loss)!r},{float(r.train_accuracy)!r},{float(r.val_accuracy)!r}")
    return "\n".join(lines) + "\n"
