"""Losses, the two-stage schedule and evaluation."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import TrainingConfig
from .data import LabeledSample, stack
from .model import CrossTaskModel, phase1_forward, predict, shared_logits
from .optim import Optimizer
from .tensor import Tensor, backward, log_softmax, no_grad

log = logging.getLogger(__name__)

CSV_HEADER = ("stage", "epoch", "train_loss", "expr_acc", "mask_acc", "wall_time_s")


class NumericError(RuntimeError):
    pass


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch.

    ``logits`` may be (K,) with an int label or (B, K) with B labels.
    """
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if logits.ndim == 1:
        logits = logits.reshape(1, logits.shape[0])
    b, k = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"{labels.shape[0]} labels for {b} rows of logits")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range for {k} classes: {labels.tolist()}")
    picked = log_softmax(logits, axis=-1)[np.arange(b), labels]
    return picked.mean() * -1.0


@dataclass
class EpochRow:
    stage: int
    epoch: int
    train_loss: float
    expr_acc: float
    mask_acc: float
    wall_time_s: float


@dataclass
class MetricLog:
    rows: list[EpochRow] = field(default_factory=list)

    def append(self, row: EpochRow) -> None:
        if self.rows and (row.stage, row.epoch) <= (self.rows[-1].stage, self.rows[-1].epoch):
            raise ValueError("metric rows must be increasing in (stage, epoch)")
        self.rows.append(row)

    def extend(self, other: MetricLog) -> None:
        for row in other.rows:
            self.append(row)

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow([r.stage, r.epoch, repr(r.train_loss), repr(r.expr_acc), repr(r.mask_acc), f"{r.wall_time_s:.3f}"])

    @classmethod
    def read_csv(cls, path: str | Path) -> MetricLog:
        out = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                out.append(EpochRow(
                    int(rec["stage"]), int(rec["epoch"]), float(rec["train_loss"]),
                    float(rec["expr_acc"]), float(rec["mask_acc"]), float(rec["wall_time_s"]),
                ))
        return out


@dataclass
class EvalReport:
    expr_acc: float
    mask_acc: float
    confusion_expr: np.ndarray
    confusion_mask: np.ndarray
    n_samples: int

    def as_dict(self) -> dict:
        return {
            "expr_acc": self.expr_acc,
            "mask_acc": self.mask_acc,
            "confusion_expr": self.confusion_expr.tolist(),
            "confusion_mask": self.confusion_mask.tolist(),
            "n_samples": self.n_samples,
        }


def confusion_matrix(labels: np.ndarray, preds: np.ndarray, k: int) -> np.ndarray:
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def _batches(n: int, batch_size: int):
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def predict_labels(model: CrossTaskModel, images: np.ndarray, batch_size: int = 64, head: str = "expr"):
    """Argmax predictions (ties to the lowest index) for both tasks."""
    expr, mask = [], []
    with no_grad():
        for sl in _batches(len(images), batch_size):
            p = predict(model, images[sl])
            logits = p.shared_logits if head == "shared" else p.expr_logits
            expr.append(np.argmax(logits.data, axis=-1))
            mask.append(np.argmax(p.mask_logits.data, axis=-1))
    return np.concatenate(expr), np.concatenate(mask)


def evaluate(model: CrossTaskModel, data: Sequence[LabeledSample], head: str = "expr") -> EvalReport:
    if not data:
        raise ValueError("cannot evaluate on an empty dataset")
    images, expr, mask = stack(data)
    pe, pm = predict_labels(model, images, head=head)
    cfg = model.config
    return EvalReport(
        expr_acc=float(np.mean(pe == expr)),
        mask_acc=float(np.mean(pm == mask)),
        confusion_expr=confusion_matrix(expr, pe, cfg.num_expr_classes),
        confusion_mask=confusion_matrix(mask, pm, cfg.num_mask_classes),
        n_samples=len(data),
    )


def epoch_order(n: int, seed: int, stage: int, epoch: int) -> np.ndarray:
    """Shuffle keyed on (seed, stage, epoch) so a resumed run sees the same order."""
    return np.random.default_rng([seed, stage, epoch]).permutation(n)


def _stage1_loss(model: CrossTaskModel, images, expr, mask, cfg: TrainingConfig) -> Tensor:
    return cross_entropy(shared_logits(model, phase1_forward(model, images)), expr)


def _stage2_loss(model: CrossTaskModel, images, expr, mask, cfg: TrainingConfig) -> Tensor:
    p = predict(model, images)
    loss = cross_entropy(p.expr_logits, expr) * cfg.lambda_expr
    loss = loss + cross_entropy(p.mask_logits, mask) * cfg.lambda_mask
    return loss + cross_entropy(p.shared_logits, expr) * cfg.lambda_shared


def _run_stage(model, data, cfg: TrainingConfig, stage: int, epochs: int, params, loss_fn) -> MetricLog:
    out = MetricLog()
    if epochs == 0:
        return out
    if not data:
        raise ValueError("training data is empty")
    images, expr, mask = stack(data)
    opt = Optimizer(params, kind=cfg.optimizer, lr=cfg.learning_rate, snap_float32=True)
    head = "shared" if stage == 1 else "expr"
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = epoch_order(len(images), cfg.seed, stage, epoch)
        total, count = 0.0, 0
        for sl in _batches(len(order), cfg.batch_size):
            idx = order[sl]
            model.zero_grad()
            loss = loss_fn(model, images[idx], expr[idx], mask[idx], cfg)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value} at stage {stage}, epoch {epoch}, batch starting {sl.start}")
            backward(loss)
            opt.step()
            total += value * len(idx)
            count += len(idx)
        report = evaluate(model, data, head=head)
        row = EpochRow(stage, epoch, total / count, report.expr_acc, report.mask_acc, time.perf_counter() - t0)
        log.info("stage %d epoch %d loss %.4f expr %.3f mask %.3f", stage, epoch, row.train_loss, row.expr_acc, row.mask_acc)
        out.append(row)
    return out


def stage1_train(model: CrossTaskModel, data: Sequence[LabeledSample], cfg: TrainingConfig) -> MetricLog:
    """Train phase 1 and the shared classifier on the expression labels.

    Logged ``expr_acc`` is the shared classifier's accuracy.
    """
    return _run_stage(model, data, cfg, 1, cfg.epochs_stage1, model.stage1_parameters(), _stage1_loss)


def stage2_train(model: CrossTaskModel, data: Sequence[LabeledSample], cfg: TrainingConfig) -> MetricLog:
    """Jointly train every parameter on the weighted sum of the three losses."""
    return _run_stage(model, data, cfg, 2, cfg.epochs_stage2, list(model.named_parameters()), _stage2_loss)


def train_two_stage(model: CrossTaskModel, data: Sequence[LabeledSample], cfg: TrainingConfig, stages=(1, 2)) -> MetricLog:
    out = MetricLog()
    if 1 in stages:
        out.extend(stage1_train(model, data, cfg))
    if 2 in stages:
        out.extend(stage2_train(model, data, cfg))
    return out
