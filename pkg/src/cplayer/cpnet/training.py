"""Training and evaluation loops for CP-Net."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..nn import functional as F
from ..nn.knn import knn_batch
from ..nn.optim import Adam
from ..pcio import AugmentConfig, augment_points
from .config import TrainConfig
from .model import CPNet

log = logging.getLogger(__name__)


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    overall_acc: float
    mean_class_acc: float


@dataclass
class EvalResult:
    overall_acc: float
    mean_class_acc: float
    confusion: np.ndarray


@dataclass
class TrainResult:
    history: list[EpochMetrics] = field(default_factory=list)
    optimizer: Optional[Adam] = None
    epochs_done: int = 0


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray) -> EvalResult:
    total = cm.sum()
    overall = float(np.trace(cm) / total) if total else 0.0
    support = cm.sum(axis=1)
    present = support > 0
    recalls = np.diag(cm)[present] / support[present]
    return EvalResult(overall, float(recalls.mean()) if recalls.size else 0.0, cm)


def predict_logits(model: CPNet, X: np.ndarray, batch_size: int = 64,
                   sampler_seed: Optional[int] = None) -> np.ndarray:
    """Eval-mode logits for ``X`` of shape (N, n, 3)."""
    sampler = np.random.default_rng(sampler_seed) if model.cfg.downsample == "random" else None
    out = [model(X[s:s + batch_size], training=False, sampler_rng=sampler).data
           for s in range(0, len(X), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.cfg.num_classes), np.float32)


def evaluate(model: CPNet, X: np.ndarray, y: np.ndarray, batch_size: int = 64,
             sampler_seed: Optional[int] = None) -> EvalResult:
    pred = predict_logits(model, X, batch_size, sampler_seed).argmax(axis=1)
    return metrics_from_confusion(confusion_matrix(y, pred, model.cfg.num_classes))


def bn_momentum_at(step: int, decay_steps: int, start: float = 0.5, clip: float = 0.99) -> float:
    """Batch-norm decay ramp: starts at ``start`` and approaches ``clip``."""
    return min(clip, 1.0 - (1.0 - start) * 0.5 ** (step / max(decay_steps, 1)))


def train(model: CPNet, X: np.ndarray, y: np.ndarray, cfg: TrainConfig,
          X_test: Optional[np.ndarray] = None, y_test: Optional[np.ndarray] = None,
          seed: Optional[int] = None, result: Optional[TrainResult] = None,
          on_epoch: Optional[Callable[[EpochMetrics], None]] = None) -> TrainResult:
    """Train with Adam on softmax cross entropy; metrics are logged once per epoch.

    Shuffling, augmentation, dropout and random down-sampling all draw from one
    generator seeded by ``seed`` (default ``cfg.seed``), so runs are repeatable.
    Passing a previous ``result`` continues its optimizer state.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    steps_per_epoch = math.ceil(len(X) / cfg.batch_size)
    decay_steps = cfg.decay_steps or max(1, (cfg.epochs * steps_per_epoch) // 2)
    if result is None:
        result = TrainResult(optimizer=Adam(model.parameters(), lr=cfg.learning_rate,
                                            decay_rate=cfg.decay_rate, decay_steps=decay_steps))
    opt = result.optimizer
    aug = AugmentConfig() if cfg.augment else None
    # augmentation is a similarity transform, so first-stage neighbour lists never change
    graph = knn_batch(X, model.first_k)
    if not cfg.bn_schedule:
        model.set_bn_momentum(cfg.bn_momentum)

    for _ in range(cfg.epochs):
        order = rng.permutation(len(X))
        losses = []
        for start in range(0, len(X), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            pts = X[batch]
            if aug is not None:
                pts = np.stack([augment_points(p, aug, rng) for p in pts]).astype(np.float32)
            if cfg.bn_schedule:
                model.set_bn_momentum(bn_momentum_at(opt.state.t, decay_steps))
            opt.zero_grad()
            logits = model(pts, training=True, rng=rng, neighbors=graph[batch])
            loss = F.softmax_cross_entropy(logits, y[batch])
            value = float(loss.data)
            if not math.isfinite(value):
                raise FloatingPointError(
                    f"non-finite loss {value} at epoch {result.epochs_done + 1}, step {opt.state.t}")
            loss.backward()
            opt.step()
            losses.append(value)
        result.epochs_done += 1
        if X_test is not None:
            ev = evaluate(model, X_test, y_test)
            acc, macc = ev.overall_acc, ev.mean_class_acc
        else:
            acc = macc = float("nan")
        m = EpochMetrics(result.epochs_done, float(np.mean(losses)), acc, macc)
        result.history.append(m)
        log.info("epoch %d loss %.4f acc %.4f mean-class %.4f", m.epoch, m.loss, acc, macc)
        if on_epoch is not None:
            on_epoch(m)
    return result


def write_metrics_csv(history: list[EpochMetrics], path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss,overall_acc,mean_class_acc\n")
        for m in history:
            fh.write(f"{m.epoch},{m.loss:.6f},{m.overall_acc:.6f},{m.mean_class_acc:.6f}\n")
