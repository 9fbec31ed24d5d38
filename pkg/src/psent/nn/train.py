from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..evaluation import class_recalls
from .loss import FocalLossParams, focal_loss
from .model import SEResNet
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gamma: float = 2.0
    alpha: tuple | None = None  # None: inverse class frequency of the training split
    seed: int = 0
    frozen: tuple = ()


@dataclass
class TrainResult:
    model: SEResNet
    history: list = field(default_factory=list)
    best_epoch: int | None = None


def _val_metrics(model, x, y, loss_params, batch_size):
    losses, preds = [], []
    for i in range(0, len(x), batch_size):
        logits = model.forward(x[i:i + batch_size])
        loss, _ = focal_loss(logits, y[i:i + batch_size], loss_params)
        losses.append(loss * len(logits))
        preds.append(logits.argmax(axis=1))
    pred = np.concatenate(preds)
    breach, non_breach = class_recalls(y, pred)
    return sum(losses) / len(x), breach, non_breach


def train(model: SEResNet, x_train, y_train, x_val=None, y_val=None,
          config: TrainConfig = TrainConfig()) -> TrainResult:
    """Mini-batch training with focal loss and Adam.

    The returned model is the epoch with the best validation balanced
    recall (mean of breach and non-breach recall); without a validation
    split it is the final epoch. Deterministic for a given seed.
    """
    x_train = np.asarray(x_train, dtype=model.dtype)
    y_train = np.asarray(y_train, dtype=int)
    if len(x_train) == 0:
        raise ValueError("empty training split")
    if config.epochs == 0:
        return TrainResult(model.copy(), [], None)
    has_val = x_val is not None and len(x_val) > 0
    if has_val:
        x_val = np.asarray(x_val, dtype=model.dtype)
        y_val = np.asarray(y_val, dtype=int)

    loss_params = (FocalLossParams(config.gamma, tuple(config.alpha)) if config.alpha
                   else FocalLossParams.balanced(y_train, config.gamma))
    state = AdamState(config.lr, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(config.seed)
    history = []
    best, best_score, best_epoch = model.copy(), -np.inf, None

    for epoch in range(config.epochs):
        order = rng.permutation(len(x_train))
        total, preds = 0.0, np.empty(len(x_train), dtype=int)
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            logits = model.forward(x_train[idx], training=True)
            loss, dlogits = focal_loss(logits, y_train[idx], loss_params)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch starting {start}")
            grads = model.backward(dlogits, frozen=config.frozen)
            for name in config.frozen:
                grads.pop(name, None)
            adam_step(state, model.params, grads)
            total += loss * len(idx)
            preds[idx] = logits.argmax(axis=1)
        tr_breach, tr_non = class_recalls(y_train, preds)
        record = {"epoch": epoch, "train_loss": total / len(x_train),
                  "train_breach_recall": tr_breach, "train_non_breach_recall": tr_non}
        if has_val:
            v_loss, v_breach, v_non = _val_metrics(model, x_val, y_val, loss_params, 64)
            record.update(val_loss=v_loss, val_breach_recall=v_breach, val_non_breach_recall=v_non)
            score = np.nanmean([v_breach, v_non])
        else:
            score = epoch
        history.append(record)
        log.info("epoch %d %s", epoch, {k: round(v, 4) for k, v in record.items() if k != "epoch"})
        if score > best_score:
            best, best_score, best_epoch = model.copy(), score, epoch
    return TrainResult(best, history, best_epoch)
