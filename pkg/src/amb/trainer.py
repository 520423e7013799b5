"""MAE training with Adam and early stopping, plus the sentiment metrics."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .pipeline import iterate_batches

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


class MissingGradientError(RuntimeError):
    pass


def mae_loss(pred, target):
    """mean |pred - target|; the subgradient at a tie is 0."""
    target = target if isinstance(target, T.Tensor) else T.Tensor(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape or pred.data.size == 0:
        raise T.DimensionError(f"mae_loss needs equal non-empty shapes, got {pred.shape} and {target.shape}")
    return T.mean_all(T.absolute(T.sub(pred, target)))


# --------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state, params, grads=None):
    """One bias-corrected Adam update of the trainable tensors in ``params``.

    ``grads`` defaults to each tensor's ``.grad``. Frozen tensors are skipped
    and never get moment buffers.
    """
    trainable = params.trainable()
    if grads is None:
        grads = {name: t.grad for name, t in trainable}
    for name, _ in trainable:
        if grads.get(name) is None:
            raise MissingGradientError(f"no gradient for trainable parameter {name!r}; call zero_grad() "
                                       "before backward()")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, t in trainable:
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
        t.data -= update.astype(t.dtype, copy=False)


# ----------------------------------------------------------------- metrics

def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def sentiment_class(x):
    """Seven-way class in {-3, ..., 3}."""
    return np.clip(round_half_away(x), -3, 3)


def pearson(pred, target):
    """Returns (corr, degenerate). A constant input gives (0.0, True) instead of NaN."""
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if p.size < 2 or np.ptp(p) == 0.0 or np.ptp(y) == 0.0:
        return 0.0, True
    dp, dy = p - p.mean(), y - y.mean()
    denom = math.sqrt(float((dp * dp).sum()) * float((dy * dy).sum()))
    if denom == 0.0 or not math.isfinite(denom):
        return 0.0, True
    return float(np.clip((dp * dy).sum() / denom, -1.0, 1.0)), False


def binary_scores(pred, target, exclude_zero=False):
    """(accuracy, F1 of the positive class); positive means >= 0, or > 0 with exclude_zero."""
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if exclude_zero:
        keep = y != 0
        p, y = p[keep], y[keep]
        p_pos, y_pos = p > 0, y > 0
    else:
        p_pos, y_pos = p >= 0, y >= 0
    if len(y) == 0:
        return 0.0, 0.0
    acc = float((p_pos == y_pos).mean())
    tp = int((p_pos & y_pos).sum())
    fp = int((p_pos & ~y_pos).sum())
    fn = int((~p_pos & y_pos).sum())
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return acc, float(f1)


@dataclass
class MetricsReport:
    mae: float
    corr: float
    acc7: float
    acc2: float
    f1: float
    n: int
    corr_degenerate: bool = False

    FIELDS = ("mae", "corr", "acc7", "acc2", "f1", "n", "corr_degenerate")

    def row(self):
        return [getattr(self, f) for f in self.FIELDS]


def compute_metrics(pred, target, acc2_exclude_zero=False):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.size == 0:
        raise ValueError("metrics need equal-length, non-empty prediction and label vectors")
    corr, degenerate = pearson(pred, target)
    acc2, f1 = binary_scores(pred, target, acc2_exclude_zero)
    return MetricsReport(
        mae=float(np.abs(pred - target).mean()),
        corr=corr,
        acc7=float((sentiment_class(pred) == sentiment_class(target)).mean()),
        acc2=acc2,
        f1=f1,
        n=int(pred.size),
        corr_degenerate=degenerate,
    )


def predict_all(model, examples, batch_size=32):
    c = model.config
    return np.concatenate([model.predict(b) for b in
                           iterate_batches(examples, batch_size, None, c.max_len, c.max_frames)])


def evaluate(model, examples, batch_size=32, acc2_exclude_zero=False):
    if not examples:
        raise ValueError("cannot evaluate an empty set")
    preds = predict_all(model, examples, batch_size)
    return compute_metrics(preds, [e.label for e in examples], acc2_exclude_zero)


# ----------------------------------------------------------------- training

@dataclass
class EarlyStopState:
    patience: int = 10
    best_loss: float = math.inf
    best_epoch: int = 0
    since_improvement: int = 0
    best_params: dict | None = None

    def update(self, loss, epoch, params):
        """Record one epoch's dev loss; returns True when training should stop."""
        if loss < self.best_loss:
            self.best_loss, self.best_epoch, self.since_improvement = loss, epoch, 0
            self.best_params = params.snapshot()
        else:
            self.since_improvement += 1
        return self.since_improvement > self.patience


@dataclass
class TrainResult:
    best_params: dict
    best_epoch: int
    best_dev_mae: float
    history: list
    steps: int


HISTORY_FIELDS = ("epoch", "train_mae", "dev_mae", "dev_corr")


def train(config, model, train_set, dev_set, max_steps=None, callback=None):
    """Epoch loop with seeded shuffling; restores and returns the best-dev checkpoint."""
    if not train_set or not dev_set:
        raise ValueError("train and dev sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    state = AdamState(lr=config.lr)
    stopper = EarlyStopState(patience=config.patience)
    params = model.params
    history = []
    steps = 0
    for epoch in range(1, config.max_epochs + 1):
        loss_sum = 0.0
        seen = 0
        for bi, batch in enumerate(iterate_batches(train_set, config.batch_size, rng,
                                                   config.max_len, config.max_frames)):
            params.zero_grad()
            pred = model.forward_batch(batch, training=True, rng=rng)
            loss = mae_loss(pred, batch.labels)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value} at epoch {epoch}, batch {bi} "
                                   f"(samples {batch.ids[:4]}{'...' if len(batch) > 4 else ''})")
            T.backward(loss)
            adam_step(state, params)
            loss_sum += value * len(batch)
            seen += len(batch)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        dev = evaluate(model, dev_set, config.batch_size)
        record = {"epoch": epoch, "train_mae": loss_sum / seen, "dev_mae": dev.mae, "dev_corr": dev.corr}
        history.append(record)
        log.info("epoch %d train_mae %.4f dev_mae %.4f dev_corr %.4f", epoch, record["train_mae"],
                 dev.mae, dev.corr)
        if callback is not None:
            callback(record)
        stop = stopper.update(dev.mae, epoch, params)
        if stop or (max_steps is not None and steps >= max_steps):
            break
    params.restore(stopper.best_params)
    return TrainResult(stopper.best_params, stopper.best_epoch, stopper.best_loss, history, steps)


def write_history(history, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for rec in history:
            w.writerow([rec["epoch"]] + [repr(float(rec[k])) for k in HISTORY_FIELDS[1:]])
