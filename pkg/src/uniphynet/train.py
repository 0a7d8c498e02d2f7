"""AdamW, plateau learning-rate schedule and the mini-batch training loop."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentedFold, augment_training_fold
from .dataset import ConfigError, LabeledDataset, TrainingFold
from .nn import functional as F
from .nn.rng import RngStream
from .nn.tensor import Tensor, get_dtype, no_grad

log = logging.getLogger(__name__)


class NonFiniteError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    plateau_factor: float = 0.5
    plateau_patience: int = 15
    plateau_threshold: float = 1e-8
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.weight_decay < 0 or self.eps <= 0:
            raise ConfigError("lr and eps must be positive, weight_decay non-negative")
        if self.batch_size < 1 or self.epochs < 1 or self.plateau_patience < 1:
            raise ConfigError("batch_size, epochs and plateau_patience must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError("plateau_factor must lie in (0, 1)")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")


# optimizer -----------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adamw_step(params, grads, state, t, config, lr=None):
    """One in-place AdamW update with decoupled weight decay.

    ``params`` and ``grads`` are matching lists of arrays; ``state`` holds the
    first and second moments. ``lr`` overrides ``config.lr`` (scheduler output).
    """
    if t < 1:
        raise ValueError("step counter t starts at 1")
    lr = config.lr if lr is None else lr
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for i, (w, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter {i} at step {t}")
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + config.eps)
        w -= lr * config.weight_decay * w + lr * update
    state.t = t
    return params, state


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, lr, factor=0.5, patience=15, threshold=1e-8):
        self.lr = lr
        self.factor, self.patience, self.threshold = factor, patience, threshold
        self.best = np.inf
        self.bad_epochs = 0
        self.firings = 0

    def step(self, val_loss):
        if val_loss < self.best - self.threshold:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.firings += 1
                self.bad_epochs = 0
        return self.lr


def scheduler_step(scheduler, validation_loss):
    return scheduler.step(validation_loss)


# training loop ---------------------------------------------------------------

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    lr: float
    seconds: float


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1

    def append(self, rec):
        self.epochs.append(rec)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.epochs])

    @property
    def best_val_loss(self):
        return float(self.column("val_loss").min())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "val_acc", "lr"])
            for r in self.epochs:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_acc), repr(r.lr)])

    def same_values(self, other):
        """Equality ignoring wall-clock time."""
        strip = lambda log: [(r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr) for r in log.epochs]  # noqa: E731
        return strip(self) == strip(other) and self.best_epoch == other.best_epoch


def batch_inputs(ds, idx, modalities):
    dtype = get_dtype()
    return {m: Tensor(np.asarray(ds.data[m][idx], dtype=dtype)) for m in modalities}


def evaluate_loss(model, ds, batch_size=64):
    """Mean cross-entropy, accuracy and predictions in eval mode."""
    model.eval()
    losses, preds = [], []
    with no_grad():
        for start in range(0, len(ds), batch_size):
            idx = np.arange(start, min(start + batch_size, len(ds)))
            logits = model(batch_inputs(ds, idx, model.modalities))
            losses.append(float(F.softmax_cross_entropy(logits, ds.labels[idx]).data) * len(idx))
            preds.append(np.argmax(logits.data, axis=1))
    preds = np.concatenate(preds)
    return sum(losses) / len(ds), float(np.mean(preds == ds.labels)), preds


def _resolve_train(train, policy, seed):
    if isinstance(train, AugmentedFold):
        return train.dataset
    if isinstance(train, TrainingFold):
        if policy is None or policy.copies_per_window == 0:
            return train.dataset
        return augment_training_fold(train, policy, RngStream(seed).split("augment")).dataset
    if isinstance(train, LabeledDataset):
        return train
    raise TypeError(f"cannot train on {type(train).__name__}")


def train_model(model, train, val, config, policy=None, progress=None):
    """Fit ``model`` and restore the weights of the epoch with the lowest validation loss.

    ``train`` is a ``TrainingFold`` (augmented here with ``policy``), an
    ``AugmentedFold`` or an already prepared ``LabeledDataset``.
    """
    ds = _resolve_train(train, policy, config.seed)
    if len(ds) == 0:
        raise ConfigError("empty training set")
    if val is None or len(val) == 0:
        raise ConfigError("empty validation set")
    params = model.parameters()
    state = AdamState.zeros_like([p.data for p in params])
    sched = PlateauScheduler(config.lr, config.plateau_factor, config.plateau_patience, config.plateau_threshold)
    order_rng = RngStream(config.seed).split("shuffle")
    trainlog = TrainLog()
    best_state, best_loss = None, np.inf
    step = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        model.train()
        perm = order_rng.split(epoch).permutation(len(ds))
        total = 0.0
        for start in range(0, len(ds), config.batch_size):
            idx = np.sort(perm[start:start + config.batch_size])
            model.zero_grad()
            loss = F.softmax_cross_entropy(model(batch_inputs(ds, idx, model.modalities)), ds.labels[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise NonFiniteError(f"non-finite training loss at epoch {epoch}, step {step + 1}")
            loss.backward()
            step += 1
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            try:
                adamw_step([p.data for p in params], grads, state, step, config, lr=sched.lr)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch}: {exc}") from None
            total += value * len(idx)
        val_loss, val_acc, _ = evaluate_loss(model, val, config.batch_size)
        if not np.isfinite(val_loss):
            raise NonFiniteError(f"non-finite validation loss at epoch {epoch}")
        lr_used = sched.lr
        if val_loss < best_loss:
            best_loss, best_state = val_loss, model.state_dict()
            trainlog.best_epoch = epoch
        sched.step(val_loss)
        rec = EpochRecord(epoch, total / len(ds), val_loss, val_acc, lr_used, time.perf_counter() - t0)
        trainlog.append(rec)
        if progress is not None:
            progress(rec)
        log.debug("epoch %d train %.4f val %.4f acc %.3f lr %.2e", epoch, rec.train_loss, val_loss, val_acc, lr_used)
    model.load_state_dict(best_state)
    model.eval()
    return model, trainlog
