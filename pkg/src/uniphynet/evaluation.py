"""Classification metrics and the cross-validation harness."""
from __future__ import annotations

import csv
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .augment import augment_training_fold
from .dataset import ConfigError, ValidationError
from .model import NetConfig, build_model
from .nn.rng import RngStream
from .train import TrainConfig, evaluate_loss, train_model

log = logging.getLogger(__name__)

F1_AVERAGE = "macro"


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows indexed by truth and columns by prediction."""

    counts: np.ndarray

    @classmethod
    def from_labels(cls, predictions, truths, num_classes):
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (truths, predictions), 1)
        return cls(counts)

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def num_classes(self):
        return self.counts.shape[0]

    def per_class_f1(self):
        """F1 per class; a class with precision + recall = 0 scores 0."""
        tp = np.diag(self.counts).astype(np.float64)
        predicted = self.counts.sum(axis=0)
        actual = self.counts.sum(axis=1)
        out = np.zeros(self.num_classes)
        for c in range(self.num_classes):
            p = tp[c] / predicted[c] if predicted[c] else 0.0
            r = tp[c] / actual[c] if actual[c] else 0.0
            if p + r == 0:
                log.debug("class %d has precision + recall = 0; F1 set to 0", c)
                continue
            out[c] = 2 * p * r / (p + r)
        return out

    def to_list(self):
        return self.counts.tolist()


def compute_metrics(predictions, truths, num_classes):
    """Accuracy, macro-averaged F1 and the confusion matrix."""
    predictions = np.asarray(predictions, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if predictions.shape != truths.shape or predictions.ndim != 1:
        raise ValidationError(f"predictions {predictions.shape} and truths {truths.shape} must be equal-length 1-D")
    if predictions.size == 0:
        raise ValidationError("cannot score an empty set")
    for name, arr in (("predictions", predictions), ("truths", truths)):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValidationError(f"{name} must lie in [0, {num_classes})")
    cm = ConfusionMatrix.from_labels(predictions, truths, num_classes)
    accuracy = float(np.trace(cm.counts)) / cm.total
    return accuracy, float(cm.per_class_f1().mean()), cm


# cross-validation ---------------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    status: str  # "ok" or "failed"
    accuracy: float = float("nan")
    macro_f1: float = float("nan")
    confusion: list = field(default_factory=list)
    n_train: int = 0
    n_val: int = 0
    n_test: int = 0
    test_subjects: list = field(default_factory=list)
    best_epoch: int = -1
    curves: dict = field(default_factory=dict)  # per-epoch columns of the TrainLog, no wall-clock
    error: str = ""

    @property
    def ok(self):
        return self.status == "ok"


@dataclass
class CvReport:
    protocol: str
    seed: int
    num_classes: int
    folds: list
    config: dict = field(default_factory=dict)
    f1_average: str = F1_AVERAGE

    def _values(self, name):
        return np.array([getattr(f, name) for f in self.folds if f.ok])

    def mean(self, name):
        vals = self._values(name)
        return float(vals.mean()) if vals.size else float("nan")

    def std(self, name):
        """Population standard deviation across successful folds."""
        vals = self._values(name)
        return float(vals.std()) if vals.size else float("nan")

    @property
    def failed(self):
        return any(not f.ok for f in self.folds)

    @property
    def failed_folds(self):
        return [f.fold for f in self.folds if not f.ok]

    def summary(self):
        return {
            "accuracy_mean": self.mean("accuracy"), "accuracy_std": self.std("accuracy"),
            "macro_f1_mean": self.mean("macro_f1"), "macro_f1_std": self.std("macro_f1"),
            "n_folds": len(self.folds), "failed_folds": self.failed_folds,
        }

    def to_dict(self):
        return {
            "protocol": self.protocol, "seed": self.seed, "num_classes": self.num_classes,
            "f1_average": self.f1_average, "failed": self.failed, "summary": self.summary(),
            "folds": [asdict(f) for f in self.folds], "config": self.config,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d):
        folds = [FoldResult(**f) for f in d["folds"]]
        return cls(d["protocol"], d["seed"], d["num_classes"], folds, d.get("config", {}),
                   d.get("f1_average", F1_AVERAGE))

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def model_label(self):
        net = self.config.get("net", {})
        return net.get("block_kind", "UniPhyNet")

    def modality_label(self):
        net = self.config.get("net", {})
        return "+".join(m["modality"] for m in net.get("modalities", [])) or "?"

    def to_csv(self, path):
        """One summary row in model x modality-set layout: accuracy and F1 as mean and std."""
        s = self.summary()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "modalities", "protocol", "accuracy_mean", "accuracy_std",
                        "macro_f1_mean", "macro_f1_std", "folds", "failed"])
            w.writerow([self.model_label(), self.modality_label(), self.protocol,
                        repr(s["accuracy_mean"]), repr(s["accuracy_std"]), repr(s["macro_f1_mean"]),
                        repr(s["macro_f1_std"]), len(self.folds), len(s["failed_folds"])])

    def folds_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fold", "status", "accuracy", "macro_f1", "n_train", "n_val", "n_test", "test_subjects"])
            for f in self.folds:
                w.writerow([f.fold, f.status, repr(f.accuracy), repr(f.macro_f1), f.n_train, f.n_val, f.n_test,
                            " ".join(str(s) for s in f.test_subjects)])


def fold_seeds(seed, fold):
    """Independent integer seeds for one fold's split, augmentation, init and shuffling."""
    root = RngStream(seed).split("fold", fold)
    return {name: int(root.split(name).integers(1 << 31)) for name in ("val", "augment", "model", "train")}


def _disjoint(a, b):
    return not set(np.asarray(a).tolist()) & set(np.asarray(b).tolist())


def run_fold(dataset, plan, fold, net_config, train_config, policy=None, return_model=False):
    """Train and score one fold; raises on failure (the harness isolates it).

    With ``return_model`` the trained model and its ``TrainLog`` are returned
    alongside the ``FoldResult``.
    """
    seeds = fold_seeds(plan.seed, fold)
    full_train = plan.training_fold(dataset, fold)
    train, val = full_train.split_validation(train_config.val_fraction, RngStream(seeds["val"]))
    test_idx = plan.test_indices(fold)
    val_idx = np.setdiff1d(full_train.indices, train.indices)
    assert _disjoint(test_idx, full_train.indices), "test windows leaked into the training fold"
    assert _disjoint(val_idx, train.indices), "validation windows leaked into the training partition"
    if policy is not None and policy.copies_per_window > 0:
        augmented = augment_training_fold(train, policy, RngStream(seeds["augment"]))
        assert _disjoint(augmented.source, test_idx) and _disjoint(augmented.source, val_idx), \
            "augmentation touched a held-out window"
        train = augmented
    n_train = len(train.dataset)
    model = build_model(net_config, seeds["model"])
    cfg = TrainConfig(**{**asdict(train_config), "seed": seeds["train"]})
    model, trainlog = train_model(model, train, val, cfg)
    test = plan.test_set(dataset, fold)
    _, _, preds = evaluate_loss(model, test, cfg.batch_size)
    acc, f1, cm = compute_metrics(preds, test.labels, net_config.num_classes)
    curves = {name: trainlog.column(name).tolist() for name in ("train_loss", "val_loss", "val_acc", "lr")}
    result = FoldResult(fold, "ok", acc, f1, cm.to_list(), n_train, len(val), len(test),
                        sorted(set(test.subjects.tolist())), trainlog.best_epoch, curves)
    return (result, model, trainlog) if return_model else result


def _run_fold_isolated(args):
    dataset, plan, fold, net_config, train_config, policy = args
    try:
        return run_fold(dataset, plan, fold, net_config, train_config, policy)
    except Exception as exc:  # a failed fold is recorded, not fatal
        log.error("fold %d failed: %s", fold, exc)
        return FoldResult(fold, "failed", error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}")


def run_cross_validation(dataset, plan, net_config, train_config, policy=None, jobs=1, config_echo=None):
    """Per fold: inner validation split, train-only augmentation, fresh model, test on the held-out fold."""
    if not isinstance(net_config, NetConfig):
        raise ConfigError("net_config must be a NetConfig")
    if net_config.num_classes != dataset.num_classes:
        raise ConfigError(f"network has {net_config.num_classes} classes, dataset has {dataset.num_classes}")
    missing = [m.modality.value for m in net_config.modalities if m.modality not in dataset.data]
    if missing:
        raise ConfigError(f"dataset lacks modalities {missing}")
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    tasks = [(dataset, plan, f, net_config, train_config, policy) for f in range(plan.n_folds)]
    if jobs == 1:
        results = [_run_fold_isolated(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold_isolated, tasks))
    results.sort(key=lambda r: r.fold)
    echo = {"net": net_config.to_dict(), "train": asdict(train_config),
            "augment": asdict(policy) if policy is not None else None}
    if config_echo:
        echo.update(config_echo)
    report = CvReport(plan.protocol, plan.seed, net_config.num_classes, results, echo)
    if report.failed:
        log.warning("cross-validation finished with failed folds %s", report.failed_folds)
    return report
