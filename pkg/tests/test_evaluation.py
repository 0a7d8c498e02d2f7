import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uniphynet import dsp
from uniphynet import evaluation as E
from uniphynet import model as M
from uniphynet.augment import AugmentPolicy
from uniphynet.dataset import ConfigError, Modality, SynthSpec, ValidationError, generate_synthetic, make_folds
from uniphynet.train import TrainConfig


def _f1_oracle(pred, truth, num_classes):
    """Per-sample tp/fp/fn tally, independent of the confusion-matrix route."""
    scores = []
    for c in range(num_classes):
        tp = fp = fn = 0
        for p, t in zip(pred, truth):
            tp += p == c and t == c
            fp += p == c and t != c
            fn += p != c and t == c
        scores.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return sum(scores) / num_classes


def test_perfect_predictions():
    acc, f1, cm = E.compute_metrics([0, 1, 2, 1], [0, 1, 2, 1], 3)
    assert (acc, f1) == (1.0, 1.0)
    assert cm.to_list() == [[1, 0, 0], [0, 2, 0], [0, 0, 1]]


def test_all_one_class_binary():
    truth = np.array([0, 1] * 50)
    acc, f1, _ = E.compute_metrics(np.zeros(100, dtype=int), truth, 2)
    assert acc == 0.5
    assert f1 == pytest.approx(1 / 3, abs=1e-4)


@pytest.mark.parametrize("num_classes", [2, 3])
def test_single_class_truths(num_classes):
    acc, f1, _ = E.compute_metrics([1] * 7, [1] * 7, num_classes)
    assert acc == 1.0
    assert f1 == pytest.approx(1 / num_classes)


@pytest.mark.parametrize("pred,truth", [([], []), ([0, 1], [0]), ([0, 2], [0, 1]), ([0, -1], [0, 1])])
def test_metric_validation(pred, truth):
    with pytest.raises(ValidationError):
        E.compute_metrics(pred, truth, 2)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 4).flatmap(lambda c: st.tuples(
    st.just(c), st.lists(st.tuples(st.integers(0, c - 1), st.integers(0, c - 1)), min_size=1, max_size=60))))
def test_metrics_properties(case):
    c, pairs = case
    pred, truth = (np.array(x) for x in zip(*pairs))
    acc, f1, cm = E.compute_metrics(pred, truth, c)
    assert cm.total == len(pred) and np.all(cm.counts >= 0)
    assert np.array_equal(cm.counts.sum(axis=1), np.bincount(truth, minlength=c))
    assert acc == pytest.approx(np.trace(cm.counts) / cm.total)
    assert acc == pytest.approx(np.mean(pred == truth))
    assert f1 == pytest.approx(_f1_oracle(pred.tolist(), truth.tolist(), c), abs=1e-12)


# harness ---------------------------------------------------------------------

def _net(classes=2):
    eeg = M.ModalityConfig(Modality.EEG, 4, 256, (3, 9), 2, feature_maps=4, gru_hidden=2, cbam_reduction=2,
                           window_s=0.25)
    return M.NetConfig((eeg,), num_classes=classes, dropout=0.0)


@pytest.fixture(scope="module")
def six_subjects():
    spec = SynthSpec(subjects=6, trials=1, windows_per_trial=6, seconds=0.25)
    return dsp.preprocess_dataset(generate_synthetic(spec, 4))


TRAIN = TrainConfig(epochs=2, batch_size=8, val_fraction=0.2)


@pytest.fixture(scope="module")
def loso_report(six_subjects):
    plan = make_folds(six_subjects, "loso", seed=3)
    return E.run_cross_validation(six_subjects, plan, _net(), TRAIN, AugmentPolicy())


def test_loso_six_folds_pure(loso_report, six_subjects):
    assert len(loso_report.folds) == 6 and not loso_report.failed
    subjects = [f.test_subjects for f in loso_report.folds]
    assert all(len(s) == 1 for s in subjects)
    assert len({s[0] for s in subjects}) == 6
    for f in loso_report.folds:
        assert f.n_test == 6 and f.n_val + f.n_train // 2 == 30
        assert sum(map(sum, f.confusion)) == f.n_test
        assert len(f.curves["val_loss"]) == TRAIN.epochs


def test_report_mean_reproducible(loso_report, tmp_path):
    accs = [f.accuracy for f in loso_report.folds]
    assert loso_report.mean("accuracy") == pytest.approx(sum(accs) / len(accs))
    assert loso_report.std("accuracy") == pytest.approx(np.std(accs))
    path = tmp_path / "r.json"
    loso_report.to_json(path)
    back = E.CvReport.from_json(path)
    assert back.summary() == loso_report.summary()
    stored = json.loads(path.read_text())
    assert stored["summary"]["macro_f1_mean"] == pytest.approx(np.mean([f["macro_f1"] for f in stored["folds"]]))
    assert stored["f1_average"] == "macro"


def test_report_csv(loso_report, tmp_path):
    loso_report.to_csv(tmp_path / "s.csv")
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert rows[0]["modalities"] == "EEG" and rows[0]["protocol"] == "loso"
    assert float(rows[0]["accuracy_mean"]) == loso_report.mean("accuracy")
    loso_report.folds_to_csv(tmp_path / "f.csv")
    assert len(open(tmp_path / "f.csv").read().splitlines()) == 7


def test_rerun_bit_identical(six_subjects):
    plan = make_folds(six_subjects, "kfold", seed=1, k=3)
    a = E.run_cross_validation(six_subjects, plan, _net(), TRAIN, AugmentPolicy())
    b = E.run_cross_validation(six_subjects, plan, _net(), TRAIN, AugmentPolicy())
    assert a.to_json() == b.to_json()


def test_parallel_jobs_match_serial(six_subjects):
    plan = make_folds(six_subjects, "kfold", seed=1, k=2)
    a = E.run_cross_validation(six_subjects, plan, _net(), TRAIN, None, jobs=1)
    b = E.run_cross_validation(six_subjects, plan, _net(), TRAIN, None, jobs=2)
    assert a.to_json() == b.to_json()


def test_failed_fold_is_isolated(six_subjects, monkeypatch):
    real = E.run_fold

    def flaky(dataset, plan, fold, *args):
        if fold == 1:
            raise FloatingPointError("boom")
        return real(dataset, plan, fold, *args)

    monkeypatch.setattr(E, "run_fold", flaky)
    plan = make_folds(six_subjects, "kfold", seed=1, k=3)
    report = E.run_cross_validation(six_subjects, plan, _net(), TRAIN, None)
    assert report.failed and report.failed_folds == [1]
    assert "boom" in report.folds[1].error
    assert report.mean("accuracy") == pytest.approx(np.mean([report.folds[0].accuracy, report.folds[2].accuracy]))
    assert report.to_dict()["failed"] is True


def test_augmentation_sees_training_windows_only(six_subjects, monkeypatch):
    seen = []
    real = E.augment_training_fold

    def spy(train, policy, rng=None):
        seen.append(train.indices.copy())
        return real(train, policy, rng)

    monkeypatch.setattr(E, "augment_training_fold", spy)
    plan = make_folds(six_subjects, "loso", seed=0)
    report = E.run_cross_validation(six_subjects, plan, _net(), TRAIN, AugmentPolicy())
    assert len(seen) == 6 and not report.failed
    for fold, idx in enumerate(seen):
        assert not set(idx.tolist()) & set(plan.test_indices(fold).tolist())
        assert len(idx) == report.folds[fold].n_train // 2


def test_config_mismatch(six_subjects):
    plan = make_folds(six_subjects, "loso", seed=0)
    with pytest.raises(ConfigError):
        E.run_cross_validation(six_subjects, plan, _net(classes=3), TRAIN)
    with pytest.raises(ConfigError):
        E.run_cross_validation(six_subjects, plan, _net(), TRAIN, jobs=0)
    ecg = M.NetConfig((M.tiny_modality("ECG"),))
    with pytest.raises(ConfigError):
        E.run_cross_validation(six_subjects, plan, ecg, TRAIN)


def test_fold_seeds_distinct():
    a, b = E.fold_seeds(0, 0), E.fold_seeds(0, 1)
    assert a != b and E.fold_seeds(0, 0) == a
    assert len(set(a.values())) == 4
