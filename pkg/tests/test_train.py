import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uniphynet import dsp
from uniphynet import model as M
from uniphynet import train as T
from uniphynet.augment import AugmentPolicy
from uniphynet.dataset import ConfigError, LabeledDataset, Modality, SynthSpec, generate_synthetic, make_folds
from uniphynet.nn import RngStream


def _adam(w, g, t=1, **kw):
    cfg = T.TrainConfig(**kw)
    params, grads = [np.array([w], dtype=np.float64)], [np.array([g], dtype=np.float64)]
    state = T.AdamState.zeros_like(params)
    T.adamw_step(params, grads, state, t, cfg)
    return params[0][0]


def test_adamw_hand_example():
    assert _adam(1.0, 2.0, weight_decay=0.0) == pytest.approx(0.999, abs=1e-9)


def test_adamw_decoupled_decay():
    assert _adam(1.0, 2.0, weight_decay=1e-4) == pytest.approx(0.9989999, abs=1e-9)


def test_adamw_zero_gradient_no_decay():
    assert _adam(0.37, 0.0, weight_decay=0.0) == 0.37


def test_adamw_rejects_t_zero():
    with pytest.raises(ValueError):
        _adam(1.0, 1.0, t=0)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_adamw_non_finite_gradient(bad):
    with pytest.raises(T.NonFiniteError, match="parameter 0"):
        _adam(1.0, bad)


def _reference_adamw(w, gs, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar loop straight from the update rule, used as an oracle."""
    m = v = 0.0
    for t, g in enumerate(gs, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh, vh = m / (1 - b1 ** t), v / (1 - b2 ** t)
        w = w - lr * wd * w - lr * mh / (np.sqrt(vh) + eps)
    return w


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.lists(st.floats(-10, 10), min_size=1, max_size=12), st.floats(0, 1e-2))
def test_adamw_matches_scalar_oracle(w0, gs, wd):
    cfg = T.TrainConfig(weight_decay=wd)
    params = [np.array([w0])]
    state = T.AdamState.zeros_like(params)
    for t, g in enumerate(gs, start=1):
        T.adamw_step(params, [np.array([g])], state, t, cfg)
    assert params[0][0] == pytest.approx(_reference_adamw(w0, gs, cfg.lr, wd), rel=1e-9, abs=1e-12)
    assert state.t == len(gs)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**31))
def test_zero_gradient_is_fixed_point(steps, seed):
    w = np.random.default_rng(seed).standard_normal(5)
    params = [w.copy()]
    state = T.AdamState.zeros_like(params)
    cfg = T.TrainConfig(weight_decay=0.0)
    for t in range(1, steps + 1):
        T.adamw_step(params, [np.zeros(5)], state, t, cfg)
    assert np.array_equal(params[0], w)


def test_plateau_halves_after_patience():
    s = T.PlateauScheduler(1e-3, 0.5, 15)
    s.step(1.0)
    lrs = [s.step(1.0) for _ in range(15)]
    assert lrs[:14] == [1e-3] * 14 and lrs[14] == 5e-4


def test_plateau_improvement_resets_counter():
    s = T.PlateauScheduler(1e-3, 0.5, 15)
    s.step(1.0)
    for _ in range(13):
        s.step(1.0)
    s.step(0.5)
    assert [s.step(0.5) for _ in range(14)] == [1e-3] * 14
    assert s.firings == 0


def test_plateau_two_firings():
    s = T.PlateauScheduler(1e-3, 0.5, 15)
    s.step(1.0)
    for _ in range(30):
        lr = T.scheduler_step(s, 1.0)
    assert lr == pytest.approx(2.5e-4, abs=0) and s.firings == 2


def test_plateau_threshold_is_strict():
    s = T.PlateauScheduler(1e-3, 0.5, 2, threshold=1e-8)
    s.step(1.0)
    s.step(1.0 - 5e-9)
    s.step(1.0 - 9e-9)
    assert s.firings == 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 3), min_size=1, max_size=80), st.integers(1, 6))
def test_lr_sequence_property(losses, patience):
    s = T.PlateauScheduler(1e-3, 0.5, patience)
    lrs = []
    for x in losses:
        lrs.append(s.step(x))
        assert s.lr == 1e-3 * 0.5 ** s.firings
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


@pytest.mark.parametrize("kw", [dict(lr=0), dict(weight_decay=-1), dict(batch_size=0), dict(plateau_patience=0),
                                dict(beta1=1.0), dict(plateau_factor=1.0), dict(val_fraction=1.0)])
def test_train_config_validation(kw):
    with pytest.raises(ConfigError):
        T.TrainConfig(**kw)


# training loop on a small network ----------------------------------------------

def _small_config(classes=2):
    eeg = M.ModalityConfig(Modality.EEG, 4, 256, (3, 9), 2, feature_maps=8, gru_hidden=4, cbam_reduction=2,
                           window_s=0.25)
    return M.NetConfig((eeg,), num_classes=classes, dropout=0.1)


@pytest.fixture(scope="module")
def small_data():
    ds = dsp.preprocess_dataset(generate_synthetic(SynthSpec(subjects=3, trials=2, windows_per_trial=8,
                                                             seconds=0.25), 3))
    plan = make_folds(ds, "loso", 0)
    train, val = plan.training_fold(ds, 0).split_validation(0.2, RngStream(2))
    return train, val


def _fit(train, val, epochs=4, seed=0, policy=None, **kw):
    model = M.build_model(_small_config(), seed)
    return T.train_model(model, train, val, T.TrainConfig(epochs=epochs, batch_size=8, seed=seed, **kw), policy)


def test_trainlog_one_entry_per_epoch(small_data, tmp_path):
    _, log = _fit(*small_data, epochs=3)
    assert [r.epoch for r in log.epochs] == [0, 1, 2]
    assert all(r.seconds >= 0 and np.isfinite(r.train_loss) for r in log.epochs)
    log.to_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_acc,lr" and len(lines) == 4


def test_training_is_deterministic(small_data):
    policy = AugmentPolicy()
    ma, a = _fit(*small_data, policy=policy)
    mb, b = _fit(*small_data, policy=policy)
    assert a.same_values(b)
    for k, v in ma.state_dict().items():
        assert np.array_equal(mb.state_dict()[k], v)


def test_different_seed_changes_log(small_data):
    _, a = _fit(*small_data, seed=0)
    _, b = _fit(*small_data, seed=1)
    assert not a.same_values(b)


def test_best_checkpoint_selected(small_data):
    train, val = small_data
    model, log = _fit(train, val, epochs=6, lr=3e-3)
    loss, acc, _ = T.evaluate_loss(model, val, 8)
    assert loss == pytest.approx(log.best_val_loss, rel=1e-6)
    assert log.epochs[log.best_epoch].val_loss == log.best_val_loss
    assert acc == log.epochs[log.best_epoch].val_acc
    assert not model.training


def test_overfit_probe():
    ds = dsp.preprocess_dataset(generate_synthetic(SynthSpec(subjects=2, trials=1, windows_per_trial=16,
                                                             seconds=0.25), 5))
    assert len(ds) == 32
    model = M.build_model(_small_config(), 0)
    cfg = T.TrainConfig(epochs=200, batch_size=32, lr=3e-3, weight_decay=0.0)
    params = model.parameters()
    state = T.AdamState.zeros_like([p.data for p in params])
    batch = T.batch_inputs(ds, np.arange(32), model.modalities)
    from uniphynet.nn import functional as F
    model.train()
    for t in range(1, cfg.epochs + 1):
        model.zero_grad()
        loss = F.softmax_cross_entropy(model(batch), ds.labels)
        loss.backward()
        T.adamw_step([p.data for p in params], [p.grad for p in params], state, t, cfg)
        if float(loss.data) < 0.05:
            break
    assert float(loss.data) < 0.05


def test_empty_train_set_rejected(small_data):
    train, val = small_data
    empty = val.subset(np.array([], dtype=int))
    with pytest.raises(ConfigError):
        _fit(empty, val, epochs=1)
    with pytest.raises(ConfigError):
        _fit(train, empty, epochs=1)


def test_non_finite_loss_aborts(small_data):
    train, val = small_data
    bad = {m: np.array(a) for m, a in train.dataset.data.items()}
    bad[Modality.EEG][0, 0, 5] = np.nan
    ds = train.dataset.with_data(bad, True)
    with pytest.raises(T.NonFiniteError, match="epoch 0"):
        _fit(ds, val, epochs=1)


def test_rejects_unknown_training_input(small_data):
    with pytest.raises(TypeError):
        _fit([1, 2, 3], small_data[1], epochs=1)


def test_accepts_plain_dataset(small_data):
    train, val = small_data
    assert isinstance(train.dataset, LabeledDataset)
    _, log = _fit(train.dataset, val, epochs=1)
    assert len(log.epochs) == 1
