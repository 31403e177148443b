import numpy as np
import pytest

from relearner import autodiff as ad
from relearner.errors import NonFiniteGradient, SegmentTooShort, ShapeMismatch
from relearner.model import ModelConfig, ReLearnerModel
from relearner.training import (
    AdamW,
    TrainConfig,
    WindowSet,
    clip_global,
    evaluate_mae,
    mae_loss,
    sliding_windows,
    split_and_window,
    split_sizes,
    split_windows,
    train,
)


def test_split_sizes_exact():
    assert split_sizes(100, (0.6, 0.2, 0.2)) == (60, 20, 20)
    assert split_sizes(103, (0.6, 0.2, 0.2)) == (63, 20, 20)


def test_window_count():
    assert len(sliding_windows(np.zeros((10, 2, 1)), 2, 1)) == 8


def test_segment_too_short():
    with pytest.raises(SegmentTooShort):
        sliding_windows(np.zeros((2, 2, 1)), 2, 1)


def test_windows_stay_inside_segments():
    frames = np.arange(100, dtype=float).reshape(100, 1, 1)
    tr, va, te = split_and_window(frames, TrainConfig(history=3, horizon=2, max_epochs=1, patience=1))
    assert tr.y.max() < 60 and va.x.min() >= 60 and va.y.max() < 80 and te.x.min() >= 80
    assert (len(tr), len(va), len(te)) == (56, 16, 16)
    np.testing.assert_array_equal(te.x[0, :, 0, 0], [80, 81, 82])


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(split=(0.5, 0.2, 0.2))
    with pytest.raises(ValueError):
        TrainConfig(patience=20, max_epochs=10)


def test_mae_values_and_gradient():
    assert float(mae_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0])).data) == 0.0
    p = ad.tensor([1.0, 4.0], True)
    loss = mae_loss(p, np.array([1.0, 2.0]))
    assert float(loss.data) == 1.0
    loss.backward()
    np.testing.assert_array_equal(p.grad, [0.0, 0.5])
    with pytest.raises(ShapeMismatch):
        mae_loss(np.zeros(2), np.zeros(3))


def test_mae_gradient_matches_difference(rng):
    y = rng.standard_normal(6)
    p = ad.tensor(y + rng.choice([-1, 1], 6) * rng.uniform(0.1, 1, 6), True)
    mae_loss(p, y).backward()
    h = 1e-7
    num = [(np.mean(np.abs(p.data + h * e - y)) - np.mean(np.abs(p.data - h * e - y))) / (2 * h) for e in np.eye(6)]
    np.testing.assert_allclose(p.grad, num, atol=1e-6)


def test_adamw_zero_gradient_zero_decay():
    p = {"w": ad.tensor([1.5, -2.0])}
    AdamW(0.1, 0.0).step(p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"].data, [1.5, -2.0])


def test_adamw_first_step_by_hand():
    lr, wd, eps = 0.002, 0.01, 1e-8
    p = {"w": ad.tensor([3.0])}
    AdamW(lr, wd, eps=eps).step(p, {"w": np.ones(1)})
    assert p["w"].data[0] == pytest.approx(3.0 - lr * (1 / (1 + eps) + wd * 3.0), abs=1e-15)


def test_adamw_nan_gradient():
    p = {"w": ad.tensor([1.0]), "v": ad.tensor([2.0])}
    with pytest.raises(NonFiniteGradient) as info:
        AdamW().step(p, {"v": np.ones(1), "w": np.array([np.nan])})
    assert "w" in str(info.value)
    assert p["v"].data[0] == 2.0


def test_clip_global_norm():
    g = clip_global({"a": np.array([3.0]), "b": np.array([4.0])}, 1.0)
    np.testing.assert_allclose([g["a"][0], g["b"][0]], [0.6, 0.8])


def _linear_data(rng, n=300):
    x = rng.standard_normal((n, 4, 3, 1))
    y = np.repeat(0.7 * x.mean(axis=1, keepdims=True), 2, axis=1)
    return split_windows(WindowSet(x, y), (0.6, 0.2, 0.2))


def _model(relearner=False, seed=3):
    return ReLearnerModel(ModelConfig(nodes=3, history=4, horizon=2, relearner=relearner, kernels=("adaptive",)), seed=seed)


def test_zero_epochs_returns_initial_model(rng):
    tr, va, _ = _linear_data(rng)
    m = _model()
    before = m.state()
    _, hist = train(m, (tr, va), TrainConfig(max_epochs=0, patience=0, history=4, horizon=2))
    assert hist == []
    for k, v in before.items():
        np.testing.assert_array_equal(m.params[k].data, v)


def test_linear_toy_learns(rng):
    tr, va, _ = _linear_data(rng)
    m = _model()
    untrained = evaluate_mae(m, va)
    train(m, (tr, va), TrainConfig(max_epochs=30, patience=10, history=4, horizon=2, seed=3))
    assert evaluate_mae(m, va) < 0.1 * untrained


def test_best_checkpoint_restored(rng):
    tr, va, _ = _linear_data(rng)
    m = _model()
    _, hist = train(m, (tr, va), TrainConfig(learning_rate=0.05, max_epochs=12, patience=3, history=4, horizon=2))
    assert evaluate_mae(m, va) <= min(h["val_mae"] for h in hist) + 1e-12


def test_histories_are_deterministic(rng):
    tr, va, _ = _linear_data(rng)
    cfg = TrainConfig(max_epochs=3, patience=3, history=4, horizon=2, seed=11)
    a, ha = train(_model(True), (tr, va), cfg)
    b, hb = train(_model(True), (tr, va), cfg)
    assert ha == hb
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)


def test_finetune_phase_one_matches_backbone_only(rng):
    tr, va, _ = _linear_data(rng)
    base_cfg = TrainConfig(max_epochs=4, patience=4, history=4, horizon=2, seed=5)
    ft_cfg = TrainConfig(max_epochs=4, patience=4, history=4, horizon=2, seed=5, regime="finetune")
    _, ha = train(_model(False, 5), (tr, va), base_cfg)
    m, hb = train(_model(True, 5), (tr, va), ft_cfg)
    pre = [h for h in hb if h["phase"] == "pretrain"]
    assert [h["train_loss"] for h in ha] == [h["train_loss"] for h in pre]
    assert [h["val_mae"] for h in ha] == [h["val_mae"] for h in pre]
    assert any(h["phase"] == "finetune" for h in hb)


def test_finetune_frozen_backbone_sub_mode(rng):
    tr, va, _ = _linear_data(rng)
    cfg = TrainConfig(max_epochs=2, patience=2, history=4, horizon=2, regime="finetune", pretrain_epochs=1, freeze_backbone_phase2=True)
    m = _model(True)
    snapshots = {}
    from relearner import training

    original = training._run_phase

    def spy(model, *args):
        out = original(model, *args)
        snapshots[args[5]] = {k: model.params[k].data.copy() for k in model.group(["encoder.", "backbone.", "base_decoder."])}
        return out

    training._run_phase = spy
    try:
        train(m, (tr, va), cfg)
    finally:
        training._run_phase = original
    for k, v in snapshots["pretrain"].items():
        np.testing.assert_array_equal(v, snapshots["finetune"][k])
