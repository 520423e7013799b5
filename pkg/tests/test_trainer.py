import math

import numpy as np
import pytest

from amb import tensor as T
from amb.config import AMBConfig
from amb.model import AMBModel
from amb.params import ParameterSet
from amb.pipeline import generate_synthetic, prepare, resolve_vocab
from amb.trainer import (AdamState, EarlyStopState, MissingGradientError, NumericError, adam_step,
                         binary_scores, compute_metrics, evaluate, mae_loss, pearson, round_half_away,
                         sentiment_class, train, write_history)


def test_mae_loss_value_and_grad():
    pred = T.Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True, dtype=np.float64)
    loss = mae_loss(pred, np.array([0.0, 0.0, 0.5]))
    assert loss.item() == pytest.approx(1.0)
    T.backward(loss)
    np.testing.assert_allclose(pred.grad, [1 / 3, -1 / 3, 0.0])
    with pytest.raises(T.DimensionError):
        mae_loss(pred, np.zeros(2))


def scalar_param(value):
    ps = ParameterSet(np.float64)
    ps.add("x", np.array([value]))
    return ps


def test_adam_first_step_moves_by_lr():
    ps = scalar_param(1.0)
    ps["x"].grad = np.array([0.37])
    adam_step(AdamState(lr=0.01), ps)
    assert ps["x"].data[0] == pytest.approx(1.0 - 0.01, abs=1e-9)


def test_adam_minimises_abs_distance():
    ps = scalar_param(0.0)
    state = AdamState(lr=0.1)
    for _ in range(100):
        ps.zero_grad()
        T.backward(T.sum_all(T.absolute(T.sub(ps["x"], T.Tensor(np.array([2.0]))))))
        adam_step(state, ps)
    assert abs(ps["x"].data[0] - 2.0) < 0.15


def test_adam_skips_frozen_and_demands_grads():
    ps = scalar_param(1.0)
    ps.add("y", np.array([5.0]))
    ps.apply_mask({"x": True, "y": False})
    with pytest.raises(MissingGradientError):
        adam_step(AdamState(), ps)
    ps["x"].grad = np.array([1.0])
    state = AdamState()
    adam_step(state, ps)
    assert ps["y"].data[0] == 5.0 and "y" not in state.m


def test_pearson_oracle_and_degenerate():
    corr, degenerate = pearson([1, 2, 3], [1, 2, 4])
    assert abs(corr - 9 / (2 * math.sqrt(21))) < 1e-9 and not degenerate
    corr, degenerate = pearson([0.5, 0.5, 0.5], [1, 2, 3])
    assert corr == 0.0 and degenerate
    report = compute_metrics([1.0, 1.0], [0.0, 2.0])
    assert report.corr == 0.0 and report.corr_degenerate and not math.isnan(report.corr)


def test_rounding_and_class_fixtures():
    np.testing.assert_array_equal(round_half_away([0.5, -0.5, 1.5, -2.5, 0.49, 2.4999]),
                                  [1, -1, 2, -3, 0, 2])
    np.testing.assert_array_equal(sentiment_class([3.4, -3.6, 2.5, -0.5, 0.0]), [3, -3, 3, -1, 0])


def test_binary_conventions():
    pred, gold = [0.0, -0.1, 0.3, -2.0], [0.0, 1.0, 2.0, 0.0]
    acc, f1 = binary_scores(pred, gold)
    assert acc == 0.5  # 0 counts as non-negative
    assert f1 == pytest.approx(2 * 2 / (2 * 2 + 0 + 2))
    acc_nz, _ = binary_scores(pred, gold, exclude_zero=True)
    assert acc_nz == 0.5


def test_compute_metrics_fields():
    r = compute_metrics([0.0, 1.2, -2.6], [0.0, 1.0, -3.0])
    assert r.n == 3 and r.acc7 == 1.0
    assert r.mae == pytest.approx((0.2 + 0.4) / 3)
    with pytest.raises(ValueError):
        compute_metrics([], [])


class Dummy:
    def snapshot(self):
        return {}


def test_early_stopping_patience_semantics():
    s = EarlyStopState(patience=0)
    assert not s.update(1.0, 1, Dummy())
    assert s.update(1.0, 2, Dummy())  # no improvement, patience 0: stop at once
    s = EarlyStopState(patience=2)
    stops = [s.update(v, i, Dummy()) for i, v in enumerate([3.0, 2.0, 2.5, 2.1, 2.2], start=1)]
    assert stops == [False, False, False, False, True]
    assert s.best_epoch == 2 and s.best_loss == 2.0


@pytest.fixture
def small_run():
    config, vocab = resolve_vocab(AMBConfig.toy(max_epochs=3, patience=0, batch_size=4, lr=1e-2))
    data = prepare(generate_synthetic(12, 0, config), vocab, config.max_len)
    return config, data[:8], data[8:]


def test_train_is_reproducible_and_restores_best(small_run, tmp_path):
    config, tr, dv = small_run
    runs = []
    for _ in range(2):
        model = AMBModel(config)
        result = train(config, model, tr, dv)
        runs.append((result, model))
    (r1, m1), (r2, m2) = runs
    assert r1.history == r2.history
    assert all(np.array_equal(m1.params[n].data, m2.params[n].data) for n in m1.params)
    assert evaluate(m1, dv).mae == pytest.approx(r1.best_dev_mae, abs=1e-12)
    assert min(h["dev_mae"] for h in r1.history) == r1.best_dev_mae
    write_history(r1.history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_mae,dev_mae,dev_corr" and len(lines) == len(r1.history) + 1


def test_train_max_steps(small_run):
    config, tr, dv = small_run
    assert train(config, AMBModel(config), tr, dv, max_steps=3).steps == 3


def test_train_reports_non_finite_loss(small_run):
    config, tr, dv = small_run
    model = AMBModel(config)
    model.params["predictor.b"].data[...] = np.nan
    with pytest.raises(NumericError, match="epoch 1, batch 0"):
        train(config, model, tr, dv)
