import importlib
import math

import numpy as np
import pytest

from realmlp import bench
from realmlp.config import preset
from realmlp.dataio import from_arrays, make_split
from realmlp.model import build_model, initialize
from realmlp.preprocess import fit_preprocessor
from realmlp.train import predict, resolve_stop_metric, select_best_epoch, train, validation_metric

from conftest import mixed_data, smooth_regression, xor_data

FAST = dict(epochs=6, hidden_sizes=(16, 16))


def test_best_epoch_rule():
    assert select_best_epoch([0.5, 0.2, 0.2, 0.3]) == 2
    assert select_best_epoch([0.5, 0.2, 0.2, 0.3], "first") == 1
    assert select_best_epoch([1.0]) == 0
    with pytest.raises(ValueError):
        select_best_epoch([])


def test_stop_metric_resolution():
    cfg = preset("td-class")
    assert resolve_stop_metric(cfg, "classification") == "err"
    assert resolve_stop_metric(cfg, "regression") == "rmse"
    with pytest.raises(ValueError):
        resolve_stop_metric(cfg.replace(stop_metric="rmse"), "classification")


def test_deterministic_training():
    data = mixed_data()
    s = make_split(data.n_rows, 0)
    cfg = preset("td-class").replace(**FAST)
    a, ra = train(data, s.train, s.val, cfg, seed=3)
    b, rb = train(data, s.train, s.val, cfg, seed=3)
    for k in a.model.params:
        np.testing.assert_array_equal(a.model.params[k], b.model.params[k])
    assert ra.val_metric == rb.val_metric


def test_no_op_training_keeps_initial_parameters():
    data = mixed_data()
    s = make_split(data.n_rows, 0)
    cfg = preset("td-class").replace(lr=0.0, dropout=0.0, wd=0.0, **FAST)
    tm, _ = train(data, s.train, s.val, cfg, seed=4)
    pre = fit_preprocessor(data, s.train, cfg.max_one_hot)
    ref = build_model(cfg, pre, data.task, data.n_classes)
    x, c = pre.apply(data, s.train)
    initialize(ref, x, c, 4)
    for k in ref.params:
        np.testing.assert_array_equal(tm.model.params[k], ref.params[k])


def test_revert_to_best_epoch():
    data = xor_data(300, noise=0.1)
    s = make_split(data.n_rows, 1)
    cfg = preset("td-class").replace(epochs=12, hidden_sizes=(32, 32))
    tm, rec = train(data, s.train, s.val, cfg, seed=0)
    assert rec.best_epoch == select_best_epoch(rec.val_metric)
    assert rec.best_value == min(rec.val_metric)
    again = validation_metric("err", data.y[s.val], predict(tm, data, s.val))
    assert again == min(rec.val_metric)


def test_stop_at_epoch_matches_snapshot_of_full_run():
    data = mixed_data()
    s = make_split(data.n_rows, 2)
    cfg = preset("td-class").replace(**FAST)
    snap = {}

    def grab(epoch, model):
        if epoch == 3:
            snap.update(model.copy_params())

    train(data, s.train, s.val, cfg, seed=1, epoch_callback=grab)
    tm, rec = train(data, s.train, s.val, cfg, seed=1, stop_at_epoch=3)
    assert rec.best_epoch == 3 and len(rec.val_metric) == 4
    for k in snap:
        np.testing.assert_array_equal(tm.model.params[k], snap[k])


def test_empty_validation_keeps_last_epoch():
    data = mixed_data()
    cfg = preset("td-class").replace(**FAST)
    _, rec = train(data, np.arange(100), np.zeros(0, np.int64), cfg)
    assert rec.best_epoch == cfg.epochs - 1
    assert all(math.isnan(v) for v in rec.val_metric)


def test_probabilities_sum_to_one():
    data = mixed_data()
    s = make_split(data.n_rows, 0)
    tm, _ = train(data, s.train, s.val, preset("td-class").replace(**FAST))
    p = predict(tm, data)
    assert np.max(np.abs(p.sum(axis=1) - 1.0)) <= 1e-12


def test_tds_at_init_is_uniform():
    data = mixed_data()
    s = make_split(data.n_rows, 0)
    tm, _ = train(data, s.train, s.val, preset("tds-class").replace(lr=0.0, epochs=1))
    np.testing.assert_array_equal(predict(tm, data), 0.5)


def test_regression_outputs_clipped_to_training_range():
    data = smooth_regression(200)
    s = make_split(data.n_rows, 0)
    tm, _ = train(data, s.train, s.val, preset("td-reg").replace(**FAST))
    lo, hi = data.y[s.train].min(), data.y[s.train].max()
    assert tm.clip_range == (lo, hi)
    far = from_arrays(np.random.default_rng(0).normal(size=(50, 3)) * 100, np.zeros(50), "regression")
    pred = predict(tm, far)
    assert np.all(pred <= hi) and np.all(pred >= lo)


def test_target_standardizer_uses_train_and_val_only():
    data = smooth_regression(100)
    s = make_split(data.n_rows, 0)
    data.y[s.test] = 1e6  # would dominate the statistics if test rows leaked in
    tm, _ = train(data, s.train, s.val, preset("td-reg").replace(epochs=1, hidden_sizes=(4,)))
    tv = data.y[s.train_val]
    assert tm.standardizer.mean == pytest.approx(tv.mean(), rel=1e-12)
    assert tm.standardizer.std == pytest.approx(tv.std(), rel=1e-12)


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_loss_aborts_and_keeps_best():
    data = smooth_regression(100)
    s = make_split(data.n_rows, 0)
    cfg = preset("tds-reg").replace(lr=1e200, epochs=4, hidden_sizes=(8,), lr_schedule="constant")
    tm, rec = train(data, s.train, s.val, cfg)
    assert rec.aborted
    assert all(np.all(np.isfinite(v)) for v in tm.model.params.values())


def test_epoch_log(tmp_path):
    data = mixed_data()
    s = make_split(data.n_rows, 0)
    _, rec = train(data, s.train, s.val, preset("td-class").replace(**FAST))
    rec.write_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_metric" and len(lines) == FAST["epochs"] + 1
    assert lines[1].split(",")[2] == bench.format_float(rec.val_metric[0])


def test_ce_stop_metric():
    data = mixed_data()
    s = make_split(data.n_rows, 0)
    _, rec = train(data, s.train, s.val, preset("td-class").replace(stop_metric="ce", **FAST))
    assert rec.stop_metric == "ce" and all(v > 0 for v in rec.val_metric)


def test_partial_last_batch_is_used(monkeypatch):
    # 300 training rows = one full batch of 256 plus 44; both batches must update
    data = xor_data(300)
    seen = []
    cfg = preset("tds-class").replace(epochs=1, hidden_sizes=(4,), batch_size=256)
    mod = importlib.import_module("realmlp.train")
    orig = mod.adamw_step

    def spy(params, grads, *a, **k):
        seen.append(1)
        return orig(params, grads, *a, **k)

    monkeypatch.setattr(mod, "adamw_step", spy)
    train(data, np.arange(300), np.zeros(0, np.int64), cfg)
    assert len(seen) == 2
