import numpy as np
import pytest

from stormnet import tasks
from stormnet.errors import TrainingError
from stormnet.models import ModelSpec, build
from stormnet.rng import Rng
from stormnet.train import (
    TrainConfig, TrainLog, epoch_order, hyperparameter_search, load_checkpoint,
    sample_config, save_checkpoint, train,
)


def _toy_regression(n=64, seed=0):
    rng = Rng(seed)
    x = rng.uniform((n, 4), -1.0, 1.0)
    w = np.array([1.5, -2.0, 0.5, 3.0])
    y = (x @ w)[:, None] + 0.7
    return x, y


def _linear_spec(seed=0):
    return ModelSpec(kind="perceptron", input_shape=(4,), output="linear-scalar", seed=seed)


def test_epoch_order_covers_every_sample_once():
    for epoch in range(4):
        order = epoch_order(123, epoch, 37)
        assert np.array_equal(np.sort(order), np.arange(37))
    assert not np.array_equal(epoch_order(123, 0, 37), epoch_order(123, 1, 37))


def test_zero_epochs_returns_model_unchanged():
    x, y = _toy_regression()
    model = build(_linear_spec())
    before = {k: v.copy() for k, v in model.parameters().items()}
    cfg = TrainConfig(max_epochs=0, loss="mse", seed=1)
    model, log = train(model, x, y, x, y, cfg)
    assert log.rows == []
    assert log.stopping_reason == "max_epochs"
    for k, v in model.parameters().items():
        assert np.array_equal(v, before[k])


def test_training_reduces_loss_and_is_deterministic():
    x, y = _toy_regression()
    cfg = TrainConfig(max_epochs=40, batch_size=8, lr=0.05, optimizer="sgd",
                      loss="mse", seed=7)
    finals = []
    for _ in range(2):
        model, log = train(build(_linear_spec(seed=3)), x, y, x, y, cfg)
        assert log.rows[-1]["train_loss"] < 0.05 * log.rows[0]["train_loss"]
        finals.append({k: v.copy() for k, v in model.parameters().items()})
    for k in finals[0]:
        assert np.array_equal(finals[0][k], finals[1][k])


def test_partial_final_batch_counts_with_true_size():
    x, y = _toy_regression(n=10)
    cfg = TrainConfig(max_epochs=1, batch_size=8, lr=0.0001, optimizer="sgd",
                      loss="mse", seed=2)
    model, log = train(build(_linear_spec()), x, y, x, y, cfg)
    assert len(log.rows) == 1  # 10 samples -> batches of 8 and 2, one epoch


def test_plateau_stopping_fires_before_max_epochs():
    x, y = _toy_regression()
    cfg = TrainConfig(max_epochs=500, batch_size=64, lr=0.1, optimizer="sgd",
                      loss="mse", plateau_epsilon=1e-6, patience=5, seed=4)
    model, log = train(build(_linear_spec()), x, y, x, y, cfg)
    assert log.stopping_reason == "plateau"
    assert len(log.rows) < 500


def test_nonfinite_loss_aborts_with_location():
    x, y = _toy_regression()
    cfg = TrainConfig(max_epochs=50, batch_size=64, lr=1e12, optimizer="sgd",
                      loss="mse", seed=5)
    with np.errstate(over="ignore"), pytest.raises(TrainingError,
                                                   match=r"epoch \d+, batch \d+"):
        train(build(_linear_spec()), x, y, x, y, cfg)


def test_checkpoint_resume_matches_uninterrupted(tiny_dataset):
    td = tasks.TaskData("mlp_eng", "cls", tiny_dataset)
    spec = ModelSpec(kind="mlp", input_shape=(36,), hidden_layers=(16,),
                     dropout_rate=0.2, use_batchnorm=True,
                     output="sigmoid-scalar", seed=11)
    cfg = TrainConfig(max_epochs=10, batch_size=16, lr=1e-3, optimizer="adam",
                      loss="bce", seed=11)
    tx, ty = td.arrays("train")
    vx, vy = td.arrays("val")

    full, full_log = train(build(spec), tx, ty, vx, vy, cfg, metric_fn=td.metric_fn)

    cfg_half = TrainConfig(**{**cfg.__dict__, "max_epochs": 5})
    import os
    import tempfile

    from stormnet.losses_optim import make_optimizer

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ck.bin")
        opt = make_optimizer(cfg.optimizer, cfg.lr)
        half, half_log = train(build(spec), tx, ty, vx, vy, cfg_half,
                               optimizer=opt, metric_fn=td.metric_fn)
        save_checkpoint(path, half, opt, 5, half_log, cfg)
        model, optimizer, next_epoch, log, cfg_loaded = load_checkpoint(path)
        assert next_epoch == 5
        resumed, resumed_log = train(model, tx, ty, vx, vy, cfg_loaded,
                                     optimizer=optimizer, start_epoch=next_epoch,
                                     log=log, metric_fn=td.metric_fn)
    for k, v in full.parameters().items():
        assert np.array_equal(v, resumed.parameters()[k]), k
    for k, v in full.buffers().items():
        assert np.array_equal(v, resumed.buffers()[k]), k
    assert [r["epoch"] for r in resumed_log.rows] == [r["epoch"] for r in full_log.rows]
    for a, b in zip(resumed_log.rows, full_log.rows):
        assert a["train_loss"] == b["train_loss"]
        assert a["val_loss"] == b["val_loss"]


def test_eval_every_epoch_flag_gates_metric():
    x, y = _toy_regression()
    cfg = TrainConfig(max_epochs=4, batch_size=16, lr=0.01, optimizer="sgd",
                      loss="mse", seed=3, eval_every_epoch=False)
    metric = lambda pred, yy: -float(np.mean(np.abs(pred - yy)))
    _, log = train(build(_linear_spec()), x, y, x, y, cfg, metric_fn=metric)
    assert all(np.isnan(r["val_metric"]) for r in log.rows[:-1])
    assert np.isfinite(log.rows[-1]["val_metric"])
    assert all(np.isfinite(r["val_loss"]) for r in log.rows)


def test_train_log_csv_format():
    log = TrainLog(rows=[{"epoch": 0, "train_loss": 0.5, "val_loss": 0.25,
                          "val_metric": 0.9, "seconds": 0.01}])
    text = log.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "epoch,train_loss,val_loss,val_metric,seconds"
    assert lines[1].startswith("0,0.5,0.25,0.9,")


def test_sample_config_draws_from_space():
    space = {"lr": ("loguniform", 1e-4, 1e-2), "width": [8, 16, 32],
             "rate": ("uniform", 0.0, 0.5)}
    cfg = sample_config(space, Rng(3))
    assert 1e-4 <= cfg["lr"] <= 1e-2
    assert cfg["width"] in (8, 16, 32)
    assert 0.0 <= cfg["rate"] < 0.5


def test_search_single_trial_and_determinism():
    x, y = _toy_regression()

    def run_trial(config, trial_seed):
        cfg = TrainConfig(max_epochs=5, batch_size=16, lr=config["lr"],
                          optimizer="sgd", loss="mse", seed=trial_seed)
        model, log = train(build(_linear_spec(seed=trial_seed)), x, y, x, y, cfg)
        return -log.rows[-1]["val_loss"], {"lr": config["lr"]}, model

    space = {"lr": [0.2, 0.05, 0.01]}
    results_a, best_a = hyperparameter_search(space, 1, run_trial, seed=9)
    assert len(results_a) == 1
    assert best_a is not None

    results_b, _ = hyperparameter_search(space, 6, run_trial, seed=9)
    results_c, _ = hyperparameter_search(space, 6, run_trial, seed=9)
    assert results_b == results_c
    metrics = [r["metric"] for r in results_b if r["status"] == "ok"]
    assert results_b[0]["metric"] == max(metrics)
    assert results_b[0]["metric"] >= np.median(metrics)


def test_search_records_failed_trials_and_continues():
    def run_trial(config, trial_seed):
        if config["boom"]:
            raise TrainingError("synthetic failure")
        return 1.0, {}, None

    results, best = hyperparameter_search({"boom": [True, False]}, 8, run_trial, seed=1)
    statuses = {r["status"] for r in results}
    assert statuses == {"ok", "failed"}
    assert all(r["metric"] is None for r in results if r["status"] == "failed")
    assert all(r["status"] == "ok" for r in results[: sum(s == "ok" for s in
               [r["status"] for r in results])])


def test_augment_requires_fn_and_is_deterministic(tiny_dataset):
    td = tasks.TaskData("cnn", "cls", tiny_dataset)
    spec = tasks.default_spec("cnn", "cls", seed=1, overrides={"conv_blocks": [4],
                                                               "dense_head": [8]})
    cfg = TrainConfig(max_epochs=1, batch_size=32, lr=1e-3, loss="bce",
                      augment=True, seed=6)
    tx, ty = td.arrays("train")
    vx, vy = td.arrays("val")
    with pytest.raises(TrainingError, match="augment"):
        train(build(spec), tx, ty, vx, vy, cfg)
    m1, log1 = train(build(spec), tx, ty, vx, vy, cfg, augment_fn=td.augment_fn)
    m2, log2 = train(build(spec), tx, ty, vx, vy, cfg, augment_fn=td.augment_fn)
    assert log1.rows[0]["train_loss"] == log2.rows[0]["train_loss"]
