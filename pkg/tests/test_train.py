import logging

import numpy as np
import pytest

from qasa.data import SeriesSpec, WindowedDataset, make_datasets
from qasa.errors import ConfigurationError, ContractViolation, NumericalAbort
from qasa.model import Model, instantiate_config
from qasa.train import (
    METRICS_COLUMNS,
    TrainConfig,
    batch_order,
    evaluate,
    metrics_frame,
    train,
    write_metrics_csv,
)

train_set, val_set, stats = make_datasets(SeriesSpec(length=64), 4)


def tiny_model(variant="qasa", seed=0):
    return Model(instantiate_config(variant, "tiny", seed=seed))


def val_rows(history):
    return [row for row in history if row.split == "val"]


def test_that_a_zero_learning_rate_freezes_the_model():
    model = tiny_model()
    before = model.state_dict()

    result = train(model, (train_set, val_set), TrainConfig(lr=0.0, weight_decay=0.0, epochs=3))

    for path, values in model.state_dict().items():
        np.testing.assert_array_equal(values, before[path])
    assert len({row.mse for row in val_rows(result.history)}) == 1
    assert result.best_epoch == 0


@pytest.mark.parametrize("variant", ["transformer", "qasa"])
def test_that_training_is_reproducible(variant, tmp_path):
    config = TrainConfig(lr=1e-3, epochs=2, batch_size=8, record_wall_time=False)
    paths = []
    for run in range(2):
        result = train(tiny_model(variant, seed=4), (train_set, val_set), config)
        paths.append(tmp_path / f"metrics_{run}.csv")
        write_metrics_csv(result.history, paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert paths[0].read_text().splitlines()[0] == ",".join(METRICS_COLUMNS)


def test_that_training_stops_early():
    config = TrainConfig(lr=0.0, weight_decay=0.0, epochs=20, early_stop_patience=2)
    result = train(tiny_model("transformer"), (train_set, val_set), config)
    epochs = [row.epoch for row in val_rows(result.history)]
    assert epochs == [0, 1, 2]


def test_that_the_checkpoint_holds_the_best_epoch():
    config = TrainConfig(lr=3e-3, epochs=6, batch_size=8, early_stop_patience=2)
    result = train(tiny_model(), (train_set, val_set), config)

    history = val_rows(result.history)
    best = min(history, key=lambda row: row.mse)
    assert result.best_epoch == best.epoch == result.checkpoint.info["epoch"]
    assert history[-1].epoch - result.best_epoch <= config.early_stop_patience

    mse, mae = evaluate(result.checkpoint.to_model(), val_set)
    assert mse == pytest.approx(result.best_val_mse, abs=1e-12)
    assert mae == pytest.approx(result.checkpoint.info["val_mae"], abs=1e-12)


def test_that_history_and_predictions_are_complete():
    result = train(tiny_model(), (train_set, val_set), TrainConfig(lr=1e-3, epochs=2, batch_size=8))
    frame = metrics_frame(result.history)
    assert list(frame.columns) == METRICS_COLUMNS
    assert frame["split"].tolist() == ["train", "val", "train", "val"]
    assert (frame["mse"] >= 0).all() and (frame["mae"] >= 0).all()
    assert frame["lr"].tolist() == [1e-3, 1e-3, 5e-4, 5e-4]
    assert len(result.predictions) == 2 * len(val_set)
    assert result.predictions["window_id"].iloc[0] == val_set.first_window


@pytest.mark.parametrize("variant", ["transformer", "qasa_classical", "qasa"])
def test_that_a_constant_target_is_learned(variant):
    rng = np.random.default_rng(0)
    inputs = rng.normal(size=(48, 4))
    dataset = WindowedDataset(inputs, np.full(48, 0.5))
    config = TrainConfig(lr=1e-2, epochs=6, batch_size=8, early_stop_patience=6)

    result = train(tiny_model(variant), (dataset, dataset), config)

    train_rows = [row for row in result.history if row.split == "train"]
    assert train_rows[5].mse < train_rows[0].mse
    assert train_rows[5].train_loss < train_rows[0].train_loss


def test_that_a_non_finite_loss_aborts():
    broken = WindowedDataset(train_set.inputs, np.full(len(train_set), np.nan))
    with pytest.raises(NumericalAbort) as error:
        train(tiny_model("transformer"), (broken, val_set), TrainConfig(epochs=2))
    assert (error.value.epoch, error.value.batch) == (0, 0)


def test_that_training_logs_every_epoch(caplog):
    with caplog.at_level(logging.INFO, logger="qasa.train"):
        train(tiny_model("transformer"), (train_set, val_set), TrainConfig(epochs=2))
    assert sum("val_mse=" in message for message in caplog.messages) == 2


def test_batch_order():
    order = batch_order(42, 3, 10)
    np.testing.assert_array_equal(order, batch_order(42, 3, 10))
    np.testing.assert_array_equal(np.sort(order), np.arange(10))
    assert not np.array_equal(batch_order(42, 4, 10), order)


def test_that_empty_datasets_are_rejected():
    empty = WindowedDataset(np.empty((0, 4)), np.empty(0))
    with pytest.raises(ContractViolation):
        evaluate(tiny_model(), empty)
    with pytest.raises(ContractViolation):
        train(tiny_model(), (train_set, empty), TrainConfig(epochs=1))


def test_that_a_zero_predictor_scores_the_target_variance():
    _, stationary, _ = make_datasets(SeriesSpec("sawtooth", length=2000), 4, ratio=0.5)

    def zeros(x):
        return np.zeros(len(x))

    mse, mae = evaluate(zeros, stationary)
    assert mse == pytest.approx(1.0, abs=0.02)
    assert mae == pytest.approx(np.mean(np.abs(stationary.targets)))


def test_that_raw_units_rescale_the_errors():
    model = tiny_model()
    mse, mae = evaluate(model, val_set)
    raw_mse, raw_mae = evaluate(model, val_set, stats)
    assert raw_mse == pytest.approx(mse * stats.scale_**2, rel=1e-10)
    assert raw_mae == pytest.approx(mae * stats.scale_, rel=1e-10)


@pytest.mark.parametrize(
    "overrides,field",
    [
        ({"lr": float("nan")}, "train.lr"),
        ({"lr": 1e-3, "lr_min": 1e-2}, "train.lr_min"),
        ({"batch_size": 0}, "train.batch_size"),
        ({"plateau_factor": 1.0}, "train.plateau_factor"),
    ],
)
def test_that_the_train_config_is_validated(overrides, field):
    with pytest.raises(ConfigurationError) as error:
        TrainConfig(**overrides).validate()
    assert error.value.field == field


def test_that_a_never_finite_validation_keeps_the_last_epoch():
    broken = WindowedDataset(val_set.inputs, np.full(len(val_set), np.nan))
    config = TrainConfig(lr=1e-3, epochs=2, batch_size=16)

    with pytest.warns(RuntimeWarning, match="never finite"):
        result = train(tiny_model("transformer"), (train_set, broken), config)

    assert result.best_epoch == -1
    assert result.checkpoint.info["epoch"] == 1
    assert np.isnan(result.best_val_mse)
