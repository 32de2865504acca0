import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from qasa.data import (
    TASK_NAMES,
    SeriesSpec,
    SeriesStandardizer,
    dataset_frame,
    generate,
    make_datasets,
    series_frame,
    split_and_standardize,
    window,
    write_csv,
)
from qasa.errors import ConfigurationError, ContractViolation


def test_that_the_damped_oscillator_matches_its_closed_form():
    series = generate(SeriesSpec(length=2050))
    t = np.arange(2050) * 0.1
    assert series[0] == 1.0
    np.testing.assert_allclose(series, np.exp(-0.1 * t) * np.cos(2.0 * t), atol=1e-12)


def test_that_task_parameters_can_be_overridden():
    series = generate(SeriesSpec(length=5, params={"amplitude": 2.0, "phi": np.pi / 2}))
    assert series[0] == pytest.approx(0.0, abs=1e-15)
    assert series[1] == pytest.approx(-2.0 * np.exp(-0.01) * np.sin(0.2), abs=1e-12)


def test_that_the_logistic_map_iterates():
    series = generate(SeriesSpec("chaotic_logistic", length=3))
    assert series[0] == 0.5
    assert series[1] == pytest.approx(0.975, abs=1e-15)
    assert series[2] == pytest.approx(3.9 * 0.975 * 0.025, abs=1e-15)


def test_that_the_sawtooth_ramps_and_resets():
    series = generate(SeriesSpec("sawtooth", length=41))
    assert series[0] == -1.0
    assert series[20] == 0.0
    assert series[40] == -1.0
    assert np.all(np.diff(series[:40]) > 0)


@pytest.mark.parametrize("task", TASK_NAMES)
def test_that_every_task_generates_finite_reproducible_values(task):
    spec = SeriesSpec(task, length=300, seed=3)
    series = generate(spec)
    assert series.shape == (300,)
    assert series.dtype == np.float64
    assert np.all(np.isfinite(series))
    np.testing.assert_array_equal(generate(spec), series)


@pytest.mark.parametrize("task", ["noisy_damped_oscillator", "arma", "seasonal_trend"])
def test_that_stochastic_tasks_depend_on_the_seed(task):
    assert not np.array_equal(
        generate(SeriesSpec(task, length=50, seed=0)), generate(SeriesSpec(task, length=50, seed=1))
    )


def test_that_invalid_specs_are_rejected():
    with pytest.raises(ConfigurationError) as error:
        generate(SeriesSpec("bogus", length=10))
    assert error.value.field == "data.task"
    with pytest.raises(ContractViolation):
        generate(SeriesSpec(length=0))
    with pytest.raises(ConfigurationError) as error:
        generate(SeriesSpec(length=10, params={"frequency": 1.0}))
    assert error.value.field == "data.params.frequency"
    with pytest.raises(ConfigurationError):
        generate(SeriesSpec(length=10, params={"gamma": np.inf}))
    with pytest.raises(ConfigurationError):
        generate(SeriesSpec(length=10, dt=0.0))


def test_window_on_a_short_series():
    dataset = window([1.0, 2.0, 3.0, 4.0], 2)
    np.testing.assert_array_equal(dataset.inputs, [[1.0, 2.0], [2.0, 3.0]])
    np.testing.assert_array_equal(dataset.targets, [3.0, 4.0])
    assert dataset.model_inputs().shape == (2, 2, 1)


def test_that_window_targets_follow_their_windows():
    series = generate(SeriesSpec(length=52))
    dataset = window(series, 50)
    assert len(dataset) == 2
    for k in range(len(dataset)):
        np.testing.assert_array_equal(dataset.inputs[k], series[k : k + 50])
        assert dataset.targets[k] == series[k + 50]


def test_that_too_short_series_cannot_be_windowed():
    with pytest.raises(ContractViolation):
        window(np.arange(5.0), 5)
    with pytest.raises(ContractViolation):
        window(np.arange(5.0), 0)


def test_that_the_split_is_chronological():
    train, val, _ = split_and_standardize(window(np.arange(12.0) ** 2, 2))
    assert (len(train), len(val)) == (8, 2)
    np.testing.assert_array_equal(train.window_ids, np.arange(8))
    np.testing.assert_array_equal(val.window_ids, [8, 9])


def test_that_training_data_is_standardized_with_its_own_statistics():
    dataset = window(generate(SeriesSpec("seasonal_trend", length=400)), 20)
    train, val, stats = split_and_standardize(dataset)

    values = np.concatenate([train.inputs.ravel(), train.targets])
    assert values.mean() == pytest.approx(0.0, abs=1e-12)
    assert values.std() == pytest.approx(1.0, abs=1e-12)

    expected = (dataset.targets[len(train) :] - stats.mean_) / stats.scale_
    np.testing.assert_allclose(val.targets, expected, atol=1e-12)
    np.testing.assert_allclose(stats.inverse_transform(val.targets), dataset.targets[len(train) :])


def test_that_constant_training_data_is_rejected():
    with pytest.raises(ConfigurationError):
        make_datasets(SeriesSpec(length=100, params={"amplitude": 0.0}), 10)


def test_that_splits_need_enough_windows():
    with pytest.raises(ContractViolation):
        split_and_standardize(window([1.0, 2.0, 3.0], 2))
    with pytest.raises(ContractViolation):
        split_and_standardize(window(np.arange(10.0), 2), ratio=0.1)


def test_that_the_standardizer_must_be_fitted():
    with pytest.raises(NotFittedError):
        SeriesStandardizer().transform([1.0])


def test_series_csv(tmp_path):
    series = generate(SeriesSpec(length=20))
    frame = series_frame(series, dt=0.1)
    assert list(frame.columns) == ["index", "t", "value"]
    assert frame["t"].iloc[3] == pytest.approx(0.3)

    path_a, path_b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(frame, path_a)
    write_csv(series_frame(generate(SeriesSpec(length=20))), path_b)
    assert path_a.read_bytes() == path_b.read_bytes()
    assert path_a.read_text().splitlines()[1].startswith("0,0.0,1.0")


def test_dataset_csv_columns():
    frame = dataset_frame(window(np.arange(6.0), 3))
    assert list(frame.columns) == ["window_id", "pos_0", "pos_1", "pos_2", "target"]
    assert frame["target"].tolist() == [3.0, 4.0, 5.0]
