"""Synthetic forecasting tasks, sliding windows, and standardization.

Every task generator is a pure function of its :class:`SeriesSpec`. Random draws come
from a PCG64 bit generator seeded with ``SeedSequence([seed, task_index])``, where
`task_index` is the position of the task in :data:`TASK_NAMES`, so each task has its own
reproducible stream for a given seed.
"""
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigurationError, ContractViolation

__all__ = [
    "TASKS",
    "TASK_NAMES",
    "SeriesSpec",
    "WindowedDataset",
    "SeriesStandardizer",
    "generate",
    "window",
    "split_and_standardize",
    "make_datasets",
    "series_frame",
    "dataset_frame",
    "write_csv",
]

TASK_TYPES = Literal[
    "damped_oscillator",
    "noisy_damped_oscillator",
    "arma",
    "chaotic_logistic",
    "piecewise_regime",
    "sawtooth",
    "square_wave",
    "seasonal_trend",
]


def damped_oscillator(
    k: np.ndarray,
    dt: float,
    rng: np.random.Generator,
    amplitude: float,
    gamma: float,
    omega: float,
    phi: float,
) -> np.ndarray:
    t = k * dt
    return amplitude * np.exp(-gamma * t) * np.cos(omega * t + phi)


def noisy_damped_oscillator(
    k: np.ndarray, dt: float, rng: np.random.Generator, noise_std: float, **oscillator
) -> np.ndarray:
    clean = damped_oscillator(k, dt, rng, **oscillator)
    return clean + rng.normal(0.0, noise_std, size=k.shape)


def arma(
    k: np.ndarray,
    dt: float,
    rng: np.random.Generator,
    ar: Tuple[float, float],
    ma: Tuple[float, float],
    sigma: float,
    burn_in: int,
) -> np.ndarray:
    innovations = rng.normal(0.0, sigma, size=k.size + burn_in)
    series = lfilter([1.0, *ma], [1.0, *(-np.asarray(ar))], innovations)
    return series[burn_in:]


def chaotic_logistic(
    k: np.ndarray, dt: float, rng: np.random.Generator, r: float, x0: float
) -> np.ndarray:
    series = np.empty(k.size)
    x = x0
    for i in range(k.size):
        series[i] = x
        x = r * x * (1.0 - x)
    return series


def piecewise_regime(
    k: np.ndarray,
    dt: float,
    rng: np.random.Generator,
    segment_length: int,
    jump: float,
    slope: float,
    amplitude: float,
    period: float,
) -> np.ndarray:
    # even segments: linear trend; odd segments: sinusoid; the level rises by `jump` per switch
    segment, position = np.divmod(k, segment_length)
    trend = slope * position
    wave = amplitude * np.sin(2 * np.pi * position / period)
    return jump * segment + np.where(segment % 2 == 0, trend, wave)


def sawtooth(
    k: np.ndarray, dt: float, rng: np.random.Generator, period: int, amplitude: float
) -> np.ndarray:
    return amplitude * (2.0 * (k % period) / period - 1.0)


def square_wave(
    k: np.ndarray,
    dt: float,
    rng: np.random.Generator,
    period: int,
    amplitude: float,
    duty: float,
) -> np.ndarray:
    return np.where(k % period < duty * period, amplitude, -amplitude)


def seasonal_trend(
    k: np.ndarray,
    dt: float,
    rng: np.random.Generator,
    trend: float,
    periods: Tuple[float, float],
    amplitudes: Tuple[float, float],
    noise_std: float,
) -> np.ndarray:
    series = trend * k.astype(np.float64)
    for period, amplitude in zip(periods, amplitudes):
        series = series + amplitude * np.sin(2 * np.pi * k / period)
    return series + rng.normal(0.0, noise_std, size=k.shape)


_OSCILLATOR_DEFAULTS = {"amplitude": 1.0, "gamma": 0.1, "omega": 2.0, "phi": 0.0}

TASKS: Dict[TASK_TYPES, Tuple[Callable, Dict[str, Any]]] = {
    "damped_oscillator": (damped_oscillator, _OSCILLATOR_DEFAULTS),
    "noisy_damped_oscillator": (
        noisy_damped_oscillator,
        {**_OSCILLATOR_DEFAULTS, "noise_std": 0.05},
    ),
    "arma": (arma, {"ar": (0.75, -0.25), "ma": (0.65, 0.35), "sigma": 1.0, "burn_in": 100}),
    "chaotic_logistic": (chaotic_logistic, {"r": 3.9, "x0": 0.5}),
    "piecewise_regime": (
        piecewise_regime,
        {"segment_length": 100, "jump": 10.0, "slope": 0.05, "amplitude": 1.0, "period": 20.0},
    ),
    "sawtooth": (sawtooth, {"period": 40, "amplitude": 1.0}),
    "square_wave": (square_wave, {"period": 40, "amplitude": 1.0, "duty": 0.5}),
    "seasonal_trend": (
        seasonal_trend,
        {"trend": 0.002, "periods": (50.0, 13.0), "amplitudes": (1.0, 0.3), "noise_std": 0.05},
    ),
}

TASK_NAMES: Tuple[str, ...] = tuple(TASKS)


def _task(name: str) -> Tuple[Callable, Dict[str, Any]]:
    try:
        return TASKS[name]  # type: ignore[index]
    except KeyError:
        raise ConfigurationError(
            f"Unknown task '{name}'. Available options: {', '.join(TASK_NAMES)}.",
            field="data.task",
        )


@dataclass(frozen=True)
class SeriesSpec:
    """Description of a synthetic series.

    Parameters
    ----------
    task : str, default "damped_oscillator"
        One of :data:`TASK_NAMES`.

    length : int, default 2050
        Number of points.

    dt : float, default 0.1
        Time step of the continuous-time tasks.

    params : dict, optional
        Overrides of the task's default parameters.

    seed : int, default 42
        Seed of the task's random stream.
    """

    task: TASK_TYPES = "damped_oscillator"
    length: int = 2050
    dt: float = 0.1
    params: Dict[str, Any] = field(default_factory=dict)
    seed: int = 42

    def settings(self) -> Dict[str, Any]:
        """The task's default parameters merged with :attr:`params`, validated."""
        _, defaults = _task(self.task)
        unknown = [name for name in self.params if name not in defaults]
        if unknown:
            raise ConfigurationError(
                f"Task '{self.task}' has no parameter(s) {unknown}. "
                f"Available: {', '.join(defaults)}.",
                field=f"data.params.{unknown[0]}",
            )
        settings = {**defaults, **self.params}
        for name, value in settings.items():
            if not np.all(np.isfinite(np.asarray(value, dtype=np.float64))):
                raise ConfigurationError(
                    f"Parameter '{name}' of task '{self.task}' must be finite, got {value}.",
                    field=f"data.params.{name}",
                )
        return settings


def generate(spec: SeriesSpec) -> np.ndarray:
    """Generate the series described by `spec`.

    The same `spec` always yields a bit-identical series.

    Parameters
    ----------
    spec : SeriesSpec
        Task, length, time step, parameter overrides, and seed.

    Returns
    -------
    np.ndarray
        Array of shape `(spec.length,)`.
    """
    task_fn, _ = _task(spec.task)
    if spec.length < 1:
        raise ContractViolation(f"A series needs a positive length, got {spec.length}.")
    if not (np.isfinite(spec.dt) and spec.dt > 0):
        raise ConfigurationError(f"dt must be positive and finite, got {spec.dt}.", field="data.dt")

    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([spec.seed, TASK_NAMES.index(spec.task)]))
    )
    series = task_fn(np.arange(spec.length), spec.dt, rng, **spec.settings())
    return np.asarray(series, dtype=np.float64)


@dataclass
class WindowedDataset:
    """Sliding windows over a series and the value following each window.

    Parameters
    ----------
    inputs : np.ndarray
        Array of shape `(M, L)`.

    targets : np.ndarray
        Array of shape `(M,)`.

    first_window : int, default 0
        Index of the first window within the full, unsplit dataset.

    task : str, optional
        Name of the generating task.
    """

    inputs: np.ndarray
    targets: np.ndarray
    first_window: int = 0
    task: Optional[str] = None

    def __len__(self):
        return len(self.targets)

    @property
    def window_size(self) -> int:
        return self.inputs.shape[1]

    @property
    def window_ids(self) -> np.ndarray:
        return np.arange(self.first_window, self.first_window + len(self))

    def model_inputs(self, indices=None) -> np.ndarray:
        """Windows shaped `(M, L, 1)` as the models take them."""
        inputs = self.inputs if indices is None else self.inputs[indices]
        return inputs[..., None]


def window(series, window_size: int, task: Optional[str] = None) -> WindowedDataset:
    """Cut `series` into all windows of length `window_size`.

    Window `k` covers ``series[k : k + window_size]`` and its target is
    ``series[k + window_size]``, giving ``len(series) - window_size`` windows.
    """
    series = np.asarray(series, dtype=np.float64)
    if window_size < 1:
        raise ContractViolation(f"The window size must be positive, got {window_size}.")
    if series.ndim != 1 or series.size < window_size + 1:
        raise ContractViolation(
            f"A series of shape {series.shape} is too short for windows of length {window_size}."
        )
    inputs = sliding_window_view(series[:-1], window_size).copy()
    return WindowedDataset(inputs, series[window_size:].copy(), task=task)


class SeriesStandardizer(BaseEstimator, TransformerMixin):
    """Shift and scale values by a single mean and population standard deviation.

    Unlike :class:`sklearn.preprocessing.StandardScaler`, the statistics are shared by
    all columns and the targets passed to :meth:`fit` enter them as well.

    Parameters
    ----------
    task : str, optional
        Name of the task, used in error messages.
    """

    def __init__(self, task: Optional[str] = None):
        self.task = task

    def fit(self, X, y=None):
        values = np.asarray(X, dtype=np.float64).ravel()
        if y is not None:
            values = np.concatenate([values, np.asarray(y, dtype=np.float64).ravel()])
        self.mean_ = float(values.mean())
        self.scale_ = float(values.std())
        if not self.scale_ > np.finfo(np.float64).eps * max(1.0, abs(self.mean_)):
            raise ConfigurationError(
                f"The training data of task '{self.task}' is constant "
                f"(std={self.scale_}); it cannot be standardized.",
                field="data.task",
            )
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        return (np.asarray(X, dtype=np.float64) - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "scale_")
        return np.asarray(X, dtype=np.float64) * self.scale_ + self.mean_


def split_and_standardize(
    dataset: WindowedDataset, ratio: float = 0.8
) -> Tuple[WindowedDataset, WindowedDataset, SeriesStandardizer]:
    """Split chronologically and standardize both parts with training statistics.

    The first ``floor(ratio * M)`` windows form the training set, the rest the validation
    set. No window is shuffled across the split.

    Returns
    -------
    train : WindowedDataset
    val : WindowedDataset
    stats : SeriesStandardizer
        Fitted on the training inputs and targets jointly.
    """
    if len(dataset) < 2:
        raise ContractViolation(f"Splitting needs at least 2 windows, got {len(dataset)}.")
    if not 0 < ratio < 1:
        raise ContractViolation(f"The train ratio must lie in (0, 1), got {ratio}.")
    n_train = math.floor(ratio * len(dataset))
    if n_train == 0 or n_train == len(dataset):
        raise ContractViolation(
            f"A ratio of {ratio} leaves one split of {len(dataset)} windows empty."
        )

    stats = SeriesStandardizer(task=dataset.task).fit(
        dataset.inputs[:n_train], dataset.targets[:n_train]
    )

    def part(start: int, stop: int) -> WindowedDataset:
        return replace(
            dataset,
            inputs=stats.transform(dataset.inputs[start:stop]),
            targets=stats.transform(dataset.targets[start:stop]),
            first_window=dataset.first_window + start,
        )

    return part(0, n_train), part(n_train, len(dataset)), stats


def make_datasets(
    spec: SeriesSpec, window_size: int, ratio: float = 0.8
) -> Tuple[WindowedDataset, WindowedDataset, SeriesStandardizer]:
    """Generate, window, split, and standardize in one go."""
    return split_and_standardize(window(generate(spec), window_size, task=spec.task), ratio)


def series_frame(series, dt: float = 0.1) -> pd.DataFrame:
    """Series as a table with the columns `index`, `t`, and `value`."""
    series = np.asarray(series, dtype=np.float64)
    index = np.arange(series.size)
    return pd.DataFrame({"index": index, "t": index * dt, "value": series})


def dataset_frame(dataset: WindowedDataset) -> pd.DataFrame:
    """Windows as a table with the columns `window_id`, `pos_0`, ..., `pos_{L-1}`, `target`."""
    frame = pd.DataFrame(
        dataset.inputs, columns=[f"pos_{i}" for i in range(dataset.window_size)]
    )
    frame.insert(0, "window_id", dataset.window_ids)
    frame["target"] = dataset.targets
    return frame


def write_csv(frame: pd.DataFrame, path: Union[str, Path]):
    frame.to_csv(path, index=False, lineterminator="\n")
