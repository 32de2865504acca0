"""Training loop: mini-batch AdamW, per-epoch learning rate schedule, early stopping.

Mini-batches are drawn from a permutation that depends only on ``(seed, epoch)``. After
each epoch both splits are evaluated; the model with the lowest validation MSE so far is
kept as a :class:`~qasa.checkpoint.Checkpoint`.
"""
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .autodiff import Tape, Tensor
from .checkpoint import Checkpoint
from .data import SeriesStandardizer, WindowedDataset, write_csv
from .errors import ConfigurationError, ContractViolation, NumericalAbort
from .metrics import mae_metric, mse_loss, mse_metric
from .model import Model
from .optim import SCHEDULER_TYPES, SCHEDULERS, AdamWState, adamw_step, instantiate_scheduler

__all__ = [
    "TrainConfig",
    "EpochMetrics",
    "TrainResult",
    "METRICS_COLUMNS",
    "metrics_frame",
    "write_metrics_csv",
    "predict",
    "evaluate",
    "batch_order",
    "train",
]

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["epoch", "split", "mse", "mae", "lr", "wall_time_s"]

PREDICTIONS_COLUMNS = ["epoch", "window_id", "prediction", "target"]

EVAL_BATCH_SIZE = 256


@dataclass
class TrainConfig:
    """Optimization settings.

    Parameters
    ----------
    lr : float, default 1e-4
        Initial learning rate. Zero is accepted and freezes the parameters.

    weight_decay : float, default 0.01
        Decoupled weight decay, not applied to biases and LayerNorm gains.

    betas : tuple of float, default (0.9, 0.999)
        Decay rates of the moment estimates.

    eps : float, default 1e-8
        Added to the denominator of the update.

    epochs : int, default 45
        Maximum number of epochs.

    batch_size : int, default 32
        Windows per mini-batch.

    scheduler : {"cosine", "plateau"}, default "cosine"
        Learning rate schedule, stepped once per epoch.

    early_stop_patience : int, default 10
        Stop after this many epochs without a new best validation MSE.

    seed : int, default 42
        Seed of the mini-batch order.

    lr_min : float, default 0.0
        Final learning rate of the cosine schedule, lower bound of the plateau schedule.

    plateau_factor : float, default 0.5
        Learning rate reduction factor of the plateau schedule.

    plateau_patience : int, default 5
        Epochs without improvement before the plateau schedule reduces the learning rate.

    record_wall_time : bool, default True
        If False, the `wall_time_s` column is 0.0, making metric files reproducible
        byte for byte.
    """

    lr: float = 1e-4
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 45
    batch_size: int = 32
    scheduler: SCHEDULER_TYPES = "cosine"
    early_stop_patience: int = 10
    seed: int = 42
    lr_min: float = 0.0
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    record_wall_time: bool = True

    def validate(self) -> "TrainConfig":
        def fail(name, message):
            raise ConfigurationError(f"train.{name}: {message}", field=f"train.{name}")

        if not (np.isfinite(self.lr) and self.lr >= 0):
            fail("lr", f"must be a non-negative number, got {self.lr}.")
        if not (np.isfinite(self.lr_min) and 0 <= self.lr_min <= max(self.lr, 0)):
            fail("lr_min", f"must lie in [0, lr], got {self.lr_min}.")
        if not self.weight_decay >= 0:
            fail("weight_decay", f"must be non-negative, got {self.weight_decay}.")
        if len(self.betas) != 2 or not all(0 <= beta < 1 for beta in self.betas):
            fail("betas", f"must be two values in [0, 1), got {self.betas}.")
        if not self.eps >= 0:
            fail("eps", f"must be non-negative, got {self.eps}.")
        for name in ("epochs", "batch_size", "early_stop_patience"):
            if getattr(self, name) < 1:
                fail(name, f"must be positive, got {getattr(self, name)}.")
        if self.scheduler not in SCHEDULERS:
            fail("scheduler", f"unknown scheduler '{self.scheduler}'. Available options: {', '.join(SCHEDULERS)}.")
        if not 0 < self.plateau_factor < 1:
            fail("plateau_factor", f"must lie in (0, 1), got {self.plateau_factor}.")
        if self.plateau_patience < 0:
            fail("plateau_patience", f"must be non-negative, got {self.plateau_patience}.")
        return self

    def to_dict(self) -> Dict[str, Any]:
        raw = asdict(self)
        raw["betas"] = list(self.betas)
        return raw

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigurationError(f"Unknown field 'train.{key}'.", field=f"train.{key}")
        raw = dict(raw)
        if "betas" in raw:
            raw["betas"] = tuple(raw["betas"])
        return cls(**raw).validate()


@dataclass
class EpochMetrics:
    """Metrics of one split after one epoch.

    `train_loss` is the mean mini-batch loss of the epoch; it is only set for the
    ``"train"`` split and is not written to metric files.
    """

    epoch: int
    split: str
    mse: float
    mae: float
    lr: float
    wall_time_s: float
    train_loss: Optional[float] = None


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: List[EpochMetrics]
    predictions: pd.DataFrame
    best_epoch: int

    @property
    def best_val_mse(self) -> float:
        return float(self.checkpoint.info["val_mse"])


def metrics_frame(history: Sequence[EpochMetrics]) -> pd.DataFrame:
    """History as a table with the columns of :data:`METRICS_COLUMNS`."""
    return pd.DataFrame(
        [[getattr(row, name) for name in METRICS_COLUMNS] for row in history],
        columns=METRICS_COLUMNS,
    )


def write_metrics_csv(history: Sequence[EpochMetrics], path: Union[str, Path]):
    write_csv(metrics_frame(history), path)


def predict(model: Callable, inputs: np.ndarray, batch_size: int = EVAL_BATCH_SIZE) -> np.ndarray:
    """Predictions for windows of shape `(M, L)`, computed in batches without a tape.

    `model` is a :class:`~qasa.model.Model` or any callable mapping windows of shape
    `(B, L, 1)` to `B` predictions.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    predictions = []
    for start in range(0, len(inputs), batch_size):
        out = model(inputs[start : start + batch_size, :, None])
        predictions.append(out.values if isinstance(out, Tensor) else np.asarray(out, dtype=np.float64))
    return np.concatenate(predictions) if predictions else np.empty(0)


def evaluate(
    model: Callable, dataset: WindowedDataset, stats: Optional[SeriesStandardizer] = None
) -> Tuple[float, float]:
    """MSE and MAE of `model` over all windows of `dataset`.

    Parameters
    ----------
    model : Model or callable
        See :func:`predict`. Its parameters are not modified.

    dataset : WindowedDataset
        A non-empty, standardized dataset.

    stats : SeriesStandardizer, optional
        If given, predictions and targets are mapped back to the units of the raw series
        before the metrics are computed.

    Returns
    -------
    mse : float
    mae : float
    """
    if len(dataset) == 0:
        raise ContractViolation("Cannot evaluate on an empty dataset.")
    predictions, targets = predict(model, dataset.inputs), dataset.targets
    if stats is not None:
        predictions, targets = stats.inverse_transform(predictions), stats.inverse_transform(targets)
    return mse_metric(predictions, targets), mae_metric(predictions, targets)


def batch_order(seed: int, epoch: int, size: int) -> np.ndarray:
    """The permutation of `size` training windows used in `epoch`."""
    return np.random.default_rng([seed, epoch]).permutation(size)


def _train_epoch(
    model: Model,
    dataset: WindowedDataset,
    config: TrainConfig,
    epoch: int,
    lr: float,
    state: AdamWState,
    step: int,
) -> Tuple[List[float], AdamWState, int]:
    named = model.named_parameters()
    paths = [path for path, _ in named]
    tensors = [tensor for _, tensor in named]
    order = batch_order(config.seed, epoch, len(dataset))
    losses = []
    for batch, start in enumerate(range(0, len(dataset), config.batch_size)):
        indices = order[start : start + config.batch_size]
        with Tape() as tape:
            loss = mse_loss(model(dataset.model_inputs(indices)), dataset.targets[indices])
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalAbort(epoch, batch, value)

        grads = dict(zip(paths, tape.gradient(loss, tensors)))
        step += 1
        updated, state = adamw_step(
            {path: t.values for path, t in zip(paths, tensors)}, grads, state, config, step, lr
        )
        for path, tensor in zip(paths, tensors):
            tensor.values = updated[path]
        losses.append(value)
    return losses, state, step


def train(
    model: Model,
    datasets: Tuple[WindowedDataset, WindowedDataset],
    config: Optional[TrainConfig] = None,
) -> TrainResult:
    """Train `model` in place and keep the parameters with the best validation MSE.

    Parameters
    ----------
    model : Model
        The model to train. After training it holds the parameters of the last epoch.

    datasets : tuple of WindowedDataset
        The standardized training and validation sets.

    config : TrainConfig, optional
        Optimization settings. Defaults to ``TrainConfig()``.

    Returns
    -------
    TrainResult
        The checkpoint of the best epoch, one :class:`EpochMetrics` per split and epoch,
        and the validation predictions of every epoch.

    Raises
    ------
    NumericalAbort
        If a mini-batch loss is not finite.
    """
    config = (config or TrainConfig()).validate()
    train_set, val_set = datasets
    if len(train_set) == 0 or len(val_set) == 0:
        raise ContractViolation("Training needs non-empty training and validation sets.")

    scheduler = instantiate_scheduler(config)
    state = AdamWState.for_parameters(model.state_dict())
    step = 0
    history: List[EpochMetrics] = []
    predictions: List[pd.DataFrame] = []
    best_val, best_epoch, checkpoint = np.inf, -1, None

    logger.info(
        "Training %s (%d parameters) on %d windows, validating on %d.",
        model.config.variant,
        model.num_parameters(),
        len(train_set),
        len(val_set),
    )
    for epoch in range(config.epochs):
        lr = scheduler.lr(epoch)
        started = time.perf_counter()
        losses, state, step = _train_epoch(model, train_set, config, epoch, lr, state, step)

        train_mse, train_mae = evaluate(model, train_set)
        val_predictions = predict(model, val_set.inputs)
        val_mse = mse_metric(val_predictions, val_set.targets)
        val_mae = mae_metric(val_predictions, val_set.targets)
        elapsed = time.perf_counter() - started if config.record_wall_time else 0.0

        history.append(
            EpochMetrics(epoch, "train", train_mse, train_mae, lr, elapsed, float(np.mean(losses)))
        )
        history.append(EpochMetrics(epoch, "val", val_mse, val_mae, lr, elapsed))
        predictions.append(
            pd.DataFrame(
                {
                    "epoch": epoch,
                    "window_id": val_set.window_ids,
                    "prediction": val_predictions,
                    "target": val_set.targets,
                },
                columns=PREDICTIONS_COLUMNS,
            )
        )
        logger.info(
            "epoch %d: train_mse=%.6f val_mse=%.6f val_mae=%.6f lr=%.3g",
            epoch,
            train_mse,
            val_mse,
            val_mae,
            lr,
        )

        scheduler.observe(val_mse)
        if val_mse < best_val:
            best_val, best_epoch = val_mse, epoch
            checkpoint = Checkpoint.from_model(model, epoch=epoch, val_mse=val_mse, val_mae=val_mae)
            logger.debug("New best validation MSE %.6f in epoch %d.", val_mse, epoch)
        elif epoch - best_epoch >= config.early_stop_patience:
            logger.info(
                "Stopping early after epoch %d; the best validation MSE was reached in epoch %d.",
                epoch,
                best_epoch,
            )
            break

    if checkpoint is None:
        warnings.warn(
            "The validation MSE was never finite; keeping the parameters of the last epoch.",
            RuntimeWarning,
        )
        checkpoint = Checkpoint.from_model(
            model, epoch=history[-1].epoch, val_mse=math.nan, val_mae=math.nan
        )
    return TrainResult(checkpoint, history, pd.concat(predictions, ignore_index=True), best_epoch)
