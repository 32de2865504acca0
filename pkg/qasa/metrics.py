import numpy as np

from .autodiff import Tensor, mean_all, mul, sub
from .errors import DimensionError

METRICS_PARAMS_DOC = """pred : array_like
        Predictions, a vector of length `N >= 1`.

    target : array_like
        Targets, a vector of the same length as `pred`."""


def _check_pair(pred_shape, target_shape):
    if pred_shape != target_shape or len(pred_shape) != 1 or pred_shape[0] == 0:
        raise DimensionError(
            f"Predictions of shape {pred_shape} and targets of shape {target_shape} "
            f"must be non-empty vectors of equal length."
        )


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error ``mean((pred - target)**2)`` as a differentiable scalar."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    _check_pair(pred.shape, target.shape)
    error = sub(pred, target)
    return mean_all(mul(error, error))


def mse_metric(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    _check_pair(pred.shape, target.shape)
    return float(np.mean((pred - target) ** 2))


def mae_metric(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    _check_pair(pred.shape, target.shape)
    return float(np.mean(np.abs(pred - target)))


mse_metric.__doc__ = f"""Mean squared error ``mean((pred - target)**2)`` of plain arrays.

    Parameters
    ----------
    {METRICS_PARAMS_DOC}

    Returns
    -------
    float
"""

mae_metric.__doc__ = f"""Mean absolute error ``mean(|pred - target|)``. Evaluation only.

    Parameters
    ----------
    {METRICS_PARAMS_DOC}

    Returns
    -------
    float
"""
