import numpy as np
import pytest

from qasa.autodiff import Tape, Tensor
from qasa.errors import DimensionError
from qasa.metrics import mae_metric, mse_loss, mse_metric

rng = np.random.default_rng(1)


def test_that_perfect_predictions_have_zero_error():
    values = rng.normal(size=10)
    assert mse_loss(Tensor(values), values).item() == 0.0
    assert mse_metric(values, values) == 0.0
    assert mae_metric(values, values) == 0.0


def test_known_values():
    assert mse_metric([0.0, 0.0], [1.0, -1.0]) == 1.0
    assert mse_loss(Tensor([0.0, 0.0]), [1.0, -1.0]).item() == 1.0
    assert mae_metric([0.0], [3.0]) == 3.0
    assert mae_metric([1.0, 2.0], [2.0, 0.0]) == 1.5


@pytest.mark.parametrize("seed", range(5))
def test_that_mae_is_bounded_by_the_largest_error(seed):
    rng = np.random.default_rng(seed)
    pred, target = rng.normal(size=20), rng.normal(size=20)
    mae = mae_metric(pred, target)
    assert 0.0 <= mae <= np.max(np.abs(pred - target))
    assert mse_metric(pred, target) >= 0.0


def test_that_the_loss_gradient_is_the_scaled_error():
    pred, target = Tensor(rng.normal(size=7), requires_grad=True), rng.normal(size=7)
    with Tape() as tape:
        loss = mse_loss(pred, target)
    np.testing.assert_allclose(tape.gradient(loss, [pred])[0], 2 * (pred.values - target) / 7)


@pytest.mark.parametrize("pred_shape,target_shape", [((3,), (4,)), ((0,), (0,)), ((2, 2), (2, 2))])
def test_that_mismatched_shapes_raise(pred_shape, target_shape):
    with pytest.raises(DimensionError):
        mse_loss(Tensor(np.zeros(pred_shape)), np.zeros(target_shape))
    with pytest.raises(DimensionError):
        mse_metric(np.zeros(pred_shape), np.zeros(target_shape))
    with pytest.raises(DimensionError):
        mae_metric(np.zeros(pred_shape), np.zeros(target_shape))
