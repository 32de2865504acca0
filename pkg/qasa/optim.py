"""AdamW with decoupled weight decay, and the two learning rate schedules."""
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Literal, Mapping, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, ContractViolation

if TYPE_CHECKING:
    from .train import TrainConfig

__all__ = [
    "AdamWState",
    "adamw_step",
    "decays",
    "cosine_lr",
    "CosineScheduler",
    "PlateauScheduler",
    "SCHEDULERS",
    "instantiate_scheduler",
]

SCHEDULER_TYPES = Literal["cosine", "plateau"]


def decays(path: str) -> bool:
    """Whether weight decay applies to the parameter at `path`.

    Biases and LayerNorm gains are exempt.
    """
    return not path.endswith((".bias", ".gain"))


@dataclass
class AdamWState:
    """First and second moment estimates per parameter path."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_parameters(cls, params: Mapping[str, np.ndarray]) -> "AdamWState":
        return cls(
            {path: np.zeros_like(p) for path, p in params.items()},
            {path: np.zeros_like(p) for path, p in params.items()},
        )


def adamw_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamWState,
    config: "TrainConfig",
    step_index: int,
    lr: Optional[float] = None,
) -> Tuple[Dict[str, np.ndarray], AdamWState]:
    """One AdamW update with bias-corrected moments and decoupled weight decay.

    For every parameter ``p`` with gradient ``g`` at step ``t``::

        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g**2
        p = p - lr * (m / (1 - beta1**t) / (sqrt(v / (1 - beta2**t)) + eps) + wd * p)

    with ``wd = 0`` for the parameters exempted by :func:`decays`.

    Parameters
    ----------
    params : dict
        Parameter arrays by path.

    grads : dict
        Gradients with the same paths and shapes.

    state : AdamWState
        Moment estimates, see :meth:`AdamWState.for_parameters`.

    config : TrainConfig
        Provides `lr`, `betas`, `eps`, and `weight_decay`.

    step_index : int
        The 1-based step count `t`.

    lr : float, optional
        Learning rate of this step. Defaults to `config.lr`.

    Returns
    -------
    params : dict
        The updated parameters (new arrays).

    state : AdamWState
        The updated moment estimates (new arrays).
    """
    if step_index < 1:
        raise ContractViolation(f"step_index counts from 1, got {step_index}.")
    if set(params) != set(grads) or set(params) != set(state.m) or set(params) != set(state.v):
        raise ContractViolation("Parameters, gradients, and optimizer state must have the same paths.")

    beta1, beta2 = config.betas
    lr = config.lr if lr is None else lr
    correction1, correction2 = 1.0 - beta1**step_index, 1.0 - beta2**step_index

    new_params, new_state = {}, AdamWState()
    for path, p in params.items():
        g = grads[path]
        if not (g.shape == p.shape == state.m[path].shape == state.v[path].shape):
            raise ContractViolation(
                f"Shape mismatch for '{path}': parameter {p.shape}, gradient {g.shape}, "
                f"state {state.m[path].shape} and {state.v[path].shape}."
            )
        m = beta1 * state.m[path] + (1.0 - beta1) * g
        v = beta2 * state.v[path] + (1.0 - beta2) * g * g
        denominator = np.sqrt(v / correction2) + config.eps
        # zero moments give a zero step even with eps = 0
        step = np.divide(
            m / correction1, denominator, out=np.zeros_like(m), where=denominator > 0
        )
        if decays(path):
            step = step + config.weight_decay * p
        new_params[path] = p - lr * step
        new_state.m[path], new_state.v[path] = m, v
    return new_params, new_state


def cosine_lr(epoch: int, total_epochs: int, lr_max: float, lr_min: float = 0.0) -> float:
    """``lr_min + (lr_max - lr_min) * (1 + cos(pi * epoch / total_epochs)) / 2``."""
    if total_epochs < 1:
        raise ContractViolation(f"total_epochs must be positive, got {total_epochs}.")
    if not 0 <= epoch <= total_epochs:
        raise ContractViolation(f"epoch {epoch} lies outside [0, {total_epochs}].")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * epoch / total_epochs))


class CosineScheduler:
    """Cosine annealing from `lr_max` at epoch 0 to `lr_min` at `total_epochs`."""

    def __init__(self, lr_max: float, total_epochs: int, lr_min: float = 0.0):
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.total_epochs = total_epochs

    def lr(self, epoch: int) -> float:
        return cosine_lr(epoch, self.total_epochs, self.lr_max, self.lr_min)

    def observe(self, val_mse: float):
        pass


class PlateauScheduler:
    """Multiply the learning rate by `factor` once the validation MSE has not improved
    for more than `patience` epochs.

    Parameters
    ----------
    lr : float
        Initial learning rate.

    factor : float, default 0.5
        Reduction factor, in ``(0, 1)``.

    patience : int, default 5
        Epochs without improvement that are tolerated before a reduction.

    lr_min : float, default 0.0
        Lower bound of the learning rate.
    """

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 5, lr_min: float = 0.0):
        if not 0 < factor < 1:
            raise ConfigurationError(
                f"The plateau factor must lie in (0, 1), got {factor}.",
                field="train.plateau_factor",
            )
        self.current = lr
        self.factor = factor
        self.patience = patience
        self.lr_min = lr_min
        self.best = math.inf
        self.bad_epochs = 0

    def lr(self, epoch: int) -> float:
        return self.current

    def observe(self, val_mse: float):
        if val_mse < self.best:
            self.best = val_mse
            self.bad_epochs = 0
            return
        self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.current = max(self.current * self.factor, self.lr_min)
            self.bad_epochs = 0


SCHEDULERS: Dict[SCHEDULER_TYPES, type] = {
    "cosine": CosineScheduler,
    "plateau": PlateauScheduler,
}


def instantiate_scheduler(config: "TrainConfig"):
    """Create the learning rate schedule selected by `config.scheduler`."""
    if config.scheduler not in SCHEDULERS:
        raise ConfigurationError(
            f"Unknown scheduler '{config.scheduler}'. Available options: {', '.join(SCHEDULERS)}.",
            field="train.scheduler",
        )
    if config.scheduler == "plateau":
        return PlateauScheduler(
            config.lr, config.plateau_factor, config.plateau_patience, config.lr_min
        )
    return CosineScheduler(config.lr, config.epochs, config.lr_min)
