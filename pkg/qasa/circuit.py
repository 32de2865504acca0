"""The parameterized quantum circuit of the quantum encoder layer.

The circuit acts on `n` data wires plus one auxiliary wire (wire `n`). Each of its
`n_layers` layers applies, in order:

1. ``RX(x_i)`` and ``RZ(x_i)`` on every data wire `i` (the inputs are re-uploaded in
   every layer),
2. ``RY(theta[l, 2i])`` and ``RZ(theta[l, 2i + 1])`` on every data wire `i`,
3. a ring of ``CNOT(i -> (i + 1) mod n)`` for ``i = 0, ..., n - 1``,
4. ``CNOT(n - 1 -> n)`` onto the auxiliary wire,
5. ``RY(theta[l, 2n])`` on the auxiliary wire.

The outputs are the Pauli-Z expectation values of the data wires. The auxiliary wire
is never measured.
"""
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Literal, Optional, Tuple

import numpy as np

from .autodiff import Tensor, custom_node
from .errors import ContractViolation, DimensionError
from .qsim import (
    GateOp,
    adjoint_gradient,
    expectations_z,
    parameter_shift_gradient,
    run_circuit,
)

__all__ = [
    "QasaCircuitSpec",
    "init_theta",
    "build_gates",
    "forward",
    "jacobians",
    "quantum_node",
]

DIFF_METHOD_TYPES = Literal["adjoint", "parameter_shift"]

DIFF_METHODS: Dict[DIFF_METHOD_TYPES, Callable] = {
    "adjoint": adjoint_gradient,
    "parameter_shift": parameter_shift_gradient,
}


@dataclass(frozen=True)
class QasaCircuitSpec:
    """Size and angles of a circuit.

    Parameters
    ----------
    n : int
        Number of data wires. The circuit uses `n + 1` wires.

    n_layers : int
        Number of circuit layers.

    theta : np.ndarray, optional
        Trainable angles of shape `(n_layers, 2 * n + 1)`. Defaults to zeros.
    """

    n: int
    n_layers: int
    theta: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ContractViolation(f"A circuit needs at least one data wire, got n={self.n}.")
        if self.n_layers < 1:
            raise ContractViolation(
                f"A circuit needs at least one layer, got n_layers={self.n_layers}."
            )
        if self.n == 1:
            warnings.warn(
                "A circuit with a single data wire has no entangling ring; "
                "only the CNOT onto the auxiliary wire remains.",
                UserWarning,
            )
        theta = (
            np.zeros(self.param_shape)
            if self.theta is None
            else np.asarray(self.theta, dtype=np.float64)
        )
        if theta.shape != self.param_shape:
            raise DimensionError(
                f"theta has shape {theta.shape}, expected {self.param_shape}."
            )
        object.__setattr__(self, "theta", theta)

    @property
    def num_wires(self) -> int:
        return self.n + 1

    @property
    def param_shape(self) -> Tuple[int, int]:
        return self.n_layers, 2 * self.n + 1

    @property
    def num_params(self) -> int:
        return self.n_layers * (2 * self.n + 1)


def init_theta(n: int, n_layers: int, rng: np.random.Generator, std: float = 0.1) -> np.ndarray:
    """Draw initial angles from a normal distribution with mean 0 and `std`."""
    return rng.normal(0.0, std, size=(n_layers, 2 * n + 1))


@lru_cache(maxsize=None)
def _layout(n: int, n_layers: int) -> Tuple[GateOp, ...]:
    width = 2 * n + 1
    gates = []
    for layer in range(n_layers):
        offset = layer * width
        for wire in range(n):
            gates.append(GateOp("RX", wire, input_index=wire))
            gates.append(GateOp("RZ", wire, input_index=wire))
        for wire in range(n):
            gates.append(GateOp("RY", wire, param_index=offset + 2 * wire))
            gates.append(GateOp("RZ", wire, param_index=offset + 2 * wire + 1))
        for wire in range(n):
            # with a single data wire the ring would target its own control
            if (wire + 1) % n != wire:
                gates.append(GateOp("CNOT", (wire + 1) % n, control=wire))
        gates.append(GateOp("CNOT", n, control=n - 1))
        gates.append(GateOp("RY", n, param_index=offset + 2 * n))
    return tuple(gates)


def build_gates(spec: QasaCircuitSpec) -> Tuple[GateOp, ...]:
    """The gate sequence of `spec` with symbolic input and parameter slots.

    Input slot `i` holds ``x_i``; parameter slot ``l * (2n + 1) + j`` holds
    ``theta[l, j]``.

    Returns
    -------
    tuple of GateOp
        ``n_layers * (5n + 2)`` gates (one CNOT fewer per layer for ``n = 1``).
    """
    return _layout(spec.n, spec.n_layers)


def _check_inputs(spec: QasaCircuitSpec, h_q) -> np.ndarray:
    h_q = np.asarray(h_q, dtype=np.float64)
    if h_q.ndim == 0 or h_q.shape[-1] != spec.n:
        raise DimensionError(
            f"The circuit takes {spec.n} inputs per token, got an array of shape {h_q.shape}."
        )
    return h_q


def forward(spec: QasaCircuitSpec, h_q) -> np.ndarray:
    """Pauli-Z expectation values of the data wires.

    Parameters
    ----------
    spec : QasaCircuitSpec
        The circuit.

    h_q : array_like
        Inputs of shape `(n,)` or `(..., n)`.

    Returns
    -------
    np.ndarray
        Array of the same shape as `h_q` with values in ``[-1, 1]``.
    """
    h_q = _check_inputs(spec, h_q)
    state = run_circuit(build_gates(spec), spec.theta.ravel(), h_q, spec.num_wires)
    return expectations_z(state, list(range(spec.n)))


def jacobians(
    spec: QasaCircuitSpec, h_q, diff_method: DIFF_METHOD_TYPES = "adjoint"
) -> Tuple[np.ndarray, np.ndarray]:
    """Jacobians of :func:`forward` with respect to the inputs and the angles.

    Parameters
    ----------
    spec : QasaCircuitSpec
        The circuit.

    h_q : array_like
        Inputs of shape `(n,)` or `(..., n)`.

    diff_method : {"adjoint", "parameter_shift"}, default "adjoint"
        The gradient engine. Both are exact on a simulator.

    Returns
    -------
    d_inputs : np.ndarray
        Array of shape `(..., n, n)`; entry ``[j, i]`` is the derivative of output `j`
        with respect to input `i`, summed over all layers that upload it.

    d_theta : np.ndarray
        Array of shape `(..., n, n_layers * (2n + 1))` over the flattened angles.
    """
    h_q = _check_inputs(spec, h_q)
    try:
        gradient_fn = DIFF_METHODS[diff_method]
    except KeyError:
        raise ContractViolation(
            f"Unknown diff_method '{diff_method}'. Available options: {', '.join(DIFF_METHODS)}."
        )
    d_theta, d_inputs = gradient_fn(
        build_gates(spec), spec.theta.ravel(), h_q, list(range(spec.n)), spec.num_wires
    )
    return d_inputs, d_theta


def quantum_node(
    h_q: Tensor,
    theta: Tensor,
    n_layers: int,
    diff_method: DIFF_METHOD_TYPES = "adjoint",
) -> Tensor:
    """Evaluate the circuit for every token of `h_q` as a node of the active tape.

    `h_q` has shape `(..., n)`; every leading index is an independent token.
    """
    n = h_q.shape[-1]

    def forward_fn(inputs, angles):
        return forward(QasaCircuitSpec(n, n_layers, angles), inputs)

    def jacobian_fn(inputs, angles):
        d_inputs, d_theta = jacobians(QasaCircuitSpec(n, n_layers, angles), inputs, diff_method)
        return d_inputs, d_theta.reshape(d_theta.shape[:-1] + theta.shape)

    return custom_node(
        [h_q, theta],
        forward_fn,
        jacobian_fn,
        batch_ndim=h_q.ndim - 1,
        shared_inputs=(1,),
        kind="quantum_circuit",
    )
