"""Exact statevector simulation of circuits made of RX, RY, RZ and CNOT gates.

Conventions
-----------
- Rotations are ``R_P(theta) = exp(-i * theta * P / 2)`` for ``P`` in {X, Y, Z}.
- Wire 0 is the least-significant bit of the amplitude index.
- The register starts in ``|0...0>``.

All routines accept a leading batch of inputs: if `inputs` has shape `(..., num_inputs)`,
the amplitudes have shape `(..., 2**num_qubits)` and every result carries the same
leading axes. Parameters (`params`) are shared across the batch.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractViolation, UnsupportedGateError

__all__ = [
    "GateOp",
    "StateVector",
    "apply_gate",
    "run_circuit",
    "expectation_z",
    "expectations_z",
    "adjoint_gradient",
    "parameter_shift_gradient",
]

GATE_TYPES = Literal["RX", "RY", "RZ", "CNOT"]

ROTATIONS = ("RX", "RY", "RZ")

# -i/2 times the Pauli generator, as (m00, m01, m10, m11)
_GENERATORS: Dict[str, Tuple[complex, complex, complex, complex]] = {
    "RX": (0.0, -0.5j, -0.5j, 0.0),
    "RY": (0.0, -0.5, 0.5, 0.0),
    "RZ": (-0.5j, 0.0, 0.0, 0.5j),
}

Angle = Union[float, np.ndarray]


@dataclass(frozen=True)
class GateOp:
    """A single gate of a circuit.

    The rotation angle comes from exactly one source: the literal `angle`, the
    parameter slot `param_index`, or the input slot `input_index`.

    Parameters
    ----------
    kind : {"RX", "RY", "RZ", "CNOT"}
        The gate type.

    target : int
        The wire the gate acts on.

    control : int, optional
        The control wire. Required for (and only allowed with) `"CNOT"`.

    angle : float, default 0.0
        Literal rotation angle, used if no slot is given.

    param_index : int, optional
        Index into the parameter vector.

    input_index : int, optional
        Index into the input vector.
    """

    kind: GATE_TYPES
    target: int
    control: Optional[int] = None
    angle: float = 0.0
    param_index: Optional[int] = None
    input_index: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ROTATIONS + ("CNOT",):
            raise ContractViolation(
                f"Unknown gate kind '{self.kind}'. Available options: {', '.join(ROTATIONS + ('CNOT',))}."
            )
        if self.kind == "CNOT":
            if self.control is None:
                raise ContractViolation("CNOT needs a control wire.")
            if self.control == self.target:
                raise ContractViolation(
                    f"CNOT control and target must differ, got wire {self.target} for both."
                )
        elif self.control is not None:
            raise ContractViolation(f"{self.kind} does not take a control wire.")
        if self.param_index is not None and self.input_index is not None:
            raise ContractViolation("A gate angle comes either from a parameter or an input.")

    @property
    def wires(self) -> Tuple[int, ...]:
        return (self.target,) if self.control is None else (self.control, self.target)

    @property
    def is_parameterized(self) -> bool:
        return self.param_index is not None or self.input_index is not None


@dataclass
class StateVector:
    """Amplitudes of a (batch of) pure state(s) on `num_qubits` wires."""

    num_qubits: int
    amplitudes: np.ndarray

    @classmethod
    def zeros(cls, num_qubits: int, batch_shape: Tuple[int, ...] = ()) -> "StateVector":
        """The ``|0...0>`` state, repeated over `batch_shape`."""
        amplitudes = np.zeros(batch_shape + (2**num_qubits,), dtype=np.complex128)
        amplitudes[..., 0] = 1.0
        return cls(num_qubits=num_qubits, amplitudes=amplitudes)

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        return self.amplitudes.shape[:-1]

    def norm_squared(self) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=-1)


def _check_wire(wire: int, num_qubits: int):
    if not 0 <= wire < num_qubits:
        raise IndexError(f"Wire {wire} is out of range for {num_qubits} qubits.")


def _rotation(kind: str, angle: Angle) -> Tuple:
    half = np.asarray(angle, dtype=np.float64) / 2
    c, s = np.cos(half), np.sin(half)
    if kind == "RX":
        return c, -1j * s, -1j * s, c
    if kind == "RY":
        return c, -s, s, c
    return np.exp(-1j * half), 0.0, 0.0, np.exp(1j * half)


def _apply_matrix(amplitudes: np.ndarray, matrix: Tuple, wire: int, num_qubits: int):
    m00, m01, m10, m11 = (np.asarray(m)[..., None, None] for m in matrix)
    split = amplitudes.reshape(
        amplitudes.shape[:-1] + (2 ** (num_qubits - 1 - wire), 2, 2**wire)
    )
    a0, a1 = split[..., 0, :], split[..., 1, :]
    out = np.stack([m00 * a0 + m01 * a1, m10 * a0 + m11 * a1], axis=-2)
    return out.reshape(out.shape[:-3] + (2**num_qubits,))


@lru_cache(maxsize=None)
def _cnot_permutation(control: int, target: int, num_qubits: int) -> np.ndarray:
    index = np.arange(2**num_qubits)
    permutation = np.where((index >> control) & 1, index ^ (1 << target), index)
    permutation.flags.writeable = False
    return permutation


def _apply(amplitudes: np.ndarray, gate: GateOp, angle: Optional[Angle], num_qubits: int):
    if gate.kind == "CNOT":
        return amplitudes[..., _cnot_permutation(gate.control, gate.target, num_qubits)]
    return _apply_matrix(amplitudes, _rotation(gate.kind, angle), gate.target, num_qubits)


def apply_gate(state: StateVector, gate: GateOp, angle: Optional[Angle] = None) -> StateVector:
    """Apply a single gate and return the new state.

    Parameters
    ----------
    state : StateVector
        The state to transform. It is not modified.

    gate : GateOp
        The gate to apply.

    angle : float or np.ndarray, optional
        Rotation angle (one per batch entry if an array). Defaults to `gate.angle`.
        Ignored for CNOT.

    Returns
    -------
    StateVector
        The transformed state.
    """
    for wire in gate.wires:
        _check_wire(wire, state.num_qubits)
    angle = gate.angle if angle is None else angle
    return StateVector(
        num_qubits=state.num_qubits,
        amplitudes=_apply(state.amplitudes, gate, angle, state.num_qubits),
    )


def _num_qubits(gates: Sequence[GateOp], num_qubits: Optional[int]) -> int:
    required = max((max(gate.wires) + 1 for gate in gates), default=1)
    if num_qubits is None:
        return required
    for gate in gates:
        for wire in gate.wires:
            _check_wire(wire, num_qubits)
    return num_qubits


def _resolve_angles(
    gates: Sequence[GateOp], params: np.ndarray, inputs: np.ndarray
) -> List[Optional[Angle]]:
    angles: List[Optional[Angle]] = []
    for position, gate in enumerate(gates):
        if gate.kind == "CNOT":
            angles.append(None)
        elif gate.param_index is not None:
            if not 0 <= gate.param_index < params.shape[-1]:
                raise ContractViolation(
                    f"Gate {position} reads parameter slot {gate.param_index}, "
                    f"but only {params.shape[-1]} parameters were given."
                )
            angles.append(params[gate.param_index])
        elif gate.input_index is not None:
            if not 0 <= gate.input_index < inputs.shape[-1]:
                raise ContractViolation(
                    f"Gate {position} reads input slot {gate.input_index}, "
                    f"but only {inputs.shape[-1]} inputs were given."
                )
            angles.append(inputs[..., gate.input_index])
        else:
            angles.append(gate.angle)
    return angles


def _simulate(
    gates: Sequence[GateOp],
    angles: Sequence[Optional[Angle]],
    num_qubits: int,
    batch_shape: Tuple[int, ...],
) -> np.ndarray:
    amplitudes = StateVector.zeros(num_qubits, batch_shape).amplitudes
    for gate, angle in zip(gates, angles):
        amplitudes = _apply(amplitudes, gate, angle, num_qubits)
    return amplitudes


def _prepare(params, inputs) -> Tuple[np.ndarray, np.ndarray, Tuple[int, ...]]:
    params = np.asarray(params, dtype=np.float64).reshape(-1)
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 0:
        inputs = inputs.reshape(1)
    return params, inputs, inputs.shape[:-1]


def run_circuit(
    gates: Sequence[GateOp],
    params: Sequence[float] = (),
    inputs: Sequence[float] = (),
    num_qubits: Optional[int] = None,
) -> StateVector:
    """Apply `gates` in order to ``|0...0>``.

    Parameters
    ----------
    gates : list of GateOp
        The circuit.

    params : array_like, optional
        Parameter vector read by gates with a `param_index`.

    inputs : array_like, optional
        Input vector of shape `(num_inputs,)` or `(..., num_inputs)`, read by gates
        with an `input_index`.

    num_qubits : int, optional
        Register size. Defaults to the smallest register containing every wire.

    Returns
    -------
    StateVector
        The final state, with the batch shape of `inputs`.
    """
    num_qubits = _num_qubits(gates, num_qubits)
    params, inputs, batch_shape = _prepare(params, inputs)
    angles = _resolve_angles(gates, params, inputs)
    return StateVector(num_qubits, _simulate(gates, angles, num_qubits, batch_shape))


def _z_expectation(amplitudes: np.ndarray, wire: int, num_qubits: int) -> np.ndarray:
    probabilities = (amplitudes.real**2 + amplitudes.imag**2).reshape(
        amplitudes.shape[:-1] + (2 ** (num_qubits - 1 - wire), 2, 2**wire)
    )
    return probabilities[..., 0, :].sum(axis=(-2, -1)) - probabilities[..., 1, :].sum(
        axis=(-2, -1)
    )


def expectation_z(state: StateVector, wire: int) -> Union[float, np.ndarray]:
    """Expectation value of Pauli-Z on `wire`, in ``[-1, 1]``."""
    _check_wire(wire, state.num_qubits)
    value = _z_expectation(state.amplitudes, wire, state.num_qubits)
    return float(value) if np.ndim(value) == 0 else value


def expectations_z(state: StateVector, wires: Sequence[int]) -> np.ndarray:
    """Pauli-Z expectation values for several wires, stacked along the last axis."""
    for wire in wires:
        _check_wire(wire, state.num_qubits)
    return np.stack(
        [_z_expectation(state.amplitudes, wire, state.num_qubits) for wire in wires],
        axis=-1,
    ) if wires else np.zeros(state.batch_shape + (0,))


def _apply_z(amplitudes: np.ndarray, wire: int, num_qubits: int) -> np.ndarray:
    return _apply_matrix(amplitudes, (1.0, 0.0, 0.0, -1.0), wire, num_qubits)


def _empty_gradients(batch_shape, num_observed, params, inputs):
    return (
        np.zeros(batch_shape + (num_observed, params.shape[-1])),
        np.zeros(batch_shape + (num_observed, inputs.shape[-1])),
    )


def _accumulate(d_params, d_inputs, gate: GateOp, derivative: np.ndarray):
    if gate.param_index is not None:
        d_params[..., gate.param_index] += derivative
    else:
        d_inputs[..., gate.input_index] += derivative


GRADIENT_PARAMS_DOC = """gates : list of GateOp
        The circuit.

    params : array_like
        Parameter vector of shape `(num_params,)`.

    inputs : array_like
        Input vector of shape `(num_inputs,)` or `(..., num_inputs)`.

    observed_wires : list of ints
        Wires whose Pauli-Z expectation values are differentiated.

    num_qubits : int, optional
        Register size. Defaults to the smallest register containing every wire."""

GRADIENT_RETURNS_DOC = """d_params : np.ndarray
        Array of shape `(..., num_observed, num_params)` with the derivatives of each
        observed expectation value with respect to each parameter slot.

    d_inputs : np.ndarray
        Array of shape `(..., num_observed, num_inputs)`. An input read by several gates
        accumulates the contributions of all of them."""


def adjoint_gradient(
    gates: Sequence[GateOp],
    params: Sequence[float],
    inputs: Sequence[float],
    observed_wires: Sequence[int],
    num_qubits: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    num_qubits = _num_qubits(gates, num_qubits)
    for wire in observed_wires:
        _check_wire(wire, num_qubits)
    params, inputs, batch_shape = _prepare(params, inputs)
    angles = _resolve_angles(gates, params, inputs)
    d_params, d_inputs = _empty_gradients(batch_shape, len(observed_wires), params, inputs)
    if not observed_wires:
        return d_params, d_inputs

    phi = _simulate(gates, angles, num_qubits, batch_shape)
    # one adjoint state per observable, stacked on a new leading axis
    lam = np.stack([_apply_z(phi, wire, num_qubits) for wire in observed_wires])

    for gate, angle in zip(reversed(gates), reversed(angles)):
        if gate.kind == "CNOT":
            if gate.is_parameterized:
                raise UnsupportedGateError("CNOT gates cannot carry a parameter.")
            phi = _apply(phi, gate, None, num_qubits)
            lam = _apply(lam, gate, None, num_qubits)
            continue

        inverse = _rotation(gate.kind, -np.asarray(angle))
        phi = _apply_matrix(phi, inverse, gate.target, num_qubits)
        if gate.is_parameterized:
            mu = _apply_matrix(
                _apply_matrix(phi, _GENERATORS[gate.kind], gate.target, num_qubits),
                _rotation(gate.kind, angle),
                gate.target,
                num_qubits,
            )
            derivative = 2.0 * np.real(np.sum(np.conj(lam) * mu, axis=-1))
            _accumulate(d_params, d_inputs, gate, np.moveaxis(derivative, 0, -1))
        lam = _apply_matrix(lam, inverse, gate.target, num_qubits)

    return d_params, d_inputs


adjoint_gradient.__doc__ = f"""Exact derivatives of Pauli-Z expectation values by adjoint differentiation.

    One forward sweep prepares the final state; a reverse sweep then un-computes it gate
    by gate while propagating one adjoint state per observable.

    Parameters
    ----------
    {GRADIENT_PARAMS_DOC}

    Returns
    -------
    {GRADIENT_RETURNS_DOC}
"""


def parameter_shift_gradient(
    gates: Sequence[GateOp],
    params: Sequence[float],
    inputs: Sequence[float],
    observed_wires: Sequence[int],
    num_qubits: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    num_qubits = _num_qubits(gates, num_qubits)
    for wire in observed_wires:
        _check_wire(wire, num_qubits)
    params, inputs, batch_shape = _prepare(params, inputs)
    angles = _resolve_angles(gates, params, inputs)
    d_params, d_inputs = _empty_gradients(batch_shape, len(observed_wires), params, inputs)

    def observe(shifted_angles):
        amplitudes = _simulate(gates, shifted_angles, num_qubits, batch_shape)
        return np.stack(
            [_z_expectation(amplitudes, wire, num_qubits) for wire in observed_wires],
            axis=-1,
        )

    for position, gate in enumerate(gates):
        if not gate.is_parameterized:
            continue
        if gate.kind not in ROTATIONS:
            raise UnsupportedGateError(
                f"The parameter-shift rule needs a Pauli rotation, gate {position} is {gate.kind}."
            )
        shifted = list(angles)
        shifted[position] = angles[position] + np.pi / 2
        plus = observe(shifted)
        shifted[position] = angles[position] - np.pi / 2
        minus = observe(shifted)
        _accumulate(d_params, d_inputs, gate, (plus - minus) / 2)

    return d_params, d_inputs


parameter_shift_gradient.__doc__ = f"""Derivatives of Pauli-Z expectation values by the parameter-shift rule.

    Every occurrence of a slot is shifted by ``+pi/2`` and ``-pi/2`` separately and half
    the difference of the resulting expectation values is added to that slot. This needs
    two circuit evaluations per parameterized gate, but only expectation values, which is
    how gradients are obtained on hardware.

    Parameters
    ----------
    {GRADIENT_PARAMS_DOC}

    Returns
    -------
    {GRADIENT_RETURNS_DOC}
"""
