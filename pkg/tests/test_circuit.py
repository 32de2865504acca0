import numpy as np
import pytest

import qasa.circuit
from qasa.autodiff import Tape, Tensor, mul, sum_all
from qasa.circuit import (
    QasaCircuitSpec,
    build_gates,
    forward,
    init_theta,
    jacobians,
    quantum_node,
)
from qasa.errors import ContractViolation, DimensionError
from tests.test_qsim import dense_expectation_z, dense_state

rng = np.random.default_rng(3)


def random_spec(n, n_layers):
    return QasaCircuitSpec(n, n_layers, init_theta(n, n_layers, rng, std=1.0))


@pytest.mark.parametrize("n,n_layers,expected", [(1, 1, 6), (2, 1, 12), (3, 2, 34), (4, 3, 66)])
def test_gate_count(n, n_layers, expected):
    assert len(build_gates(QasaCircuitSpec(n, n_layers))) == expected


def test_that_the_auxiliary_wire_is_only_entangled_and_rotated():
    gates = build_gates(QasaCircuitSpec(3, 1))
    on_auxiliary = [gate for gate in gates if 3 in gate.wires]
    assert [(g.kind, g.control, g.param_index) for g in on_auxiliary] == [
        ("CNOT", 2, None),
        ("RY", None, 6),
    ]


def test_that_theta_defaults_to_zeros_of_the_right_shape():
    spec = QasaCircuitSpec(4, 2)
    assert spec.theta.shape == (2, 9)
    assert spec.num_params == 18
    assert spec.num_wires == 5
    np.testing.assert_array_equal(spec.theta, 0.0)


def test_that_invalid_specs_are_rejected():
    with pytest.raises(ContractViolation):
        QasaCircuitSpec(0, 1)
    with pytest.raises(ContractViolation):
        QasaCircuitSpec(2, 0)
    with pytest.raises(DimensionError):
        QasaCircuitSpec(2, 1, np.zeros((1, 4)))


def test_that_zero_angles_and_inputs_give_unit_expectations():
    np.testing.assert_allclose(forward(QasaCircuitSpec(3, 2), np.zeros(3)), 1.0, atol=1e-12)


@pytest.mark.parametrize("n,n_layers", [(1, 1), (2, 2), (3, 1)])
def test_that_forward_matches_the_dense_oracle(n, n_layers):
    spec = random_spec(n, n_layers)
    h_q = rng.uniform(-np.pi, np.pi, n)

    state = dense_state(build_gates(spec), spec.theta.ravel(), h_q, n + 1)
    expected = [dense_expectation_z(state, wire, n + 1) for wire in range(n)]

    np.testing.assert_allclose(forward(spec, h_q), expected, atol=1e-12)


def test_that_inputs_are_periodic():
    spec = random_spec(3, 2)
    h_q = rng.normal(size=(5, 3))
    np.testing.assert_allclose(forward(spec, h_q + 2 * np.pi), forward(spec, h_q), atol=1e-10)


def test_that_forward_keeps_batch_axes_and_range():
    out = forward(random_spec(2, 2), rng.normal(size=(3, 4, 2)) * 3)
    assert out.shape == (3, 4, 2)
    assert np.all(np.abs(out) <= 1.0 + 1e-12)


def test_that_forward_checks_the_input_width():
    with pytest.raises(DimensionError):
        forward(QasaCircuitSpec(3, 1), np.zeros(4))


def test_that_both_gradient_engines_agree():
    spec = random_spec(3, 2)
    h_q = rng.normal(size=(4, 3))

    d_inputs, d_theta = jacobians(spec, h_q, "adjoint")
    shift_inputs, shift_theta = jacobians(spec, h_q, "parameter_shift")

    assert d_inputs.shape == (4, 3, 3)
    assert d_theta.shape == (4, 3, 14)
    np.testing.assert_allclose(d_inputs, shift_inputs, atol=1e-10)
    np.testing.assert_allclose(d_theta, shift_theta, atol=1e-10)


def test_that_unknown_diff_methods_are_rejected():
    with pytest.raises(ContractViolation):
        jacobians(QasaCircuitSpec(2, 1), np.zeros(2), "backprop")


@pytest.mark.parametrize("diff_method", ["adjoint", "parameter_shift"])
def test_that_the_quantum_node_gradient_matches_finite_differences(diff_method):
    n, n_layers, step = 2, 2, 1e-6
    h_q = Tensor(rng.normal(size=(3, n)), requires_grad=True)
    theta = Tensor(init_theta(n, n_layers, rng, std=1.0), requires_grad=True)
    weights = Tensor(rng.normal(size=(3, n)))

    def loss():
        return sum_all(mul(quantum_node(h_q, theta, n_layers, diff_method), weights))

    with Tape() as tape:
        value = loss()
    grad_h, grad_theta = tape.gradient(value, [h_q, theta])

    for tensor, grad in ((h_q, grad_h), (theta, grad_theta)):
        for idx in np.ndindex(tensor.shape):
            original = tensor.values[idx]
            tensor.values[idx] = original + step
            plus = loss().item()
            tensor.values[idx] = original - step
            minus = loss().item()
            tensor.values[idx] = original
            assert grad[idx] == pytest.approx((plus - minus) / (2 * step), abs=1e-8)


def test_that_the_quantum_node_runs_the_circuit_once_per_call(mocker):
    spy = mocker.spy(qasa.circuit, "forward")
    h_q = Tensor(rng.normal(size=(2, 5, 2)))
    out = quantum_node(h_q, Tensor(np.zeros((1, 5))), 1)
    assert out.shape == (2, 5, 2)
    assert spy.call_count == 1


def test_that_a_single_data_wire_warns_about_the_missing_ring():
    with pytest.warns(UserWarning, match="no entangling ring"):
        QasaCircuitSpec(1, 2)


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_that_a_single_qubit_circuit_measures_the_cosine_of_its_input():
    spec = QasaCircuitSpec(1, 1)
    a = np.linspace(-3, 3, 7)[:, None]
    np.testing.assert_allclose(forward(spec, a)[:, 0], np.cos(a[:, 0]), atol=1e-10)

    d_inputs, _ = jacobians(spec, np.zeros(1))
    assert d_inputs[0, 0] == pytest.approx(0.0, abs=1e-12)
