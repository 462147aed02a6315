"""
Tests for the equilibrium solvers.
"""

import numpy as np
import pytest

from conftest import relu_kernel, scalar_kernel
from src.activations import ActivationKind
from src.circuit import build_crossbar_feedforward
from src.extraction import KernelBehavior, extract_circuit
from src.solver import (forward_backward, inclusion_residual, infer, peaceman_rachford, solve,
                        solve_on_branches, step_size)
from src.utils import ConvergenceError, DegenerateNetworkError, DimensionError


@pytest.mark.parametrize("solver", ["fb", "pr"])
def test_scalar_kernel(solver):
    report = solve(scalar_kernel(), np.array([3.0]), solver)
    assert report.converged
    assert report.z_star[0] == pytest.approx(1.5, abs=1e-10)
    assert report.y[0] == pytest.approx(1.5, abs=1e-10)
    assert report.solver == solver


@pytest.mark.parametrize("solver", ["fb", "pr"])
def test_blocked_scalar_kernel(solver):
    report = solve(scalar_kernel(), np.array([-3.0]), solver)
    assert report.converged
    assert report.z_star[0] == 0.0


@pytest.mark.parametrize("solver", ["fb", "pr"])
def test_identity_kernel_is_relu(solver, rng):
    u = rng.standard_normal(6)
    report = solve(relu_kernel(6), u, solver)
    assert report.converged
    np.testing.assert_allclose(report.z_star, np.maximum(u, 0.0), atol=1e-10)
    assert report.inclusion_residual < 1e-10


def test_feedforward_unit_crossbar():
    graph = build_crossbar_feedforward(2, 2, np.ones((2, 2)), output_ports=True)
    kernel = extract_circuit(graph).kernel
    report = forward_backward(kernel, np.array([1.0, 1.0, 0.0, 0.0]))
    assert report.converged
    np.testing.assert_allclose(report.z_star, [1.0, 1.0], atol=1e-10)
    np.testing.assert_allclose(report.y[:2], [0.0, 0.0], atol=1e-10)
    np.testing.assert_allclose(report.y[2:], [1.0, 1.0], atol=1e-10)


def test_solvers_agree(equilibrium_circuit, rng):
    kernel = equilibrium_circuit.kernel
    for _ in range(5):
        u = rng.uniform(-1.0, 1.0, kernel.m)
        fb = forward_backward(kernel, u)
        pr = peaceman_rachford(kernel, u)
        assert fb.converged and pr.converged
        np.testing.assert_allclose(fb.z_star, pr.z_star, atol=1e-8)
        np.testing.assert_allclose(fb.y, pr.y, atol=1e-8)


def test_without_polishing(equilibrium_circuit, rng):
    kernel = equilibrium_circuit.kernel
    u = rng.uniform(-1.0, 1.0, kernel.m)
    exact = forward_backward(kernel, u)
    plain = forward_backward(kernel, u, tol=1e-12, polish=False)
    assert plain.converged
    assert not plain.polished
    np.testing.assert_allclose(plain.z_star, exact.z_star, atol=1e-9)


def test_peaceman_rachford_on_singular_kernel():
    kernel = KernelBehavior(
        H=np.array([[1.0, -1.0], [-1.0, 1.0]]),
        B=-np.eye(2),
        C=-np.eye(2),
        D=np.zeros((2, 2)),
        activations=(ActivationKind.ideal_forward(),) * 2,
    )
    report = peaceman_rachford(kernel, np.array([1.0, -1.0]), tol=1e-8)
    assert report.converged
    assert report.inclusion_residual < 1e-6


def test_warm_start(equilibrium_circuit, rng):
    kernel = equilibrium_circuit.kernel
    u = rng.uniform(-1.0, 1.0, kernel.m)
    first = forward_backward(kernel, u)
    second = forward_backward(kernel, u, z0=first.z_star)
    assert second.iterations == 1
    np.testing.assert_allclose(second.z_star, first.z_star, atol=1e-10)


def test_infer_raises_without_convergence(equilibrium_circuit):
    kernel = equilibrium_circuit.kernel
    # output ports first: injected currents and positive input voltages both lift the diodes
    u = np.concatenate([-np.ones(2), np.ones(kernel.m - 2)])
    with pytest.raises(ConvergenceError):
        infer(kernel, u, max_iter=1, polish=False)


def test_infer_returns_output(equilibrium_circuit):
    kernel = equilibrium_circuit.kernel
    u = np.linspace(-1.0, 1.0, kernel.m)
    np.testing.assert_allclose(infer(kernel, u), solve(kernel, u).y)


def test_input_validation():
    kernel = scalar_kernel()
    with pytest.raises(DimensionError):
        forward_backward(kernel, np.zeros(2))
    with pytest.raises(ValueError):
        forward_backward(kernel, np.zeros(1), alpha=-1.0)
    with pytest.raises(ValueError):
        peaceman_rachford(kernel, np.zeros(1), relaxation=1.5)
    with pytest.raises(ValueError):
        solve(kernel, np.zeros(1), "newton")
    with pytest.raises(DimensionError):
        forward_backward(kernel, np.zeros(1), z0=np.zeros(3))


def test_kernel_without_diodes(divider):
    kernel = extract_circuit(divider).kernel
    report = forward_backward(kernel, np.array([1.0, 0.0]))
    assert report.converged
    np.testing.assert_allclose(report.y, -kernel.D @ np.array([1.0, 0.0]))


def test_shockley_reverse_kernel():
    kind = ActivationKind.shockley_reverse()
    kernel = scalar_kernel(H=1.0, B=-1.0, activation=kind)
    report = forward_backward(kernel, np.array([0.5]))
    assert report.converged
    z = report.z_star[0]
    assert z + kind.value(z) == pytest.approx(0.5, abs=1e-9)


def test_zener_saturation():
    kernel = scalar_kernel(H=1.0, B=-1.0, activation=ActivationKind.zener_pair(0.5))
    for solver in ("fb", "pr"):
        report = solve(kernel, np.array([2.0]), solver)
        assert report.converged
        assert report.z_star[0] == pytest.approx(0.5, abs=1e-12)


def test_step_size():
    assert step_size(relu_kernel(3)) == pytest.approx(0.5)
    kernel = scalar_kernel(H=3.0)
    assert step_size(kernel) == pytest.approx(0.25)


def test_inclusion_residual_detects_bad_points():
    kernel = scalar_kernel()
    assert inclusion_residual(kernel, np.array([1.5]), np.array([3.0])) == pytest.approx(0.0, abs=1e-14)
    assert inclusion_residual(kernel, np.array([1.0]), np.array([3.0])) == pytest.approx(1.0)
    assert np.isinf(inclusion_residual(kernel, np.array([-1.0]), np.array([3.0])))


def test_branch_solve():
    kernel = relu_kernel(3)
    rhs = np.array([-1.0, 2.0, -3.0])
    z = solve_on_branches(kernel, rhs, np.array([True, False, True]))
    np.testing.assert_allclose(z, [1.0, 0.0, 3.0])

    singular = KernelBehavior(np.zeros((1, 1)), -np.eye(1), -np.eye(1), np.zeros((1, 1)),
                              (ActivationKind.ideal_forward(),))
    with pytest.raises(DegenerateNetworkError):
        solve_on_branches(singular, np.array([1.0]), np.array([True]))


def test_report_serializes(equilibrium_circuit):
    report = forward_backward(equilibrium_circuit.kernel, np.zeros(equilibrium_circuit.kernel.m))
    data = report.to_dict()
    assert set(data) >= {"z_star", "y", "iterations", "residual", "converged", "solver"}
    assert isinstance(data["z_star"], list)
