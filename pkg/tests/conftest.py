"""
Shared fixtures for the equinet test suite.
"""

import numpy as np
import pytest

from src.activations import ActivationKind
from src.circuit import CircuitGraph, PortRole, build_crossbar_equilibrium, build_crossbar_feedforward
from src.extraction import KernelBehavior, extract_circuit


def scalar_kernel(H=2.0, B=-1.0, C=-1.0, D=0.0, activation=None) -> KernelBehavior:
    """One diode, one input."""
    return KernelBehavior(
        H=np.array([[H]]),
        B=np.array([[B]]),
        C=np.array([[C]]),
        D=np.array([[D]]),
        activations=(activation or ActivationKind.ideal_forward(),),
    )


def relu_kernel(n: int) -> KernelBehavior:
    """H = I, B = -I: the equilibrium is relu(u)."""
    return KernelBehavior(
        H=np.eye(n),
        B=-np.eye(n),
        C=-np.eye(n),
        D=np.zeros((n, n)),
        activations=(ActivationKind.ideal_forward(),) * n,
    )


def voltage_divider(r1: float = 2.0, r2: float = 3.0) -> CircuitGraph:
    """Voltage port across both resistors, current port across r2."""
    graph = CircuitGraph(3)
    graph.add_port(1, 0, PortRole.VOLTAGE_INPUT, "vin")
    graph.add_port(2, 0, PortRole.CURRENT_INPUT, "iout")
    graph.add_resistor(1, 2, r1, "r1")
    graph.add_resistor(2, 0, r2, "r2")
    return graph


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def equilibrium_crossbar(rng):
    G = rng.uniform(0.5, 1.5, size=(3 + 1, 2 + 1))
    return build_crossbar_equilibrium(3, 2, G)


@pytest.fixture
def feedforward_crossbar(rng):
    G = rng.uniform(0.5, 1.5, size=(2, 2))
    return build_crossbar_feedforward(2, 2, G, output_ports=True)


@pytest.fixture
def equilibrium_circuit(equilibrium_crossbar):
    return extract_circuit(equilibrium_crossbar)


@pytest.fixture
def feedforward_circuit(feedforward_crossbar):
    return extract_circuit(feedforward_crossbar)


@pytest.fixture
def divider():
    return voltage_divider()
