"""
equinet

Resistor-diode circuits as monotone operator equilibrium networks. This
package builds crossbar circuits, extracts their kernel behavior, solves
the equilibrium forward pass, computes exact parameter gradients by
hardware linearization and trains cascaded crossbars.

Main Components:
- activations.py: diode and saturation elements, resolvents, linearization
- circuit.py: circuit graphs, crossbar builders and the netlist format
- extraction.py: tree/cotree partition, fundamental form, kernel extraction
- solver.py: forward-backward and Peaceman-Rachford equilibrium solvers
- gradient.py: hardware linearization and reciprocal edge derivatives
- cascade.py: cascaded layers and feedforward ReLU crossbars
- training.py: SGD on crossbar cascades with device noise
- cli.py / server.py: command line and MCP tool server
- utils.py: exceptions, configuration, logging and file helpers

License: MIT
"""

__version__ = "0.1.0"
__description__ = "Resistor-diode equilibrium networks with hardware-linearized gradients"

from .activations import ActivationKind, LinearizedElement, linearize, resolvent
from .cascade import CascadeLayer, CascadeNetwork, compose_cascade, feedforward_relu_layer, realize_weights
from .circuit import CircuitGraph, build_crossbar_equilibrium, build_crossbar_feedforward
from .cli import main
from .extraction import (KernelBehavior, check_network, check_reciprocity, check_stieltjes, extract_circuit,
                         extract_kernel, fundamental_form, partition_tree_cotree, reduce_to_hybrid)
from .gradient import (ParamBinding, finite_difference_gradient, gradient_output_wrt_param, hardware_linearize,
                       reciprocal_edge_derivative)
from .solver import SolveReport, forward_backward, infer, peaceman_rachford
from .training import TrainConfig, TrainingCurve, run_training, sgd_train

__all__ = [
    "main",
    "ActivationKind",
    "LinearizedElement",
    "linearize",
    "resolvent",
    "CircuitGraph",
    "build_crossbar_equilibrium",
    "build_crossbar_feedforward",
    "KernelBehavior",
    "check_network",
    "check_reciprocity",
    "check_stieltjes",
    "extract_circuit",
    "extract_kernel",
    "fundamental_form",
    "partition_tree_cotree",
    "reduce_to_hybrid",
    "SolveReport",
    "forward_backward",
    "infer",
    "peaceman_rachford",
    "ParamBinding",
    "finite_difference_gradient",
    "gradient_output_wrt_param",
    "hardware_linearize",
    "reciprocal_edge_derivative",
    "CascadeLayer",
    "CascadeNetwork",
    "compose_cascade",
    "feedforward_relu_layer",
    "realize_weights",
    "TrainConfig",
    "TrainingCurve",
    "run_training",
    "sgd_train",
]
