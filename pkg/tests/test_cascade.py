"""
Tests for cascades of circuits and the feedforward ReLU layers.
"""

import dataclasses

import numpy as np
import pytest

from src.cascade import (CascadeLayer, CascadeNetwork, cascade_adjoint_gradient, cascade_finite_difference,
                         cascade_gradient, cascade_jacobian, compose_cascade, composed_input,
                         feedforward_network, feedforward_relu_layer, realize_weights)
from src.gradient import ParamBinding
from src.solver import inclusion_residual
from src.utils import DimensionError, NetlistError


def relu(x):
    return np.maximum(x, 0.0)


def positive_network(rng, widths=(3, 4, 3, 2)):
    """Realized layers with positive weights so every diode conducts for positive inputs."""
    layers = [realize_weights(rng.uniform(0.2, 1.0, size=(q, p)))
              for p, q in zip(widths[:-1], widths[1:])]
    return feedforward_network(layers), layers


class TestCascadeLayer:
    def test_inputs_must_cover_kernel(self, feedforward_circuit):
        with pytest.raises(DimensionError):
            CascadeLayer.from_circuit(feedforward_circuit, cascaded_inputs=[0], aux_inputs=[1, 2])
        with pytest.raises(DimensionError):
            CascadeLayer.from_circuit(feedforward_circuit, cascaded_inputs=[0, 1], aux_inputs=[1, 2, 3])

    def test_outputs_in_range(self, feedforward_circuit):
        with pytest.raises(DimensionError):
            CascadeLayer.from_circuit(feedforward_circuit, range(2), range(2, 4), outputs=[4])

    def test_default_outputs(self, feedforward_circuit):
        layer = CascadeLayer.from_circuit(feedforward_circuit, range(2), range(2, 4))
        assert layer.outputs == (0, 1, 2, 3)
        assert layer.width_in == 2
        assert layer.width_out == 4


class TestCascadeNetwork:
    def _layer(self, circuit, outputs=(2, 3)):
        return CascadeLayer.from_circuit(circuit, range(2), range(2, 4), outputs)

    def test_rejects_bad_shapes(self, feedforward_circuit):
        layer = self._layer(feedforward_circuit)
        with pytest.raises(DimensionError):
            CascadeNetwork([], [])
        with pytest.raises(DimensionError):
            CascadeNetwork([layer, layer], [np.ones(2)])
        with pytest.raises(DimensionError):
            CascadeNetwork([layer], [np.ones(3)])
        with pytest.raises(DimensionError):
            CascadeNetwork([layer], [np.ones(2)], input_map=[0])

    def test_rejects_width_mismatch(self, feedforward_circuit):
        first = self._layer(feedforward_circuit, outputs=(2, 3, 3))
        second = self._layer(feedforward_circuit)
        with pytest.raises(DimensionError):
            CascadeNetwork([first, second], [np.ones(2), np.ones(2)])

    def test_rejects_current_into_voltage_inputs(self, feedforward_circuit):
        # input-port outputs are currents, the next layer takes voltages
        first = self._layer(feedforward_circuit, outputs=(0, 1))
        second = self._layer(feedforward_circuit)
        with pytest.raises(DimensionError, match="interface"):
            CascadeNetwork([first, second], [np.ones(2), np.ones(2)])

    def test_evaluate_validates_inputs(self, feedforward_circuit):
        network = CascadeNetwork([self._layer(feedforward_circuit)], [np.ones(2)])
        with pytest.raises(DimensionError):
            network.evaluate([1.0])
        with pytest.raises(DimensionError):
            network.evaluate([1.0, 1.0], aux=[np.zeros(3)])
        with pytest.raises(DimensionError):
            network.evaluate([1.0, 1.0], aux=[None, None])

    def test_aux_offsets(self, feedforward_circuit):
        layer = self._layer(feedforward_circuit)
        network = CascadeNetwork([layer, layer], [np.ones(2), np.ones(2)])
        assert network.aux_offsets() == [2, 4]
        assert len(network) == 2
        assert network.n_outputs == 2


class TestCompose:
    def test_single_layer_is_the_layer_kernel(self, feedforward_circuit):
        layer = CascadeLayer.from_circuit(feedforward_circuit, range(2), range(2, 4))
        composed = compose_cascade(CascadeNetwork([layer], [np.ones(2)]))
        kernel = feedforward_circuit.kernel
        for name in ("H", "B", "C", "D"):
            np.testing.assert_allclose(getattr(composed, name), getattr(kernel, name), atol=1e-14)

    def test_two_layer_blocks(self, rng):
        first = feedforward_relu_layer(2, 3, rng.uniform(0.5, 1.5, size=(2, 3)))
        second = feedforward_relu_layer(3, 2, rng.uniform(0.5, 1.5, size=(3, 2)), sigma_pos=[2.0, 1.0, 0.5])
        network = feedforward_network([first, second])
        composed = compose_cascade(network)
        n1 = first.kernel.n
        l1, l2 = network.layers

        np.testing.assert_array_equal(composed.H[:n1, n1:], 0.0)
        np.testing.assert_allclose(composed.H[:n1, :n1], first.kernel.H, atol=1e-14)
        np.testing.assert_allclose(composed.H[n1:, n1:], second.kernel.H, atol=1e-14)
        B2c = second.kernel.B[:, list(l2.cascaded_inputs)] * network.synapses[1]
        expected = -B2c @ first.kernel.C[list(l1.outputs)]
        np.testing.assert_allclose(composed.H[n1:, :n1], expected, atol=1e-13)

    def test_sequential_solution_solves_composed_kernel(self, rng):
        network, _ = positive_network(rng)
        x = rng.uniform(0.1, 1.0, network.n_inputs)
        aux = [rng.uniform(-0.1, 0.1, len(layer.aux_inputs)) for layer in network.layers]
        state = network.evaluate(x, aux)

        composed = compose_cascade(network)
        z = np.concatenate([report.z_star for report in state.reports])
        u = composed_input(network, x, aux)
        assert inclusion_residual(composed, z, u) < 1e-8
        np.testing.assert_allclose(composed.output(z, u), state.y, atol=1e-9)


class TestCascadeGradients:
    def _bindings(self, network):
        first = network.layers[0]
        conductance = ParamBinding.parse("conductance:g1_2", first.circuit)
        synapse = ParamBinding.parse("synapse:1:3")
        last = network.layers[2]
        offset = dataclasses.replace(ParamBinding.parse(f"input:{last.aux_inputs[1]}"), layer=2)
        resistance = dataclasses.replace(ParamBinding.parse("resistance:g0_0", network.layers[1].circuit), layer=1)
        return [conductance, synapse, offset, resistance]

    def test_jacobian_matches_finite_differences(self, rng):
        network, _ = positive_network(rng)
        x = rng.uniform(0.2, 1.0, network.n_inputs)
        state = network.evaluate(x)
        bindings = self._bindings(network)
        jacobian, kink = cascade_jacobian(network, state, bindings)
        assert not kink
        assert jacobian.shape == (network.n_outputs, len(bindings))
        for column, binding in enumerate(bindings):
            fd = cascade_finite_difference(network, binding, x)
            np.testing.assert_allclose(jacobian[:, column], fd, rtol=1e-5, atol=1e-7)

    def test_single_gradient_matches_jacobian_column(self, rng):
        network, _ = positive_network(rng)
        x = rng.uniform(0.2, 1.0, network.n_inputs)
        state = network.evaluate(x)
        bindings = self._bindings(network)
        jacobian, _ = cascade_jacobian(network, state, bindings)
        np.testing.assert_allclose(cascade_gradient(network, bindings[1], state), jacobian[:, 1], atol=1e-12)

    def test_adjoint_is_transposed_jacobian(self, rng):
        network, _ = positive_network(rng)
        x = rng.uniform(0.2, 1.0, network.n_inputs)
        state = network.evaluate(x)
        bindings = self._bindings(network)
        jacobian, _ = cascade_jacobian(network, state, bindings)
        g = rng.standard_normal(network.n_outputs)
        adjoint = cascade_adjoint_gradient(network, state, g, bindings)
        np.testing.assert_allclose(adjoint, jacobian.T @ g, rtol=1e-8, atol=1e-10)

    def test_binding_layer_out_of_range(self, rng):
        network, _ = positive_network(rng)
        state = network.evaluate(np.full(network.n_inputs, 0.5))
        with pytest.raises(DimensionError):
            cascade_jacobian(network, state, [ParamBinding.parse("synapse:5:0")])

    def test_finite_difference_step_must_be_positive(self, rng):
        network, _ = positive_network(rng)
        with pytest.raises(ValueError):
            cascade_finite_difference(network, ParamBinding.parse("synapse:0:0"), np.ones(3), epsilon=-1.0)


class TestFeedforwardLayer:
    def test_unit_crossbar(self):
        layer = feedforward_relu_layer(2, 2, np.ones((2, 2)))
        np.testing.assert_allclose(layer([1.0, 1.0]), [1.0, 1.0], atol=1e-10)
        np.testing.assert_allclose(layer([-1.0, -0.5]), [0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(layer.weights, np.full((2, 2), 0.5), atol=1e-14)

    def test_rejects_bad_shapes(self):
        with pytest.raises(NetlistError):
            feedforward_relu_layer(2, 2, np.ones((3, 2)))
        with pytest.raises(NetlistError):
            feedforward_relu_layer(2, 2, np.ones((2, 2)), sigma_neg=-1.0)
        with pytest.raises(DimensionError):
            feedforward_relu_layer(2, 2, np.ones((2, 2)), sigma_pos=[1.0, 2.0, 3.0])
        with pytest.raises(DimensionError):
            feedforward_relu_layer(2, 2, np.ones((2, 2)))([1.0])

    def test_realized_weights_are_exact(self):
        W = np.array([[1.0, -1.0], [0.0, 2.0]])
        layer = realize_weights(W)
        assert layer.duplicated
        np.testing.assert_allclose(layer.weights, W, atol=1e-9)
        v = np.array([0.5, 0.2])
        np.testing.assert_allclose(layer(v), relu(W @ v), atol=1e-9)

    def test_realized_crossbar_keeps_positive_conductances(self):
        layer = realize_weights(np.array([[-3.0, 0.0, 2.0]]), scale=0.5, base=0.1)
        graph = layer.circuit.graph
        assert all(graph.edges[i].conductance > 0 for i in graph.resistive_indices)

    def test_realize_rejects_bad_arguments(self):
        with pytest.raises(DimensionError):
            realize_weights(np.ones(3))
        with pytest.raises(ValueError):
            realize_weights(np.ones((2, 2)), margin=0.5)
        with pytest.raises(ValueError):
            realize_weights(np.ones((2, 2)), scale=0.0)

    def test_random_relu_layers(self, rng):
        for _ in range(25):
            W = rng.standard_normal((3, 4))
            v = rng.standard_normal(4)
            np.testing.assert_allclose(realize_weights(W)(v), relu(W @ v), atol=1e-8)

    def test_network_is_a_relu_network(self, rng):
        Ws = [rng.standard_normal((4, 3)), rng.standard_normal((3, 4)), rng.standard_normal((2, 3))]
        network = feedforward_network([realize_weights(W) for W in Ws])
        x = rng.standard_normal(3)
        expected = x
        for W in Ws:
            expected = relu(W @ expected)
        np.testing.assert_allclose(network(x), expected, atol=1e-8)
