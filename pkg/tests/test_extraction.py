"""
Tests for partitioning, the fundamental form, kernel extraction and the
structural checks.
"""

import numpy as np
import pytest

from src.activations import ActivationKind
from src.circuit import CircuitGraph, PortRole, build_crossbar_equilibrium, build_crossbar_feedforward
from src.extraction import (check_network, check_reciprocity, check_stieltjes, extract_circuit, factorize,
                            fundamental_form, nodal_hybrid_matrix, partition_tree_cotree, port_blocks,
                            reduce_to_hybrid, resistive_state)
from src.utils import DegenerateNetworkError, DimensionError, NetlistError, PartitionError


def random_small_graph(rng, max_nodes=6):
    """
    Connected network on at most max_nodes nodes with a resistive spanning
    tree, extra resistors, voltage ports grounded at node 0, a current port
    and one diode of each kernel variable.
    """
    n = int(rng.integers(3, max_nodes + 1))
    graph = CircuitGraph(n)
    for node in range(1, n):
        graph.add_resistor(node, int(rng.integers(0, node)), rng.uniform(0.5, 2.0))
    for _ in range(int(rng.integers(0, 4))):
        tail, head = rng.choice(n, size=2, replace=False)
        graph.add_conductor(int(tail), int(head), rng.uniform(0.5, 2.0))

    driven = [int(node) for node in rng.choice(np.arange(1, n), size=int(rng.integers(1, n)), replace=False)]
    for node in driven:
        graph.add_port(node, 0, PortRole.VOLTAGE_INPUT)
    tail, head = rng.choice(n, size=2, replace=False)
    graph.add_port(int(tail), int(head), PortRole.CURRENT_INPUT)

    # voltage-defined edges must stay a forest, so the reverse diode avoids driven nodes
    free = [node for node in range(1, n) if node not in driven]
    if free:
        graph.add_diode(int(rng.choice(free)), 0, ActivationKind.ideal_reverse())
    tail, head = rng.choice(n, size=2, replace=False)
    graph.add_diode(int(tail), int(head), ActivationKind.ideal_forward())
    return graph


class TestPartition:
    def test_crossbar_tree(self):
        p, q = 2, 2
        graph = build_crossbar_equilibrium(p, q, np.ones((p + 1, q + 1)))
        partition = partition_tree_cotree(graph)
        expected = [graph.index_of(label) for label in ("in0", "in1", "d0", "d1", "g0_0")]
        assert sorted(partition.tree) == sorted(expected)
        assert len(partition.tree) == graph.nodes - 1
        assert set(partition.tree) | set(partition.cotree) == set(range(len(graph.edges)))

    def test_resistive_loop(self):
        graph = CircuitGraph(2)
        graph.add_resistor(0, 1, 1.0)
        graph.add_resistor(1, 0, 2.0)
        partition = partition_tree_cotree(graph)
        assert partition.tree == (0,)
        assert partition.cotree == (1,)

    def test_parallel_voltage_ports(self):
        graph = CircuitGraph(2)
        graph.add_port(1, 0, PortRole.VOLTAGE_INPUT)
        graph.add_port(1, 0, PortRole.VOLTAGE_INPUT)
        with pytest.raises(PartitionError):
            partition_tree_cotree(graph)

    def test_disconnected(self):
        graph = CircuitGraph(3)
        graph.add_resistor(0, 1, 1.0)
        with pytest.raises(PartitionError):
            partition_tree_cotree(graph)

    def test_current_cut(self):
        graph = CircuitGraph(3)
        graph.add_resistor(0, 1, 1.0)
        graph.add_port(2, 1, PortRole.CURRENT_INPUT)
        with pytest.raises(PartitionError):
            partition_tree_cotree(graph)


class TestFundamentalForm:
    def test_single_resistor(self):
        graph = CircuitGraph(2)
        graph.add_port(1, 0, PortRole.VOLTAGE_INPUT)
        graph.add_resistor(1, 0, 4.0)
        form = fundamental_form(graph)
        np.testing.assert_array_equal(np.abs(form.F), [[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_array_equal(form.F, -form.F.T)
        assert form.theta_is_resistance.tolist() == [True]
        assert form.theta.tolist() == [4.0]

    def test_form_is_skew(self, equilibrium_crossbar):
        F = fundamental_form(equilibrium_crossbar).F
        np.testing.assert_array_equal(F, -F.T)

    def test_tellegen_balance(self, equilibrium_circuit, rng):
        """Power delivered by ports and diodes equals power absorbed by the resistors."""
        form = equilibrium_circuit.form
        x = rng.standard_normal(len(form.external))
        w, w_dual = resistive_state(form, x)
        x_dual = equilibrium_circuit.hybrid.matrix @ x
        assert x @ x_dual + w @ w_dual == pytest.approx(0.0, abs=1e-10)

    def test_resistive_state_shape(self, equilibrium_circuit):
        with pytest.raises(DimensionError):
            resistive_state(equilibrium_circuit.form, np.zeros(2))


class TestHybridMatrix:
    def test_voltage_divider_closed_form(self, divider):
        r1, r2 = 2.0, 3.0
        total = r1 + r2
        expected = np.array([[-1.0 / total, -r2 / total], [r2 / total, -r1 * r2 / total]])
        circuit = extract_circuit(divider)
        np.testing.assert_allclose(circuit.hybrid.matrix, expected, atol=1e-14)
        np.testing.assert_allclose(nodal_hybrid_matrix(divider), expected, atol=1e-14)

    def test_zero_diodes(self, divider):
        kernel = extract_circuit(divider).kernel
        assert kernel.n == 0
        assert kernel.m == 2
        np.testing.assert_allclose(kernel.D, -extract_circuit(divider).hybrid.matrix)

    def test_reciprocity_signature(self, equilibrium_circuit):
        hybrid = equilibrium_circuit.hybrid
        holds, violation = check_reciprocity(hybrid.matrix, hybrid.signature)
        assert holds
        assert violation < 1e-12

    def test_singular_resistive_system(self):
        with pytest.raises(DegenerateNetworkError):
            factorize(np.array([[1.0, 1.0], [1.0, 1.0]]))


class TestKernel:
    def test_feedforward_closed_form(self, rng):
        p, q = 3, 2
        G = rng.uniform(0.5, 1.5, size=(p, q))
        ballast = np.array([0.25, 0.75])
        graph = build_crossbar_feedforward(p, q, G, ballast=ballast, output_ports=True)
        kernel = extract_circuit(graph).kernel

        np.testing.assert_allclose(kernel.H, np.diag(G.sum(axis=0) + ballast), atol=1e-12)
        np.testing.assert_allclose(kernel.B[:, :p], -G.T, atol=1e-12)
        np.testing.assert_allclose(kernel.B[:, p:], np.eye(q), atol=1e-12)
        np.testing.assert_allclose(kernel.C[:p], -G, atol=1e-12)
        np.testing.assert_allclose(kernel.C[p:], -np.eye(q), atol=1e-12)
        np.testing.assert_allclose(kernel.D[:p, :p], np.diag(G.sum(axis=1)), atol=1e-12)
        np.testing.assert_allclose(kernel.D[p:], 0.0, atol=1e-12)

    def test_hybrid_split(self, equilibrium_circuit):
        kernel = equilibrium_circuit.kernel
        np.testing.assert_allclose(kernel.hybrid(), equilibrium_circuit.hybrid.matrix)

    def test_monotone(self, equilibrium_circuit):
        passed, h_min, d_min = equilibrium_circuit.kernel.check_monotone()
        assert passed
        assert h_min > 0

    def test_output_port_block_is_zero(self, equilibrium_circuit):
        D11, D22 = port_blocks(equilibrium_circuit.kernel)
        assert D11.shape == (2, 2)
        assert np.all(D11 == 0.0)
        assert check_stieltjes(D22)

    def test_with_graph_reuses_partition(self, equilibrium_crossbar):
        circuit = extract_circuit(equilibrium_crossbar)
        edge = equilibrium_crossbar.index_of("g1_1")
        changed = circuit.with_edge_value(edge, 2.5)
        fresh = extract_circuit(equilibrium_crossbar.with_value(edge, 2.5))
        np.testing.assert_allclose(changed.hybrid.matrix, fresh.hybrid.matrix, atol=1e-13)

    def test_with_graph_rejects_new_topology(self, equilibrium_circuit):
        other = build_crossbar_equilibrium(3, 3, np.ones((4, 4)))
        with pytest.raises(NetlistError):
            equilibrium_circuit.with_graph(other)


class TestChecks:
    def test_reciprocity_failure(self):
        holds, violation = check_reciprocity(np.array([[0.0, 1.0], [1.0, 0.0]]), [-1.0, 1.0])
        assert not holds
        assert violation == 2.0

    def test_reciprocity_shape_mismatch(self):
        with pytest.raises(DimensionError):
            check_reciprocity(np.eye(2), [1.0, 1.0, 1.0])

    def test_stieltjes(self):
        assert check_stieltjes(np.array([[2.0, -1.0], [-1.0, 2.0]]))
        assert not check_stieltjes(np.array([[2.0, 1.0], [1.0, 2.0]]))
        assert not check_stieltjes(np.array([[1.0, -2.0], [-2.0, 1.0]]))
        assert not check_stieltjes(np.array([[2.0, -1.0], [0.0, 2.0]]))

    @pytest.mark.parametrize("seed", range(100))
    def test_random_crossbars_pass(self, seed):
        rng = np.random.default_rng(seed)
        p, q = rng.integers(1, 5, size=2)
        G = rng.uniform(0.1, 10.0, size=(p + 1, q + 1))
        report = check_network(build_crossbar_equilibrium(int(p), int(q), G))
        assert report["passed"], report
        assert report["d11_zero"]["max_abs"] == 0.0

    def test_feedforward_passes(self, feedforward_crossbar):
        report = check_network(feedforward_crossbar)
        assert report["passed"], report
        assert report["stieltjes_H"]["passed"]

    def test_resistor_network_without_diodes(self):
        graph = CircuitGraph(3)
        graph.add_port(1, 0, PortRole.VOLTAGE_INPUT)
        graph.add_port(2, 0, PortRole.VOLTAGE_INPUT)
        graph.add_resistor(1, 2, 1.0)
        graph.add_resistor(1, 0, 2.0)
        graph.add_resistor(2, 0, 4.0)
        report = check_network(graph)
        assert report["passed"], report
        assert report["stieltjes_H"]["skipped"]
        assert "d11_zero" not in report

    def test_nodal_agreement(self, equilibrium_crossbar):
        circuit = extract_circuit(equilibrium_crossbar)
        np.testing.assert_allclose(nodal_hybrid_matrix(equilibrium_crossbar), circuit.hybrid.matrix, atol=1e-12)

    @pytest.mark.parametrize("seed", range(30))
    def test_nodal_agreement_random_graphs(self, seed):
        graph = random_small_graph(np.random.default_rng(seed))
        circuit = extract_circuit(graph)
        nodal = nodal_hybrid_matrix(graph)
        scale = max(1.0, np.abs(nodal).max())
        np.testing.assert_allclose(circuit.hybrid.matrix, nodal, rtol=1e-9, atol=1e-10 * scale)
        assert check_reciprocity(circuit.hybrid.matrix, circuit.hybrid.signature)[0]

    def test_reduce_without_resistors(self):
        graph = CircuitGraph(2)
        graph.add_port(1, 0, PortRole.VOLTAGE_INPUT)
        graph.add_diode(1, 0)
        hybrid = reduce_to_hybrid(fundamental_form(graph))
        np.testing.assert_array_equal(hybrid.matrix, -hybrid.matrix.T)
