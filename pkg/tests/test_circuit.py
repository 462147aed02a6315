"""
Tests for circuit graphs, crossbar builders and the netlist format.
"""

import json

import numpy as np
import pytest

from src.activations import ActivationKind, Variable
from src.circuit import (CircuitGraph, ElementKind, PortRole, build_crossbar_equilibrium,
                         build_crossbar_feedforward)
from src.utils import NetlistError


class TestCircuitGraph:
    def test_edge_order_and_indices(self, divider):
        assert divider.port_indices == [0, 1]
        assert divider.diode_indices == []
        assert divider.resistive_indices == [2, 3]
        assert divider.external_indices == [0, 1]
        assert divider.index_of("r2") == 3

    def test_unknown_label(self, divider):
        with pytest.raises(NetlistError):
            divider.index_of("r9")

    def test_rejects_bad_edges(self):
        graph = CircuitGraph(2)
        with pytest.raises(NetlistError):
            graph.add_resistor(0, 2, 1.0)
        with pytest.raises(NetlistError):
            graph.add_resistor(0, 1, 0.0)
        with pytest.raises(NetlistError):
            graph.add_conductor(0, 1, -1.0)
        with pytest.raises(NetlistError):
            graph.add_resistor(0, 1, float("nan"))

    def test_default_diode_is_ideal_forward(self):
        graph = CircuitGraph(2)
        index = graph.add_diode(1, 0)
        edge = graph.edges[index]
        assert edge.kind is ElementKind.DIODE
        assert edge.input_variable is Variable.CURRENT

    def test_with_value_copies(self, divider):
        changed = divider.with_value(2, 7.0)
        assert changed.edges[2].resistance == 7.0
        assert divider.edges[2].resistance == 2.0
        with pytest.raises(NetlistError):
            divider.with_value(0, 1.0)
        with pytest.raises(NetlistError):
            divider.with_value(2, 0.0)

    def test_connectivity(self):
        graph = CircuitGraph(3)
        graph.add_resistor(0, 1, 1.0)
        assert not graph.is_connected()
        graph.add_resistor(1, 2, 1.0)
        assert graph.is_connected()


class TestNetlist:
    def test_round_trip(self, tmp_path, equilibrium_crossbar):
        path = equilibrium_crossbar.save(tmp_path / "crossbar.json")
        assert CircuitGraph.load(path) == equilibrium_crossbar

    def test_round_trip_keeps_activation_parameters(self):
        graph = CircuitGraph(2)
        graph.add_diode(1, 0, ActivationKind.shockley_reverse(n=1.05, i_s=1e-13), "d")
        graph.add_port(1, 0, PortRole.CURRENT_INPUT, "i")
        restored = CircuitGraph.from_dict(json.loads(json.dumps(graph.to_dict())))
        assert restored.edges[0].activation == ActivationKind.shockley_reverse(n=1.05, i_s=1e-13)

    def test_version_is_checked(self, divider):
        document = divider.to_dict()
        document["version"] = 2
        with pytest.raises(NetlistError, match="version"):
            CircuitGraph.from_dict(document)

    def test_errors_name_the_edge(self, divider):
        document = divider.to_dict()
        document["edges"][3]["value"] = -1.0
        with pytest.raises(NetlistError, match="edge 3"):
            CircuitGraph.from_dict(document)

    def test_unknown_kind(self, divider):
        document = divider.to_dict()
        document["edges"][1]["kind"] = "inductor"
        with pytest.raises(NetlistError, match="edge 1"):
            CircuitGraph.from_dict(document)

    def test_malformed_json_reports_position(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"version": 1,\n "nodes": }', encoding="utf-8")
        with pytest.raises(NetlistError, match=r"broken.json:2:"):
            CircuitGraph.load(path)


class TestEquilibriumCrossbar:
    def test_edge_layout(self):
        p, q = 3, 2
        graph = build_crossbar_equilibrium(p, q, np.ones((p + 1, q + 1)))
        assert graph.nodes == p + q + 2
        assert len(graph.edges) == q + p + q + (p + 1) * (q + 1)
        labels = [edge.label for edge in graph.edges]
        assert labels[:q] == ["out0", "out1"]
        assert labels[q:q + p] == ["in0", "in1", "in2"]
        assert labels[q + p:2 * q + p] == ["d0", "d1"]
        assert labels[2 * q + p] == "g0_0"
        assert labels[-1] == f"g{p}_{q}"

    def test_port_roles(self):
        graph = build_crossbar_equilibrium(1, 1, np.ones((2, 2)))
        roles = [graph.edges[i].role for i in graph.port_indices]
        assert roles == [PortRole.CURRENT_INPUT, PortRole.VOLTAGE_INPUT]
        assert graph.edges[graph.diode_indices[0]].activation == ActivationKind.ideal_reverse()

    def test_signal_matrix_fills_reference_lines(self):
        G = np.array([[1.0, 3.0]])
        graph = build_crossbar_equilibrium(1, 2, G)
        assert graph.edges[graph.index_of("g0_0")].conductance == pytest.approx(2.0)
        assert graph.edges[graph.index_of("g1_2")].conductance == pytest.approx(3.0)

    def test_reference_lines_add_resistors(self):
        for G in (np.ones((1, 1)), np.ones((2, 2))):
            graph = build_crossbar_equilibrium(1, 1, G)
            assert len(graph.resistive_indices) == 4
            assert len(graph.edges) == 7
        assert len(build_crossbar_equilibrium(1, 1, np.ones((2, 2)), output_ports=False).edges) == 6

    def test_without_output_ports(self):
        graph = build_crossbar_equilibrium(2, 2, np.ones((3, 3)), output_ports=False)
        assert len(graph.port_indices) == 2

    def test_as_resistors(self):
        graph = build_crossbar_equilibrium(1, 1, np.full((2, 2), 0.5), as_resistors=True)
        edge = graph.edges[graph.index_of("g1_1")]
        assert edge.kind is ElementKind.RESISTOR
        assert edge.resistance == 2.0

    def test_rejects_bad_input(self):
        with pytest.raises(NetlistError):
            build_crossbar_equilibrium(0, 1, np.ones((1, 2)))
        with pytest.raises(NetlistError):
            build_crossbar_equilibrium(2, 2, np.ones((4, 4)))
        with pytest.raises(NetlistError):
            build_crossbar_equilibrium(1, 1, [[1.0, 0.0], [1.0, 1.0]])
        with pytest.raises(NetlistError):
            build_crossbar_equilibrium(1, 1, np.ones((2, 2)), ActivationKind.ideal_forward())


class TestFeedforwardCrossbar:
    def test_edge_layout(self):
        graph = build_crossbar_feedforward(2, 3, np.ones((2, 3)), ballast=[0.5, 0.0, 1.0], output_ports=True)
        assert graph.nodes == 2 + 3 + 1
        labels = [edge.label for edge in graph.edges]
        assert labels[:5] == ["in0", "in1", "out0", "out1", "out2"]
        assert labels[5:8] == ["d0", "d1", "d2"]
        assert labels[8] == "g0_0"
        assert labels[-2:] == ["ballast0", "ballast2"]
        assert all(graph.edges[i].head == 0 for i in graph.external_indices)

    def test_rejects_negative_ballast(self):
        with pytest.raises(NetlistError):
            build_crossbar_feedforward(1, 2, np.ones((1, 2)), ballast=[1.0, -1.0])
