"""
Circuit Graph Module

This module describes resistor-diode networks as oriented multigraphs and
builds the crossbar families used throughout equinet. It also owns the
netlist JSON format.

Every edge uses the associated reference direction: its voltage is
V(tail) - V(head) and its current flows through the element from tail to
head. Ports and diodes are "external" edges; resistors and conductors are
"resistive" edges that the extraction step eliminates.

Key Features:
- CircuitGraph with insertion-ordered edges (fixes tree tie-breaking)
- Resistor / Conductor / Port / Diode elements
- Equilibrium crossbar (separate input and output references)
- Feedforward crossbar (common earth, optional ballast)
- Netlist JSON round trip with a schema version field
"""

import copy
import json
import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from .activations import ActivationKind, Variable
from .utils import CONFIG_VERSION, NetlistError, check_version, read_document

logger = logging.getLogger(__name__)


class ElementKind(str, Enum):
    RESISTOR = "resistor"
    CONDUCTOR = "conductor"
    PORT = "port"
    DIODE = "diode"


class PortRole(str, Enum):
    VOLTAGE_INPUT = "voltage_input"
    CURRENT_INPUT = "current_input"

    @property
    def variable(self) -> Variable:
        return Variable.VOLTAGE if self is PortRole.VOLTAGE_INPUT else Variable.CURRENT


@dataclass(frozen=True)
class Edge:
    """
    One oriented element of a circuit graph.

    Attributes:
        tail: Node the reference current enters the element from
        head: Node the reference current leaves the element to
        kind: Element type
        value: Resistance (ohms) or conductance (siemens) of resistive edges
        role: Port role for port edges
        activation: Relation of diode edges
        label: Free-form name
    """

    tail: int
    head: int
    kind: ElementKind
    value: Optional[float] = None
    role: Optional[PortRole] = None
    activation: Optional[ActivationKind] = None
    label: str = ""

    @property
    def is_resistive(self) -> bool:
        return self.kind in (ElementKind.RESISTOR, ElementKind.CONDUCTOR)

    @property
    def is_external(self) -> bool:
        return not self.is_resistive

    @property
    def resistance(self) -> float:
        if self.kind is ElementKind.RESISTOR:
            return float(self.value)
        if self.kind is ElementKind.CONDUCTOR:
            return 1.0 / float(self.value)
        raise NetlistError(f"Edge {self.label or (self.tail, self.head)} is not resistive")

    @property
    def conductance(self) -> float:
        return 1.0 / self.resistance

    @property
    def input_variable(self) -> Optional[Variable]:
        """Independent variable of an external edge (None for resistive edges)."""
        if self.kind is ElementKind.PORT:
            return self.role.variable
        if self.kind is ElementKind.DIODE:
            return self.activation.variable
        return None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "tail": self.tail,
            "head": self.head,
            "kind": self.kind.value,
            "value": self.value,
        }
        if self.role is not None:
            data["role"] = self.role.value
        if self.activation is not None:
            data["activation"] = self.activation.to_dict()
        if self.label:
            data["label"] = self.label
        return data


class CircuitGraph:
    """
    Oriented multigraph of resistive, port and diode edges.

    Nodes are the integers 0..nodes-1. Edge order is insertion order and
    is significant: it fixes external variable ordering and tree ties.

    Attributes:
        nodes: Number of nodes
        labels: Free-form metadata carried through the netlist
    """

    def __init__(self, nodes: int = 0, labels: Optional[Dict[str, Any]] = None):
        if nodes < 0:
            raise NetlistError(f"Node count must be non-negative, got {nodes}")
        self.nodes = int(nodes)
        self.labels: Dict[str, Any] = dict(labels or {})
        self._edges: List[Edge] = []

    def __repr__(self) -> str:
        return f"CircuitGraph(nodes={self.nodes}, edges={len(self._edges)})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CircuitGraph):
            return NotImplemented
        return self.nodes == other.nodes and self._edges == other._edges and self.labels == other.labels

    @property
    def edges(self) -> Tuple[Edge, ...]:
        return tuple(self._edges)

    def add_node(self) -> int:
        self.nodes += 1
        return self.nodes - 1

    def _check_nodes(self, tail: int, head: int) -> None:
        for node in (tail, head):
            if not 0 <= node < self.nodes:
                raise NetlistError(f"Node {node} out of range (graph has {self.nodes} nodes)")

    def add_edge(self, edge: Edge) -> int:
        """
        Append a validated edge.

        Returns:
            Index of the new edge

        Raises:
            NetlistError: On bad nodes, values, roles or activations
        """
        self._check_nodes(edge.tail, edge.head)
        if edge.is_resistive:
            if edge.value is None or not np.isfinite(edge.value) or edge.value <= 0:
                raise NetlistError(f"Resistive edge {len(self._edges)} needs a positive value, got {edge.value}")
        elif edge.kind is ElementKind.PORT:
            if edge.role is None:
                raise NetlistError(f"Port edge {len(self._edges)} has no role")
        elif edge.activation is None:
            raise NetlistError(f"Diode edge {len(self._edges)} has no activation")
        self._edges.append(edge)
        return len(self._edges) - 1

    def add_resistor(self, tail: int, head: int, resistance: float, label: str = "") -> int:
        return self.add_edge(Edge(tail, head, ElementKind.RESISTOR, value=float(resistance), label=label))

    def add_conductor(self, tail: int, head: int, conductance: float, label: str = "") -> int:
        return self.add_edge(Edge(tail, head, ElementKind.CONDUCTOR, value=float(conductance), label=label))

    def add_port(self, tail: int, head: int, role: PortRole, label: str = "") -> int:
        return self.add_edge(Edge(tail, head, ElementKind.PORT, role=PortRole(role), label=label))

    def add_diode(self, tail: int, head: int, activation: Optional[ActivationKind] = None,
                  label: str = "") -> int:
        activation = activation or ActivationKind.ideal_forward()
        return self.add_edge(Edge(tail, head, ElementKind.DIODE, activation=activation, label=label))

    def indices(self, kind: ElementKind) -> List[int]:
        return [i for i, edge in enumerate(self._edges) if edge.kind is kind]

    @property
    def port_indices(self) -> List[int]:
        return self.indices(ElementKind.PORT)

    @property
    def diode_indices(self) -> List[int]:
        return self.indices(ElementKind.DIODE)

    @property
    def resistive_indices(self) -> List[int]:
        return [i for i, edge in enumerate(self._edges) if edge.is_resistive]

    @property
    def external_indices(self) -> List[int]:
        """Ports then diodes, each in insertion order."""
        return self.port_indices + self.diode_indices

    def index_of(self, label: str) -> int:
        """Index of the first edge carrying `label`."""
        for index, edge in enumerate(self._edges):
            if edge.label == label:
                return index
        raise NetlistError(f"No edge labelled {label!r}")

    def to_networkx(self) -> nx.MultiGraph:
        """Undirected multigraph view; edge keys are edge indices."""
        graph = nx.MultiGraph()
        graph.add_nodes_from(range(self.nodes))
        for index, edge in enumerate(self._edges):
            graph.add_edge(edge.tail, edge.head, key=index, kind=edge.kind.value)
        return graph

    def is_connected(self) -> bool:
        if self.nodes == 0:
            return False
        return nx.is_connected(self.to_networkx())

    def with_value(self, index: int, value: float) -> "CircuitGraph":
        """Copy with the value of resistive edge `index` replaced."""
        edge = self._edges[index]
        if not edge.is_resistive:
            raise NetlistError(f"Edge {index} is not resistive")
        clone = self.copy()
        if value <= 0:
            raise NetlistError(f"Edge {index} value must stay positive, got {value}")
        clone._edges[index] = replace(edge, value=float(value))
        return clone

    def copy(self) -> "CircuitGraph":
        clone = CircuitGraph(self.nodes, copy.deepcopy(self.labels))
        clone._edges = list(self._edges)
        return clone

    def to_dict(self) -> Dict[str, Any]:
        """Netlist document (schema version 1)."""
        return {
            "version": CONFIG_VERSION,
            "nodes": self.nodes,
            "edges": [edge.to_dict() for edge in self._edges],
            "labels": copy.deepcopy(self.labels),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], source: str = "netlist") -> "CircuitGraph":
        """
        Build a graph from a netlist document.

        Raises:
            NetlistError: On schema violations; messages name the edge index
        """
        if not isinstance(data, dict):
            raise NetlistError(f"{source}: netlist must be a JSON object")
        check_version(data, source)
        try:
            graph = cls(int(data["nodes"]), data.get("labels") or {})
            edges = data["edges"]
        except (KeyError, TypeError, ValueError) as e:
            raise NetlistError(f"{source}: missing or invalid 'nodes'/'edges': {str(e)}") from e

        for position, item in enumerate(edges):
            try:
                kind = ElementKind(item["kind"])
                tail, head = int(item["tail"]), int(item["head"])
                label = str(item.get("label", ""))
                if kind is ElementKind.PORT:
                    edge = Edge(tail, head, kind, role=PortRole(item["role"]), label=label)
                elif kind is ElementKind.DIODE:
                    activation = ActivationKind.from_dict(item.get("activation") or {"type": "ideal_forward"})
                    edge = Edge(tail, head, kind, activation=activation, label=label)
                else:
                    edge = Edge(tail, head, kind, value=float(item["value"]), label=label)
            except NetlistError as e:
                raise NetlistError(f"{source}: edge {position}: {str(e)}") from e
            except (KeyError, TypeError, ValueError) as e:
                raise NetlistError(f"{source}: edge {position}: {str(e)}") from e
            try:
                graph.add_edge(edge)
            except NetlistError as e:
                raise NetlistError(f"{source}: edge {position}: {str(e)}") from e
        return graph

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        logger.info(f"Wrote netlist with {len(self._edges)} edges to {path}")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CircuitGraph":
        return cls.from_dict(read_document(path), str(path))


def _check_conductances(G: np.ndarray, shape: Tuple[int, int], name: str = "G") -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if G.shape != shape:
        raise NetlistError(f"{name} must have shape {shape}, got {G.shape}")
    if not np.all(np.isfinite(G)) or np.any(G <= 0):
        raise NetlistError(f"{name}: all conductances must be positive")
    return G


def _add_resistive(graph: CircuitGraph, tail: int, head: int, g: float, as_resistors: bool, label: str) -> int:
    if as_resistors:
        return graph.add_resistor(tail, head, 1.0 / g, label)
    return graph.add_conductor(tail, head, g, label)


def build_crossbar_equilibrium(p: int, q: int, G: Sequence[Sequence[float]],
                               activation: Optional[ActivationKind] = None,
                               output_ports: bool = True,
                               as_resistors: bool = False) -> CircuitGraph:
    """
    Build the equilibrium crossbar between p input lines and q output lines.

    The input side is referenced to node `in_ref` and the output side to
    `out_ref`. The bipartite resistive graph joins {in_ref, a_1..a_p} with
    {out_ref, b_1..b_q}; G[0, 0] is the conductance between the two
    references, G[0, k] joins in_ref to b_k and G[j, 0] joins a_j to
    out_ref. A p×q matrix is accepted too; the reference rows and columns
    are then filled with the mean signal conductance.

    The reference lines carry resistors of their own, so the crossbar has
    (p+1)(q+1) resistive edges, not p*q. The total edge count is
    q + p + q + (p+1)(q+1) with output ports and p + q + (p+1)(q+1)
    without; a 1×1 crossbar has 4 resistors and 7 edges.

    Edge order: output ports (current inputs), input ports (voltage
    inputs), reverse diodes across the outputs, resistive edges row-major.

    Args:
        p: Number of inputs
        q: Number of outputs
        G: Conductances, shape (p+1, q+1) or (p, q)
        activation: Diode relation (default: ideal reverse diode)
        output_ports: Add current-input ports at the outputs
        as_resistors: Store resistive edges as resistances instead of conductances

    Returns:
        CircuitGraph

    Raises:
        NetlistError: On bad sizes or nonpositive conductances
    """
    if p < 1 or q < 1:
        raise NetlistError(f"Crossbar needs p, q >= 1, got p={p}, q={q}")
    G = np.asarray(G, dtype=float)
    if G.shape == (p, q):
        signal = _check_conductances(G, (p, q))
        full = np.full((p + 1, q + 1), float(signal.mean()))
        full[1:, 1:] = signal
        G = full
    G = _check_conductances(G, (p + 1, q + 1))
    activation = activation or ActivationKind.ideal_reverse()
    if activation.variable is not Variable.VOLTAGE:
        raise NetlistError("Crossbar outputs need a voltage-controlled activation")

    in_ref, out_ref = 0, 1
    inputs = [2 + j for j in range(p)]
    outputs = [2 + p + k for k in range(q)]
    graph = CircuitGraph(p + q + 2, {"builder": "equilibrium", "p": p, "q": q,
                                     "node_names": ["in_ref", "out_ref"]
                                     + [f"a{j}" for j in range(p)] + [f"b{k}" for k in range(q)]})

    if output_ports:
        for k, node in enumerate(outputs):
            graph.add_port(node, out_ref, PortRole.CURRENT_INPUT, f"out{k}")
    for j, node in enumerate(inputs):
        graph.add_port(node, in_ref, PortRole.VOLTAGE_INPUT, f"in{j}")
    for k, node in enumerate(outputs):
        graph.add_diode(node, out_ref, activation, f"d{k}")

    rows = [in_ref] + inputs
    cols = [out_ref] + outputs
    for r, row_node in enumerate(rows):
        for c, col_node in enumerate(cols):
            _add_resistive(graph, row_node, col_node, G[r, c], as_resistors, f"g{r}_{c}")

    logger.debug(f"Built {p}x{q} equilibrium crossbar with {len(graph.edges)} edges")
    return graph


def build_crossbar_feedforward(p: int, q: int, G: Sequence[Sequence[float]],
                               ballast: Optional[Sequence[float]] = None,
                               activation: Optional[ActivationKind] = None,
                               output_ports: bool = False,
                               as_resistors: bool = False) -> CircuitGraph:
    """
    Build the common-earth crossbar.

    All ports and diodes share node 0. Input line a_j connects to output
    line b_k through conductance G[j, k]; optional ballast conductances run
    from each b_k to earth. The kernel has diagonal H (column sums of G plus
    ballast).

    Edge order: input ports, output ports (if any), reverse diodes,
    crosspoints row-major, ballast.

    Raises:
        NetlistError: On bad sizes or nonpositive conductances
    """
    if p < 1 or q < 1:
        raise NetlistError(f"Crossbar needs p, q >= 1, got p={p}, q={q}")
    G = _check_conductances(G, (p, q))
    activation = activation or ActivationKind.ideal_reverse()
    if activation.variable is not Variable.VOLTAGE:
        raise NetlistError("Crossbar outputs need a voltage-controlled activation")
    if ballast is not None:
        ballast = np.asarray(ballast, dtype=float)
        if ballast.shape != (q,) or np.any(ballast < 0) or not np.all(np.isfinite(ballast)):
            raise NetlistError(f"ballast must be {q} non-negative conductances")

    earth = 0
    inputs = [1 + j for j in range(p)]
    outputs = [1 + p + k for k in range(q)]
    graph = CircuitGraph(p + q + 1, {"builder": "feedforward", "p": p, "q": q})

    for j, node in enumerate(inputs):
        graph.add_port(node, earth, PortRole.VOLTAGE_INPUT, f"in{j}")
    if output_ports:
        for k, node in enumerate(outputs):
            graph.add_port(node, earth, PortRole.CURRENT_INPUT, f"out{k}")
    for k, node in enumerate(outputs):
        graph.add_diode(node, earth, activation, f"d{k}")
    for j, a in enumerate(inputs):
        for k, b in enumerate(outputs):
            _add_resistive(graph, a, b, G[j, k], as_resistors, f"g{j}_{k}")
    if ballast is not None:
        for k, b in enumerate(outputs):
            if ballast[k] > 0:
                _add_resistive(graph, b, earth, ballast[k], as_resistors, f"ballast{k}")

    logger.debug(f"Built {p}x{q} feedforward crossbar with {len(graph.edges)} edges")
    return graph
