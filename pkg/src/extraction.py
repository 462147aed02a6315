"""
Circuit Extraction Module

Turns a CircuitGraph into its kernel behavior

    0 ∈ H z + psi(z) + B u,      y = -C z - D u

in four steps: a constrained spanning tree, the fundamental form F built
from the tree's loop matrix, elimination of the resistive edges, and the
split of the resulting hybrid matrix into (H, B, C, D).

Main Components:
- Partition / partition_tree_cotree(): tree with voltage-defined edges,
  cotree with current-defined edges
- FundamentalForm / fundamental_form(): F = [[P, -M^T], [M, Q]]
- HybridMatrix / reduce_to_hybrid(): P - M^T (Theta - Q)^-1 M
- KernelBehavior / extract_kernel()
- ExtractedCircuit / extract_circuit(): all of the above for one graph
- check_reciprocity(), check_stieltjes(), check_network()
- nodal_hybrid_matrix(): independent nodal-analysis cross-check
- resistive_state(): resistive variables at a solved point
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import scipy.linalg
from networkx.utils import UnionFind

from .activations import ActivationKind, Variable
from .circuit import CircuitGraph
from .utils import DegenerateNetworkError, DimensionError, NetlistError, PartitionError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-10
OFFDIAG_TOL = 1e-12

# reciprocal condition number below which a factorization counts as singular
_RCOND_FLOOR = 1e-14


def factorize(K: np.ndarray, what: str = "matrix"):
    """
    LU-factorize a square matrix, rejecting (numerically) singular ones.

    Args:
        K: Square matrix
        what: Name used in the error message

    Returns:
        scipy.linalg.lu_factor result

    Raises:
        DegenerateNetworkError: If K is singular or badly conditioned
    """
    if K.shape[0] == 0:
        return None
    if not np.all(np.isfinite(K)):
        raise DegenerateNetworkError(f"{what} has non-finite entries")
    try:
        lu = scipy.linalg.lu_factor(K, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise DegenerateNetworkError(f"{what} is singular: {str(e)}") from e
    diag = np.abs(np.diag(lu[0]))
    if diag.min() <= _RCOND_FLOOR * max(diag.max(), 1.0) or 1.0 / np.linalg.cond(K) < _RCOND_FLOOR:
        raise DegenerateNetworkError(f"{what} is singular")
    return lu


def lu_apply(lu, rhs: np.ndarray, trans: int = 0) -> np.ndarray:
    if lu is None:
        return np.zeros_like(rhs, dtype=float)
    return scipy.linalg.lu_solve(lu, rhs, trans=trans, check_finite=False)


@dataclass(frozen=True)
class Partition:
    """Spanning tree / cotree split of the edge set (edge indices, insertion order)."""

    tree: Tuple[int, ...]
    cotree: Tuple[int, ...]

    def in_tree(self, edge: int) -> bool:
        return edge in set(self.tree)


def partition_tree_cotree(graph: CircuitGraph) -> Partition:
    """
    Choose a spanning tree holding every voltage-defined edge.

    Voltage-input ports and voltage-controlled diodes are forced into the
    tree; current-input ports and current-controlled diodes into the
    cotree. Resistive edges complete the tree in insertion order.

    Args:
        graph: Circuit graph

    Returns:
        Partition

    Raises:
        PartitionError: If the graph is disconnected, voltage-defined edges
            close a loop, or current-defined edges form a cut
    """
    if not graph.is_connected():
        raise PartitionError("Circuit graph is not connected")

    forest = UnionFind(range(graph.nodes))
    tree: List[int] = []
    tree_set = set()

    for index, edge in enumerate(graph.edges):
        if edge.input_variable is Variable.VOLTAGE:
            if forest[edge.tail] == forest[edge.head]:
                raise PartitionError(
                    f"Voltage-defined edge {index} ({edge.label or edge.kind.value}) closes a loop "
                    f"of voltage-defined edges"
                )
            forest.union(edge.tail, edge.head)
            tree.append(index)
            tree_set.add(index)

    for index, edge in enumerate(graph.edges):
        if edge.is_resistive and forest[edge.tail] != forest[edge.head]:
            forest.union(edge.tail, edge.head)
            tree.append(index)
            tree_set.add(index)

    if len(tree) != graph.nodes - 1:
        raise PartitionError("Current-defined edges form a cut; no spanning tree avoids them")

    tree.sort()
    cotree = [i for i in range(len(graph.edges)) if i not in tree_set]
    logger.debug(f"Partition: {len(tree)} tree edges, {len(cotree)} cotree edges")
    return Partition(tuple(tree), tuple(cotree))


def loop_matrix(graph: CircuitGraph, partition: Partition) -> np.ndarray:
    """
    Fundamental loop matrix A with v_cotree = A v_tree.

    A[l, t] is +1 when the tree path from tail(l) to head(l) runs along
    tree edge t in its reference direction and -1 against it.
    """
    tree_graph = nx.Graph()
    tree_graph.add_nodes_from(range(graph.nodes))
    for position, index in enumerate(partition.tree):
        edge = graph.edges[index]
        tree_graph.add_edge(edge.tail, edge.head, position=position)

    A = np.zeros((len(partition.cotree), len(partition.tree)))
    for row, index in enumerate(partition.cotree):
        edge = graph.edges[index]
        if edge.tail == edge.head:
            continue
        path = nx.shortest_path(tree_graph, edge.tail, edge.head)
        for a, b in zip(path[:-1], path[1:]):
            position = tree_graph.edges[a, b]["position"]
            tree_edge = graph.edges[partition.tree[position]]
            A[row, position] = 1.0 if tree_edge.tail == a else -1.0
    return A


@dataclass(frozen=True, eq=False)
class FundamentalForm:
    """
    Interconnection of external and resistive edges.

    With x the independent variables of the external edges (ports then
    diodes) and w those of the resistive edges (voltage for tree edges,
    current for cotree edges), the network imposes

        x_dual = P x - M^T w,      w_dual = M x + Q w.

    Attributes:
        P: External block, skew
        Q: Resistive block, skew
        M: Resistive-from-external coupling
        external: External edge indices (ports, then diodes)
        resistive: Resistive edge indices (insertion order)
        theta: Element parameter per resistive entry (g in the tree, r in the cotree)
        theta_is_resistance: True where theta is a resistance
        signature: +1/-1 per external entry (voltage/current input)
        n_ports: Number of port entries at the front of `external`
        variables: Input variable per external entry
        labels: Edge labels per external entry
    """

    P: np.ndarray
    Q: np.ndarray
    M: np.ndarray
    external: Tuple[int, ...]
    resistive: Tuple[int, ...]
    theta: np.ndarray
    theta_is_resistance: np.ndarray
    signature: np.ndarray
    n_ports: int
    variables: Tuple[Variable, ...]
    labels: Tuple[str, ...] = ()

    @property
    def resistive_signature(self) -> np.ndarray:
        return np.where(self.theta_is_resistance, -1.0, 1.0)

    @property
    def r(self) -> np.ndarray:
        return np.where(self.theta_is_resistance, self.theta, 1.0 / self.theta)

    @property
    def g(self) -> np.ndarray:
        return 1.0 / self.r

    @property
    def K(self) -> np.ndarray:
        """diag(theta) - Q."""
        return np.diag(self.theta) - self.Q

    @property
    def F(self) -> np.ndarray:
        """Full form over (external, resistive) ordering."""
        return np.block([[self.P, -self.M.T], [self.M, self.Q]])

    def resistive_position(self, edge: int) -> int:
        try:
            return self.resistive.index(edge)
        except ValueError as e:
            raise DimensionError(f"Edge {edge} is not a resistive edge of this form") from e

    def with_theta(self, theta: np.ndarray) -> "FundamentalForm":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != self.theta.shape:
            raise DimensionError(f"theta must have shape {self.theta.shape}, got {theta.shape}")
        return FundamentalForm(self.P, self.Q, self.M, self.external, self.resistive, theta,
                               self.theta_is_resistance, self.signature, self.n_ports,
                               self.variables, self.labels)


def fundamental_form(graph: CircuitGraph, partition: Optional[Partition] = None) -> FundamentalForm:
    """
    Build the fundamental form of a partitioned graph.

    Args:
        graph: Circuit graph
        partition: Tree/cotree split (computed if omitted)

    Returns:
        FundamentalForm

    Raises:
        PartitionError: If no valid partition exists
    """
    partition = partition or partition_tree_cotree(graph)
    A = loop_matrix(graph, partition)

    tree_pos = {edge: i for i, edge in enumerate(partition.tree)}
    cotree_pos = {edge: i for i, edge in enumerate(partition.cotree)}
    n_tree = len(partition.tree)

    # F over (tree, cotree): (i_T, v_L) = [[0, -A^T], [A, 0]] (v_T, i_L)
    F_tc = np.zeros((n_tree + len(partition.cotree),) * 2)
    F_tc[:n_tree, n_tree:] = -A.T
    F_tc[n_tree:, :n_tree] = A

    def position(edge: int) -> int:
        return tree_pos[edge] if edge in tree_pos else n_tree + cotree_pos[edge]

    external = tuple(graph.external_indices)
    resistive = tuple(graph.resistive_indices)
    order = [position(e) for e in external + resistive]
    F = F_tc[np.ix_(order, order)]

    nx_ = len(external)
    theta = []
    is_resistance = []
    for e in resistive:
        edge = graph.edges[e]
        if e in tree_pos:
            theta.append(edge.conductance)
            is_resistance.append(False)
        else:
            theta.append(edge.resistance)
            is_resistance.append(True)

    variables = tuple(graph.edges[e].input_variable for e in external)
    signature = np.array([1.0 if v is Variable.VOLTAGE else -1.0 for v in variables])

    return FundamentalForm(
        P=F[:nx_, :nx_],
        Q=F[nx_:, nx_:],
        M=F[nx_:, :nx_],
        external=external,
        resistive=resistive,
        theta=np.asarray(theta, dtype=float),
        theta_is_resistance=np.asarray(is_resistance, dtype=bool),
        signature=signature,
        n_ports=len(graph.port_indices),
        variables=variables,
        labels=tuple(graph.edges[e].label for e in external),
    )


@dataclass(frozen=True, eq=False)
class HybridMatrix:
    """
    Hybrid matrix mapping external independent variables to their duals.

    Attributes:
        matrix: H_tilde, square over (ports, diodes)
        signature: Reciprocity signature per entry
        n_ports: Port rows at the front
        variables: Input variable per entry
        activations: Activation per diode row
        labels: Edge label per entry
    """

    matrix: np.ndarray
    signature: np.ndarray
    n_ports: int
    variables: Tuple[Variable, ...]
    activations: Tuple[ActivationKind, ...] = ()
    labels: Tuple[str, ...] = ()


def reduce_to_hybrid(form: FundamentalForm,
                     activations: Sequence[ActivationKind] = ()) -> HybridMatrix:
    """
    Eliminate the resistive edges: H_tilde = P - M^T (Theta - Q)^-1 M.

    Args:
        form: Fundamental form
        activations: Diode relations, carried along for extract_kernel

    Returns:
        HybridMatrix

    Raises:
        DegenerateNetworkError: If Theta - Q is singular
    """
    if len(form.resistive):
        lu = factorize(form.K, "diag(r, g) - Q")
        matrix = form.P - form.M.T @ lu_apply(lu, form.M)
    else:
        matrix = form.P.copy()
    n_diodes = len(form.external) - form.n_ports
    activations = tuple(activations)
    if activations and len(activations) != n_diodes:
        raise DimensionError(f"Expected {n_diodes} activations, got {len(activations)}")
    return HybridMatrix(matrix, form.signature.copy(), form.n_ports, form.variables,
                        activations, form.labels)


@dataclass(frozen=True, eq=False)
class KernelBehavior:
    """
    Kernel equations 0 ∈ H z + psi(z) + B u, y = -C z - D u.

    Attributes:
        H: n×n
        B: n×m
        C: m_out×n
        D: m_out×m
        activations: Relation per entry of z
        input_variables: Physical quantity of each entry of u
        output_variables: Physical quantity of each entry of y (duals of u by default)
        labels: Names of the entries of u
    """

    H: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    activations: Tuple[ActivationKind, ...]
    input_variables: Tuple[Variable, ...] = ()
    output_variables: Tuple[Variable, ...] = ()
    labels: Tuple[str, ...] = ()

    def __post_init__(self):
        n, m = self.B.shape
        if self.H.shape != (n, n) or len(self.activations) != n:
            raise DimensionError(
                f"Kernel shapes inconsistent: H {self.H.shape}, B {self.B.shape}, {len(self.activations)} activations"
            )
        if self.C.shape[1] != n or self.D.shape != (self.C.shape[0], m):
            raise DimensionError(f"Kernel output shapes inconsistent: C {self.C.shape}, D {self.D.shape}")
        if not self.input_variables:
            object.__setattr__(self, "input_variables", (Variable.VOLTAGE,) * m)
        if not self.output_variables:
            if self.C.shape[0] == m:
                duals = tuple(v.dual for v in self.input_variables)
            else:
                duals = (Variable.VOLTAGE,) * self.C.shape[0]
            object.__setattr__(self, "output_variables", duals)

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    @property
    def signature(self) -> np.ndarray:
        """Signature over (u, z) when the outputs are the duals of the inputs."""
        variables = list(self.input_variables) + [k.variable for k in self.activations]
        return np.array([1.0 if v is Variable.VOLTAGE else -1.0 for v in variables])

    def hybrid(self) -> np.ndarray:
        """-[[D, C], [B, H]]."""
        return -np.block([[self.D, self.C], [self.B, self.H]])

    def output(self, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        return -self.C @ z - self.D @ u

    def check_monotone(self, tol: float = PSD_TOL) -> Tuple[bool, float, float]:
        """
        Test H + H^T ⪰ 0 and D + D^T ⪰ 0.

        Returns:
            (passed, min eigenvalue of H_sym, min eigenvalue of D_sym)
        """
        h_min = _min_sym_eig(self.H)
        d_min = _min_sym_eig(self.D) if self.D.shape[0] == self.D.shape[1] else 0.0
        return (h_min >= -tol and d_min >= -tol), h_min, d_min


def _min_sym_eig(A: np.ndarray) -> float:
    if A.size == 0:
        return 0.0
    return float(scipy.linalg.eigvalsh(0.5 * (A + A.T))[0])


def extract_kernel(hybrid: HybridMatrix, activations: Optional[Sequence[ActivationKind]] = None) -> KernelBehavior:
    """
    Split H_tilde = -[[D, C], [B, H]] into kernel matrices.

    Args:
        hybrid: Hybrid matrix with port rows first
        activations: Override of the diode relations

    Returns:
        KernelBehavior
    """
    acts = tuple(activations) if activations is not None else hybrid.activations
    m = hybrid.n_ports
    Ht = hybrid.matrix
    n = Ht.shape[0] - m
    if len(acts) != n:
        raise DimensionError(f"Hybrid matrix has {n} diode rows but {len(acts)} activations were given")
    return KernelBehavior(
        H=-Ht[m:, m:].copy(),
        B=-Ht[m:, :m].copy(),
        C=-Ht[:m, m:].copy(),
        D=-Ht[:m, :m].copy(),
        activations=acts,
        input_variables=tuple(hybrid.variables[:m]),
        labels=tuple(hybrid.labels[:m]),
    )


@dataclass(frozen=True, eq=False)
class ExtractedCircuit:
    """A circuit graph with every extraction stage attached."""

    graph: CircuitGraph
    partition: Partition
    form: FundamentalForm
    hybrid: HybridMatrix
    kernel: KernelBehavior

    def with_edge_value(self, edge: int, value: float) -> "ExtractedCircuit":
        """Re-extract after replacing one resistive edge value (partition is value independent)."""
        return self.with_graph(self.graph.with_value(edge, value))

    def with_graph(self, graph: CircuitGraph) -> "ExtractedCircuit":
        """
        Re-extract a graph with the same topology and new element values.

        The partition and loop structure are reused; only the resistor
        elimination is redone.

        Raises:
            NetlistError: If the topology differs
        """
        same = len(graph.edges) == len(self.graph.edges) and all(
            (a.tail, a.head, a.kind) == (b.tail, b.head, b.kind) for a, b in zip(graph.edges, self.graph.edges)
        )
        if not same:
            raise NetlistError("Graph topology differs from the extracted circuit")
        theta = np.array([
            graph.edges[e].resistance if is_resistance else graph.edges[e].conductance
            for e, is_resistance in zip(self.form.resistive, self.form.theta_is_resistance)
        ])
        form = self.form.with_theta(theta)
        activations = tuple(graph.edges[e].activation for e in graph.diode_indices)
        hybrid = reduce_to_hybrid(form, activations)
        return ExtractedCircuit(graph, self.partition, form, hybrid, extract_kernel(hybrid))


def extract_circuit(graph: CircuitGraph, partition: Optional[Partition] = None) -> ExtractedCircuit:
    """
    Run every extraction stage on a graph.

    Raises:
        PartitionError, DegenerateNetworkError
    """
    partition = partition or partition_tree_cotree(graph)
    form = fundamental_form(graph, partition)
    activations = tuple(graph.edges[e].activation for e in graph.diode_indices)
    hybrid = reduce_to_hybrid(form, activations)
    kernel = extract_kernel(hybrid)
    logger.debug(f"Extracted kernel with n={kernel.n} diodes, m={kernel.m} ports")
    return ExtractedCircuit(graph, partition, form, hybrid, kernel)


def check_reciprocity(matrix: np.ndarray, signature: Union[np.ndarray, Sequence[float]],
                      tol: float = SYMMETRY_TOL) -> Tuple[bool, float]:
    """
    Test Σ H = H^T Σ.

    Args:
        matrix: Square matrix
        signature: Diagonal of Σ, or Σ itself

    Returns:
        (holds, max violation)

    Raises:
        DimensionError: On shape mismatch
    """
    matrix = np.asarray(matrix, dtype=float)
    S = np.asarray(signature, dtype=float)
    if S.ndim == 1:
        S = np.diag(S)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or S.shape != matrix.shape:
        raise DimensionError(f"Signature {S.shape} does not match matrix {matrix.shape}")
    if matrix.size == 0:
        return True, 0.0
    violation = float(np.max(np.abs(S @ matrix - matrix.T @ S)))
    return violation <= tol, violation


def check_stieltjes(matrix: np.ndarray, sym_tol: float = SYMMETRY_TOL,
                    offdiag_tol: float = OFFDIAG_TOL) -> bool:
    """True iff symmetric, positive definite and with nonpositive off-diagonals."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.size == 0:
        return False
    if np.max(np.abs(matrix - matrix.T)) > sym_tol:
        return False
    off = matrix - np.diag(np.diag(matrix))
    if np.max(off) > offdiag_tol:
        return False
    return bool(scipy.linalg.eigvalsh(0.5 * (matrix + matrix.T))[0] > 0)


def port_blocks(kernel: KernelBehavior) -> Tuple[np.ndarray, np.ndarray]:
    """
    D restricted to current-input ports (D11) and to voltage-input ports (D22).
    """
    current = [i for i, v in enumerate(kernel.input_variables) if v is Variable.CURRENT]
    voltage = [i for i, v in enumerate(kernel.input_variables) if v is Variable.VOLTAGE]
    if kernel.D.shape[0] != kernel.D.shape[1]:
        raise DimensionError("Port blocks need a square D")
    return kernel.D[np.ix_(current, current)], kernel.D[np.ix_(voltage, voltage)]


def nodal_hybrid_matrix(graph: CircuitGraph) -> np.ndarray:
    """
    Hybrid matrix by direct nodal analysis, independent of tree analysis.

    Each external edge is driven in turn by a unit source of its input
    variable (voltage sources for voltage-defined edges, current sources
    for current-defined ones, all others at zero) and the dual quantities
    are read off. Node 0 is the datum.

    Returns:
        H_tilde in the (ports, diodes) ordering

    Raises:
        DegenerateNetworkError: If the nodal system is singular
    """
    external = graph.external_indices
    vsrc = [e for e in external if graph.edges[e].input_variable is Variable.VOLTAGE]
    vpos = {e: i for i, e in enumerate(vsrc)}
    N = graph.nodes
    size = N + len(vsrc)

    A = np.zeros((size, size))
    for edge in graph.edges:
        if edge.is_resistive:
            g = edge.conductance
            t, h = edge.tail, edge.head
            A[t, t] += g
            A[h, h] += g
            A[t, h] -= g
            A[h, t] -= g
    for e, k in vpos.items():
        edge = graph.edges[e]
        col = N + k
        A[edge.tail, col] += 1.0
        A[edge.head, col] -= 1.0
        A[col, edge.tail] += 1.0
        A[col, edge.head] -= 1.0

    keep = list(range(1, size))
    lu = factorize(A[np.ix_(keep, keep)], "nodal system")

    result = np.zeros((len(external), len(external)))
    for column, driven in enumerate(external):
        rhs = np.zeros(size)
        edge = graph.edges[driven]
        if driven in vpos:
            rhs[N + vpos[driven]] = 1.0
        else:
            rhs[edge.tail] -= 1.0
            rhs[edge.head] += 1.0
        solution = np.zeros(size)
        solution[keep] = lu_apply(lu, rhs[keep])
        for row, e in enumerate(external):
            out = graph.edges[e]
            if e in vpos:
                result[row, column] = solution[N + vpos[e]]
            else:
                result[row, column] = solution[out.tail] - solution[out.head]
    return result


def resistive_state(form: FundamentalForm, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Resistive variables (w, w_dual) for external independent variables x.

    x is the stacked (u, z) vector in the form's external ordering.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (len(form.external),):
        raise DimensionError(f"Expected {len(form.external)} external values, got {x.shape}")
    if not len(form.resistive):
        return np.zeros(0), np.zeros(0)
    w = lu_apply(factorize(form.K, "diag(r, g) - Q"), form.M @ x)
    return w, form.theta * w


def check_network(graph: CircuitGraph) -> Dict[str, Any]:
    """
    Run the structural property suite on a graph.

    Returns:
        Report dictionary; every check carries `passed` and its measured value
    """
    circuit = extract_circuit(graph)
    hybrid = circuit.hybrid
    kernel = circuit.kernel
    report: Dict[str, Any] = {"n_diodes": kernel.n, "n_ports": kernel.m}

    holds, violation = check_reciprocity(hybrid.matrix, hybrid.signature)
    report["reciprocity"] = {"passed": holds, "violation": violation}

    if hybrid.matrix.size:
        top = float(scipy.linalg.eigvalsh(0.5 * (hybrid.matrix + hybrid.matrix.T))[-1])
    else:
        top = 0.0
    report["dissipative"] = {"passed": top <= PSD_TOL, "max_eigenvalue": top}

    monotone, h_min, d_min = kernel.check_monotone()
    report["psd"] = {"passed": monotone, "min_eig_H": h_min, "min_eig_D": d_min}

    if kernel.n:
        report["stieltjes_H"] = {"passed": check_stieltjes(kernel.H)}
    else:
        report["stieltjes_H"] = {"passed": True, "skipped": True}

    D11, D22 = port_blocks(kernel)
    if D11.size and D22.size:
        report["d11_zero"] = {"passed": bool(np.all(D11 == 0.0)), "max_abs": float(np.max(np.abs(D11)))}
        report["stieltjes_D22"] = {"passed": check_stieltjes(D22)}

    nodal = nodal_hybrid_matrix(graph)
    deviation = float(np.max(np.abs(nodal - hybrid.matrix))) if nodal.size else 0.0
    report["nodal_agreement"] = {"passed": deviation <= 1e-10 * max(1.0, float(np.max(np.abs(nodal), initial=0.0))),
                                 "deviation": deviation}

    report["passed"] = all(v["passed"] for v in report.values() if isinstance(v, dict))
    return report
