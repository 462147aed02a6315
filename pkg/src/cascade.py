"""
Cascade Module

Chains circuits through ideal synaptic amplifiers. The cascaded inputs of
layer i are driven by u_i[c] = sigma_i * s_i, where s_i are the forwarded
outputs of layer i-1 (the network input for the first layer). Remaining
inputs of each layer are auxiliary: externally set offsets such as output
current injections.

Main Components:
- CascadeLayer / CascadeNetwork / CascadeState
- compose_cascade(): one kernel behavior for the whole chain
- cascade_jacobian() / cascade_gradient(): forward-mode derivatives by
  hardware linearization, layer after layer
- cascade_adjoint_gradient(): reverse-mode implicit differentiation
- cascade_finite_difference(): central-difference oracle
- FeedforwardLayer / feedforward_relu_layer() / realize_weights() /
  feedforward_network(): common-earth ReLU layers
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .activations import ActivationKind, ResolventMap, Variable
from .circuit import build_crossbar_feedforward
from .extraction import ExtractedCircuit, KernelBehavior, extract_circuit, factorize, lu_apply
from .gradient import (DEFAULT_BACKEND, KINK_TOL, HardwareBackend, ParamBinding, ParamTarget,
                       edge_responses, hardware_linearize, kink_mask, parameter_scale)
from .solver import SolveReport, solve
from .utils import ConvergenceError, DimensionError, NetlistError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CascadeLayer:
    """
    One circuit in a cascade.

    Attributes:
        kernel: Kernel behavior of the layer
        cascaded_inputs: Entries of u driven through the synapses
        aux_inputs: Entries of u set externally (offsets)
        outputs: Entries of y forwarded downstream; may repeat (fan-out).
            Empty means every output once.
        circuit: Extracted circuit, needed for resistive bindings
    """

    kernel: KernelBehavior
    cascaded_inputs: Tuple[int, ...]
    aux_inputs: Tuple[int, ...] = ()
    outputs: Tuple[int, ...] = ()
    circuit: Optional[ExtractedCircuit] = None

    def __post_init__(self):
        object.__setattr__(self, "cascaded_inputs", tuple(int(i) for i in self.cascaded_inputs))
        object.__setattr__(self, "aux_inputs", tuple(int(i) for i in self.aux_inputs))
        outputs = tuple(int(i) for i in self.outputs) or tuple(range(self.kernel.n_outputs))
        object.__setattr__(self, "outputs", outputs)

        used = sorted(self.cascaded_inputs + self.aux_inputs)
        if used != list(range(self.kernel.m)):
            raise DimensionError(
                f"Cascaded {self.cascaded_inputs} and auxiliary {self.aux_inputs} inputs must cover "
                f"each of the {self.kernel.m} kernel inputs exactly once"
            )
        if any(not 0 <= k < self.kernel.n_outputs for k in outputs):
            raise DimensionError(f"Forwarded outputs {outputs} out of range for {self.kernel.n_outputs} outputs")

    @classmethod
    def from_circuit(cls, circuit: ExtractedCircuit, cascaded_inputs: Sequence[int],
                     aux_inputs: Sequence[int] = (), outputs: Sequence[int] = ()) -> "CascadeLayer":
        return cls(circuit.kernel, tuple(cascaded_inputs), tuple(aux_inputs), tuple(outputs), circuit)

    @property
    def width_in(self) -> int:
        return len(self.cascaded_inputs)

    @property
    def width_out(self) -> int:
        return len(self.outputs)

    def with_circuit(self, circuit: ExtractedCircuit) -> "CascadeLayer":
        return replace(self, kernel=circuit.kernel, circuit=circuit)


@dataclass(frozen=True, eq=False)
class CascadeState:
    """
    Operating point of every layer.

    Attributes:
        signals: Pre-synaptic signals s_i per layer
        inputs: Full input vector u_i per layer
        reports: Solve report per layer
        outputs: Full output vector y_i per layer
        y: Forwarded outputs of the last layer
    """

    signals: Tuple[np.ndarray, ...]
    inputs: Tuple[np.ndarray, ...]
    reports: Tuple[SolveReport, ...]
    outputs: Tuple[np.ndarray, ...]
    y: np.ndarray

    @property
    def iterations(self) -> int:
        return sum(r.iterations for r in self.reports)

    def warm_start(self) -> List[np.ndarray]:
        return [r.z_star for r in self.reports]


class CascadeNetwork:
    """
    Layers joined by synaptic gain vectors.

    Args:
        layers: Cascade layers in order
        synapses: Gain vector per layer, one entry per cascaded input
        input_map: Network input entry feeding each cascaded input of the
            first layer (default: identity)

    Raises:
        DimensionError: On width or current/voltage label mismatch
    """

    def __init__(self, layers: Sequence[CascadeLayer], synapses: Sequence[Sequence[float]],
                 input_map: Optional[Sequence[int]] = None):
        if not layers:
            raise DimensionError("A cascade needs at least one layer")
        if len(synapses) != len(layers):
            raise DimensionError(f"Expected {len(layers)} synapse vectors, got {len(synapses)}")
        self.layers: Tuple[CascadeLayer, ...] = tuple(layers)
        self.synapses: Tuple[np.ndarray, ...] = tuple(np.asarray(s, dtype=float).reshape(-1) for s in synapses)

        first = self.layers[0]
        self.input_map: Tuple[int, ...] = tuple(input_map) if input_map is not None else tuple(range(first.width_in))
        if len(self.input_map) != first.width_in:
            raise DimensionError(f"Input map has {len(self.input_map)} entries, layer 0 takes {first.width_in}")
        self.n_inputs = max(self.input_map, default=-1) + 1

        for i, (layer, sigma) in enumerate(zip(self.layers, self.synapses)):
            if sigma.shape != (layer.width_in,):
                raise DimensionError(f"Layer {i}: synapse vector has {sigma.size} entries, expected {layer.width_in}")
            if i == 0:
                continue
            prev = self.layers[i - 1]
            if prev.width_out != layer.width_in:
                raise DimensionError(
                    f"Layer {i} takes {layer.width_in} cascaded inputs but layer {i - 1} forwards {prev.width_out}"
                )
            sent = [prev.kernel.output_variables[k] for k in prev.outputs]
            taken = [layer.kernel.input_variables[k] for k in layer.cascaded_inputs]
            if sent != taken:
                raise DimensionError(f"Layer {i}: interface variables {[v.value for v in taken]} do not match "
                                     f"forwarded {[v.value for v in sent]}")

    def __len__(self) -> int:
        return len(self.layers)

    def __repr__(self) -> str:
        widths = [self.n_inputs] + [layer.width_out for layer in self.layers]
        return f"CascadeNetwork(widths={widths})"

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].width_out

    def with_layer(self, index: int, layer: CascadeLayer) -> "CascadeNetwork":
        layers = list(self.layers)
        layers[index] = layer
        return CascadeNetwork(layers, self.synapses, self.input_map)

    def with_synapses(self, synapses: Sequence[Sequence[float]]) -> "CascadeNetwork":
        return CascadeNetwork(self.layers, synapses, self.input_map)

    def aux_vectors(self, aux: Optional[Sequence[Optional[Sequence[float]]]] = None) -> List[np.ndarray]:
        """Normalize per-layer auxiliary inputs (None means zeros)."""
        if aux is None:
            aux = [None] * len(self.layers)
        if len(aux) != len(self.layers):
            raise DimensionError(f"Expected auxiliary inputs for {len(self.layers)} layers, got {len(aux)}")
        vectors = []
        for i, (layer, values) in enumerate(zip(self.layers, aux)):
            vector = np.zeros(len(layer.aux_inputs)) if values is None else np.asarray(values, dtype=float)
            if vector.shape != (len(layer.aux_inputs),):
                raise DimensionError(f"Layer {i}: expected {len(layer.aux_inputs)} auxiliary inputs, got {vector.shape}")
            vectors.append(vector)
        return vectors

    def evaluate(self, x, aux: Optional[Sequence[Optional[Sequence[float]]]] = None, solver: str = "fb",
                 z0: Optional[Sequence[np.ndarray]] = None, **solver_kwargs) -> CascadeState:
        """
        Solve the layers in order.

        Args:
            x: Network input
            aux: Auxiliary input vector per layer
            solver: Solver name
            z0: Warm start per layer

        Returns:
            CascadeState

        Raises:
            ConvergenceError: If a layer does not converge
            DimensionError: On input size mismatch
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size < self.n_inputs:
            raise DimensionError(f"Network takes {self.n_inputs} inputs, got {x.size}")
        aux_vectors = self.aux_vectors(aux)

        signals, inputs, reports, outputs = [], [], [], []
        signal = x[list(self.input_map)]
        for i, (layer, sigma) in enumerate(zip(self.layers, self.synapses)):
            u = np.zeros(layer.kernel.m)
            u[list(layer.cascaded_inputs)] = sigma * signal
            u[list(layer.aux_inputs)] = aux_vectors[i]
            warm = None if z0 is None else z0[i]
            report = solve(layer.kernel, u, solver, z0=warm, **solver_kwargs)
            if not report.converged:
                raise ConvergenceError(f"Layer {i} did not converge (residual {report.residual:.3e})")
            signals.append(signal)
            inputs.append(u)
            reports.append(report)
            outputs.append(report.y)
            signal = report.y[list(layer.outputs)]
        return CascadeState(tuple(signals), tuple(inputs), tuple(reports), tuple(outputs), signal)

    def __call__(self, x, aux=None, **kwargs) -> np.ndarray:
        return self.evaluate(x, aux, **kwargs).y

    def aux_offsets(self) -> List[int]:
        """Column of each layer's first auxiliary input in the composed kernel."""
        offsets, column = [], self.n_inputs
        for layer in self.layers:
            offsets.append(column)
            column += len(layer.aux_inputs)
        return offsets


def _selection(indices: Sequence[int], size: int) -> np.ndarray:
    R = np.zeros((len(indices), size))
    R[np.arange(len(indices)), list(indices)] = 1.0
    return R


def compose_cascade(network: CascadeNetwork) -> KernelBehavior:
    """
    Single kernel behavior of the whole cascade.

    The state is (z_1, ..., z_l) and the input (x, u~_1, ..., u~_l) with
    u~_i the auxiliary inputs of layer i. H is block lower triangular:
    H_ii = H_i and H_ij = B_i^c Sigma_i K_(i-1)j, where K maps the state to
    the forwarded signal of layer i-1. For two layers H_21 = -B_2 Sigma_2 C_1.

    Returns:
        KernelBehavior with the last layer's forwarded outputs as y
    """
    sizes = [layer.kernel.n for layer in network.layers]
    starts = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    N = int(starts[-1])
    aux_starts = network.aux_offsets()
    M = aux_starts[-1] + len(network.layers[-1].aux_inputs)

    H = np.zeros((N, N))
    B = np.zeros((N, M))
    # forwarded signal as a linear map of (z, u_full)
    S_z = np.zeros((network.layers[0].width_in, N))
    S_u = _selection(network.input_map, M)

    Y_z = Y_u = None
    for i, (layer, sigma) in enumerate(zip(network.layers, network.synapses)):
        kernel = layer.kernel
        rows = slice(starts[i], starts[i + 1])
        aux_cols = slice(aux_starts[i], aux_starts[i] + len(layer.aux_inputs))
        cascaded = list(layer.cascaded_inputs)
        aux = list(layer.aux_inputs)

        Bc = kernel.B[:, cascaded] * sigma
        Dc = kernel.D[:, cascaded] * sigma
        H[rows] = Bc @ S_z
        H[rows, rows] += kernel.H
        B[rows] = Bc @ S_u
        B[rows, aux_cols] += kernel.B[:, aux]

        Y_z = -Dc @ S_z
        Y_z[:, rows] -= kernel.C
        Y_u = -Dc @ S_u
        Y_u[:, aux_cols] -= kernel.D[:, aux]

        R = _selection(layer.outputs, kernel.n_outputs)
        S_z, S_u = R @ Y_z, R @ Y_u

    first, last = network.layers[0], network.layers[-1]
    input_variables = [first.kernel.input_variables[first.cascaded_inputs[network.input_map.index(k)]]
                       if k in network.input_map else Variable.VOLTAGE for k in range(network.n_inputs)]
    for layer in network.layers:
        input_variables.extend(layer.kernel.input_variables[k] for k in layer.aux_inputs)

    return KernelBehavior(
        H=H,
        B=B,
        C=-S_z,
        D=-S_u,
        activations=tuple(k for layer in network.layers for k in layer.kernel.activations),
        input_variables=tuple(input_variables),
        output_variables=tuple(last.kernel.output_variables[k] for k in last.outputs),
    )


def composed_input(network: CascadeNetwork, x, aux=None) -> np.ndarray:
    """Stack (x, u~_1, ..., u~_l) in compose_cascade's input order."""
    x = np.asarray(x, dtype=float).reshape(-1)[: network.n_inputs]
    return np.concatenate([x] + network.aux_vectors(aux))


def _forwarded(layer: CascadeLayer, values: np.ndarray) -> np.ndarray:
    return values[list(layer.outputs)]


def _resistive_columns(layer: CascadeLayer, u: np.ndarray, z: np.ndarray,
                       bindings: Sequence[ParamBinding]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Offsets and output corrections for resistive bindings, one column each.

    With T = s (scale * s^T Sigma_Y x), the offset is u_d = -T[m:] and the
    output correction -dC z - dD u equals T[:m].
    """
    if layer.circuit is None:
        raise ValueError("Resistive bindings need a layer built from an extracted circuit")
    form = layer.circuit.form
    positions = [form.resistive_position(b.edge) for b in bindings]
    S = edge_responses(form)[:, positions]
    scale = np.array([form.resistive_signature[p] * parameter_scale(form, p, b.target)
                      for p, b in zip(positions, bindings)])
    x = np.concatenate([u, z])
    T = S * (scale * (S.T @ (-form.signature * x)))
    m = layer.kernel.m
    return -T[m:], T[:m]


def cascade_jacobian(network: CascadeNetwork, state: CascadeState, bindings: Sequence[ParamBinding],
                     backend: Optional[HardwareBackend] = None,
                     kink_tol: float = KINK_TOL) -> Tuple[np.ndarray, bool]:
    """
    dy/dtheta for many bindings at once by cascade hardware linearization.

    Bindings are grouped by layer. For each group the linearized layer is
    driven with one excitation column per binding; its output variation is
    forwarded through the synapses into the linearized downstream layers.

    Args:
        network: Cascade
        state: Operating point from network.evaluate
        bindings: Parameters; `layer` selects the layer, `entry` the input
            (offset) or synapse entry, `edge` the resistive edge
        backend: Hardware backend

    Returns:
        (Jacobian of shape (n_outputs, len(bindings)), kink flag)
    """
    backend = backend or DEFAULT_BACKEND
    L = len(network.layers)
    linearized = [hardware_linearize(layer.kernel, report.z_star)
                  for layer, report in zip(network.layers, state.reports)]
    kink = any(np.any(kink_mask(layer.kernel, report.z_star, kink_tol))
               for layer, report in zip(network.layers, state.reports))
    if kink:
        logger.warning(f"Cascade operating point within {kink_tol} of a kink; gradients may be one-sided")

    groups: Dict[int, List[int]] = defaultdict(list)
    for column, binding in enumerate(bindings):
        if not 0 <= binding.layer < L:
            raise DimensionError(f"Binding layer {binding.layer} out of range for {L} layers")
        groups[binding.layer].append(column)

    jacobian = np.zeros((network.n_outputs, len(bindings)))
    for j in sorted(groups):
        columns = groups[j]
        layer = network.layers[j]
        kernel = layer.kernel
        u, z = state.inputs[j], state.reports[j].z_star
        U_l = np.zeros((kernel.m, len(columns)))
        U_d = np.zeros((kernel.n, len(columns)))
        extra = np.zeros((kernel.n_outputs, len(columns)))

        resistive = []
        for c, column in enumerate(columns):
            binding = bindings[column]
            if binding.target in (ParamTarget.RESISTANCE, ParamTarget.CONDUCTANCE):
                resistive.append(c)
            elif binding.target is ParamTarget.SYNAPSE:
                U_l[layer.cascaded_inputs[binding.entry], c] = state.signals[j][binding.entry]
            elif binding.target is ParamTarget.INPUT_OFFSET:
                U_l[binding.entry, c] = 1.0
        if resistive:
            offsets, corrections = _resistive_columns(layer, u, z, [bindings[columns[c]] for c in resistive])
            U_d[:, resistive] = offsets
            extra[:, resistive] = corrections

        _, dY = backend.measure(linearized[j], U_l, U_d)
        dY = dY + extra
        for i in range(j + 1, L):
            nxt = network.layers[i]
            U = np.zeros((nxt.kernel.m, len(columns)))
            U[list(nxt.cascaded_inputs)] = network.synapses[i][:, None] * _forwarded(network.layers[i - 1], dY)
            _, dY = backend.measure(linearized[i], U, np.zeros((nxt.kernel.n, len(columns))))
        jacobian[:, columns] = _forwarded(network.layers[-1], dY)
    return jacobian, kink


def cascade_gradient(network: CascadeNetwork, binding: ParamBinding, state: CascadeState,
                     backend: Optional[HardwareBackend] = None) -> np.ndarray:
    """dy/dtheta of the network output for one binding."""
    jacobian, _ = cascade_jacobian(network, state, [binding], backend)
    return jacobian[:, 0]


def _layer_adjoint(layer: CascadeLayer, report: SolveReport, g: np.ndarray) -> np.ndarray:
    """lambda = J_SS^-T C_S^T g on the free set S, zero elsewhere."""
    kernel = layer.kernel
    lam = np.zeros(kernel.n)
    if kernel.n == 0:
        return lam
    slopes = ResolventMap(kernel.activations).derivative(report.z_star)
    free = np.isfinite(slopes)
    if np.any(free):
        J = kernel.H[np.ix_(free, free)] + np.diag(slopes[free])
        lam[free] = lu_apply(factorize(J, "linearized kernel"), kernel.C[:, free].T @ g, trans=1)
    return lam


def cascade_adjoint_gradient(network: CascadeNetwork, state: CascadeState, g_y: np.ndarray,
                             bindings: Sequence[ParamBinding]) -> np.ndarray:
    """
    dL/dtheta for a loss with dL/dy = g_y, by reverse-mode implicit differentiation.

    One adjoint solve per layer; resistive derivatives use the rank-one
    hybrid derivative densely, with no simulated excitation.

    Returns:
        Gradient with one entry per binding
    """
    L = len(network.layers)
    groups: Dict[int, List[int]] = defaultdict(list)
    for column, binding in enumerate(bindings):
        groups[binding.layer].append(column)

    gradient = np.zeros(len(bindings))
    g_fwd = np.asarray(g_y, dtype=float).reshape(-1)
    for i in range(L - 1, -1, -1):
        layer = network.layers[i]
        kernel = layer.kernel
        g = np.zeros(kernel.n_outputs)
        np.add.at(g, list(layer.outputs), g_fwd)

        lam = _layer_adjoint(layer, state.reports[i], g)
        dL_du = kernel.B.T @ lam - kernel.D.T @ g

        resistive = []
        for column in groups.get(i, []):
            binding = bindings[column]
            if binding.target in (ParamTarget.RESISTANCE, ParamTarget.CONDUCTANCE):
                resistive.append(column)
            elif binding.target is ParamTarget.SYNAPSE:
                gradient[column] = dL_du[layer.cascaded_inputs[binding.entry]] * state.signals[i][binding.entry]
            elif binding.target is ParamTarget.INPUT_OFFSET:
                gradient[column] = dL_du[binding.entry]
        if resistive:
            if layer.circuit is None:
                raise ValueError("Resistive bindings need a layer built from an extracted circuit")
            form = layer.circuit.form
            x = np.concatenate([state.inputs[i], state.reports[i].z_star])
            rho = np.concatenate([g, -lam])
            positions = [form.resistive_position(bindings[c].edge) for c in resistive]
            S = edge_responses(form)[:, positions]
            scale = np.array([form.resistive_signature[p] * parameter_scale(form, p, bindings[c].target)
                              for p, c in zip(positions, resistive)])
            gradient[resistive] = scale * (rho @ S) * (S.T @ (-form.signature * x))

        g_fwd = network.synapses[i] * dL_du[list(layer.cascaded_inputs)]
    return gradient


def _perturb(network: CascadeNetwork, binding: ParamBinding, aux: List[np.ndarray],
             delta: float) -> Tuple[CascadeNetwork, List[np.ndarray]]:
    layer = network.layers[binding.layer]
    if binding.target in (ParamTarget.RESISTANCE, ParamTarget.CONDUCTANCE):
        edge = layer.circuit.graph.edges[binding.edge]
        resistance = binding.target is ParamTarget.RESISTANCE
        value = (edge.resistance if resistance else edge.conductance) + delta
        stored = value if resistance == (edge.kind.value == "resistor") else 1.0 / value
        return network.with_layer(binding.layer, layer.with_circuit(layer.circuit.with_edge_value(binding.edge, stored))), aux
    if binding.target is ParamTarget.SYNAPSE:
        synapses = [s.copy() for s in network.synapses]
        synapses[binding.layer][binding.entry] += delta
        return network.with_synapses(synapses), aux
    if binding.target is ParamTarget.INPUT_OFFSET:
        shifted = [a.copy() for a in aux]
        shifted[binding.layer][layer.aux_inputs.index(binding.entry)] += delta
        return network, shifted
    return network, aux


def binding_value(network: CascadeNetwork, binding: ParamBinding,
                  aux: Optional[Sequence[np.ndarray]] = None) -> float:
    """Current value of a cascade parameter."""
    layer = network.layers[binding.layer]
    if binding.target is ParamTarget.RESISTANCE:
        return layer.circuit.graph.edges[binding.edge].resistance
    if binding.target is ParamTarget.CONDUCTANCE:
        return layer.circuit.graph.edges[binding.edge].conductance
    if binding.target is ParamTarget.SYNAPSE:
        return float(network.synapses[binding.layer][binding.entry])
    if binding.target is ParamTarget.INPUT_OFFSET:
        vectors = network.aux_vectors(aux)
        return float(vectors[binding.layer][layer.aux_inputs.index(binding.entry)])
    return 0.0


def cascade_finite_difference(network: CascadeNetwork, binding: ParamBinding, x, aux=None,
                              epsilon: Optional[float] = None, solver: str = "fb",
                              **solver_kwargs) -> np.ndarray:
    """
    Central-difference dy/dtheta with independent cascade solves.

    Raises:
        ValueError: If epsilon is not positive
        ConvergenceError: If a perturbed solve fails
    """
    if binding.target is ParamTarget.NONE:
        return np.zeros(network.n_outputs)
    aux_vectors = network.aux_vectors(aux)
    theta = binding_value(network, binding, aux_vectors)
    epsilon = 1e-6 * max(1.0, abs(theta)) if epsilon is None else epsilon
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    outputs = []
    for sign in (1.0, -1.0):
        perturbed, shifted = _perturb(network, binding, aux_vectors, sign * epsilon)
        outputs.append(perturbed.evaluate(x, shifted, solver, **solver_kwargs).y)
    return (outputs[0] - outputs[1]) / (2.0 * epsilon)


@dataclass(frozen=True, eq=False)
class FeedforwardLayer:
    """
    Common-earth crossbar acting as relu(W v) on its input voltages.

    Inputs come first (positive copies, then negative copies when
    duplicated), then the zero-current output ports. The output is the
    diode voltage.

    Attributes:
        circuit: Extracted crossbar
        p: Logical input width
        q: Output width
        sigma_pos: Gain on the positive copies
        sigma_neg: Gain on the negative copies (None when not duplicated)
    """

    circuit: ExtractedCircuit
    p: int
    q: int
    sigma_pos: np.ndarray
    sigma_neg: Optional[np.ndarray] = None

    @property
    def duplicated(self) -> bool:
        return self.sigma_neg is not None

    @property
    def n_lines(self) -> int:
        return 2 * self.p if self.duplicated else self.p

    @property
    def kernel(self) -> KernelBehavior:
        return self.circuit.kernel

    @property
    def synapses(self) -> np.ndarray:
        if self.duplicated:
            return np.concatenate([self.sigma_pos, self.sigma_neg])
        return self.sigma_pos

    @property
    def weights(self) -> np.ndarray:
        """W = -H^-1 (B_pos Sigma_pos + B_neg Sigma_neg), shape (q, p)."""
        kernel = self.kernel
        driven = kernel.B[:, : self.n_lines] * self.synapses
        combined = driven[:, : self.p]
        if self.duplicated:
            combined = combined + driven[:, self.p:]
        return -np.linalg.solve(kernel.H, combined)

    def lines(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape != (self.p,):
            raise DimensionError(f"Layer takes {self.p} inputs, got {v.shape}")
        return self.synapses * (np.concatenate([v, v]) if self.duplicated else v)

    def evaluate(self, v, solver: str = "fb", **solver_kwargs) -> SolveReport:
        u = np.concatenate([self.lines(v), np.zeros(self.q)])
        return solve(self.kernel, u, solver, **solver_kwargs)

    def __call__(self, v, **kwargs) -> np.ndarray:
        report = self.evaluate(v, **kwargs)
        if not report.converged:
            raise ConvergenceError(f"Feedforward layer did not converge (residual {report.residual:.3e})")
        return report.y[self.n_lines:]

    def as_cascade_layer(self, duplicate_outputs: bool = False) -> CascadeLayer:
        """Cascade view; outputs are repeated when the next layer is duplicated."""
        outputs = tuple(range(self.n_lines, self.n_lines + self.q))
        return CascadeLayer.from_circuit(
            self.circuit,
            cascaded_inputs=range(self.n_lines),
            aux_inputs=range(self.n_lines, self.n_lines + self.q),
            outputs=outputs * 2 if duplicate_outputs else outputs,
        )


def _gain(value: Union[float, Sequence[float]], size: int, name: str) -> np.ndarray:
    gain = np.asarray(value, dtype=float)
    if gain.ndim == 0:
        gain = np.full(size, float(gain))
    if gain.shape != (size,):
        raise DimensionError(f"{name} must be a scalar or have {size} entries, got {gain.shape}")
    return gain


def feedforward_relu_layer(p: int, q: int, G, sigma_pos: Union[float, Sequence[float]] = 1.0,
                           sigma_neg: Union[None, float, Sequence[float]] = None,
                           ballast: Optional[Sequence[float]] = None,
                           activation: Optional[ActivationKind] = None) -> FeedforwardLayer:
    """
    Build a feedforward ReLU layer.

    G is either (p, q) for a single polarity or (2p, q) with the rows of
    the negative copies below the positive ones.

    Raises:
        NetlistError: On nonpositive conductances or a bad shape
    """
    G = np.asarray(G, dtype=float)
    if G.shape == (2 * p, q):
        duplicated = True
    elif G.shape == (p, q):
        duplicated = False
        if sigma_neg is not None and np.any(np.asarray(sigma_neg, dtype=float) != 0):
            raise NetlistError("Negative synapses need a duplicated (2p, q) conductance matrix")
    else:
        raise NetlistError(f"G must have shape ({p}, {q}) or ({2 * p}, {q}), got {G.shape}")

    lines = 2 * p if duplicated else p
    graph = build_crossbar_feedforward(lines, q, G, ballast=ballast, activation=activation, output_ports=True)
    graph.labels.update({"p": p, "duplicated": duplicated})
    return FeedforwardLayer(
        circuit=extract_circuit(graph),
        p=p,
        q=q,
        sigma_pos=_gain(sigma_pos, p, "sigma_pos"),
        sigma_neg=_gain(sigma_neg if sigma_neg is not None else 0.0, p, "sigma_neg") if duplicated else None,
    )


def realize_weights(W, scale: float = 1.0, base: float = 1.0, margin: float = 1.1) -> FeedforwardLayer:
    """
    Duplicated feedforward layer whose weights equal W exactly.

    W = W+ - W- is split into G_pos = scale * W+^T + base and
    G_neg = scale * W-^T + base. Every output line gets the same total
    conductance h through a ballast to earth, and sigma_pos = -sigma_neg = h / scale.

    Args:
        W: Target weights, shape (q, p)
        scale: Conductance per unit weight
        base: Conductance added to every crosspoint
        margin: h as a multiple of the largest line conductance (>= 1)

    Returns:
        FeedforwardLayer
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2:
        raise DimensionError(f"W must be a matrix, got shape {W.shape}")
    if not (scale > 0 and base > 0 and margin >= 1.0):
        raise ValueError("scale and base must be positive and margin at least 1")
    q, p = W.shape
    G = np.vstack([scale * np.maximum(W, 0.0).T + base, scale * np.maximum(-W, 0.0).T + base])
    column_sums = G.sum(axis=0)
    h = margin * float(column_sums.max())
    gain = h / scale
    return feedforward_relu_layer(p, q, G, sigma_pos=gain, sigma_neg=-gain, ballast=h - column_sums)


def feedforward_network(layers: Sequence[FeedforwardLayer]) -> CascadeNetwork:
    """Chain feedforward layers; outputs fan out into duplicated successors."""
    if not layers:
        raise DimensionError("A network needs at least one layer")
    cascade_layers = []
    for i, layer in enumerate(layers):
        successor_duplicated = i + 1 < len(layers) and layers[i + 1].duplicated
        cascade_layers.append(layer.as_cascade_layer(successor_duplicated))
    first = layers[0]
    input_map = tuple(range(first.p)) * (2 if first.duplicated else 1)
    return CascadeNetwork(cascade_layers, [layer.synapses for layer in layers], input_map)
