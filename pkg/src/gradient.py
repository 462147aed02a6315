"""
Gradient Module

Exact derivatives of circuit outputs with respect to circuit parameters,
computed the way a physical circuit could measure them.

At a solved operating point z*, every diode is replaced by its hardware
linearization (Short when conducting, Open when blocking). Driving that
linearized circuit with the offsets

    u_d = dH z* + dB u,      u_l = du

yields y_l, and dy = y_l - dC z* - dD u. The matrix derivatives of a
resistive edge come from a single excitation of that edge: by reciprocity
dH_tilde/dtheta_i is the rank-one outer product of the measured response
with itself, up to signature signs.

Main Components:
- LinearizedKernel / hardware_linearize()
- HardwareBackend protocol and SimulatedHardware
- ParamBinding: which parameter a derivative is taken against
- KernelDerivative: dH, dB, dC, dD, du for one parameter
- reciprocal_edge_derivative(), edge_responses()
- gradient_output_wrt_param(), implicit_gradient(), finite_difference_gradient()
- matrix_inverse_derivative()
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Protocol, Sequence, Tuple

import numpy as np

from .activations import (ActivationKind, LinearizedElement, LinearMode, ResolventMap, Variable,
                          linearize)
from .extraction import (ExtractedCircuit, FundamentalForm, KernelBehavior, factorize, lu_apply)
from .solver import SolveReport, forward_backward, solve, solve_on_branches
from .utils import (ConvergenceError, DimensionError, InfeasibleOperatingPoint, NetlistError,
                    NonReciprocalError)

logger = logging.getLogger(__name__)

KINK_TOL = 1e-9
FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class LinearizedKernel:
    """
    Kernel with every activation replaced by its hardware linearization.

    0 ∈ H z_l + (dpsi/dz)(z*) z_l + B u_l + u_d,   y_l = -C z_l - D u_l

    Attributes:
        kernel: Parent kernel (H, B, C, D are shared)
        elements: Linearized element per diode
        offset: u_d
    """

    kernel: KernelBehavior
    elements: Tuple[LinearizedElement, ...]
    offset: np.ndarray

    @property
    def H(self) -> np.ndarray:
        return self.kernel.H

    @property
    def B(self) -> np.ndarray:
        return self.kernel.B

    @property
    def C(self) -> np.ndarray:
        return self.kernel.C

    @property
    def D(self) -> np.ndarray:
        return self.kernel.D

    @property
    def short_mask(self) -> np.ndarray:
        return np.array([e.mode is LinearMode.SHORT for e in self.elements], dtype=bool)

    def as_kernel(self) -> KernelBehavior:
        """
        The linearized circuit as an ordinary kernel.

        The offsets become extra inputs appended after u: B' = [B, I],
        D' = [D, 0].
        """
        n, m = self.kernel.n, self.kernel.m
        extra = tuple(kind.variable.dual for kind in self.kernel.activations)
        return KernelBehavior(
            H=self.H,
            B=np.hstack([self.B, np.eye(n)]),
            C=self.C,
            D=np.hstack([self.D, np.zeros((self.kernel.n_outputs, n))]),
            activations=tuple(e.as_activation() for e in self.elements),
            input_variables=tuple(self.kernel.input_variables) + extra,
            output_variables=self.kernel.output_variables,
        )

    def respond(self, u_l: np.ndarray, u_d: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        Solve the linearized circuit directly.

        Args:
            u_l: Input variation, shape (m,) or (m, k)
            u_d: Offsets, shape (n,) or (n, k); defaults to the stored offset

        Returns:
            (z_l, y_l) with one column per excitation
        """
        u_l = np.asarray(u_l, dtype=float)
        if u_d is None:
            u_d = self.offset if u_l.ndim == 1 else np.repeat(self.offset[:, None], u_l.shape[1], axis=1)
        rhs = self.B @ u_l + np.asarray(u_d, dtype=float)
        z_l = solve_on_branches(self.kernel, rhs, self.short_mask)
        return z_l, -self.C @ z_l - self.D @ u_l


class HardwareBackend(Protocol):
    """Anything that can drive a linearized circuit and read its response."""

    def measure(self, linearized: LinearizedKernel, u_l: np.ndarray,
                u_d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ...


class SimulatedHardware:
    """
    Backend that simulates the linearized circuit.

    Single excitations settle through the equilibrium solver on the
    linearized kernel; batches of excitations (one per column) use the
    same branch solve in one factorization.
    """

    def __init__(self, tol: float = 1e-12, max_iter: int = 10_000):
        self.tol = tol
        self.max_iter = max_iter
        self.measurements = 0

    def measure(self, linearized: LinearizedKernel, u_l: np.ndarray,
                u_d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        u_l = np.asarray(u_l, dtype=float)
        u_d = np.asarray(u_d, dtype=float)
        if u_l.ndim == 2:
            self.measurements += u_l.shape[1]
            return linearized.respond(u_l, u_d)
        self.measurements += 1
        report = forward_backward(linearized.as_kernel(), np.concatenate([u_l, u_d]),
                                  tol=self.tol, max_iter=self.max_iter)
        if not report.converged:
            raise ConvergenceError(f"Linearized circuit did not settle (residual {report.residual:.3e})")
        return report.z_star, report.y


DEFAULT_BACKEND = SimulatedHardware()


def kink_mask(kernel: KernelBehavior, z_star: np.ndarray, kink_tol: float = KINK_TOL) -> np.ndarray:
    """Entries whose operating value lies within kink_tol of a branch change."""
    z_star = np.asarray(z_star, dtype=float)
    mask = np.zeros(z_star.shape, dtype=bool)
    for k, kind in enumerate(kernel.activations):
        ideal = kind.ideal_counterpart
        if ideal.is_ideal_diode:
            mask[k] = 0.0 < z_star[k] < kink_tol
        elif ideal.variant.value in ("zener_pair", "crd_pair"):
            mask[k] = ideal.limit - kink_tol < abs(z_star[k]) < ideal.limit
    return mask


def hardware_linearize(kernel: KernelBehavior, z_star: np.ndarray,
                       u_d: Optional[np.ndarray] = None) -> LinearizedKernel:
    """
    Linearize every activation at its operating value.

    Smooth (Shockley) devices are linearized by their ideal counterpart:
    conducting when the operating value is positive, blocking otherwise.

    Args:
        kernel: Kernel behavior
        z_star: Converged equilibrium
        u_d: Offsets (default zero)

    Returns:
        LinearizedKernel

    Raises:
        InfeasibleOperatingPoint: If an ideal entry is negative beyond 1e-9
        DimensionError: On shape mismatch
    """
    z_star = np.asarray(z_star, dtype=float)
    if z_star.shape != (kernel.n,):
        raise DimensionError(f"z_star must have length {kernel.n}, got shape {z_star.shape}")
    u_d = np.zeros(kernel.n) if u_d is None else np.asarray(u_d, dtype=float)
    if u_d.shape != (kernel.n,):
        raise DimensionError(f"u_d must have length {kernel.n}, got shape {u_d.shape}")

    elements = []
    for k, kind in enumerate(kernel.activations):
        value = z_star[k]
        if kind.is_smooth:
            value = max(value, 0.0)
        elif kind.is_ideal_diode:
            if value < -FEASIBILITY_TOL:
                raise InfeasibleOperatingPoint(f"Diode {k} operating value {value} is negative")
            value = max(value, 0.0)
        elif kind.variant.value in ("short", "open"):
            raise ValueError(f"Activation {k} is already linearized")
        elements.append(linearize(kind.ideal_counterpart, value, u_d[k]))
    return LinearizedKernel(kernel, tuple(elements), u_d)


class ParamTarget(str, Enum):
    RESISTANCE = "resistance"
    CONDUCTANCE = "conductance"
    SYNAPSE = "synapse"
    INPUT_OFFSET = "input_offset"
    NONE = "none"


_UNITS = {
    ParamTarget.RESISTANCE: "ohm",
    ParamTarget.CONDUCTANCE: "S",
    ParamTarget.SYNAPSE: "1",
    ParamTarget.INPUT_OFFSET: "input units",
    ParamTarget.NONE: "",
}


@dataclass(frozen=True)
class ParamBinding:
    """
    A differentiable parameter.

    Attributes:
        index: Position in the caller's parameter vector
        target: Kind of parameter
        edge: Graph edge index (resistance/conductance)
        entry: Input entry (input offset, synapse entry)
        layer: Cascade layer the parameter lives in
        value: Current value
    """

    index: int
    target: ParamTarget
    edge: Optional[int] = None
    entry: Optional[int] = None
    layer: int = 0
    value: float = 0.0

    @property
    def units(self) -> str:
        return _UNITS[self.target]

    @classmethod
    def parse(cls, text: str, circuit: Optional[ExtractedCircuit] = None) -> "ParamBinding":
        """
        Parse "resistance:<edge>", "conductance:<edge>", "input:<entry>",
        "synapse:<layer>:<entry>" or "none". Edges may be given by index or
        label when a circuit is supplied.

        Raises:
            NetlistError: On malformed text
        """
        parts = text.strip().split(":")
        head = parts[0].lower()
        try:
            if head == "none":
                return cls(0, ParamTarget.NONE)
            if head in ("resistance", "conductance", "r", "g"):
                target = ParamTarget.RESISTANCE if head in ("resistance", "r") else ParamTarget.CONDUCTANCE
                ref = parts[1]
                if ref.lstrip("-").isdigit():
                    edge = int(ref)
                elif circuit is not None:
                    edge = circuit.graph.index_of(ref)
                else:
                    raise NetlistError(f"Edge label {ref!r} needs a circuit to resolve")
                value = 0.0
                if circuit is not None:
                    graph_edge = circuit.graph.edges[edge]
                    value = graph_edge.resistance if target is ParamTarget.RESISTANCE else graph_edge.conductance
                return cls(0, target, edge=edge, value=value)
            if head in ("input", "input_offset"):
                return cls(0, ParamTarget.INPUT_OFFSET, entry=int(parts[1]))
            if head == "synapse":
                return cls(0, ParamTarget.SYNAPSE, layer=int(parts[1]), entry=int(parts[2]))
        except (IndexError, ValueError) as e:
            raise NetlistError(f"Malformed parameter binding {text!r}") from e
        except NetlistError:
            raise
        raise NetlistError(f"Unknown parameter binding {text!r}")


@dataclass(frozen=True, eq=False)
class KernelDerivative:
    """Derivatives of the kernel matrices and input for one parameter."""

    dH: np.ndarray
    dB: np.ndarray
    dC: np.ndarray
    dD: np.ndarray
    du: np.ndarray

    @classmethod
    def zero(cls, kernel: KernelBehavior) -> "KernelDerivative":
        return cls(np.zeros_like(kernel.H), np.zeros_like(kernel.B), np.zeros_like(kernel.C),
                   np.zeros_like(kernel.D), np.zeros(kernel.m))

    @classmethod
    def from_hybrid(cls, d_hybrid: np.ndarray, n_ports: int) -> "KernelDerivative":
        m = n_ports
        return cls(dH=-d_hybrid[m:, m:], dB=-d_hybrid[m:, :m], dC=-d_hybrid[:m, m:],
                   dD=-d_hybrid[:m, :m], du=np.zeros(m))


@dataclass(frozen=True, eq=False)
class GradientResult:
    """dy/dtheta with a flag for operating points near a kink."""

    value: np.ndarray
    kink: bool = False
    binding: Optional[ParamBinding] = None


def check_form_reciprocity(form: FundamentalForm, tol: float = 1e-10) -> float:
    """
    Max violation of Σ F = F^T Σ over the full form.

    Raises:
        NonReciprocalError: If the violation exceeds tol
    """
    signature = np.concatenate([form.signature, form.resistive_signature])
    F = form.F
    violation = float(np.max(np.abs(signature[:, None] * F - F.T * signature[None, :]), initial=0.0))
    if violation > tol:
        raise NonReciprocalError(f"Form is not reciprocal (violation {violation:.3e})")
    return violation


def edge_responses(form: FundamentalForm, lu=None) -> np.ndarray:
    """
    External responses to a unit excitation of each resistive edge.

    Column i is s_i = -M^T (Theta - Q)^-1 e_i: the reading at every port
    and diode when a unit source is applied across resistive edge i with
    all external variables held at zero.
    """
    if lu is None:
        lu = factorize(form.K, "diag(r, g) - Q")
    return -form.M.T @ lu_apply(lu, np.eye(len(form.resistive)))


def reciprocal_edge_derivative(form: FundamentalForm, edge: int, check: bool = True) -> np.ndarray:
    """
    dH_tilde/dtheta for resistive edge `edge` from one excitation.

    theta is the edge's own parameter in the form: conductance for tree
    edges, resistance for cotree edges.

    Args:
        form: Fundamental form (diodes appear as external edges)
        edge: Graph edge index of a resistive edge
        check: Verify reciprocity first

    Returns:
        Rank-one matrix Σ_ii s s^T Σ_Y with Σ_Y = -Σ

    Raises:
        NonReciprocalError: If the form fails the signature check
        DimensionError: If `edge` is not resistive
    """
    if check:
        check_form_reciprocity(form)
    i = form.resistive_position(edge)
    excitation = np.zeros(len(form.resistive))
    excitation[i] = 1.0
    response = -form.M.T @ lu_apply(factorize(form.K, "diag(r, g) - Q"), excitation)
    sigma_ii = form.resistive_signature[i]
    return sigma_ii * np.outer(response, response * -form.signature)


def matrix_inverse_derivative(K: np.ndarray, dK: np.ndarray) -> np.ndarray:
    """
    d(K^-1) = -K^-1 dK K^-1.

    Raises:
        DegenerateNetworkError: If K is singular
    """
    K = np.asarray(K, dtype=float)
    dK = np.asarray(dK, dtype=float)
    if K.shape != dK.shape or K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DimensionError(f"K {K.shape} and dK {dK.shape} must be equal square shapes")
    lu = factorize(K, "K")
    left = lu_apply(lu, dK)
    return -lu_apply(lu, left.T, trans=1).T


def parameter_scale(form: FundamentalForm, position: int, target: ParamTarget) -> float:
    """dtheta/dparam for a resistance or conductance binding on resistive entry `position`."""
    theta = form.theta[position]
    if form.theta_is_resistance[position]:
        return 1.0 if target is ParamTarget.RESISTANCE else -theta * theta
    return 1.0 if target is ParamTarget.CONDUCTANCE else -theta * theta


def kernel_derivative(circuit: ExtractedCircuit, binding: ParamBinding) -> KernelDerivative:
    """
    Kernel matrix derivatives for a single-circuit binding.

    Raises:
        ValueError: For synapse bindings (cascade only)
        DimensionError: For out-of-range entries
    """
    kernel = circuit.kernel
    if binding.target is ParamTarget.NONE:
        return KernelDerivative.zero(kernel)
    if binding.target is ParamTarget.INPUT_OFFSET:
        if binding.entry is None or not 0 <= binding.entry < kernel.m:
            raise DimensionError(f"Input entry {binding.entry} out of range for {kernel.m} inputs")
        zero = KernelDerivative.zero(kernel)
        du = np.zeros(kernel.m)
        du[binding.entry] = 1.0
        return KernelDerivative(zero.dH, zero.dB, zero.dC, zero.dD, du)
    if binding.target in (ParamTarget.RESISTANCE, ParamTarget.CONDUCTANCE):
        position = circuit.form.resistive_position(binding.edge)
        d_hybrid = reciprocal_edge_derivative(circuit.form, binding.edge)
        d_hybrid = d_hybrid * parameter_scale(circuit.form, position, binding.target)
        return KernelDerivative.from_hybrid(d_hybrid, kernel.m)
    raise ValueError(f"{binding.target.value} bindings need a cascade")


def linearized_response(kernel: KernelBehavior, z_star: np.ndarray, u: np.ndarray,
                        derivative: KernelDerivative,
                        backend: Optional[HardwareBackend] = None) -> np.ndarray:
    """
    Output variation by hardware linearization.

    u_d = dH z + dB u and u_l = du drive the linearized circuit; the
    reading is corrected by -dC z - dD u.
    """
    backend = backend or DEFAULT_BACKEND
    u_d = derivative.dH @ z_star + derivative.dB @ u
    linearized = hardware_linearize(kernel, z_star, u_d)
    _, y_l = backend.measure(linearized, derivative.du, u_d)
    return y_l - derivative.dC @ z_star - derivative.dD @ u


def gradient_output_wrt_param(circuit: ExtractedCircuit, binding: ParamBinding, operating: SolveReport,
                              backend: Optional[HardwareBackend] = None,
                              kink_tol: float = KINK_TOL) -> GradientResult:
    """
    dy/dtheta at a solved operating point.

    Args:
        circuit: Extracted circuit the operating point belongs to
        binding: Parameter to differentiate against
        operating: Converged solve of circuit.kernel
        backend: Hardware backend (simulated by default)
        kink_tol: Distance from a kink that raises the warning flag

    Returns:
        GradientResult

    Raises:
        ConvergenceError: If the operating point did not converge
    """
    if not operating.converged:
        raise ConvergenceError("Operating point did not converge")
    kernel = circuit.kernel
    kink = bool(np.any(kink_mask(kernel, operating.z_star, kink_tol)))
    if kink:
        logger.warning(f"Operating point within {kink_tol} of a kink; gradient for {binding.target.value} may be one-sided")
    derivative = kernel_derivative(circuit, binding)
    value = linearized_response(kernel, operating.z_star, operating.u, derivative, backend)
    return GradientResult(value, kink, binding)


def implicit_gradient(kernel: KernelBehavior, z_star: np.ndarray, u: np.ndarray,
                      derivative: KernelDerivative) -> np.ndarray:
    """
    Dense implicit differentiation of the equilibrium.

    Entries with finite slope solve (H + diag(psi'))_SS dz_S = -(dH z + dB u + B du)_S,
    pinned entries keep dz = 0. Used as an independent oracle for the
    hardware path.
    """
    resolve = ResolventMap(kernel.activations)
    slopes = resolve.derivative(z_star) if kernel.n else np.zeros(0)
    free = np.isfinite(slopes)
    rhs = derivative.dH @ z_star + derivative.dB @ u + kernel.B @ derivative.du
    dz = np.zeros(kernel.n)
    if np.any(free):
        J = kernel.H[np.ix_(free, free)] + np.diag(slopes[free])
        lu = factorize(J, "linearized kernel")
        dz[free] = -lu_apply(lu, rhs[free])
    return -kernel.C @ dz - kernel.D @ derivative.du - derivative.dC @ z_star - derivative.dD @ u


def _perturbed_graph(circuit: ExtractedCircuit, binding: ParamBinding, value: float) -> ExtractedCircuit:
    edge = circuit.graph.edges[binding.edge]
    stored = value
    if (binding.target is ParamTarget.RESISTANCE) != (edge.kind.value == "resistor"):
        stored = 1.0 / value
    return circuit.with_edge_value(binding.edge, stored)


def finite_difference_gradient(circuit: ExtractedCircuit, binding: ParamBinding, u: np.ndarray,
                               epsilon: Optional[float] = None, solver: str = "fb",
                               **solver_kwargs) -> np.ndarray:
    """
    Central difference (y(theta + eps) - y(theta - eps)) / (2 eps).

    Each side is an independent equilibrium solve.

    Args:
        circuit: Extracted circuit
        binding: Parameter
        u: Input
        epsilon: Step (default 1e-6 * max(1, |theta|))
        solver: Solver name

    Raises:
        ValueError: If epsilon is not positive
        ConvergenceError: If a perturbed solve fails
    """
    u = np.asarray(u, dtype=float)
    kernel = circuit.kernel
    if binding.target is ParamTarget.NONE:
        return np.zeros(kernel.n_outputs)

    if binding.target in (ParamTarget.RESISTANCE, ParamTarget.CONDUCTANCE):
        edge = circuit.graph.edges[binding.edge]
        theta = edge.resistance if binding.target is ParamTarget.RESISTANCE else edge.conductance
    elif binding.target is ParamTarget.INPUT_OFFSET:
        theta = float(u[binding.entry])
    else:
        raise ValueError(f"{binding.target.value} bindings need a cascade")

    epsilon = 1e-6 * max(1.0, abs(theta)) if epsilon is None else epsilon
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")

    outputs = []
    for sign in (1.0, -1.0):
        if binding.target is ParamTarget.INPUT_OFFSET:
            shifted = u.copy()
            shifted[binding.entry] += sign * epsilon
            report = solve(kernel, shifted, solver, **solver_kwargs)
        else:
            perturbed = _perturbed_graph(circuit, binding, theta + sign * epsilon)
            report = solve(perturbed.kernel, u, solver, **solver_kwargs)
        if not report.converged:
            raise ConvergenceError(f"Perturbed solve did not converge (residual {report.residual:.3e})")
        outputs.append(report.y)
    return (outputs[0] - outputs[1]) / (2.0 * epsilon)
