"""
Training Module

Teacher-student regression on cascaded equilibrium crossbars, trained
by stochastic gradient descent with gradients from hardware
linearization or from reverse-mode implicit differentiation.

The trainable parameters of every layer are its crossbar resistances,
the current offsets injected at its output ports and the synaptic gains
on its inputs. With device noise enabled the trainer keeps two parameter
sets: the nominal one it believes in and the true one programmed into the
device. Hardware gradients are measured on the device, backprop gradients
are computed on the nominal ideal-diode model, and the error curve is
always measured on the device.

Main Components:
- GradMethod, NoiseConfig, TrainConfig
- CrossbarParameters / CrossbarCascadeModel
- random_teacher(), initial_student(), generate_synthetic_dataset()
- loss_grad(), sgd_train(), TrainingCurve
- compare_runs(): the four reference configurations
"""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .activations import ActivationKind
from .cascade import (CascadeLayer, CascadeNetwork, CascadeState, cascade_adjoint_gradient,
                      cascade_jacobian)
from .circuit import build_crossbar_equilibrium
from .extraction import ExtractedCircuit, extract_circuit
from .gradient import KINK_TOL, HardwareBackend, ParamBinding, ParamTarget, kink_mask
from .utils import (CONFIG_VERSION, DEFAULT_CONFIG, ConvergenceError, NetlistError, read_column_csv,
                    write_column_csv)

logger = logging.getLogger(__name__)

SHOCKLEY_DEVICE = {"n": 1.05, "i_s": 1e-13}
DEFAULT_LR_SCALES = {"resistance": 10.0, "offset": 0.01, "synapse": 10.0}
CLAMP_FRACTION = 1e-6
CURVE_HEADER = "errors"


class GradMethod(str, Enum):
    HARDWARE = "hardware"
    BACKPROP = "backprop"


def device_activation(device: str) -> ActivationKind:
    """Output diode of a crossbar for the named device."""
    if device == "ideal":
        return ActivationKind.ideal_reverse()
    if device == "shockley":
        return ActivationKind.shockley_reverse(**SHOCKLEY_DEVICE)
    raise NetlistError(f"Unknown device {device!r}; choose 'ideal' or 'shockley'")


@dataclass(frozen=True)
class NoiseConfig:
    """
    Device programming noise, as relative standard deviations.

    Attributes:
        init_rel_var: Spread of the initially programmed resistances
        update_rel_var: Spread of every applied resistance update
    """

    init_rel_var: float = 0.05
    update_rel_var: float = 0.10

    def __post_init__(self):
        for name in ("init_rel_var", "update_rel_var"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise NetlistError(f"noise.{name} must be in [0, 1), got {value}")

    def to_dict(self) -> Dict[str, float]:
        return {"init_rel_var": self.init_rel_var, "update_rel_var": self.update_rel_var}


@dataclass(frozen=True)
class TrainConfig:
    """
    Training run settings.

    Attributes:
        widths: Port counts between layers, input first
        epochs: Passes over the dataset
        learning_rate: Base SGD step
        grad_method: Hardware linearization or backprop
        noise: Device noise, or None
        seed: Seed for teacher, data, shuffling and noise
        n_samples: Dataset size
        input_range: Inputs are uniform in [-input_range, input_range] volts
        initial_resistance: Student resistances at start (ohm)
        device: Device the trainer drives ("ideal" or "shockley")
        teacher_device: Device of the data-generating network
        lr_scales: Step multipliers per parameter type
        solver: Equilibrium solver name
        tol: Solver tolerance
        max_iter: Solver iteration cap
    """

    widths: Tuple[int, ...] = (10, 9, 7, 8, 4)
    epochs: int = 250
    learning_rate: float = 1e-3
    grad_method: GradMethod = GradMethod.HARDWARE
    noise: Optional[NoiseConfig] = None
    seed: int = 0
    n_samples: int = 10
    input_range: float = 1.0
    initial_resistance: float = 100.0
    device: str = "ideal"
    teacher_device: str = "ideal"
    lr_scales: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_LR_SCALES))
    solver: str = "fb"
    tol: float = 1e-10
    max_iter: int = 100_000

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "grad_method", GradMethod(self.grad_method))
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise NetlistError(f"widths needs at least two positive entries, got {list(self.widths)}")
        if self.epochs < 0:
            raise NetlistError(f"epochs must be non-negative, got {self.epochs}")
        if self.learning_rate < 0:
            raise NetlistError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.n_samples < 1:
            raise NetlistError(f"n_samples must be at least 1, got {self.n_samples}")
        if not self.initial_resistance > 0:
            raise NetlistError(f"initial_resistance must be positive, got {self.initial_resistance}")
        device_activation(self.device)
        device_activation(self.teacher_device)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        """
        Build from the "training" section of a configuration (plus "solver").

        Raises:
            NetlistError: On invalid values
        """
        section = dict(DEFAULT_CONFIG["training"])
        section.update(data.get("training", data))
        solver = dict(DEFAULT_CONFIG["solver"])
        solver.update(data.get("solver", {}))
        noise = section.get("noise")
        try:
            return cls(
                widths=tuple(section["widths"]),
                epochs=int(section["epochs"]),
                learning_rate=float(section["learning_rate"]),
                grad_method=GradMethod(section["grad_method"]),
                noise=NoiseConfig(**noise) if noise else None,
                seed=int(section["seed"]),
                n_samples=int(section["n_samples"]),
                input_range=float(section["input_range"]),
                initial_resistance=float(section["initial_resistance"]),
                device=str(section["device"]),
                teacher_device=str(section.get("teacher_device", "ideal")),
                lr_scales={**DEFAULT_LR_SCALES, **(section.get("lr_scales") or {})},
                solver=str(solver["name"]),
                tol=float(solver["tol"]),
                max_iter=int(solver["max_iter"]),
            )
        except (TypeError, ValueError, KeyError) as e:
            if isinstance(e, NetlistError):
                raise
            raise NetlistError(f"Invalid training configuration: {str(e)}") from e

    def with_changes(self, **changes) -> "TrainConfig":
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return TrainConfig(**values)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": CONFIG_VERSION,
            "training": {
                "widths": list(self.widths),
                "epochs": self.epochs,
                "learning_rate": self.learning_rate,
                "grad_method": self.grad_method.value,
                "noise": self.noise.to_dict() if self.noise else None,
                "seed": self.seed,
                "n_samples": self.n_samples,
                "input_range": self.input_range,
                "initial_resistance": self.initial_resistance,
                "device": self.device,
                "teacher_device": self.teacher_device,
                "lr_scales": dict(self.lr_scales),
            },
            "solver": {"name": self.solver, "tol": self.tol, "max_iter": self.max_iter},
        }


@dataclass
class CrossbarParameters:
    """
    Trainable values of a crossbar cascade.

    Attributes:
        resistances: Per layer, (p+1)×(q+1) ohms including reference lines
        offsets: Per layer, q output-port currents (amperes)
        synapses: Per layer, p input gains
    """

    resistances: List[np.ndarray]
    offsets: List[np.ndarray]
    synapses: List[np.ndarray]

    def copy(self) -> "CrossbarParameters":
        return CrossbarParameters([r.copy() for r in self.resistances], [o.copy() for o in self.offsets],
                                  [s.copy() for s in self.synapses])

    @property
    def n_layers(self) -> int:
        return len(self.resistances)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "resistances": [r.tolist() for r in self.resistances],
            "offsets": [o.tolist() for o in self.offsets],
            "synapses": [s.tolist() for s in self.synapses],
        }


class CrossbarCascadeModel:
    """
    Cascade of equilibrium crossbars with trainable parameters.

    Layer i is a widths[i] × widths[i+1] crossbar whose inputs are
    u = (output-port currents, input voltages). The input voltages are
    cascaded, the output-port currents are the trainable offsets and the
    output-port voltages are forwarded.

    Args:
        widths: Port counts, input first
        params: Parameter values
        device: "ideal" or "shockley"
    """

    def __init__(self, widths: Sequence[int], params: CrossbarParameters, device: str = "ideal"):
        self.widths = tuple(int(w) for w in widths)
        self.device = device
        self.activation = device_activation(device)
        if params.n_layers != len(self.widths) - 1:
            raise NetlistError(f"Expected parameters for {len(self.widths) - 1} layers, got {params.n_layers}")
        for i, (p, q) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            if params.resistances[i].shape != (p + 1, q + 1):
                raise NetlistError(f"Layer {i}: resistances must have shape {(p + 1, q + 1)}, "
                                   f"got {params.resistances[i].shape}")
            if params.offsets[i].shape != (q,) or params.synapses[i].shape != (p,):
                raise NetlistError(f"Layer {i}: expected {q} offsets and {p} synapses")
        self.params = params
        self._templates: List[Optional[ExtractedCircuit]] = [None] * (len(self.widths) - 1)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def _circuit(self, i: int) -> ExtractedCircuit:
        p, q = self.widths[i], self.widths[i + 1]
        graph = build_crossbar_equilibrium(p, q, 1.0 / self.params.resistances[i], self.activation,
                                           output_ports=True, as_resistors=True)
        template = self._templates[i]
        circuit = extract_circuit(graph) if template is None else template.with_graph(graph)
        self._templates[i] = circuit
        return circuit

    def network(self) -> CascadeNetwork:
        layers = []
        for i in range(self.n_layers):
            p, q = self.widths[i], self.widths[i + 1]
            layers.append(CascadeLayer.from_circuit(
                self._circuit(i),
                cascaded_inputs=range(q, q + p),
                aux_inputs=range(q),
                outputs=range(q),
            ))
        return CascadeNetwork(layers, self.params.synapses)

    def aux(self) -> List[np.ndarray]:
        return list(self.params.offsets)

    def bindings(self) -> List[ParamBinding]:
        """Every trainable parameter, layer by layer: resistances, offsets, synapses."""
        bindings = []
        for i in range(self.n_layers):
            p, q = self.widths[i], self.widths[i + 1]
            graph = self._circuit(i).graph
            for edge in graph.resistive_indices:
                bindings.append(ParamBinding(len(bindings), ParamTarget.RESISTANCE, edge=edge, layer=i))
            for k in range(q):
                bindings.append(ParamBinding(len(bindings), ParamTarget.INPUT_OFFSET, entry=k, layer=i))
            for j in range(p):
                bindings.append(ParamBinding(len(bindings), ParamTarget.SYNAPSE, entry=j, layer=i))
        return bindings

    def values(self) -> np.ndarray:
        """Parameter vector in bindings() order."""
        parts = []
        for i in range(self.n_layers):
            parts.extend([self.params.resistances[i].ravel(), self.params.offsets[i], self.params.synapses[i]])
        return np.concatenate(parts)

    def with_params(self, params: CrossbarParameters, device: Optional[str] = None) -> "CrossbarCascadeModel":
        model = CrossbarCascadeModel(self.widths, params, device or self.device)
        if model.device == self.device:
            model._templates = list(self._templates)
        return model

    def evaluate(self, x, z0=None, solver: str = "fb", **solver_kwargs) -> Tuple[CascadeNetwork, CascadeState]:
        network = self.network()
        return network, network.evaluate(x, self.aux(), solver, z0=z0, **solver_kwargs)

    def __call__(self, x, **kwargs) -> np.ndarray:
        return self.evaluate(x, **kwargs)[1].y

    def to_dict(self) -> Dict[str, Any]:
        """Network description: layer netlists, synapses and offsets."""
        return {
            "version": CONFIG_VERSION,
            "widths": list(self.widths),
            "device": self.device,
            "layers": [self._circuit(i).graph.to_dict() for i in range(self.n_layers)],
            "synapses": [s.tolist() for s in self.params.synapses],
            "offsets": [o.tolist() for o in self.params.offsets],
        }


def random_teacher(widths: Sequence[int], rng: np.random.Generator, device: str = "ideal") -> CrossbarCascadeModel:
    """
    Random data-generating network.

    Resistances are log-normal around 100 ohm, offsets small currents,
    and synapses near the layer index.
    """
    widths = tuple(widths)
    resistances, offsets, synapses = [], [], []
    for i, (p, q) in enumerate(zip(widths[:-1], widths[1:])):
        resistances.append(100.0 * np.exp(0.5 * rng.standard_normal((p + 1, q + 1))))
        offsets.append(2e-3 * rng.standard_normal(q))
        synapses.append((i + 1) * (1.0 + 0.1 * rng.standard_normal(p)))
    return CrossbarCascadeModel(widths, CrossbarParameters(resistances, offsets, synapses), device)


def initial_student(widths: Sequence[int], initial_resistance: float = 100.0,
                    device: str = "ideal") -> CrossbarCascadeModel:
    """Uniform resistances, zero offsets and synapses equal to the layer index (1-based)."""
    widths = tuple(widths)
    resistances = [np.full((p + 1, q + 1), float(initial_resistance)) for p, q in zip(widths[:-1], widths[1:])]
    offsets = [np.zeros(q) for q in widths[1:]]
    synapses = [np.full(p, float(i + 1)) for i, p in enumerate(widths[:-1])]
    return CrossbarCascadeModel(widths, CrossbarParameters(resistances, offsets, synapses), device)


def generate_synthetic_dataset(teacher: CrossbarCascadeModel, n_samples: int, rng: np.random.Generator,
                               input_range: float = 1.0, solver: str = "fb",
                               **solver_kwargs) -> Tuple[np.ndarray, np.ndarray]:
    """
    Inputs uniform in [-input_range, input_range] and the teacher's outputs.

    Returns:
        (inputs of shape (n, widths[0]), targets of shape (n, widths[-1]))

    Raises:
        NetlistError: If n_samples < 1
        ConvergenceError: If the teacher fails to settle
    """
    if n_samples < 1:
        raise NetlistError(f"n_samples must be at least 1, got {n_samples}")
    inputs = rng.uniform(-input_range, input_range, size=(n_samples, teacher.widths[0]))
    network = teacher.network()
    targets = np.array([network.evaluate(x, teacher.aux(), solver, **solver_kwargs).y for x in inputs])
    logger.info(f"Generated {n_samples} samples from a {list(teacher.widths)} teacher")
    return inputs, targets


def loss_grad(network: CascadeNetwork, aux: Sequence[np.ndarray], sample: Tuple[np.ndarray, np.ndarray],
              bindings: Sequence[ParamBinding], grad_method: Union[GradMethod, str] = GradMethod.HARDWARE,
              backend: Optional[HardwareBackend] = None, z0=None, solver: str = "fb",
              **solver_kwargs) -> Tuple[float, np.ndarray, bool, CascadeState]:
    """
    Loss ||y - y_d||^2 and its gradient for one sample.

    Args:
        network: Cascade to differentiate
        aux: Per-layer auxiliary inputs
        sample: (x, y_d)
        bindings: Parameters
        grad_method: Hardware linearization or backprop
        backend: Hardware backend
        z0: Warm start per layer

    Returns:
        (loss, gradient per binding, kink flag, operating state)
    """
    x, target = sample
    state = network.evaluate(x, aux, solver, z0=z0, **solver_kwargs)
    residual = state.y - np.asarray(target, dtype=float)
    loss = float(residual @ residual)
    dC_dy = 2.0 * residual
    if GradMethod(grad_method) is GradMethod.HARDWARE:
        jacobian, kink = cascade_jacobian(network, state, bindings, backend)
        gradient = jacobian.T @ dC_dy
    else:
        kink = any(np.any(kink_mask(layer.kernel, report.z_star, KINK_TOL))
                   for layer, report in zip(network.layers, state.reports))
        gradient = cascade_adjoint_gradient(network, state, dC_dy, bindings)
    return loss, gradient, bool(kink), state


@dataclass
class TrainingCurve:
    """
    Aggregate error sqrt(sum_i ||y_di - y_i||^2) after every epoch.

    Attributes:
        errors: One entry per epoch
        initial_error: Error before training
        kink_warnings: Samples whose operating point was near a kink
        config: Run configuration
        parameters: Final nominal parameters
    """

    errors: List[float] = field(default_factory=list)
    initial_error: float = float("nan")
    kink_warnings: int = 0
    config: Optional[TrainConfig] = None
    parameters: Optional[CrossbarParameters] = None

    def __len__(self) -> int:
        return len(self.errors)

    def to_csv(self, path: Union[str, Path]) -> Path:
        return write_column_csv(path, CURVE_HEADER, self.errors)

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "TrainingCurve":
        return cls(errors=read_column_csv(path, CURVE_HEADER))


def aggregate_error(model: CrossbarCascadeModel, inputs: np.ndarray, targets: np.ndarray,
                    solver: str = "fb", **solver_kwargs) -> float:
    network = model.network()
    total = 0.0
    for x, target in zip(inputs, targets):
        y = network.evaluate(x, model.aux(), solver, **solver_kwargs).y
        total += float(np.sum((target - y) ** 2))
    return float(np.sqrt(total))


def _apply_update(params: CrossbarParameters, step: np.ndarray, widths: Sequence[int],
                  floor: float, resistance_factor: Optional[np.ndarray] = None) -> CrossbarParameters:
    """Apply a descent step; resistances move in log space and stay above floor."""
    updated = params.copy()
    offset = 0
    for i, (p, q) in enumerate(zip(widths[:-1], widths[1:])):
        n_res = (p + 1) * (q + 1)
        log_step = step[offset: offset + n_res].reshape(p + 1, q + 1)
        if resistance_factor is not None:
            log_step = log_step * resistance_factor[offset: offset + n_res].reshape(p + 1, q + 1)
        resistances = params.resistances[i] * np.exp(log_step)
        if np.any(resistances < floor):
            logger.warning(f"Layer {i}: clamped {int(np.sum(resistances < floor))} resistances at {floor:.3e} ohm")
        updated.resistances[i] = np.maximum(resistances, floor)
        offset += n_res
        updated.offsets[i] = params.offsets[i] + step[offset: offset + q]
        offset += q
        updated.synapses[i] = params.synapses[i] + step[offset: offset + p]
        offset += p
    return updated


def _scales(bindings: Sequence[ParamBinding], lr_scales: Dict[str, float]) -> np.ndarray:
    names = {
        ParamTarget.RESISTANCE: "resistance",
        ParamTarget.INPUT_OFFSET: "offset",
        ParamTarget.SYNAPSE: "synapse",
    }
    return np.array([lr_scales.get(names.get(b.target, ""), 1.0) for b in bindings])


def sgd_train(student: CrossbarCascadeModel, dataset: Tuple[np.ndarray, np.ndarray], config: TrainConfig,
              rng: Optional[np.random.Generator] = None,
              backend: Optional[HardwareBackend] = None) -> TrainingCurve:
    """
    Single-sample SGD with per-epoch shuffling.

    Args:
        student: Initial model (its parameters are the nominal values)
        dataset: (inputs, targets)
        config: Training configuration
        rng: Random stream for shuffling and noise
        backend: Hardware backend for gradient measurements

    Returns:
        TrainingCurve with one error per epoch and the final parameters

    Raises:
        ConvergenceError: If a solve fails; carries the epoch index
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    inputs, targets = (np.asarray(a, dtype=float) for a in dataset)
    solver_kwargs = {"tol": config.tol, "max_iter": config.max_iter}
    floor = CLAMP_FRACTION * config.initial_resistance
    noise = config.noise

    nominal = student.with_params(student.params.copy(), device=config.device)
    if noise is not None:
        true_params = nominal.params.copy()
        for i, r in enumerate(true_params.resistances):
            true_params.resistances[i] = np.maximum(r * (1.0 + noise.init_rel_var * rng.standard_normal(r.shape)), floor)
        device = nominal.with_params(true_params)
    else:
        device = nominal
    ideal_nominal = nominal.with_params(nominal.params, device="ideal")

    bindings = device.bindings()
    scales = config.learning_rate * _scales(bindings, config.lr_scales)
    is_resistance = np.array([b.target is ParamTarget.RESISTANCE for b in bindings])

    curve = TrainingCurve(config=config)
    try:
        curve.initial_error = aggregate_error(device, inputs, targets, config.solver, **solver_kwargs)
    except ConvergenceError as e:
        raise ConvergenceError(f"Initial evaluation failed: {str(e)}", epoch=0) from e
    logger.info(f"Training {config.grad_method.value} for {config.epochs} epochs, initial error {curve.initial_error:.6g}")

    warm: Dict[int, List[np.ndarray]] = {}
    for epoch in range(config.epochs):
        try:
            for index in rng.permutation(len(inputs)):
                sample = (inputs[index], targets[index])
                if config.grad_method is GradMethod.HARDWARE:
                    model, values = device, device.values()
                else:
                    ideal_nominal = ideal_nominal.with_params(nominal.params)
                    model, values = ideal_nominal, nominal.values()
                _, gradient, kink, state = loss_grad(model.network(), model.aux(), sample, bindings,
                                                     config.grad_method, backend, warm.get(index),
                                                     config.solver, **solver_kwargs)
                warm[index] = state.warm_start()
                curve.kink_warnings += int(kink)

                # resistances descend along log r: d/dlog r = r d/dr
                gradient = np.where(is_resistance, gradient * values, gradient)
                step = -scales * gradient
                nominal = nominal.with_params(_apply_update(nominal.params, step, nominal.widths, floor))
                if noise is not None:
                    factor = 1.0 + noise.update_rel_var * rng.standard_normal(step.shape)
                    device = device.with_params(_apply_update(device.params, step, device.widths, floor, factor))
                else:
                    device = nominal
            error = aggregate_error(device, inputs, targets, config.solver, **solver_kwargs)
        except ConvergenceError as e:
            logger.error(f"Training diverged in epoch {epoch}: {str(e)}")
            raise ConvergenceError(f"Epoch {epoch}: {str(e)}", epoch=epoch) from e
        curve.errors.append(error)
        logger.debug(f"Epoch {epoch}: error {error:.6g}")

    if curve.errors:
        logger.info(f"Finished {config.epochs} epochs, final error {curve.errors[-1]:.6g}")
    curve.parameters = nominal.params
    return curve


def run_training(config: TrainConfig, backend: Optional[HardwareBackend] = None
                 ) -> Tuple[TrainingCurve, CrossbarCascadeModel]:
    """
    Full experiment: teacher, dataset, student and SGD from one seed.

    Returns:
        (curve, trained nominal model)
    """
    teacher_seq, data_seq, train_seq = np.random.SeedSequence(config.seed).spawn(3)
    teacher = random_teacher(config.widths, np.random.default_rng(teacher_seq), config.teacher_device)
    dataset = generate_synthetic_dataset(teacher, config.n_samples, np.random.default_rng(data_seq),
                                         config.input_range, config.solver, tol=config.tol, max_iter=config.max_iter)
    student = initial_student(config.widths, config.initial_resistance, config.device)
    curve = sgd_train(student, dataset, config, np.random.default_rng(train_seq), backend)
    return curve, student.with_params(curve.parameters)


COMPARE_RUNS = {
    "errors_hardware_0_error.csv": (GradMethod.HARDWARE, False),
    "errors_split_0_error.csv": (GradMethod.BACKPROP, False),
    "errors_hardware_error_with_comp.csv": (GradMethod.HARDWARE, True),
    "errors_split_error_no_comp.csv": (GradMethod.BACKPROP, True),
}


def network_path_for(curve_path: Union[str, Path]) -> Path:
    """Network JSON written next to a comparison curve: errors_x.csv -> network_x.json."""
    curve_path = Path(curve_path)
    return curve_path.with_name(curve_path.stem.replace("errors", "network", 1) + ".json")


def _run_to_csv(config: TrainConfig, path: Path) -> Tuple[str, float]:
    curve, model = run_training(config)
    curve.to_csv(path)
    network_path_for(path).write_text(json.dumps(model.to_dict(), indent=2), encoding="utf-8")
    final = curve.errors[-1] if curve.errors else curve.initial_error
    return str(path), final


def compare_runs(config: TrainConfig, out_dir: Union[str, Path], jobs: int = 1) -> Dict[str, float]:
    """
    Run both gradient methods with and without device noise.

    Writes one curve CSV per configuration into out_dir, and the trained
    network beside it (see network_path_for).

    Returns:
        Mapping from written curve path to final error
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    noise = config.noise or NoiseConfig()
    runs = [(config.with_changes(grad_method=method, noise=noise if noisy else None), out_dir / name)
            for name, (method, noisy) in COMPARE_RUNS.items()]

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_to_csv, *zip(*runs)))
    else:
        results = [_run_to_csv(c, p) for c, p in runs]
    for path, final in results:
        logger.info(f"Wrote {path} (final error {final:.6g})")
    return dict(results)
