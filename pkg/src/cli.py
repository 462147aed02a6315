"""
Command Line Interface

Entry point for the `equinet` console script.

Commands:
    build    Write a crossbar netlist
    infer    Solve a netlist for an input vector
    grad     Gradient of the outputs by hardware linearization and/or finite differences
    check    Structural checks on a netlist or a bare hybrid matrix
    train    Run the crossbar-cascade training experiment
    export   Re-emit a netlist or its extracted kernel

Exit codes: 0 success, 1 input error, 2 non-convergence, 3 failed verification.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .activations import ActivationKind
from .circuit import CircuitGraph, build_crossbar_equilibrium, build_crossbar_feedforward
from .extraction import check_network, check_reciprocity, extract_circuit
from .gradient import ParamBinding, finite_difference_gradient, gradient_output_wrt_param
from .solver import SOLVERS, solve
from .training import TrainConfig, compare_runs, network_path_for, run_training
from .utils import (CONFIG_VERSION, ConvergenceError, DegenerateNetworkError, NetlistError, NonReciprocalError,
                    configure_logging, load_config, parse_document, parse_vector, read_document, to_jsonable)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONVERGENCE = 2
EXIT_VERIFICATION = 3

GRADIENT_TOL = 1e-5


class VerificationFailed(Exception):
    """A check ran to completion and failed."""


def _emit(payload: Dict[str, Any]) -> None:
    print(json.dumps(to_jsonable(payload), indent=2))


def _load_vector(source: str, length: Optional[int] = None, name: str = "input") -> np.ndarray:
    """Vector from a JSON file, or inline JSON text such as "[1, 0]"."""
    path = Path(source)
    if path.exists():
        value = read_document(path)
    else:
        value = parse_document(source, "<input>")
    return parse_vector(value, length, name)


def _solver_kwargs(args: argparse.Namespace) -> Dict[str, Any]:
    kwargs: Dict[str, Any] = {"alpha": args.alpha, "tol": args.tol, "max_iter": args.max_iter}
    if args.solver == "pr":
        kwargs["relaxation"] = args.relaxation
    return kwargs


def _conductances(args: argparse.Namespace, shape) -> np.ndarray:
    if args.conductances:
        G = np.asarray(read_document(args.conductances), dtype=float)
        if G.shape != tuple(shape):
            raise NetlistError(f"{args.conductances}: expected shape {tuple(shape)}, got {G.shape}")
        return G
    if args.seed is not None:
        return np.random.default_rng(args.seed).uniform(0.5, 1.5, size=shape)
    return np.ones(shape)


def cmd_build(args: argparse.Namespace) -> int:
    activation = ActivationKind.shockley_reverse() if args.activation == "shockley" else None
    if args.kind == "equilibrium":
        G = _conductances(args, (args.p + 1, args.q + 1))
        graph = build_crossbar_equilibrium(args.p, args.q, G, activation)
    else:
        G = _conductances(args, (args.p, args.q))
        graph = build_crossbar_feedforward(args.p, args.q, G, activation=activation,
                                           output_ports=args.output_ports)
    if args.out:
        graph.save(args.out)
    else:
        _emit(graph.to_dict())
    return EXIT_OK


def cmd_infer(args: argparse.Namespace) -> int:
    circuit = extract_circuit(CircuitGraph.load(args.netlist))
    u = _load_vector(args.input, circuit.kernel.m)
    report = solve(circuit.kernel, u, args.solver, **_solver_kwargs(args))
    if args.json:
        _emit(report.to_dict())
    else:
        print("y = " + " ".join(f"{v:.10g}" for v in report.y))
        print(f"iterations = {report.iterations}, residual = {report.residual:.3e}, "
              f"converged = {report.converged}")
    if not report.converged:
        logger.warning(f"Solve did not converge within {args.max_iter} iterations")
        return EXIT_CONVERGENCE
    return EXIT_OK


def cmd_grad(args: argparse.Namespace) -> int:
    circuit = extract_circuit(CircuitGraph.load(args.netlist))
    u = _load_vector(args.input, circuit.kernel.m)
    binding = ParamBinding.parse(args.param, circuit)
    kwargs = _solver_kwargs(args)
    result: Dict[str, Any] = {"param": args.param, "units": binding.units}

    if args.method in ("hw", "both"):
        operating = solve(circuit.kernel, u, args.solver, **kwargs)
        if not operating.converged:
            raise ConvergenceError(f"Operating point did not converge (residual {operating.residual:.3e})")
        gradient = gradient_output_wrt_param(circuit, binding, operating)
        result["hardware"] = gradient.value
        result["kink_warning"] = gradient.kink
    if args.method in ("fd", "both"):
        result["finite_difference"] = finite_difference_gradient(circuit, binding, u, args.epsilon,
                                                                 args.solver, **kwargs)
    if args.method == "both":
        hw, fd = result["hardware"], result["finite_difference"]
        deviation = float(np.max(np.abs(hw - fd), initial=0.0) / (1.0 + np.max(np.abs(fd), initial=0.0)))
        result["deviation"] = deviation
        result["passed"] = deviation <= GRADIENT_TOL
    _emit(result)
    if result.get("passed") is False:
        raise VerificationFailed(f"Gradient deviation {result['deviation']:.3e} exceeds {GRADIENT_TOL}")
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    document = read_document(args.netlist)
    if isinstance(document, dict) and "matrix" in document and "signature" in document:
        matrix = np.asarray(document["matrix"], dtype=float)
        holds, violation = check_reciprocity(matrix, document["signature"])
        report: Dict[str, Any] = {"reciprocity": {"passed": holds, "violation": violation}}
        report["passed"] = holds
    else:
        report = check_network(CircuitGraph.from_dict(document, str(args.netlist)))
    _emit(report)
    if not report["passed"]:
        failed = [name for name, value in report.items() if isinstance(value, dict) and not value["passed"]]
        raise VerificationFailed(f"Failed checks: {', '.join(failed)}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    overrides: Dict[str, Any] = {"training": {}}
    if args.epochs is not None:
        overrides["training"]["epochs"] = args.epochs
    if args.grad_method is not None:
        overrides["training"]["grad_method"] = args.grad_method
    config = TrainConfig.from_dict(load_config(args.config, overrides))
    out_dir = Path(args.out_dir)

    if args.compare:
        finals = compare_runs(config, out_dir, args.jobs)
        _emit({"curves": finals, "networks": [str(network_path_for(path)) for path in finals]})
        return EXIT_OK

    curve, model = run_training(config)
    curve_path = curve.to_csv(out_dir / "errors.csv")
    network_path = out_dir / "network.json"
    network_path.write_text(json.dumps(model.to_dict(), indent=2), encoding="utf-8")
    _emit({
        "curve": str(curve_path),
        "network": str(network_path),
        "initial_error": curve.initial_error,
        "final_error": curve.errors[-1] if curve.errors else curve.initial_error,
        "kink_warnings": curve.kink_warnings,
    })
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    graph = CircuitGraph.load(args.netlist)
    if args.format == "netlist":
        document = graph.to_dict()
    else:
        kernel = extract_circuit(graph).kernel
        document = {
            "version": CONFIG_VERSION,
            "H": kernel.H,
            "B": kernel.B,
            "C": kernel.C,
            "D": kernel.D,
            "activations": [k.to_dict() for k in kernel.activations],
            "input_variables": [v.value for v in kernel.input_variables],
            "labels": list(kernel.labels),
        }
    text = json.dumps(to_jsonable(document), indent=2)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--solver", choices=sorted(SOLVERS), default="fb")
    parser.add_argument("--alpha", type=float, default=0.0, help="Step size (0 = automatic)")
    parser.add_argument("--tol", type=float, default=1e-10)
    parser.add_argument("--max-iter", type=int, default=100_000)
    parser.add_argument("--relaxation", type=float, default=0.5, help="Peaceman-Rachford relaxation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="equinet", description="Resistor-diode equilibrium networks")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    build = commands.add_parser("build", help="Write a crossbar netlist")
    build.add_argument("--kind", choices=["equilibrium", "feedforward"], default="equilibrium")
    build.add_argument("-p", type=int, required=True, help="Number of inputs")
    build.add_argument("-q", type=int, required=True, help="Number of outputs")
    build.add_argument("--conductances", help="JSON matrix of conductances")
    build.add_argument("--seed", type=int, help="Random conductances in [0.5, 1.5]")
    build.add_argument("--activation", choices=["ideal", "shockley"], default="ideal")
    build.add_argument("--output-ports", action="store_true", help="Feedforward: add output ports")
    build.add_argument("-o", "--out", help="Output path (stdout if omitted)")
    build.set_defaults(handler=cmd_build)

    infer = commands.add_parser("infer", help="Solve a netlist")
    infer.add_argument("netlist")
    infer.add_argument("input", help="JSON file or inline JSON list")
    infer.add_argument("--json", action="store_true", help="Print the full solve report")
    _add_solver_flags(infer)
    infer.set_defaults(handler=cmd_infer)

    grad = commands.add_parser("grad", help="Output gradient for one parameter")
    grad.add_argument("netlist")
    grad.add_argument("input")
    grad.add_argument("--param", required=True,
                      help="resistance:<edge>, conductance:<edge>, input:<entry> or none")
    grad.add_argument("--method", choices=["hw", "fd", "both"], default="both")
    grad.add_argument("--epsilon", type=float, help="Finite-difference step")
    _add_solver_flags(grad)
    grad.set_defaults(handler=cmd_grad)

    check = commands.add_parser("check", help="Structural checks")
    check.add_argument("netlist", help="Netlist or {matrix, signature} JSON")
    check.set_defaults(handler=cmd_check)

    train = commands.add_parser("train", help="Train a crossbar cascade")
    train.add_argument("config", nargs="?", help="JSON or YAML configuration")
    train.add_argument("--compare", action="store_true",
                       help="Run both methods with and without noise; writes errors_*.csv and network_*.json per run")
    train.add_argument("--out-dir", default=".")
    train.add_argument("--jobs", type=int, default=1)
    train.add_argument("--epochs", type=int)
    train.add_argument("--grad-method", choices=["hardware", "backprop"])
    train.set_defaults(handler=cmd_train)

    export = commands.add_parser("export", help="Re-emit a netlist or its kernel")
    export.add_argument("netlist")
    export.add_argument("--format", choices=["netlist", "kernel"], default="netlist")
    export.add_argument("-o", "--out")
    export.set_defaults(handler=cmd_export)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INPUT
    configure_logging("DEBUG" if args.verbose else None)

    try:
        return args.handler(args)
    except VerificationFailed as e:
        logger.error(str(e))
        return EXIT_VERIFICATION
    except NonReciprocalError as e:
        logger.error(f"Verification failed: {str(e)}")
        return EXIT_VERIFICATION
    except ConvergenceError as e:
        logger.error(f"Did not converge: {str(e)}")
        return EXIT_CONVERGENCE
    except (ValueError, DegenerateNetworkError) as e:
        logger.error(f"Input error: {str(e)}")
        return EXIT_INPUT
    except OSError as e:
        logger.error(f"File error: {str(e)}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
