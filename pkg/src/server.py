"""
MCP Server Implementation for Equilibrium Networks

This module exposes the circuit library as MCP tools over stdio. Netlists
are passed either inline (a netlist JSON object) or as a file path, and
every result is the same JSON document the command line prints.

The server exposes the following tools:
- build_crossbar: Build an equilibrium or feedforward crossbar netlist
- infer: Solve a netlist for an input vector
- gradient: Output gradient for one parameter (hardware linearization and/or finite differences)
- check_network: Reciprocity, monotonicity and Stieltjes checks

Usage:
    python -m src.server

Environment Variables:
    EQUINET_LOG_LEVEL: Logging level (default: INFO)
"""

import asyncio
import json
import logging
from typing import Any, Dict, List, Sequence, Union

import aiofiles
import mcp.server.stdio
import mcp.types as types
import numpy as np
from mcp.server import NotificationOptions, Server
from mcp.server.models import InitializationOptions

from . import __version__
from .circuit import CircuitGraph, build_crossbar_equilibrium, build_crossbar_feedforward
from .extraction import check_network, extract_circuit
from .gradient import ParamBinding, finite_difference_gradient, gradient_output_wrt_param
from .solver import solve
from .utils import (ConvergenceError, NetlistError, configure_logging, format_error_response,
                    parse_document, parse_vector, to_jsonable)

logger = logging.getLogger(__name__)

app = Server("equinet")

_NETLIST_SCHEMA = {
    "description": "Netlist JSON object, or a path to a netlist file",
    "oneOf": [{"type": "object"}, {"type": "string"}],
}

_SOLVER_PROPERTIES = {
    "solver": {"type": "string", "enum": ["fb", "pr"], "default": "fb"},
    "tol": {"type": "number", "default": 1e-10},
    "max_iter": {"type": "integer", "default": 100000},
}


async def load_netlist(source: Union[str, Dict[str, Any]]) -> CircuitGraph:
    """
    Netlist from an inline object or a file path.

    Raises:
        NetlistError: On unreadable or invalid netlists
    """
    if isinstance(source, dict):
        return CircuitGraph.from_dict(source, "netlist")
    try:
        async with aiofiles.open(source, "r", encoding="utf-8") as f:
            text = await f.read()
    except OSError as e:
        raise NetlistError(f"Cannot read {source}: {str(e)}") from e
    return CircuitGraph.from_dict(parse_document(text, str(source)), str(source))


def _solver_kwargs(arguments: Dict[str, Any]) -> Dict[str, Any]:
    return {
        "tol": float(arguments.get("tol", 1e-10)),
        "max_iter": int(arguments.get("max_iter", 100_000)),
    }


class NetworkActions:
    """Tool implementations; heavy numerics run in a worker thread."""

    async def build_crossbar(self, kind: str, p: int, q: int, conductances=None,
                             seed=None, output_ports: bool = False) -> Dict[str, Any]:
        shape = (p + 1, q + 1) if kind == "equilibrium" else (p, q)
        if conductances is not None:
            G = np.asarray(conductances, dtype=float)
        elif seed is not None:
            G = np.random.default_rng(int(seed)).uniform(0.5, 1.5, size=shape)
        else:
            G = np.ones(shape)
        if kind == "equilibrium":
            graph = build_crossbar_equilibrium(p, q, G)
        elif kind == "feedforward":
            graph = build_crossbar_feedforward(p, q, G, output_ports=output_ports)
        else:
            raise ValueError(f"Unknown crossbar kind: {kind}")
        logger.info(f"Built {kind} crossbar {p}x{q} with {len(graph.edges)} edges")
        return graph.to_dict()

    async def infer(self, netlist, u, solver: str = "fb", **solver_kwargs) -> Dict[str, Any]:
        circuit = extract_circuit(await load_netlist(netlist))
        vector = parse_vector(u, circuit.kernel.m, "u")
        report = await asyncio.to_thread(solve, circuit.kernel, vector, solver, **solver_kwargs)
        return report.to_dict()

    async def gradient(self, netlist, u, param: str, method: str = "both", solver: str = "fb",
                       **solver_kwargs) -> Dict[str, Any]:
        circuit = extract_circuit(await load_netlist(netlist))
        vector = parse_vector(u, circuit.kernel.m, "u")
        binding = ParamBinding.parse(param, circuit)
        result: Dict[str, Any] = {"param": param, "units": binding.units}
        if method in ("hw", "both"):
            operating = await asyncio.to_thread(solve, circuit.kernel, vector, solver, **solver_kwargs)
            if not operating.converged:
                raise ConvergenceError(f"Operating point did not converge (residual {operating.residual:.3e})")
            gradient = gradient_output_wrt_param(circuit, binding, operating)
            result["hardware"] = gradient.value
            result["kink_warning"] = gradient.kink
        if method in ("fd", "both"):
            result["finite_difference"] = await asyncio.to_thread(
                finite_difference_gradient, circuit, binding, vector, None, solver, **solver_kwargs
            )
        if method == "both":
            hw, fd = result["hardware"], result["finite_difference"]
            result["deviation"] = float(np.max(np.abs(hw - fd), initial=0.0) / (1.0 + np.max(np.abs(fd), initial=0.0)))
        return to_jsonable(result)

    async def check_network(self, netlist) -> Dict[str, Any]:
        graph = await load_netlist(netlist)
        return to_jsonable(await asyncio.to_thread(check_network, graph))


actions = NetworkActions()


@app.list_tools()
async def handle_list_tools() -> List[types.Tool]:
    """
    List all available network tools.

    Returns:
        List of MCP tool definitions with descriptions and parameters
    """
    return [
        types.Tool(
            name="build_crossbar",
            description="Build a crossbar netlist (equilibrium with reference lines, or common-earth feedforward)",
            inputSchema={
                "type": "object",
                "properties": {
                    "kind": {"type": "string", "enum": ["equilibrium", "feedforward"], "default": "equilibrium"},
                    "p": {"type": "integer", "description": "Number of inputs"},
                    "q": {"type": "integer", "description": "Number of outputs"},
                    "conductances": {
                        "type": "array",
                        "description": "Conductance matrix, (p+1)x(q+1) for equilibrium or pxq for feedforward"
                    },
                    "seed": {"type": "integer", "description": "Random conductances in [0.5, 1.5] (optional)"},
                    "output_ports": {"type": "boolean", "default": False},
                },
                "required": ["p", "q"]
            }
        ),
        types.Tool(
            name="infer",
            description="Solve the equilibrium of a netlist for an input vector",
            inputSchema={
                "type": "object",
                "properties": {
                    "netlist": _NETLIST_SCHEMA,
                    "u": {"type": "array", "items": {"type": "number"}},
                    **_SOLVER_PROPERTIES,
                },
                "required": ["netlist", "u"]
            }
        ),
        types.Tool(
            name="gradient",
            description="Gradient of the outputs with respect to one circuit parameter",
            inputSchema={
                "type": "object",
                "properties": {
                    "netlist": _NETLIST_SCHEMA,
                    "u": {"type": "array", "items": {"type": "number"}},
                    "param": {
                        "type": "string",
                        "description": "resistance:<edge>, conductance:<edge>, input:<entry> or none"
                    },
                    "method": {"type": "string", "enum": ["hw", "fd", "both"], "default": "both"},
                    **_SOLVER_PROPERTIES,
                },
                "required": ["netlist", "u", "param"]
            }
        ),
        types.Tool(
            name="check_network",
            description="Run reciprocity, dissipativity, monotonicity and Stieltjes checks on a netlist",
            inputSchema={
                "type": "object",
                "properties": {"netlist": _NETLIST_SCHEMA},
                "required": ["netlist"]
            }
        ),
    ]


@app.call_tool()
async def handle_call_tool(name: str, arguments: Dict[str, Any]) -> Sequence[types.TextContent]:
    """
    Handle tool execution requests.

    Args:
        name: Name of the tool to execute
        arguments: Tool arguments as provided by the client

    Returns:
        Sequence of text content responses
    """
    try:
        if name == "build_crossbar":
            result = await actions.build_crossbar(
                kind=arguments.get("kind", "equilibrium"),
                p=int(arguments["p"]),
                q=int(arguments["q"]),
                conductances=arguments.get("conductances"),
                seed=arguments.get("seed"),
                output_ports=bool(arguments.get("output_ports", False)),
            )

        elif name == "infer":
            result = await actions.infer(
                netlist=arguments["netlist"],
                u=arguments["u"],
                solver=arguments.get("solver", "fb"),
                **_solver_kwargs(arguments),
            )

        elif name == "gradient":
            result = await actions.gradient(
                netlist=arguments["netlist"],
                u=arguments["u"],
                param=arguments["param"],
                method=arguments.get("method", "both"),
                solver=arguments.get("solver", "fb"),
                **_solver_kwargs(arguments),
            )

        elif name == "check_network":
            result = await actions.check_network(arguments["netlist"])

        else:
            raise ValueError(f"Unknown tool: {name}")

        response_data = {
            "content": [
                {
                    "type": "text",
                    "text": json.dumps(result, indent=2)
                }
            ],
            "isError": False
        }
        return [types.TextContent(type="text", text=json.dumps(response_data, indent=2))]

    except Exception as e:
        logger.error(f"Error executing tool {name}: {str(e)}")
        error_response = format_error_response(str(e), name, arguments)
        return [types.TextContent(type="text", text=json.dumps(error_response, indent=2))]


def main():
    """
    Main entry point for the equinet MCP server.

    Starts the MCP server with stdio transport.
    """
    configure_logging()

    async def run_server():
        try:
            async with mcp.server.stdio.stdio_server() as (read_stream, write_stream):
                logger.info("Starting equinet MCP server...")
                await app.run(
                    read_stream,
                    write_stream,
                    InitializationOptions(
                        server_name="equinet",
                        server_version=__version__,
                        capabilities=app.get_capabilities(
                            notification_options=NotificationOptions(),
                            experimental_capabilities={}
                        )
                    )
                )
        except KeyboardInterrupt:
            logger.info("Server interrupted by user")
        except Exception as e:
            logger.error(f"Server error: {str(e)}")
        finally:
            logger.info("Server shutdown complete")

    asyncio.run(run_server())


if __name__ == "__main__":
    main()
