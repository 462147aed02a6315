"""
Utility Functions Module

This module provides the shared plumbing used throughout equinet: the
exception hierarchy, configuration loading, logging setup, JSON and CSV
helpers and the MCP error-response format. Nothing here knows about
circuits; the analysis modules import from it, never the other way round.

Key Functions:
- Exception types for input, analysis and convergence failures
- Configuration defaults with file and environment overrides
- Logging configuration (stderr only)
- Vector parsing with line/column diagnostics
- Error response formatting for the tool server
- CSV writing and reading for training curves
"""

import copy
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
import yaml

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class NetlistError(ValueError):
    """Malformed netlist or invalid element value."""


class PartitionError(ValueError):
    """No tree/cotree assignment satisfies the element constraints."""


class DimensionError(ValueError):
    """Vector or matrix shapes do not match the network interface."""


class InfeasibleOperatingPoint(ValueError):
    """An operating point lies outside the domain of its activation."""


class DegenerateNetworkError(RuntimeError):
    """A matrix that must be invertible is singular."""


class NonReciprocalError(RuntimeError):
    """A form fails the reciprocity signature check."""


class ConvergenceError(RuntimeError):
    """An iterative procedure did not converge."""

    def __init__(self, message: str, epoch: Optional[int] = None):
        super().__init__(message)
        self.epoch = epoch


DEFAULT_CONFIG: Dict[str, Any] = {
    "version": CONFIG_VERSION,
    "solver": {
        "name": "fb",
        "tol": 1e-10,
        "max_iter": 100_000,
        "alpha": 0.0,
        "polish_every": 50,
        "relaxation": 0.5,
    },
    "tolerances": {
        "symmetry": 1e-10,
        "psd": 1e-10,
        "offdiag": 1e-12,
        "kink": 1e-9,
    },
    "training": {
        "widths": [10, 9, 7, 8, 4],
        "epochs": 250,
        "learning_rate": 1e-3,
        "grad_method": "hardware",
        "n_samples": 10,
        "input_range": 1.0,
        "initial_resistance": 100.0,
        "device": "ideal",
        "noise": None,
        "seed": 0,
    },
    "log_level": "INFO",
}


def configure_logging(level: Optional[Union[str, int]] = None) -> None:
    """
    Configure root logging to stderr.

    stdout stays reserved for command output and JSON-RPC traffic.

    Args:
        level: Level name or number; defaults to EQUINET_LOG_LEVEL or INFO
    """
    if level is None:
        level = os.getenv("EQUINET_LOG_LEVEL", "INFO")
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _deep_update(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Load configuration from defaults, an optional file and the environment.

    JSON files are valid YAML, so both formats go through yaml.safe_load.

    Args:
        path: Optional JSON or YAML file
        overrides: Optional dictionary merged last before the environment

    Returns:
        Merged configuration dictionary

    Raises:
        NetlistError: If the file cannot be parsed or has the wrong version
    """
    config = copy.deepcopy(DEFAULT_CONFIG)

    if path is not None:
        data = read_document(path)
        if not isinstance(data, dict):
            raise NetlistError(f"Config {path} must be a mapping, got {type(data).__name__}")
        check_version(data, str(path))
        _deep_update(config, data)

    if overrides:
        _deep_update(config, overrides)

    seed = os.getenv("EQUINET_SEED")
    if seed is not None:
        try:
            config["training"]["seed"] = int(seed)
        except ValueError as e:
            raise NetlistError(f"EQUINET_SEED must be an integer, got {seed!r}") from e
        logger.info(f"Seed overridden from environment: {seed}")

    level = os.getenv("EQUINET_LOG_LEVEL")
    if level:
        config["log_level"] = level

    return config


def check_version(document: Dict[str, Any], source: str = "document") -> None:
    """
    Reject documents that declare an unsupported format version.

    Args:
        document: Parsed JSON or YAML mapping
        source: Name used in the error message

    Raises:
        NetlistError: If the version is missing or unsupported
    """
    version = document.get("version")
    if version != CONFIG_VERSION:
        raise NetlistError(f"{source}: unsupported version {version!r} (expected {CONFIG_VERSION})")


def read_document(path: Union[str, Path]) -> Any:
    """
    Read a JSON or YAML file.

    Args:
        path: File path; a .json suffix selects the JSON parser

    Returns:
        The parsed document

    Raises:
        NetlistError: On unreadable files or parse errors, with line and column
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise NetlistError(f"Cannot read {path}: {str(e)}") from e
    return parse_document(text, str(path), json_only=path.suffix.lower() == ".json")


def parse_document(text: str, source: str = "<string>", json_only: bool = True) -> Any:
    """
    Parse JSON (or YAML) text with positional diagnostics.

    Args:
        text: Document text
        source: Name used in error messages
        json_only: Use the strict JSON parser

    Returns:
        The parsed document

    Raises:
        NetlistError: With line/column of the first syntax error
    """
    if json_only:
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise NetlistError(f"{source}:{e.lineno}:{e.colno}: {e.msg}") from e
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        if mark is not None:
            raise NetlistError(f"{source}:{mark.line + 1}:{mark.column + 1}: {e}") from e
        raise NetlistError(f"{source}: {e}") from e


def parse_vector(value: Any, length: Optional[int] = None, name: str = "vector") -> np.ndarray:
    """
    Convert a JSON value into a float vector.

    Accepts a plain list or a mapping with a single "u" or "values" key.

    Args:
        value: Parsed JSON value
        length: Required length, if known
        name: Name used in error messages

    Returns:
        1-D float array

    Raises:
        DimensionError: On wrong length
        NetlistError: On non-numeric entries
    """
    if isinstance(value, dict):
        for key in ("u", "values", "x"):
            if key in value:
                value = value[key]
                break
        else:
            raise NetlistError(f"{name}: expected a list or a mapping with key 'u'")
    try:
        vector = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise NetlistError(f"{name}: entries must be numbers") from e
    if vector.ndim != 1:
        raise DimensionError(f"{name}: expected a flat list, got shape {vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise NetlistError(f"{name}: entries must be finite")
    if length is not None and vector.shape[0] != length:
        raise DimensionError(f"{name}: expected length {length}, got {vector.shape[0]}")
    return vector


def to_jsonable(value: Any) -> Any:
    """Recursively convert numpy containers into JSON-serializable objects."""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    return value


def format_error_response(error_message: str, tool_name: Optional[str] = None,
                          arguments: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Format a standardized MCP-compliant error response.

    Args:
        error_message: Error message to include
        tool_name: Name of the tool that failed
        arguments: Arguments that were passed to the tool

    Returns:
        MCP-compliant error response dictionary
    """
    if tool_name:
        formatted_message = f"Error in tool '{tool_name}': {error_message}"
    else:
        formatted_message = error_message

    if arguments:
        logger.debug(f"Failed arguments for {tool_name}: {arguments}")

    return {
        "content": [
            {
                "type": "text",
                "text": formatted_message
            }
        ],
        "isError": True
    }


def write_column_csv(path: Union[str, Path], header: str, values: Iterable[float]) -> Path:
    """
    Write a single named column of floats.

    An empty iterable produces a header-only file.

    Args:
        path: Output file
        header: Column name
        values: Column values

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([header])
        for value in values:
            writer.writerow([repr(float(value))])
    return path


def read_column_csv(path: Union[str, Path], header: str) -> List[float]:
    """
    Read a single named column written by write_column_csv.

    Raises:
        NetlistError: If the header is missing
    """
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or header not in reader.fieldnames:
            raise NetlistError(f"{path}: missing '{header}' column")
        return [float(row[header]) for row in reader]
