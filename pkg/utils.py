"""
Utility functions shared by the season-field modules.

Holds the error hierarchy every module raises, the key=value config text
parser used by run configs, the worker-count lookup and logging setup.
"""

import ast
import logging
import os
from typing import Any, Dict

import torch
from dotenv import load_dotenv

load_dotenv()

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

THREADS_ENV_VAR = "SEASON_FIELD_THREADS"


class SeasonFieldError(Exception):
    """Root of all errors raised by season-field."""

    exit_code = 1
    kind = "error"


class InvalidArgument(SeasonFieldError, ValueError):
    """An input violates a documented precondition."""

    exit_code = EXIT_VALIDATION
    kind = "validation"


class ConfigConflict(InvalidArgument):
    """Two configuration values contradict each other."""


class EmptyRayError(InvalidArgument):
    """A ray does not intersect the scene bounding box."""


class NumericFailure(SeasonFieldError, ArithmeticError):
    """A loss or integral produced a non-finite or unconverged value."""

    exit_code = EXIT_NUMERIC
    kind = "numeric"


class DatasetIOError(SeasonFieldError, OSError):
    """A file could not be read or written."""

    exit_code = EXIT_IO
    kind = "io"

    def __init__(self, path, cause):
        self.path = str(path)
        self.cause = cause
        super().__init__(f"{self.path}: {cause}")


def parse_config_value(text: str) -> Any:
    """
    Parse a single config value to a Python literal when possible.

    Args:
        text (str): Raw value text from a key=value line

    Returns:
        Any: int, float, bool, None, quoted string contents, or the bare text

    Examples:
        >>> parse_config_value("1.5e-4")
        0.00015
        >>> parse_config_value("true")
        True
        >>> parse_config_value("town")
        'town'
    """
    value = text.strip()
    lowered = value.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if lowered in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(value)
    except (ValueError, SyntaxError):
        return value


def parse_config_text(text: str) -> Dict[str, Any]:
    """
    Parse flat ``key = value`` config text into a dictionary.

    Lines starting with ``#`` and blank lines are skipped; a trailing
    ``# comment`` after a value is dropped. Keys are lower-cased and may use
    dashes or underscores interchangeably.

    Args:
        text (str): The config file contents

    Returns:
        dict: Mapping of normalized keys to parsed values

    Raises:
        InvalidArgument: If a line has no ``=`` or a key repeats

    Examples:
        >>> parse_config_text("case = A\\nlearning-rate = 1e-4  # max lr")
        {'case': 'A', 'learning_rate': 0.0001}
    """
    if not isinstance(text, str):
        raise TypeError(f"Expected string config text, got {type(text).__name__}")

    parsed: Dict[str, Any] = {}
    for line_number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"config line {line_number}: expected key = value, got {raw_line.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip().lower().replace("-", "_")
        if not key:
            raise InvalidArgument(f"config line {line_number}: empty key")
        if key in parsed:
            raise InvalidArgument(f"config line {line_number}: duplicate key {key!r}")
        parsed[key] = parse_config_value(value)
    return parsed


def format_config_text(values: Dict[str, Any]) -> str:
    """Render a mapping back to key = value text, keys sorted."""
    lines = []
    for key in sorted(values):
        value = values[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, str):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def worker_count() -> int:
    """
    Number of workers for render fan-out, from ``SEASON_FIELD_THREADS``.

    Returns:
        int: A positive worker count, 1 when the variable is unset

    Raises:
        InvalidArgument: If the variable is not a positive integer
    """
    raw = os.getenv(THREADS_ENV_VAR, "1").strip()
    try:
        count = int(raw)
    except ValueError:
        raise InvalidArgument(f"{THREADS_ENV_VAR} must be a positive integer, got {raw!r}") from None
    if count < 1:
        raise InvalidArgument(f"{THREADS_ENV_VAR} must be a positive integer, got {count}")
    return count


def configure_torch(deterministic: bool = True) -> int:
    """Pin torch threading and determinism from the environment; returns the worker count."""
    workers = worker_count()
    if workers == 1:
        torch.set_num_threads(1)
    if deterministic:
        torch.use_deterministic_algorithms(True)
    return workers


def setup_logging(level: str = "INFO") -> None:
    """Configure root logging for command-line use."""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
