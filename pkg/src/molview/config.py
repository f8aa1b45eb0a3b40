"""JSON configuration loading shared by every config dataclass."""

import dataclasses
import json
from pathlib import Path
from typing import Any, TypeVar

from molview.errors import ConfigError

T = TypeVar("T")


def read_config_file(path: Path) -> dict[str, Any]:
    """Read a JSON config file into a dict.

    Raises:
        ConfigError: if the file is missing, unreadable or not a JSON object
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}: line {e.lineno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return data


def build_dataclass(cls: type[T], data: dict[str, Any] | None, where: str = "") -> T:
    """Instantiate a flat config dataclass from a dict, rejecting unknown keys.

    Nested dataclass fields are left to the caller; this handles scalar
    and list fields only.
    """
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or cls.__name__} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or cls.__name__}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"invalid {where or cls.__name__}: {e}") from e


def require(condition: bool, message: str) -> None:
    """Raise ConfigError with ``message`` unless ``condition`` holds."""
    if not condition:
        raise ConfigError(message)
