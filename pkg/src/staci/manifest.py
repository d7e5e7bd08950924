# ABOUTME: Run manifests written next to every command's outputs for reproducibility
# ABOUTME: Records command, options, resolved config, paths, version, seeds and a timestamp
"""Run manifest"""

import logging
from dataclasses import asdict, dataclass, field, is_dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any

from staci import __version__
from staci.utils import atomic_json_write

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def _jsonable(value: Any) -> Any:
    if is_dataclass(value) and not isinstance(value, type):
        return _jsonable(asdict(value))
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, list | tuple | set | frozenset):
        return [_jsonable(v) for v in value]
    return value


@dataclass
class RunManifest:
    command: str
    options: dict[str, Any] = field(default_factory=dict)
    config_file: str | None = None
    config: Any = field(default_factory=dict)
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)
    version: str = __version__
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(asdict(self))

    def write(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        atomic_json_write(path, self.to_dict())
        logger.debug(f"Wrote manifest to {path}")
        return path
