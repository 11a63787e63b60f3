import csv
import json
import logging
import os
import subprocess
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from core import __version__

logger = logging.getLogger(__name__)


def fmt(value: Any) -> Any:
    """Full double precision text for floats; other values unchanged."""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, np.integer):
        return int(value)
    return value


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, BaseModel):
        return value.model_dump()
    raise TypeError(f"cannot serialize {type(value).__name__}")


class RunManifest(BaseModel):
    """Parameters, outputs and timings of one command run."""

    command: str
    input_path: Optional[str] = None
    p: Optional[int] = None
    stabilization: Dict[str, float] = Field(default_factory=dict)
    solver: Dict[str, Any] = Field(default_factory=dict)
    grid: Optional[List[int]] = None
    outputs: List[str] = Field(default_factory=list)
    version: str = __version__
    timings_ms: Dict[str, float] = Field(default_factory=dict)
    extra: Dict[str, Any] = Field(default_factory=dict)


class FileManager:
    """Manage output folders and result files."""

    @staticmethod
    def create_output_folder(path: str) -> Path:
        """Create the output folder if needed."""
        folder = Path(path)
        if not folder.exists():
            folder.mkdir(parents=True)
            logger.info(f"Created output folder: {folder}")
        return folder

    @staticmethod
    def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        """Write rows with floats at 17 significant digits."""
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for row in rows:
                writer.writerow([fmt(v) for v in row])
        logger.info(f"Wrote {path}")
        return str(path)

    @staticmethod
    def read_csv(path: str) -> List[Dict[str, str]]:
        with open(path, "r", newline="", encoding="utf-8") as f:
            return list(csv.DictReader(f))

    @staticmethod
    def write_json(path: str, payload: Any) -> str:
        # json emits repr-exact floats, i.e. shortest round-trip digits
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, default=_jsonable)
        logger.info(f"Wrote {path}")
        return str(path)

    @staticmethod
    def write_manifest(folder: str, manifest: RunManifest) -> str:
        manifest.version = FileManager.version_string()
        path = os.path.join(folder, "manifest.json")
        return FileManager.write_json(path, manifest.model_dump())

    @staticmethod
    def version_string() -> str:
        """git describe of the working tree when available, the package version otherwise."""
        try:
            result = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                                    text=True, timeout=5,
                                    cwd=os.path.dirname(os.path.abspath(__file__)))
            if result.returncode == 0 and result.stdout.strip():
                return f"{__version__}+{result.stdout.strip()}"
        except (OSError, subprocess.SubprocessError) as e:
            logger.debug(f"git describe unavailable: {e}")
        return __version__
