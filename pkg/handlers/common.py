"""Helpers shared by the command handlers."""
import logging
import os
from typing import Callable, List, Optional, Tuple

from pydantic import ValidationError

from core.config import Settings
from core.errors import EXIT_INTERNAL_ERROR, BeamNetworkError, exit_code_for
from core.network import Network, cross_network, load_network, refine_uniform
from utils.file_manager import FileManager

logger = logging.getLogger(__name__)


def parse_int_list(text: str) -> List[int]:
    """'1,2,5' -> [1, 2, 5]; '1-8' -> [1, ..., 8]."""
    text = str(text).strip()
    if "," not in text and "-" in text.lstrip("-"):
        start, _, stop = text.lstrip("-").partition("-")
        sign = -1 if text.startswith("-") else 1
        return list(range(sign * int(start), int(stop) + 1))
    return [int(part) for part in text.split(",") if part.strip()]


def load_input(path: Optional[str], cross_level: Optional[int]) -> Tuple[Network, str]:
    """Network from a file, or the refined cross network; returns it with a label for manifests."""
    if cross_level is not None:
        return refine_uniform(cross_network(), cross_level), f"cross:{cross_level}"
    if not path:
        raise FileNotFoundError("no network file given (pass PATH or --cross K)")
    return load_network(path), path


def output_folder(out: Optional[str]) -> str:
    folder = out or Settings.output_dir()
    FileManager.create_output_folder(folder)
    return folder


def run_guarded(command: str, body: Callable[[], int]) -> int:
    """Run a command body, logging failures and mapping them to exit codes."""
    try:
        return body()
    except (BeamNetworkError, FileNotFoundError, ValidationError) as e:
        code = exit_code_for(e)
        logger.error(f"❌ {command} failed: {e}")
        return code
    except Exception as e:
        logger.exception(f"❌ {command} failed unexpectedly: {e}")
        return EXIT_INTERNAL_ERROR


def out_path(folder: str, name: str) -> str:
    return os.path.join(folder, name)
