"""Exception hierarchy for the beam-network solver."""
from typing import Optional

from pydantic import ValidationError


class BeamNetworkError(Exception):
    """Base class for every error raised by the library."""


class NetworkParseError(BeamNetworkError):
    """Malformed network file content."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class NetworkValidationError(BeamNetworkError):
    """A structurally invalid network; `entity` names the offending node or edge."""

    def __init__(self, entity: str, message: str):
        self.entity = entity
        super().__init__(f"{entity}: {message}")


class FrameError(NetworkValidationError):
    """Local edge frame cannot be built."""


class SolverConfigurationError(BeamNetworkError):
    """Invalid solver or preconditioner setup."""


class ConvergenceError(BeamNetworkError):
    """An eigenvalue iteration did not converge."""

    def __init__(self, message: str, iterations: int = 0):
        self.iterations = iterations
        super().__init__(message)


class BreakdownError(BeamNetworkError):
    """Nonpositive curvature in PCG: operator or preconditioner is not SPD."""


class InternalConsistencyError(BeamNetworkError):
    """A check that must hold by construction failed."""

    def __init__(self, message: str, edge_id: Optional[int] = None):
        self.edge_id = edge_id
        prefix = f"edge {edge_id}: " if edge_id is not None else ""
        super().__init__(f"{prefix}{message}")


class DimensionError(BeamNetworkError, ValueError):
    """Vector length does not match the operator."""


EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_NOT_CONVERGED = 3
EXIT_INTERNAL_ERROR = 4


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(error, (NetworkParseError, NetworkValidationError, FileNotFoundError,
                          SolverConfigurationError, ValidationError)):
        return EXIT_INPUT_ERROR
    return EXIT_INTERNAL_ERROR
