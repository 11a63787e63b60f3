"""Solver settings: stabilization rule, solver configuration and environment defaults."""
import logging
import os
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

TAU_H_ADVISORY_LIMIT = 10.0


class StabilizationRule(BaseModel):
    """Per-edge stabilization tau_e = c * h_e**s."""

    model_config = ConfigDict(frozen=True)

    s: Literal[-1, 0, 1] = 0
    c: float = Field(default=1.0, gt=0.0)

    def tau(self, h: float) -> float:
        return self.c * h ** self.s

    def check_advisory(self, lengths) -> bool:
        """Warn when some tau_e * h_e exceeds the advisory limit; return True when all pass."""
        worst = max((self.tau(h) * h for h in lengths), default=0.0)
        if worst > TAU_H_ADVISORY_LIMIT:
            logger.warning(
                f"Stabilization tau*h reaches {worst:.3g} (> {TAU_H_ADVISORY_LIMIT:g}); "
                f"s={self.s}, c={self.c}"
            )
            return False
        return True


def parse_grid(text: str) -> Tuple[int, int, int]:
    """Parse 'nx,ny,nz' into a triple of positive integers."""
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if len(parts) != 3:
        raise ValueError(f"grid must be 'nx,ny,nz', got '{text}'")
    cells = tuple(int(p) for p in parts)
    if min(cells) < 1:
        raise ValueError(f"grid cell counts must be positive, got '{text}'")
    return cells


def parse_local_solver(text: str) -> Optional[float]:
    """Return None for exact subdomain solves or the inner CG tolerance for 'cg:<tol>'."""
    text = str(text).strip()
    if text == "direct":
        return None
    if text.startswith("cg"):
        _, _, tol = text.partition(":")
        value = float(tol) if tol else 1e-3
        if not 0.0 < value < 1.0:
            raise ValueError(f"inner CG tolerance must lie in (0, 1), got {value}")
        return value
    raise ValueError(f"local solver must be 'direct' or 'cg:<tol>', got '{text}'")


class SolverConfig(BaseModel):
    """Configuration of the PCG solve and the Schwarz preconditioner."""

    tol: float = Field(default=1e-10, gt=0.0)
    maxit: int = Field(default=10000, ge=1)
    grid: Tuple[int, int, int] = (2, 2, 1)
    coarse_policy: Literal["strict", "free"] = "strict"
    local_solver: str = "direct"
    flexible: bool = False
    precond: Literal["none", "coarse", "local", "schwarz"] = "schwarz"
    threads: int = Field(default=1, ge=1)

    @field_validator("grid", mode="before")
    @classmethod
    def _grid(cls, value):
        if isinstance(value, str):
            return parse_grid(value)
        return value

    @field_validator("local_solver")
    @classmethod
    def _local_solver(cls, value: str) -> str:
        parse_local_solver(value)
        return value

    @model_validator(mode="after")
    def _inexact_needs_flexible(self):
        if self.inner_tolerance is not None and not self.flexible:
            logger.info("Inexact subdomain solves selected: switching to flexible PCG")
            self.flexible = True
        return self

    @property
    def inner_tolerance(self) -> Optional[float]:
        return parse_local_solver(self.local_solver)


class Settings:
    """Environment defaults, read after python-dotenv has populated os.environ."""

    @staticmethod
    def threads() -> int:
        return max(1, int(os.getenv("HDG_THREADS", "1")))

    @staticmethod
    def output_dir() -> str:
        return os.getenv("HDG_OUTPUT_DIR", "results")

    @staticmethod
    def solver_config(**overrides) -> SolverConfig:
        """Build a SolverConfig from environment values, then apply non-None overrides."""
        values = {
            "tol": float(os.getenv("HDG_TOL", "1e-10")),
            "maxit": int(os.getenv("HDG_MAXIT", "10000")),
            "grid": os.getenv("HDG_GRID", "2,2,1"),
            "threads": Settings.threads(),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return SolverConfig(**values)
