"""Exception hierarchy for the simulator.

Every error carries a stable code (see ERROR_CODES.md) so CLI output and
reports can reference it the same way config lint issues do.
"""

from __future__ import annotations


class SimulationError(Exception):
    """Base class for all simulator errors."""

    code = "E100"

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class TopologyError(SimulationError):
    """Raised when a topology cannot be built (e.g. ring with n < 3)."""

    code = "E101"


class MixingValidationError(SimulationError):
    """Raised when a user-supplied mixing matrix breaks an invariant."""

    code = "E102"


class DimensionError(SimulationError):
    """Raised on vector / block / model dimension mismatch."""

    code = "E103"


class ObjectiveError(SimulationError):
    code = "E104"


class TriggerError(SimulationError):
    code = "E105"


class ScheduleError(SimulationError):
    code = "E106"


class CommError(SimulationError):
    """Raised on invalid one-sided writes (non-neighbor, bad index)."""

    code = "E107"


class InvariantError(SimulationError):
    """Raised when an in-loop invariant check fails."""

    code = "E108"


class BoundError(SimulationError):
    code = "E109"


class RunConfigError(SimulationError):
    code = "E110"
