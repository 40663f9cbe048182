class ClothCanalError(Exception):
    """Base class for all cloth-canal errors."""


class DegenerateSubset(ClothCanalError, ValueError):
    """Raised when a rigid fit is requested over fewer than two points."""


class ZeroExtent(ClothCanalError, ValueError):
    """Raised when a canonical configuration has zero height or width."""


class MismatchedContext(ClothCanalError, ValueError):
    """Raised when two reward breakdowns were computed under different settings."""


class DimensionMismatch(ClothCanalError, ValueError):
    """Raised when masks or configurations of different sizes are compared."""


class EmptyMask(ClothCanalError, ValueError):
    """Raised when coverage is requested against an empty goal mask."""


class InvalidParams(ClothCanalError, ValueError):
    """Raised when garment generator parameters are out of range"""


class WrongCategory(ClothCanalError, ValueError):
    """Raised when an operation is applied to the wrong garment category."""

    @classmethod
    def expected(cls, expected: str, actual: str) -> "WrongCategory":
        return cls(f"Expected a {expected} mesh, got '{actual}'")


class InvalidPixel(ClothCanalError, ValueError):
    """Raised when an action is decoded from a pixel outside the valid set."""


class NumericalBlowup(ClothCanalError, RuntimeError):
    """Raised when the simulation diverges; retry with a smaller time step."""

    max_abs_position: float | None = None

    @classmethod
    def from_positions(cls, max_abs_position: float, time: float) -> "NumericalBlowup":
        error = cls(
            f"Simulation diverged at t={time:.4f}s "
            f"(max |position| = {max_abs_position:.3g} m)"
        )
        error.max_abs_position = max_abs_position
        return error


class InsufficientMeshes(ClothCanalError, ValueError):
    """Raised when train and test meshes cannot be kept disjoint."""


class TaskSetIntegrityError(ClothCanalError, ValueError):
    """Raised when a task set file fails hash or disjointness checks on load."""


class AllInvalid(ClothCanalError, RuntimeError):
    """Raised when no pixel of a value stack is a valid action."""


class NoValidAction(ClothCanalError, RuntimeError):
    """Raised when a policy cannot find any valid action for a state."""
