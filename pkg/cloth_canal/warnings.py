import warnings
from collections.abc import Iterator
from contextlib import contextmanager


class ClothCanalWarning(UserWarning):
    """Base warning class"""

    ...


class LowCoverage(ClothCanalWarning):
    """Inform user when keypoint heuristics run on a poorly spread cloth"""

    def __str__(self) -> str:
        return "Cloth coverage {:.2f} is below the keypoint threshold {:.2f}.".format(
            *self.args
        )


class GraspMissed(ClothCanalWarning):
    """Inform user when a gripper found no cloth vertex to grasp"""

    def __str__(self) -> str:
        return "No cloth vertex within reach of grasp point {}; arm is idle.".format(
            *self.args
        )


class SettleTimeout(ClothCanalWarning):
    """Inform user when the cloth did not come to rest in time"""

    def __str__(self) -> str:
        return "Cloth still moving at {:.2e} m/s after {:.1f}s of settling.".format(
            *self.args
        )


class DegenerateRotation(ClothCanalWarning):
    """Inform user when a rigid fit had to fall back to pure translation"""

    def __str__(self) -> str:
        return "All fit points coincide; rotation is undefined, using translation."


@contextmanager
def strict() -> Iterator[None]:
    """Context manager for raising all cloth-canal warnings as errors

    For more fine-grained control or to filter warnings in the whole
    python session, use the :py:mod:`warnings` module directly.

    Examples:

    >>> from cloth_canal.planner import fold_shirt
    >>> from cloth_canal.warnings import strict
    >>> with strict():
    ...     fold_shirt(state, mesh)

    For finer-grained control:

    >>> import warnings
    >>> from cloth_canal.warnings import LowCoverage
    >>> warnings.filterwarnings("error", category=LowCoverage)
    """

    warnings.filterwarnings("error", category=ClothCanalWarning)
    try:
        yield
    finally:
        warnings.filterwarnings("default", category=ClothCanalWarning)


@contextmanager
def ignore() -> Iterator[None]:
    """Context manager for ignoring all cloth-canal warnings

    For more fine-grained control or to set filter warnings in the whole
    python session, use the ``warnings`` module directly.

    Examples:

    >>> from cloth_canal.simulator import execute_primitive
    >>> from cloth_canal.warnings import ignore
    >>> with ignore():
    ...     execute_primitive(state, spec)
    """
    warnings.filterwarnings("ignore", category=ClothCanalWarning)
    try:
        yield
    finally:
        warnings.filterwarnings("default", category=ClothCanalWarning)
