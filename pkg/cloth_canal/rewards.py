"""Canonicalized-alignment rewards and mask metrics.

Every vertex-set distance here is the mean of per-vertex planar Euclidean
distances, divided by the garment's normalization scale. Rewards are the
negated distances, so they are at most zero and reach zero only on a perfect
match.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from cloth_canal.exceptions import (
    DimensionMismatch,
    EmptyMask,
    MismatchedContext,
    ZeroExtent,
)
from cloth_canal.geometry import (
    AlignmentResult,
    PlanarTransform,
    PointsLike,
    VertexConfiguration,
    as_configuration,
    mirror_flip,
    planar_distances,
    trimmed_align,
)
from cloth_canal.kinds import Objective

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.6
DEFAULT_TAU = 0.3
# alignment costs (m^2) closer than this count as equally good fits
COST_TOLERANCE = 1e-12


def normalization_scale(canonical: PointsLike) -> float:
    """Geometric mean of the canonical configuration's bounding-box extents.

    Raises:
        ZeroExtent: the canonical configuration is degenerate along x or y.
    """
    width, height = as_configuration(canonical).extent()
    if width <= 0.0 or height <= 0.0:
        raise ZeroExtent(f"Canonical extent is {width} x {height} m")
    return math.sqrt(width * height)


def _mean_distance(a: VertexConfiguration, b: VertexConfiguration) -> float:
    if a.n != b.n:
        raise DimensionMismatch(f"Cannot compare {a.n} vertices with {b.n}")
    return float(np.mean(planar_distances(a.positions, b.positions)))


def reward_unfactorized(v: PointsLike, g: PointsLike, scale: float) -> float:
    """Negated mean per-vertex distance between ``g`` and ``v``, over ``scale``."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    return -_mean_distance(as_configuration(g), as_configuration(v)) / scale


@dataclass(frozen=True, eq=False)
class RewardBreakdown:
    """All reward terms for one (current, goal) pair.

    ``r_ca`` is ``(1 - alpha) * r_c + alpha * r_a``. ``mirror_used`` tells
    whether ``r_c``, ``r_a`` and ``r_ca`` were taken against the mirror-flipped
    goal. ``r_unf`` is chosen separately: the higher of the direct and mirrored
    unfactorized rewards.
    """

    r_unf: float
    r_c: float
    r_a: float
    r_ca: float
    alignment: AlignmentResult
    scale: float
    mirror_used: bool
    alpha: float
    tau: float

    def as_dict(self) -> dict[str, float | bool]:
        return {
            "r_unf": self.r_unf,
            "r_c": self.r_c,
            "r_a": self.r_a,
            "r_ca": self.r_ca,
            "mirror_used": self.mirror_used,
        }


def _branch(
    v: VertexConfiguration,
    goal: VertexConfiguration,
    alpha: float,
    tau: float,
    scale: float,
    mirrored: bool,
) -> RewardBreakdown:
    alignment = trimmed_align(v, goal, tau, scale)
    r_c = -_mean_distance(v, alignment.aligned_goal) / scale
    r_a = -_mean_distance(alignment.aligned_goal, goal) / scale
    return RewardBreakdown(
        r_unf=-_mean_distance(goal, v) / scale,
        r_c=r_c,
        r_a=r_a,
        r_ca=(1.0 - alpha) * r_c + alpha * r_a,
        alignment=alignment,
        scale=scale,
        mirror_used=mirrored,
        alpha=alpha,
        tau=tau,
    )


def reward_factorized(
    v: PointsLike,
    g: PointsLike,
    alpha: float = DEFAULT_ALPHA,
    tau: float = DEFAULT_TAU,
    scale: float = 1.0,
    *,
    goal_frame: PlanarTransform | None = None,
) -> RewardBreakdown:
    """Factorized canonicalization/alignment reward of ``v`` against ``g``.

    The goal and its mirror image (reflected about the y axis of
    ``goal_frame``, the goal's pose in the workspace) are both aligned onto
    ``v``. The terms come from the branch whose alignment has the lower
    trimmed cost, that is the goal orientation the cloth actually resembles;
    when both fit equally well the higher ``r_ca`` wins. ``r_unf`` is the
    better of the two branches' unfactorized rewards.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    v = as_configuration(v)
    g = as_configuration(g)

    direct = _branch(v, g, alpha, tau, scale, mirrored=False)
    flipped = _branch(v, mirror_flip(g, goal_frame), alpha, tau, scale, mirrored=True)
    if flipped.alignment.cost < direct.alignment.cost - COST_TOLERANCE or (
        flipped.alignment.cost <= direct.alignment.cost + COST_TOLERANCE
        and flipped.r_ca > direct.r_ca
    ):
        chosen = flipped
    else:
        chosen = direct
    return replace(chosen, r_unf=max(direct.r_unf, flipped.r_unf))


def objective_value(breakdown: RewardBreakdown, objective: Objective) -> float:
    """The scalar a planner maximizes for the given objective.

    The unfactorized objective also credits a mirror-flipped match, so it
    equals :func:`reward_unfactorized` against whichever of the goal and its
    mirror image is closer.
    """
    if objective is Objective.FACTORIZED:
        return breakdown.r_ca
    return breakdown.r_unf


def delta_reward(before: RewardBreakdown, after: RewardBreakdown) -> float:
    """Change in ``r_ca`` caused by an action.

    Raises:
        MismatchedContext: the breakdowns used different scale, alpha or tau.
    """
    for name in ("scale", "alpha", "tau"):
        if getattr(before, name) != getattr(after, name):
            raise MismatchedContext(
                f"Breakdowns differ in {name}: "
                f"{getattr(before, name)} != {getattr(after, name)}"
            )
    return after.r_ca - before.r_ca


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """A row-major boolean image, ``bits[row, column]``."""

    bits: NDArray[np.bool_]

    def __post_init__(self) -> None:
        bits = np.array(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise DimensionMismatch(f"Masks are 2-D, got shape {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def empty(cls, width: int = 128, height: int = 128) -> BinaryMask:
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __repr__(self) -> str:
        return f"<BinaryMask {self.width}x{self.height} area={self.area}>"


def _check_dimensions(a: BinaryMask, b: BinaryMask) -> None:
    if a.bits.shape != b.bits.shape:
        raise DimensionMismatch(
            f"Mask sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union; two empty masks agree perfectly."""
    _check_dimensions(a, b)
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a.bits & b.bits)) / union


def coverage(current: BinaryMask, goal: BinaryMask) -> float:
    """Ratio of the current mask's area to the goal mask's area."""
    _check_dimensions(current, goal)
    if goal.area == 0:
        raise EmptyMask("Coverage is undefined against an empty goal mask")
    return current.area / goal.area
