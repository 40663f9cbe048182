"""Planar rigid transforms and correspondence-based trimmed alignment.

All distances in this module are planar: the z coordinate of a vertex is carried
along by transforms but never enters a fit or an inlier test.

Transforms rotate about the workspace origin. Garment meshes are generated with
their canonical centroid at the origin, so for a canonical goal a rotation about
the origin is a rotation about the garment's centroid.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.typing import NDArray

from cloth_canal._utils import wrap_angle
from cloth_canal.exceptions import DegenerateSubset, DimensionMismatch
from cloth_canal.warnings import DegenerateRotation

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
IndexArray = NDArray[np.intp]

MAX_ITERATIONS = 30
CONVERGENCE_TOLERANCE = 1e-6
MIN_INLIERS = 3
START_ANGLES = 16


@dataclass(frozen=True, eq=False)
class VertexConfiguration:
    """An ordered set of N cloth vertex positions, in meters.

    Positions are stored as a read-only ``(N, 3)`` float array. Two-column input
    is accepted and lifted onto the ``z = 0`` plane.
    """

    positions: FloatArray

    def __post_init__(self) -> None:
        points = np.array(self.positions, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] not in (2, 3):
            raise DimensionMismatch(
                f"Expected an (N, 2) or (N, 3) array of points, got {points.shape}"
            )
        if points.shape[1] == 2:
            points = np.column_stack([points, np.zeros(len(points))])
        if len(points) < 3:
            raise DimensionMismatch(
                f"A configuration needs at least 3 vertices, got {len(points)}"
            )
        if not np.all(np.isfinite(points)):
            raise ValueError("Vertex coordinates must be finite")
        points.setflags(write=False)
        object.__setattr__(self, "positions", points)

    def __len__(self) -> int:
        return len(self.positions)

    def __repr__(self) -> str:
        return f"<VertexConfiguration n={self.n}>"

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def planar(self) -> FloatArray:
        """The ``(N, 2)`` planar projection of the positions."""
        return self.positions[:, :2]

    def centroid(self) -> FloatArray:
        return np.asarray(self.positions.mean(axis=0))

    def flattened(self) -> VertexConfiguration:
        """Returns the planar projection onto ``z = 0``."""
        return VertexConfiguration(self.planar)

    def translated(self, dx: float, dy: float, dz: float = 0.0) -> VertexConfiguration:
        return VertexConfiguration(self.positions + np.array([dx, dy, dz]))

    def extent(self) -> tuple[float, float]:
        """Axis-aligned (width, height) of the planar bounding box."""
        span = np.ptp(self.planar, axis=0)
        return float(span[0]), float(span[1])

    def allclose(self, other: VertexConfiguration, atol: float = 1e-9) -> bool:
        return self.n == other.n and bool(
            np.allclose(self.positions, other.positions, rtol=0.0, atol=atol)
        )


PointsLike = Union[VertexConfiguration, FloatArray, Sequence[Sequence[float]]]
SubsetLike = Union[IndexArray, Sequence[int], range, None]


def as_configuration(points: PointsLike) -> VertexConfiguration:
    """Coerces arrays and nested sequences into a :class:`VertexConfiguration`."""
    if isinstance(points, VertexConfiguration):
        return points
    return VertexConfiguration(np.asarray(points, dtype=np.float64))


@dataclass(frozen=True)
class PlanarTransform:
    """An SE(2) pose with an optional reflection.

    A point ``p`` maps to ``R(theta) @ M @ p + (tx, ty)`` where ``M`` reflects x
    when ``mirrored`` is set. ``theta`` is normalized into ``(-pi, pi]``.
    """

    tx: float = 0.0
    ty: float = 0.0
    theta: float = 0.0
    mirrored: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "tx", float(self.tx))
        object.__setattr__(self, "ty", float(self.ty))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "mirrored", bool(self.mirrored))
        if not all(math.isfinite(x) for x in (self.tx, self.ty, self.theta)):
            raise ValueError(f"Transform components must be finite: {self}")

    @classmethod
    def identity(cls) -> PlanarTransform:
        return cls()

    @classmethod
    def mirror(cls) -> PlanarTransform:
        """Reflection x -> -x about the local y axis."""
        return cls(mirrored=True)

    @property
    def translation(self) -> FloatArray:
        return np.array([self.tx, self.ty])

    @property
    def linear(self) -> FloatArray:
        """The 2x2 linear part; determinant is -1 when mirrored."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        rotation = np.array([[c, -s], [s, c]])
        if self.mirrored:
            rotation[:, 0] *= -1.0
        return rotation

    def as_matrix(self) -> FloatArray:
        matrix = np.eye(3)
        matrix[:2, :2] = self.linear
        matrix[:2, 2] = self.translation
        return matrix

    @classmethod
    def from_matrix(cls, matrix: FloatArray) -> PlanarTransform:
        linear = np.asarray(matrix)[:2, :2]
        # the second column is unaffected by the x reflection
        theta = math.atan2(-linear[0, 1], linear[1, 1])
        mirrored = bool(np.linalg.det(linear) < 0)
        return cls(float(matrix[0, 2]), float(matrix[1, 2]), theta, mirrored)

    def compose(self, other: PlanarTransform) -> PlanarTransform:
        """Returns ``self ∘ other``: apply ``other`` first, then ``self``."""
        return PlanarTransform.from_matrix(self.as_matrix() @ other.as_matrix())

    def inverse(self) -> PlanarTransform:
        linear_t = self.linear.T
        translation = -linear_t @ self.translation
        matrix = np.eye(3)
        matrix[:2, :2] = linear_t
        matrix[:2, 2] = translation
        return PlanarTransform.from_matrix(matrix)

    def magnitude(self) -> float:
        """Size of the motion: translation length plus absolute rotation."""
        return math.hypot(self.tx, self.ty) + abs(self.theta)

    def apply_points(self, points: FloatArray) -> FloatArray:
        """Applies the transform to an ``(N, 2)`` array of planar points."""
        return np.asarray(points) @ self.linear.T + self.translation

    def to_dict(self) -> dict[str, float | bool]:
        return {
            "tx": self.tx,
            "ty": self.ty,
            "theta": self.theta,
            "mirrored": self.mirrored,
        }

    @classmethod
    def from_dict(cls, d: dict[str, float | bool]) -> PlanarTransform:
        return cls(
            float(d["tx"]), float(d["ty"]), float(d["theta"]), bool(d["mirrored"])
        )


@dataclass(frozen=True, eq=False)
class AlignmentResult:
    """Outcome of :func:`trimmed_align`.

    ``aligned_goal`` is the best-aligned goal g′: ``transform`` applied to the
    planar projection of the goal. ``fallback`` is set when the final fit had
    to use every vertex because fewer than three inliers survived trimming.
    ``cost`` is the :func:`trimmed_cost` of ``transform``, in square meters.
    """

    transform: PlanarTransform
    aligned_goal: VertexConfiguration
    inlier_indices: IndexArray
    iterations: int
    fallback: bool = False
    cost: float = 0.0

    def __post_init__(self) -> None:
        indices = np.array(self.inlier_indices, dtype=np.intp)
        indices.setflags(write=False)
        object.__setattr__(self, "inlier_indices", indices)


def apply_transform(
    t: PlanarTransform, cfg: VertexConfiguration
) -> VertexConfiguration:
    """Rigidly moves a configuration in the plane; z is preserved."""
    positions = np.array(cfg.positions)
    positions[:, :2] = t.apply_points(cfg.planar)
    return VertexConfiguration(positions)


def mirror_flip(
    cfg: VertexConfiguration, frame: PlanarTransform | None = None
) -> VertexConfiguration:
    """Reflects a configuration about the y axis of ``frame``.

    ``frame`` is the pose of the configuration's local frame in the workspace;
    the default is the workspace frame itself.
    """
    if frame is None:
        return apply_transform(PlanarTransform.mirror(), cfg)
    reflection = frame.compose(PlanarTransform.mirror()).compose(frame.inverse())
    return apply_transform(reflection, cfg)


def planar_distances(a: FloatArray, b: FloatArray) -> FloatArray:
    """Per-vertex planar Euclidean distances between two ``(N, >=2)`` arrays."""
    return np.asarray(np.linalg.norm(a[:, :2] - b[:, :2], axis=1))


def _fit_points(src: FloatArray, dst: FloatArray) -> PlanarTransform:
    src_centroid = src.mean(axis=0)
    dst_centroid = dst.mean(axis=0)
    a = src - src_centroid
    b = dst - dst_centroid

    scale = max(1.0, float(np.max(np.abs(src))))
    if float(np.max(np.abs(a))) <= 1e-12 * scale:
        warnings.warn(DegenerateRotation(), stacklevel=3)
        shift = dst_centroid - src_centroid
        return PlanarTransform(shift[0], shift[1], 0.0)

    sin_term = float(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))
    cos_term = float(np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1]))
    theta = math.atan2(sin_term, cos_term)
    c, s = math.cos(theta), math.sin(theta)
    shift = dst_centroid - np.array([[c, -s], [s, c]]) @ src_centroid
    return PlanarTransform(shift[0], shift[1], theta)


def fit_rigid_planar(
    src: PointsLike, dst: PointsLike, subset: SubsetLike = None
) -> PlanarTransform:
    """Least-squares SE(2) transform taking ``src`` onto ``dst``.

    Minimizes the sum of squared planar distances over the vertices in
    ``subset`` (all vertices when ``None``) with the closed-form
    centroid/cross-covariance solution. The result is never mirrored.

    Raises:
        DimensionMismatch: ``src`` and ``dst`` differ in vertex count.
        DegenerateSubset: fewer than two distinct indices in ``subset``.
    """
    src = as_configuration(src)
    dst = as_configuration(dst)
    if src.n != dst.n:
        raise DimensionMismatch(f"Cannot fit {src.n} vertices onto {dst.n}")
    if subset is None:
        indices = np.arange(src.n)
    else:
        indices = np.unique(np.asarray(subset, dtype=np.intp))
    if indices.size < 2:
        raise DegenerateSubset(
            f"A rigid fit needs at least 2 points, got {indices.size}"
        )
    return _fit_points(src.planar[indices], dst.planar[indices])


def _inliers(current: FloatArray, target: FloatArray, threshold: float) -> IndexArray:
    return np.flatnonzero(planar_distances(current, target) <= threshold)


def _truncated_cost(current: FloatArray, target: FloatArray, threshold: float) -> float:
    residuals = planar_distances(current, target)
    return float(np.mean(np.minimum(residuals, threshold) ** 2))


def _starts(goal: FloatArray, target: FloatArray) -> list[PlanarTransform]:
    """Identity, the untrimmed fit, and the centroid match at evenly spaced
    rotations."""
    starts = [PlanarTransform.identity(), _fit_points(goal, target)]
    goal_centroid = goal.mean(axis=0)
    target_centroid = target.mean(axis=0)
    for k in range(START_ANGLES):
        theta = 2 * math.pi * k / START_ANGLES
        c, s = math.cos(theta), math.sin(theta)
        shift = target_centroid - np.array([[c, -s], [s, c]]) @ goal_centroid
        starts.append(PlanarTransform(shift[0], shift[1], theta))
    return starts


def _descend(
    goal: FloatArray,
    target: FloatArray,
    threshold: float,
    transform: PlanarTransform,
    max_iterations: int,
    tolerance: float,
) -> tuple[PlanarTransform, IndexArray, int, bool]:
    everything = np.arange(len(goal))
    current = transform.apply_points(goal)
    inliers = _inliers(current, target, threshold)
    used = everything
    fallback = False
    iteration = 0
    for iteration in range(1, max_iterations + 1):
        fallback = inliers.size < MIN_INLIERS
        used = everything if fallback else inliers

        step = _fit_points(current[used], target[used])
        transform = step.compose(transform)
        current = transform.apply_points(goal)

        inliers = _inliers(current, target, threshold)
        next_used = everything if inliers.size < MIN_INLIERS else inliers
        if np.array_equal(next_used, used) and step.magnitude() < tolerance:
            break
    return transform, used, iteration, fallback


def trimmed_align(
    v: PointsLike,
    g: PointsLike,
    tau: float,
    scale: float = 1.0,
    *,
    max_iterations: int = MAX_ITERATIONS,
    tolerance: float = CONVERGENCE_TOLERANCE,
) -> AlignmentResult:
    """Finds the rigid transform T that best aligns goal ``g`` onto ``v``.

    Correspondences are given by vertex index. Each iteration keeps the vertices
    whose planar distance between the current g′ and ``v`` is at most
    ``tau * scale``, refits on them, and composes the increment into T.
    Iteration stops once the inlier set no longer changes and the increment is
    smaller than ``tolerance``, or after ``max_iterations``.

    The descent runs from several starts: the raw ``g``, the untrimmed
    least-squares fit, and the centroid match at 16 evenly spaced rotations.
    The result with the lowest :func:`trimmed_cost` wins; ties go to the
    earlier start.

    When fewer than three vertices pass the threshold the fit uses every vertex
    and the result reports all indices as inliers.
    """
    v = as_configuration(v)
    g = as_configuration(g)
    if v.n != g.n:
        raise DimensionMismatch(f"Cannot align {g.n} goal vertices onto {v.n}")
    if tau <= 0 or scale <= 0:
        raise ValueError(f"tau and scale must be positive, got {tau} and {scale}")

    threshold = tau * scale
    goal = g.flattened()
    target = v.planar

    best: tuple[PlanarTransform, IndexArray, int, bool] | None = None
    best_cost = math.inf
    for start in _starts(goal.planar, target):
        run = _descend(
            goal.planar, target, threshold, start, max_iterations, tolerance
        )
        cost = _truncated_cost(run[0].apply_points(goal.planar), target, threshold)
        if cost < best_cost:
            best, best_cost = run, cost
    assert best is not None
    transform, used, iteration, fallback = best
    if fallback:
        logger.debug(f"Only {used.size} vertices available, fitted all of them")

    logger.debug(
        f"Trimmed alignment finished after {iteration} iterations with "
        f"{used.size}/{v.n} inliers and cost {best_cost:.3e}: {transform}"
    )
    return AlignmentResult(
        transform=transform,
        aligned_goal=apply_transform(transform, goal),
        inlier_indices=used,
        iterations=iteration,
        fallback=fallback,
        cost=best_cost,
    )


def trimmed_cost(
    v: PointsLike, g: PointsLike, t: PlanarTransform, threshold: float
) -> float:
    """Mean truncated squared residual of ``t(g)`` against ``v``.

    Residuals beyond ``threshold`` contribute ``threshold ** 2``; this is the
    objective the trimmed alignment descends on.
    """
    v = as_configuration(v)
    g = as_configuration(g)
    return _truncated_cost(t.apply_points(g.planar), v.planar, threshold)
