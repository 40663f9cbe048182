"""Top-down observations, rotated/scaled observation stacks and action maps.

Pixel ``(col, row)`` of an entry has its center at local coordinates
``x = (col + 0.5 - W/2) * p`` and ``y = (H/2 - row - 0.5) * p``, where ``p``
is the entry's pixel size: the workspace width over the image width, times the
entry scale. Local coordinates map to the workspace through the entry
transform ``view ∘ Rot(2πr/16)``.
"""

from __future__ import annotations

import concurrent.futures
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from skimage.draw import polygon

from cloth_canal.canal_io import CanalIO
from cloth_canal.exceptions import AllInvalid, DimensionMismatch, InvalidPixel
from cloth_canal.geometry import FloatArray, PlanarTransform
from cloth_canal.kinds import PrimitiveKind
from cloth_canal.rewards import BinaryMask
from cloth_canal.simulator import WORKSPACE_SIZE, PrimitiveSpec, SimState

logger = logging.getLogger(__name__)

OBSERVATION_SIZE = 128
N_ROTATIONS = 16
SCALES = (0.75, 1.0, 1.5, 2.0, 2.5, 3.0)
GRASP_OFFSET = 10
MAX_SEPARATION = 0.7
# largest hanging cloth the fling footprint check allows for
CLOTH_HEIGHT_BOUND = 0.7

_LINSPACE = np.linspace(-1.0, 1.0, OBSERVATION_SIZE)
COORDINATES = np.stack(np.meshgrid(_LINSPACE, _LINSPACE))
COORDINATES.setflags(write=False)


@dataclass(frozen=True)
class ViewConfig:
    """Observation geometry shared by rendering, decoding and validity."""

    size: int = OBSERVATION_SIZE
    workspace: float = WORKSPACE_SIZE
    rotations: int = N_ROTATIONS
    scales: tuple[float, ...] = SCALES
    grasp_offset: int = GRASP_OFFSET
    max_separation: float = MAX_SEPARATION

    def pixel_size(self, scale: float) -> float:
        return self.workspace / self.size * scale

    @property
    def n_entries(self) -> int:
        return self.rotations * len(self.scales)


@dataclass(frozen=True)
class EntryTag:
    """Position of an entry in the stack: rotation index and scale."""

    rotation: int
    scale: float

    def angle(self, rotations: int = N_ROTATIONS) -> float:
        return 2 * math.pi * self.rotation / rotations


@dataclass(frozen=True, eq=False)
class Observation:
    """One rendered view: cloth mask, height map and shared coordinate map.

    ``transform`` maps the entry's local frame into the workspace.
    """

    mask: NDArray[np.bool_]
    height: FloatArray
    tag: EntryTag
    transform: PlanarTransform
    pixel_size: float
    coordinates: FloatArray = field(default_factory=lambda: COORDINATES)

    def __post_init__(self) -> None:
        for name in ("mask", "height"):
            getattr(self, name).setflags(write=False)

    @property
    def size(self) -> int:
        return int(self.mask.shape[0])

    def __repr__(self) -> str:
        return (
            f"<Observation r={self.tag.rotation} s={self.tag.scale} "
            f"cloth_pixels={int(self.mask.sum())}>"
        )


def entry_transform(
    view: PlanarTransform, tag: EntryTag, config: ViewConfig
) -> PlanarTransform:
    return view.compose(PlanarTransform(0.0, 0.0, tag.angle(config.rotations)))


def _to_pixels(
    points: FloatArray, transform: PlanarTransform, pixel_size: float, size: int
) -> tuple[FloatArray, FloatArray]:
    local = transform.inverse().apply_points(points[:, :2])
    cols = local[:, 0] / pixel_size + size / 2 - 0.5
    rows = size / 2 - 0.5 - local[:, 1] / pixel_size
    return cols, rows


def world_to_pixel(observation: Observation, point: ArrayLike) -> tuple[float, float]:
    """Fractional ``(col, row)`` of a workspace point in an observation."""
    p = np.asarray(point, dtype=np.float64).reshape(1, -1)
    cols, rows = _to_pixels(
        p, observation.transform, observation.pixel_size, observation.size
    )
    return float(cols[0]), float(rows[0])


def pixel_to_world(observation: Observation, col: float, row: float) -> FloatArray:
    """Planar workspace coordinates of a pixel position in an observation."""
    half = observation.size / 2
    local = np.array(
        [
            [
                (col + 0.5 - half) * observation.pixel_size,
                (half - row - 0.5) * observation.pixel_size,
            ]
        ]
    )
    return observation.transform.apply_points(local)[0]


def rasterize(
    points: FloatArray,
    triangles: NDArray[np.intp],
    transform: PlanarTransform,
    pixel_size: float,
    size: int = OBSERVATION_SIZE,
) -> tuple[NDArray[np.bool_], FloatArray]:
    """Orthographic triangle rasterization into a mask and a max-z height map."""
    mask = np.zeros((size, size), dtype=bool)
    height = np.zeros((size, size))
    if len(triangles) == 0:
        return mask, height
    cols, rows = _to_pixels(points, transform, pixel_size, size)
    tri_cols = cols[triangles]
    tri_rows = rows[triangles]
    tri_z = points[triangles, 2].max(axis=1)
    visible = (
        (tri_cols.max(axis=1) >= -0.5)
        & (tri_cols.min(axis=1) <= size - 0.5)
        & (tri_rows.max(axis=1) >= -0.5)
        & (tri_rows.min(axis=1) <= size - 0.5)
    )
    for t in np.flatnonzero(visible):
        rr, cc = polygon(tri_rows[t], tri_cols[t], shape=(size, size))
        if rr.size == 0:
            continue
        mask[rr, cc] = True
        height[rr, cc] = np.maximum(height[rr, cc], tri_z[t])
    return mask, height


def render_observation(
    state: SimState,
    view: PlanarTransform | None = None,
    scale: float = 1.0,
    *,
    rotation: int = 0,
    config: ViewConfig | None = None,
) -> Observation:
    """Renders the cloth top-down under a view, rotation index and scale.

    Any positive scale renders; stacks only use the configured scale set.
    """
    config = config or ViewConfig()
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if state.mesh is None:
        raise ValueError("Rendering needs a state built from a mesh")
    view = view or PlanarTransform.identity()
    tag = EntryTag(rotation, scale)
    transform = entry_transform(view, tag, config)
    pixel_size = config.pixel_size(scale)
    mask, height = rasterize(
        state.positions, state.mesh.triangles, transform, pixel_size, config.size
    )
    return Observation(mask, height, tag, transform, pixel_size)


def render_mask(
    points: FloatArray,
    triangles: NDArray[np.intp],
    view: PlanarTransform | None = None,
    scale: float = 1.0,
    config: ViewConfig | None = None,
) -> BinaryMask:
    """Cloth mask of any configuration, for IoU and coverage metrics."""
    config = config or ViewConfig()
    transform = view or PlanarTransform.identity()
    mask, _ = rasterize(
        np.asarray(points, dtype=np.float64),
        triangles,
        transform,
        config.pixel_size(scale),
        config.size,
    )
    return BinaryMask(mask)


@dataclass(frozen=True, eq=False)
class TransformStack:
    """K rotated and scaled observations, scale-major then rotation."""

    entries: tuple[Observation, ...]
    config: ViewConfig

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, k: int) -> Observation:
        return self.entries[k]

    def index(self, rotation: int, scale: float) -> int:
        return self.config.scales.index(scale) * self.config.rotations + rotation

    def masks(self) -> NDArray[np.bool_]:
        return np.stack([e.mask for e in self.entries])

    def to_npz(self, path: str | Path) -> None:
        CanalIO().write_npz(
            path,
            masks=self.masks(),
            heights=np.stack([e.height for e in self.entries]),
            coordinates=np.array(COORDINATES),
            rotations=np.array([e.tag.rotation for e in self.entries]),
            scales=np.array([e.tag.scale for e in self.entries]),
        )


def build_stack(
    state: SimState,
    view: PlanarTransform | None = None,
    config: ViewConfig | None = None,
    workers: int = 1,
) -> TransformStack:
    """Renders every (scale, rotation) entry of the observation stack."""
    config = config or ViewConfig()
    tags = [(r, s) for s in config.scales for r in range(config.rotations)]

    def render(tag: tuple[int, float]) -> Observation:
        return render_observation(
            state, view, tag[1], rotation=tag[0], config=config
        )

    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
            entries = tuple(executor.map(render, tags))
    else:
        entries = tuple(render(tag) for tag in tags)
    return TransformStack(entries, config)


@dataclass(frozen=True, eq=False)
class ActionCommand:
    """A decoded action in workspace coordinates."""

    kind: PrimitiveKind
    grasp_a: FloatArray
    grasp_b: FloatArray
    direction: FloatArray
    tag: EntryTag
    pixel: tuple[int, int]

    def to_spec(self) -> PrimitiveSpec:
        return PrimitiveSpec(
            kind=self.kind,
            grasp_a=self.grasp_a,
            grasp_b=self.grasp_b,
            direction=self.direction if self.kind is PrimitiveKind.FLING else None,
        )

    def to_dict(self) -> dict[str, object]:
        return {
            "kind": self.kind.value,
            "grasp_a": self.grasp_a.tolist(),
            "grasp_b": self.grasp_b.tolist(),
            "direction": self.direction.tolist(),
            "rotation": self.tag.rotation,
            "scale": self.tag.scale,
            "pixel": list(self.pixel),
        }


def decode_action(
    observation: Observation,
    pixel: tuple[int, int],
    kind: PrimitiveKind,
    grasp_offset: int = GRASP_OFFSET,
) -> ActionCommand:
    """Turns a pixel ``(col, row)`` of an entry into a primitive command.

    The grasps sit ``grasp_offset`` rows below (``grasp_a``) and above
    (``grasp_b``) the pixel in the entry's own frame; their heights come from
    the height map. The fling direction is the entry's local +x axis.

    Raises:
        InvalidPixel: the pixel or either grasp pixel falls outside the image.
    """
    col, row = int(pixel[0]), int(pixel[1])
    size = observation.size
    if not (0 <= col < size and grasp_offset <= row < size - grasp_offset):
        raise InvalidPixel(f"Pixel {pixel} has grasp pixels outside the image")
    points = []
    for r in (row + grasp_offset, row - grasp_offset):
        planar = pixel_to_world(observation, col, r)
        points.append(np.append(planar, observation.height[r, col]))
    direction = observation.transform.linear @ np.array([1.0, 0.0])
    return ActionCommand(
        kind=kind,
        grasp_a=points[0],
        grasp_b=points[1],
        direction=direction,
        tag=observation.tag,
        pixel=(col, row),
    )


def _inside(points: FloatArray, half: float) -> NDArray[np.bool_]:
    return np.all(np.abs(points) <= half + 1e-9, axis=-1)


def entry_validity(
    observation: Observation,
    kind: PrimitiveKind,
    config: ViewConfig | None = None,
) -> NDArray[np.bool_]:
    """Pixels of one entry whose decoded action is geometrically feasible."""
    config = config or ViewConfig()
    size = observation.size
    offset = config.grasp_offset
    valid = np.zeros((size, size), dtype=bool)
    separation = 2 * offset * observation.pixel_size
    if separation > config.max_separation + 1e-12 or size <= 2 * offset:
        return valid

    half = config.workspace / 2
    centers = pixel_to_world_grid(observation)
    inner = slice(offset, size - offset)
    a = centers[2 * offset :, :]
    b = centers[: size - 2 * offset, :]
    ok = _inside(a, half) & _inside(b, half)
    ok &= observation.mask[2 * offset :, :] & observation.mask[: size - 2 * offset, :]

    if kind is PrimitiveKind.FLING:
        forward = observation.transform.linear @ np.array([1.0, 0.0])
        mid = 0.5 * (a + b)
        line = (b - a) / 2
        for shift in (-CLOTH_HEIGHT_BOUND / 2, CLOTH_HEIGHT_BOUND / 2):
            for side in (-1.0, 1.0):
                corner = mid + shift * forward + side * line
                ok &= _inside(corner, half)

    valid[inner, :] = ok
    return valid


def pixel_to_world_grid(observation: Observation) -> FloatArray:
    """Workspace coordinates of every pixel center, shape ``(H, W, 2)``."""
    size = observation.size
    cols, rows = np.meshgrid(np.arange(size), np.arange(size))
    half = size / 2
    local = np.stack(
        [
            (cols + 0.5 - half) * observation.pixel_size,
            (half - rows - 0.5) * observation.pixel_size,
        ],
        axis=-1,
    ).reshape(-1, 2)
    return observation.transform.apply_points(local).reshape(size, size, 2)


def validity_mask(
    stack: TransformStack, kind: PrimitiveKind
) -> NDArray[np.bool_]:
    """``(K, H, W)`` feasibility of every pixel for one primitive."""
    return np.stack([entry_validity(e, kind, stack.config) for e in stack.entries])


@dataclass(frozen=True, eq=False)
class ValueStack:
    """Per-primitive canonicalization and alignment value maps.

    Arrays have shape ``(P, K, H, W)`` with primitives in ``primitives``
    order.
    """

    value_c: FloatArray
    value_a: FloatArray
    validity: NDArray[np.bool_]
    primitives: tuple[PrimitiveKind, ...] = tuple(PrimitiveKind)

    def __post_init__(self) -> None:
        shapes = {
            np.shape(self.value_c), np.shape(self.value_a), np.shape(self.validity)
        }
        if len(shapes) != 1:
            raise DimensionMismatch(f"Value stack shapes differ: {sorted(shapes)}")
        shape = np.shape(self.value_c)
        if len(shape) != 4 or shape[0] != len(self.primitives):
            raise DimensionMismatch(
                f"Expected ({len(self.primitives)}, K, H, W) value maps, got {shape}"
            )

    @classmethod
    def from_stack(
        cls,
        stack: TransformStack,
        value_c: FloatArray,
        value_a: FloatArray,
        primitives: Sequence[PrimitiveKind] = tuple(PrimitiveKind),
    ) -> ValueStack:
        validity = np.stack([validity_mask(stack, kind) for kind in primitives])
        return cls(value_c, value_a, validity, tuple(primitives))

    def combined(self, alpha: float) -> FloatArray:
        """``(1 - alpha) * value_c + alpha * value_a``, -inf where invalid."""
        values = (1.0 - alpha) * np.asarray(self.value_c)
        values = values + alpha * np.asarray(self.value_a)
        return np.where(self.validity & ~np.isnan(values), values, -np.inf)


@dataclass(frozen=True)
class Selection:
    primitive: int
    entry: int
    row: int
    col: int
    value: float


def select_index(values: ValueStack, alpha: float) -> Selection:
    """Highest combined value over primitives, entries and pixels.

    Ties go to the lowest ``(primitive, entry, row, col)`` index.

    Raises:
        AllInvalid: no pixel is valid.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    combined = values.combined(alpha)
    flat = int(np.argmax(combined))
    if combined.flat[flat] == -np.inf:
        raise AllInvalid("Every pixel of every entry is masked")
    p, k, row, col = np.unravel_index(flat, combined.shape)
    return Selection(int(p), int(k), int(row), int(col), float(combined.flat[flat]))


def combine_and_select(
    values: ValueStack, alpha: float, stack: TransformStack
) -> tuple[ActionCommand, float]:
    """Combines value maps with ``alpha`` and decodes the best valid action."""
    selection = select_index(values, alpha)
    command = decode_action(
        stack[selection.entry],
        (selection.col, selection.row),
        values.primitives[selection.primitive],
        stack.config.grasp_offset,
    )
    logger.debug(
        f"Selected {command.kind} at {command.pixel} value={selection.value:.4f}"
    )
    return command, selection.value


def is_feasible(command: ActionCommand, config: ViewConfig | None = None) -> bool:
    """Geometric feasibility of a decoded command, checked in world space."""
    config = config or ViewConfig()
    half = config.workspace / 2 + 1e-9
    a, b = command.grasp_a[:2], command.grasp_b[:2]
    if np.any(np.abs(a) > half) or np.any(np.abs(b) > half):
        return False
    if float(np.linalg.norm(b - a)) > config.max_separation + 1e-9:
        return False
    if command.kind is PrimitiveKind.FLING:
        mid = 0.5 * (a + b)
        line = (b - a) / 2
        for shift in (-CLOTH_HEIGHT_BOUND / 2, CLOTH_HEIGHT_BOUND / 2):
            for side in (-1.0, 1.0):
                corner = mid + shift * command.direction + side * line
                if np.any(np.abs(corner) > half):
                    return False
    return True
