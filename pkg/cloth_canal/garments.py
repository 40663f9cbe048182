"""Procedural garment meshes in their canonical configuration.

Each garment is a union of axis-aligned rectangular parts laid on a shared
tensor-product lattice. Lattice lines pass through every part boundary and
each gap between boundaries is split into equal cells no wider than the
requested pitch, so part dimensions are reproduced exactly. Every occupied
cell contributes two triangles, its four edges as structural springs and its
two diagonals as shear springs; bend springs join vertices two edges apart
along a lattice line.

"Left" always means the -x side of the canonical garment.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Union

import numpy as np
from numpy.typing import NDArray
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from cloth_canal._utils import sha256_text
from cloth_canal.canal_io import CanalIO
from cloth_canal.exceptions import InvalidParams, WrongCategory
from cloth_canal.geometry import FloatArray, VertexConfiguration
from cloth_canal.kinds import Category, SpringKind

logger = logging.getLogger(__name__)

MAX_GARMENT_HEIGHT = 0.7
MESH_FORMAT_VERSION = 1

SHIRT_KEYPOINTS = (
    "left_sleeve",
    "right_sleeve",
    "left_shoulder",
    "right_shoulder",
    "left_waist",
    "right_waist",
)
PANTS_KEYPOINTS = ("left_waist", "right_waist", "left_hem", "right_hem")

Rect = tuple[float, float, float, float]


@dataclass(frozen=True)
class ShirtParams:
    """Long-sleeve shirt in a T pose; sleeves leave the body at its top edge."""

    body_width: float = 0.4
    body_height: float = 0.5
    sleeve_length: float = 0.25
    sleeve_width: float = 0.12
    pitch: float = 0.025
    left_sleeve_length: float | None = None
    right_sleeve_length: float | None = None

    @property
    def left_sleeve(self) -> float:
        if self.left_sleeve_length is None:
            return self.sleeve_length
        return self.left_sleeve_length

    @property
    def right_sleeve(self) -> float:
        if self.right_sleeve_length is None:
            return self.sleeve_length
        return self.right_sleeve_length

    def validate(self) -> None:
        _check_positive(self, exclude=("left_sleeve_length", "right_sleeve_length"))
        if self.left_sleeve <= 0 or self.right_sleeve <= 0:
            raise InvalidParams("Sleeve lengths must be positive")
        if self.sleeve_width > self.body_height:
            raise InvalidParams("Sleeves cannot be wider than the body is tall")
        if self.body_height > MAX_GARMENT_HEIGHT:
            raise InvalidParams(
                f"Shirt height {self.body_height} m exceeds {MAX_GARMENT_HEIGHT} m"
            )


@dataclass(frozen=True)
class PantsParams:
    """Pants in an inverted-V pose: a waist band with two outward-leaning legs.

    ``spread`` is how far each leg's hem is pushed outward, in meters, relative
    to hanging straight down.
    """

    waist_width: float = 0.36
    rise: float = 0.12
    leg_length: float = 0.5
    leg_width: float = 0.16
    spread: float = 0.12
    pitch: float = 0.025
    left_leg_length: float | None = None
    right_leg_length: float | None = None

    @property
    def left_leg(self) -> float:
        return self.leg_length if self.left_leg_length is None else self.left_leg_length

    @property
    def right_leg(self) -> float:
        if self.right_leg_length is None:
            return self.leg_length
        return self.right_leg_length

    def validate(self) -> None:
        _check_positive(
            self, exclude=("spread", "left_leg_length", "right_leg_length")
        )
        if self.spread < 0:
            raise InvalidParams("Leg spread cannot be negative")
        if self.left_leg <= 0 or self.right_leg <= 0:
            raise InvalidParams("Leg lengths must be positive")
        if 2 * self.leg_width >= self.waist_width:
            raise InvalidParams("Legs must leave a crotch gap below the waist band")
        height = self.rise + max(self.left_leg, self.right_leg)
        if height > MAX_GARMENT_HEIGHT:
            raise InvalidParams(
                f"Pants height {height} m exceeds {MAX_GARMENT_HEIGHT} m"
            )


@dataclass(frozen=True)
class PatchParams:
    """A plain rectangular cloth."""

    width: float = 0.4
    height: float = 0.4
    pitch: float = 0.025

    def validate(self) -> None:
        _check_positive(self)


GarmentParams = Union[ShirtParams, PantsParams, PatchParams]


def _check_positive(params: Any, exclude: tuple[str, ...] = ()) -> None:
    for name, value in asdict(params).items():
        if name in exclude:
            continue
        if not (isinstance(value, (int, float)) and math.isfinite(value)) or value <= 0:
            raise InvalidParams(f"{type(params).__name__}.{name} must be positive")


@dataclass(frozen=True, eq=False)
class GarmentMesh:
    """A triangulated cloth with spring topology, in its canonical pose.

    ``springs`` holds vertex index pairs, with matching ``rest_lengths`` and
    ``spring_kinds`` (the :class:`SpringKind` codes). ``keypoints`` maps
    landmark names to vertex indices.
    """

    category: Category
    vertices: VertexConfiguration
    triangles: NDArray[np.intp]
    springs: NDArray[np.intp]
    rest_lengths: FloatArray
    spring_kinds: NDArray[np.int8]
    keypoints: Mapping[str, int]
    params: Mapping[str, float | None]

    def __post_init__(self) -> None:
        for name, dtype in (
            ("triangles", np.intp),
            ("springs", np.intp),
            ("rest_lengths", np.float64),
            ("spring_kinds", np.int8),
        ):
            array = np.array(getattr(self, name), dtype=dtype)
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        object.__setattr__(self, "keypoints", dict(self.keypoints))
        object.__setattr__(self, "params", dict(self.params))

    def __repr__(self) -> str:
        return (
            f"<GarmentMesh {self.category} vertices={self.n_vertices} "
            f"triangles={len(self.triangles)} springs={len(self.springs)}>"
        )

    @property
    def n_vertices(self) -> int:
        return self.vertices.n

    @property
    def width(self) -> float:
        return self.vertices.extent()[0]

    @property
    def height(self) -> float:
        return self.vertices.extent()[1]

    def springs_of(self, kind: SpringKind) -> NDArray[np.intp]:
        return self.springs[self.spring_kinds == kind.code]

    def keypoint_positions(self, positions: FloatArray) -> dict[str, FloatArray]:
        """Looks up keypoint coordinates in an ``(N, 3)`` position array."""
        return {name: np.array(positions[i]) for name, i in self.keypoints.items()}

    def to_dict(self) -> dict[str, Any]:
        kinds = list(SpringKind)
        return {
            "version": MESH_FORMAT_VERSION,
            "category": self.category.value,
            "params": dict(self.params),
            "vertices": self.vertices.positions.tolist(),
            "triangles": self.triangles.tolist(),
            "springs": [
                [int(i), int(j), float(rest), kinds[code].value]
                for (i, j), rest, code in zip(
                    self.springs, self.rest_lengths, self.spring_kinds
                )
            ],
            "keypoints": {name: int(i) for name, i in sorted(self.keypoints.items())},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> GarmentMesh:
        if d.get("version") != MESH_FORMAT_VERSION:
            raise ValueError(f"Unsupported mesh format version {d.get('version')}")
        springs = d["springs"]
        return cls(
            category=Category.get_by_name(d["category"]),
            vertices=VertexConfiguration(np.array(d["vertices"], dtype=np.float64)),
            triangles=np.array(d["triangles"], dtype=np.intp).reshape(-1, 3),
            springs=np.array([s[:2] for s in springs], dtype=np.intp).reshape(-1, 2),
            rest_lengths=np.array([s[2] for s in springs], dtype=np.float64),
            spring_kinds=np.array(
                [SpringKind.get_by_name(s[3]).code for s in springs], dtype=np.int8
            ),
            keypoints={str(k): int(v) for k, v in d["keypoints"].items()},
            params=d["params"],
        )

    def content_hash(self) -> str:
        """SHA-256 of the mesh's serialized form."""
        return sha256_text(CanalIO.dumps(self.to_dict()))


def save_mesh(mesh: GarmentMesh, path: str | Path) -> None:
    CanalIO().write_json(path, mesh.to_dict())


def load_mesh(path: str | Path) -> GarmentMesh:
    return GarmentMesh.from_dict(CanalIO().read_json(path))


class _Lattice:
    """Tensor-product lattice with cell occupancy from a set of rectangles."""

    def __init__(self, parts: list[Rect], pitch: float) -> None:
        self.xs = _subdivide([c for p in parts for c in p[:2]], pitch)
        self.ys = _subdivide([c for p in parts for c in p[2:]], pitch)
        cx = 0.5 * (self.xs[:-1] + self.xs[1:])
        cy = 0.5 * (self.ys[:-1] + self.ys[1:])
        gx, gy = np.meshgrid(cx, cy)
        occupied = np.zeros(gx.shape, dtype=bool)
        for x0, x1, y0, y1 in parts:
            occupied |= (gx > x0) & (gx < x1) & (gy > y0) & (gy < y1)
        self.occupied = occupied

        nodes = np.zeros((len(self.ys), len(self.xs)), dtype=bool)
        nodes[:-1, :-1] |= occupied
        nodes[:-1, 1:] |= occupied
        nodes[1:, :-1] |= occupied
        nodes[1:, 1:] |= occupied
        self.index = np.full(nodes.shape, -1, dtype=np.intp)
        self.index[nodes] = np.arange(int(nodes.sum()))
        rows, cols = np.nonzero(nodes)
        self.points = np.column_stack([self.xs[cols], self.ys[rows]])

    def node(self, x: float, y: float) -> int:
        i = int(np.argmin(np.abs(self.xs - x)))
        j = int(np.argmin(np.abs(self.ys - y)))
        index = int(self.index[j, i])
        if index < 0:
            raise InvalidParams(f"No lattice vertex at ({x}, {y})")
        return index

    def triangles(self) -> NDArray[np.intp]:
        rows, cols = np.nonzero(self.occupied)
        a = self.index[rows, cols]
        b = self.index[rows, cols + 1]
        c = self.index[rows + 1, cols + 1]
        d = self.index[rows + 1, cols]
        tris = np.stack([np.column_stack([a, b, c]), np.column_stack([a, c, d])], 1)
        return np.asarray(tris.reshape(-1, 3))

    def springs(self) -> tuple[NDArray[np.intp], NDArray[np.int8]]:
        occ = self.occupied
        ny, nx = occ.shape
        horizontal = np.zeros((ny + 1, nx), dtype=bool)
        horizontal[:-1] |= occ
        horizontal[1:] |= occ
        vertical = np.zeros((ny, nx + 1), dtype=bool)
        vertical[:, :-1] |= occ
        vertical[:, 1:] |= occ
        idx = self.index

        pairs: list[NDArray[np.intp]] = []
        kinds: list[NDArray[np.int8]] = []

        def add(
            first: NDArray[np.intp], second: NDArray[np.intp], kind: SpringKind
        ) -> None:
            pairs.append(np.column_stack([first, second]))
            kinds.append(np.full(len(first), kind.code, dtype=np.int8))

        j, i = np.nonzero(horizontal)
        add(idx[j, i], idx[j, i + 1], SpringKind.STRUCTURAL)
        j, i = np.nonzero(vertical)
        add(idx[j, i], idx[j + 1, i], SpringKind.STRUCTURAL)

        j, i = np.nonzero(occ)
        add(idx[j, i], idx[j + 1, i + 1], SpringKind.SHEAR)
        add(idx[j, i + 1], idx[j + 1, i], SpringKind.SHEAR)

        j, i = np.nonzero(horizontal[:, :-1] & horizontal[:, 1:])
        add(idx[j, i], idx[j, i + 2], SpringKind.BEND)
        j, i = np.nonzero(vertical[:-1, :] & vertical[1:, :])
        add(idx[j, i], idx[j + 2, i], SpringKind.BEND)

        return np.concatenate(pairs), np.concatenate(kinds)


def _subdivide(bounds: list[float], pitch: float) -> FloatArray:
    """Sorted lattice coordinates through all bounds, gaps no wider than pitch."""
    unique: list[float] = []
    for value in sorted(bounds):
        if not unique or value - unique[-1] > 1e-12:
            unique.append(value)
    coords = [unique[0]]
    for lo, hi in zip(unique[:-1], unique[1:]):
        cells = max(1, math.ceil((hi - lo) / pitch - 1e-9))
        coords.extend(np.linspace(lo, hi, cells + 1)[1:].tolist())
    return np.array(coords)


def _assemble(
    category: Category,
    lattice: _Lattice,
    points: FloatArray,
    keypoints: dict[str, int],
    params: GarmentParams,
) -> GarmentMesh:
    centered = points - points.mean(axis=0)
    positions = np.column_stack([centered, np.zeros(len(centered))])
    springs, kinds = lattice.springs()
    rest = np.linalg.norm(positions[springs[:, 0]] - positions[springs[:, 1]], axis=1)

    n = len(positions)
    adjacency = coo_matrix(
        (np.ones(len(springs)), (springs[:, 0], springs[:, 1])), shape=(n, n)
    )
    components, _ = connected_components(adjacency, directed=False)
    if components != 1:
        raise InvalidParams(f"{category} mesh splits into {components} pieces")

    mesh = GarmentMesh(
        category=category,
        vertices=VertexConfiguration(positions),
        triangles=lattice.triangles(),
        springs=springs,
        rest_lengths=rest,
        spring_kinds=kinds,
        keypoints=keypoints,
        params=asdict(params),
    )
    logger.debug(f"Generated {mesh!r}")
    return mesh


def make_shirt(params: ShirtParams | None = None) -> GarmentMesh:
    """Builds a long-sleeve shirt laid out in a T shape.

    Keypoints: sleeve tips (outer top corners of the sleeves), shoulders (top
    corners of the body) and waists (bottom corners of the body).
    """
    params = params or ShirtParams()
    params.validate()
    half = params.body_width / 2
    top = params.body_height
    cuff = top - params.sleeve_width
    parts: list[Rect] = [
        (-half, half, 0.0, top),
        (-half - params.left_sleeve, -half, cuff, top),
        (half, half + params.right_sleeve, cuff, top),
    ]
    lattice = _Lattice(parts, params.pitch)
    keypoints = {
        "left_sleeve": lattice.node(-half - params.left_sleeve, top),
        "right_sleeve": lattice.node(half + params.right_sleeve, top),
        "left_shoulder": lattice.node(-half, top),
        "right_shoulder": lattice.node(half, top),
        "left_waist": lattice.node(-half, 0.0),
        "right_waist": lattice.node(half, 0.0),
    }
    return _assemble(Category.SHIRT, lattice, lattice.points, keypoints, params)


def make_pants(params: PantsParams | None = None) -> GarmentMesh:
    """Builds pants laid out as an inverted V.

    Keypoints: the two top corners of the waist band and the outer bottom
    corners of the two legs.
    """
    params = params or PantsParams()
    params.validate()
    half = params.waist_width / 2
    parts: list[Rect] = [
        (-half, half, 0.0, params.rise),
        (-half, -half + params.leg_width, -params.left_leg, 0.0),
        (half - params.leg_width, half, -params.right_leg, 0.0),
    ]
    lattice = _Lattice(parts, params.pitch)
    keypoints = {
        "left_waist": lattice.node(-half, params.rise),
        "right_waist": lattice.node(half, params.rise),
        "left_hem": lattice.node(-half, -params.left_leg),
        "right_hem": lattice.node(half, -params.right_leg),
    }
    points = lattice.points.copy()
    legs = points[:, 1] < 0
    depth = -points[legs, 1] / max(params.left_leg, params.right_leg)
    points[legs, 0] += np.sign(points[legs, 0]) * params.spread * depth
    return _assemble(Category.PANTS, lattice, points, keypoints, params)


def make_patch(params: PatchParams | None = None) -> GarmentMesh:
    """Builds a flat rectangular cloth with its four corners as keypoints."""
    params = params or PatchParams()
    params.validate()
    w, h = params.width, params.height
    lattice = _Lattice([(0.0, w, 0.0, h)], params.pitch)
    keypoints = {
        "bottom_left": lattice.node(0.0, 0.0),
        "bottom_right": lattice.node(w, 0.0),
        "top_left": lattice.node(0.0, h),
        "top_right": lattice.node(w, h),
    }
    return _assemble(Category.PATCH, lattice, lattice.points, keypoints, params)


def make_garment(params: GarmentParams) -> GarmentMesh:
    if isinstance(params, ShirtParams):
        return make_shirt(params)
    if isinstance(params, PantsParams):
        return make_pants(params)
    return make_patch(params)


def arm_length(mesh: GarmentMesh) -> float:
    """Shortest sleeve-tip to shoulder distance over the two arms."""
    if mesh.category is not Category.SHIRT:
        raise WrongCategory.expected("shirt", mesh.category.value)
    planar = mesh.vertices.planar
    kp = mesh.keypoints
    return min(
        float(
            np.linalg.norm(
                planar[kp[f"{side}_sleeve"]] - planar[kp[f"{side}_shoulder"]]
            )
        )
        for side in ("left", "right")
    )


def sample_shirt_params(
    rng: np.random.Generator, pitch: float = ShirtParams.pitch
) -> ShirtParams:
    """Draws a randomized shirt instance."""
    return ShirtParams(
        body_width=float(rng.uniform(0.34, 0.46)),
        body_height=float(rng.uniform(0.42, 0.6)),
        sleeve_length=float(rng.uniform(0.18, 0.3)),
        sleeve_width=float(rng.uniform(0.1, 0.14)),
        pitch=pitch,
    )


def sample_pants_params(
    rng: np.random.Generator, pitch: float = PantsParams.pitch
) -> PantsParams:
    """Draws a randomized pants instance."""
    waist = float(rng.uniform(0.32, 0.4))
    return PantsParams(
        waist_width=waist,
        rise=float(rng.uniform(0.1, 0.14)),
        leg_length=float(rng.uniform(0.4, 0.54)),
        leg_width=float(rng.uniform(0.36, 0.46) * waist),
        spread=float(rng.uniform(0.08, 0.16)),
        pitch=pitch,
    )


def sample_garment(
    category: Category, rng: np.random.Generator, pitch: float = 0.025
) -> GarmentMesh:
    """Draws and builds a randomized garment of the given category."""
    if category is Category.SHIRT:
        return make_shirt(sample_shirt_params(rng, pitch))
    if category is Category.PANTS:
        return make_pants(sample_pants_params(rng, pitch))
    return make_patch(
        PatchParams(
            width=float(rng.uniform(0.3, 0.5)),
            height=float(rng.uniform(0.3, 0.5)),
            pitch=pitch,
        )
    )
