import math
from pathlib import Path

import numpy as np
import pytest

from cloth_canal.exceptions import InvalidParams, WrongCategory
from cloth_canal.garments import (
    MAX_GARMENT_HEIGHT,
    PANTS_KEYPOINTS,
    SHIRT_KEYPOINTS,
    GarmentMesh,
    GarmentParams,
    PantsParams,
    PatchParams,
    ShirtParams,
    arm_length,
    load_mesh,
    make_garment,
    make_pants,
    make_patch,
    make_shirt,
    sample_garment,
    sample_shirt_params,
    save_mesh,
)
from cloth_canal.kinds import Category, SpringKind


def cells(length: float, pitch: float) -> int:
    return max(1, math.ceil(length / pitch - 1e-9))


def shirt_vertex_count(params: ShirtParams) -> int:
    """Closed-form vertex count of a symmetric shirt lattice."""
    sleeve_x = cells(params.sleeve_length, params.pitch)
    body_x = cells(params.body_width, params.pitch)
    body_y = cells(params.body_height - params.sleeve_width, params.pitch)
    cuff_y = cells(params.sleeve_width, params.pitch)
    body = (body_x + 1) * (body_y + cuff_y + 1)
    # the column shared with the body belongs to the body
    sleeve = sleeve_x * (cuff_y + 1)
    return body + 2 * sleeve


class TestShirt:
    def test_default_vertex_count(self) -> None:
        params = ShirtParams()
        mesh = make_shirt(params)
        assert mesh.n_vertices == shirt_vertex_count(params) == 494

    @pytest.mark.parametrize("pitch", [0.05, 0.03, 0.02])
    def test_vertex_count_other_pitches(self, pitch: float) -> None:
        params = ShirtParams(pitch=pitch)
        assert make_shirt(params).n_vertices == shirt_vertex_count(params)

    def test_keypoints(self) -> None:
        params = ShirtParams()
        mesh = make_shirt(params)
        assert set(mesh.keypoints) == set(SHIRT_KEYPOINTS)
        left = mesh.vertices.positions[mesh.keypoints["left_sleeve"]]
        assert left[0] == pytest.approx(
            -(params.body_width / 2 + params.sleeve_length), abs=1e-9
        )

    def test_planar_and_mirror_symmetric(self) -> None:
        mesh = make_shirt()
        positions = mesh.vertices.positions
        assert np.all(positions[:, 2] == positions[0, 2])
        mirrored = positions * np.array([-1.0, 1.0, 1.0])
        order = np.lexsort((positions[:, 0], positions[:, 1]))
        mirrored_order = np.lexsort((mirrored[:, 0], mirrored[:, 1]))
        assert np.allclose(
            positions[order], mirrored[mirrored_order], rtol=0, atol=1e-9
        )

    def test_centered(self) -> None:
        mesh = make_shirt()
        assert np.allclose(mesh.vertices.centroid()[:2], 0.0, atol=1e-12)

    def test_spring_kinds(self) -> None:
        mesh = make_shirt(ShirtParams(pitch=0.05))
        structural = mesh.springs_of(SpringKind.STRUCTURAL)
        shear = mesh.springs_of(SpringKind.SHEAR)
        bend = mesh.springs_of(SpringKind.BEND)
        assert len(structural) + len(shear) + len(bend) == len(mesh.springs)
        # every occupied cell has two diagonals and two triangles
        assert len(shear) == len(mesh.triangles)
        assert np.all(mesh.rest_lengths > 0)

    def test_too_tall(self) -> None:
        with pytest.raises(InvalidParams):
            make_shirt(ShirtParams(body_height=MAX_GARMENT_HEIGHT + 0.05))

    def test_non_positive(self) -> None:
        with pytest.raises(InvalidParams):
            make_shirt(ShirtParams(sleeve_length=0.0))


class TestPants:
    def test_four_keypoints(self) -> None:
        mesh = make_pants()
        assert len(mesh.keypoints) == 4
        assert set(mesh.keypoints) == set(PANTS_KEYPOINTS)

    def test_inverted_v(self) -> None:
        mesh = make_pants()
        positions = mesh.vertices.positions
        left = positions[mesh.keypoints["left_hem"]]
        right = positions[mesh.keypoints["right_hem"]]
        left_waist = positions[mesh.keypoints["left_waist"]]
        right_waist = positions[mesh.keypoints["right_waist"]]
        assert right[0] - left[0] > right_waist[0] - left_waist[0]

    def test_legs_must_not_overlap(self) -> None:
        with pytest.raises(InvalidParams):
            make_pants(PantsParams(leg_width=0.2))


class TestArmLength:
    def test_symmetric(self) -> None:
        assert arm_length(make_shirt()) == pytest.approx(0.25, abs=1e-12)

    def test_shortened_sleeve(self) -> None:
        mesh = make_shirt(ShirtParams(left_sleeve_length=0.2))
        assert arm_length(mesh) == pytest.approx(0.2, abs=1e-12)

    def test_randomized(self) -> None:
        rng = np.random.default_rng(9)
        for _ in range(5):
            mesh = make_shirt(sample_shirt_params(rng, pitch=0.05))
            kp = mesh.keypoints
            p = mesh.vertices.positions
            expected = min(
                math.dist(p[kp["left_sleeve"], :2], p[kp["left_shoulder"], :2]),
                math.dist(p[kp["right_sleeve"], :2], p[kp["right_shoulder"], :2]),
            )
            assert arm_length(mesh) == pytest.approx(expected, abs=1e-12)

    def test_pants(self) -> None:
        with pytest.raises(WrongCategory):
            arm_length(make_pants())


class TestSerialization:
    def test_round_trip_is_bit_exact(self, tmp_path: Path) -> None:
        mesh = make_shirt(sample_shirt_params(np.random.default_rng(1), pitch=0.05))
        path = tmp_path / "shirt.json"
        save_mesh(mesh, path)
        loaded = load_mesh(path)
        assert loaded.category is Category.SHIRT
        assert np.array_equal(loaded.vertices.positions, mesh.vertices.positions)
        assert np.array_equal(loaded.triangles, mesh.triangles)
        assert np.array_equal(loaded.springs, mesh.springs)
        assert np.array_equal(loaded.rest_lengths, mesh.rest_lengths)
        assert np.array_equal(loaded.spring_kinds, mesh.spring_kinds)
        assert loaded.keypoints == mesh.keypoints
        assert loaded.content_hash() == mesh.content_hash()

    def test_rejects_unknown_version(self) -> None:
        d = make_patch().to_dict()
        d["version"] = 99
        with pytest.raises(ValueError, match="version"):
            GarmentMesh.from_dict(d)


class TestGarmentFactory:
    @pytest.mark.parametrize(
        "params, category",
        [
            (ShirtParams(pitch=0.05), Category.SHIRT),
            (PantsParams(pitch=0.05), Category.PANTS),
            (PatchParams(pitch=0.05), Category.PATCH),
        ],
    )
    def test_make_garment(self, params: GarmentParams, category: Category) -> None:
        assert make_garment(params).category is category

    @pytest.mark.parametrize("category", list(Category))
    def test_sample_is_deterministic(self, category: Category) -> None:
        a = sample_garment(category, np.random.default_rng(3), pitch=0.05)
        b = sample_garment(category, np.random.default_rng(3), pitch=0.05)
        assert a.content_hash() == b.content_hash()
        assert a.height <= MAX_GARMENT_HEIGHT + 1e-9
