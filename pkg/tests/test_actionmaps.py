import math
from pathlib import Path

import numpy as np
import pytest
from pytest_benchmark.fixture import BenchmarkFixture

from cloth_canal.actionmaps import (
    ActionCommand,
    EntryTag,
    ValueStack,
    ViewConfig,
    build_stack,
    combine_and_select,
    decode_action,
    entry_validity,
    is_feasible,
    pixel_to_world,
    render_mask,
    render_observation,
    select_index,
    world_to_pixel,
)
from cloth_canal.canal_io import CanalIO
from cloth_canal.exceptions import AllInvalid, DimensionMismatch, InvalidPixel
from cloth_canal.garments import PatchParams, make_patch
from cloth_canal.geometry import PlanarTransform
from cloth_canal.kinds import PrimitiveKind
from cloth_canal.simulator import SimState

from .helpers import coarse_patch, rotation

# entry scale at which one pixel spans one centimetre
CENTIMETRE_SCALE = 0.01 * 128 / 1.5


def patch_state() -> SimState:
    return SimState.from_mesh(coarse_patch())


def exhaustive_best(combined: np.ndarray) -> tuple[int, int, int, int]:
    best = None
    best_value = -np.inf
    for index in np.ndindex(*combined.shape):
        if combined[index] > best_value:
            best, best_value = index, combined[index]
    assert best is not None
    return best  # type: ignore[return-value]


class TestRendering:
    def test_empty_workspace(self) -> None:
        mask = render_mask(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.intp))
        assert mask.area == 0

    def test_centimetre_square(self) -> None:
        mesh = make_patch(PatchParams(width=0.64, height=0.64, pitch=0.08))
        obs = render_observation(SimState.from_mesh(mesh), scale=CENTIMETRE_SCALE)
        assert obs.pixel_size == pytest.approx(0.01)
        rows, cols = np.nonzero(obs.mask)
        assert abs(cols.max() - cols.min() + 1 - 64) <= 1
        assert abs(rows.max() - rows.min() + 1 - 64) <= 1
        assert abs((cols.min() + cols.max()) / 2 - 63.5) <= 1
        assert abs((rows.min() + rows.max()) / 2 - 63.5) <= 1
        assert 62**2 <= obs.mask.sum() <= 66**2

    def test_height_map(self) -> None:
        state = patch_state()
        state.positions[:, 2] = 0.03
        obs = render_observation(state)
        assert np.allclose(obs.height[obs.mask], 0.03)
        assert np.all(obs.height[~obs.mask] == 0)

    def test_cloth_out_of_view(self) -> None:
        state = patch_state()
        obs = render_observation(state, PlanarTransform(5.0, 5.0, 0.0))
        assert not obs.mask.any()

    def test_rejects_bad_scale(self) -> None:
        with pytest.raises(ValueError):
            render_observation(patch_state(), scale=0.0)

    def test_observation_is_read_only(self) -> None:
        obs = render_observation(patch_state())
        with pytest.raises(ValueError):
            obs.mask[0, 0] = True


class TestStack:
    def test_entry_count(self) -> None:
        stack = build_stack(patch_state())
        assert len(stack) == 96 == ViewConfig().n_entries
        assert stack.masks().shape == (96, 128, 128)

    def test_order(self) -> None:
        state = patch_state()
        stack = build_stack(state)
        k = stack.index(4, 1.5)
        assert stack[k].tag == EntryTag(4, 1.5)
        plain = render_observation(state, scale=1.0)
        assert np.array_equal(stack[stack.index(0, 1.0)].mask, plain.mask)

    def test_threads_match_serial(self) -> None:
        state = patch_state()
        view = PlanarTransform(0.1, -0.1, 0.7)
        serial = build_stack(state, view)
        threaded = build_stack(state, view, workers=4)
        assert np.array_equal(serial.masks(), threaded.masks())

    def test_to_npz(self, tmp_path: Path) -> None:
        stack = build_stack(patch_state())
        path = tmp_path / "stack.npz"
        stack.to_npz(path)
        arrays = CanalIO().read_npz(path)
        assert np.array_equal(arrays["masks"], stack.masks())
        assert arrays["coordinates"].shape == (2, 128, 128)
        assert arrays["scales"][16] == 1.0

    def test_build_stack_benchmark(self, benchmark: BenchmarkFixture) -> None:
        stack = benchmark(build_stack, patch_state())
        assert len(stack) == 96


class TestPixelMapping:
    @pytest.mark.parametrize("rotation_index", [0, 3, 9])
    @pytest.mark.parametrize("scale", [0.75, 2.0])
    def test_round_trip(self, rotation_index: int, scale: float) -> None:
        view = PlanarTransform(0.2, -0.1, 0.4)
        obs = render_observation(
            patch_state(), view, scale, rotation=rotation_index
        )
        for col, row in [(0, 0), (64, 64), (127, 5), (33.25, 90.5)]:
            point = pixel_to_world(obs, col, row)
            back = world_to_pixel(obs, point)
            assert back == pytest.approx((col, row), abs=1e-9)

    def test_center_pixel_midpoint(self) -> None:
        obs = render_observation(patch_state())
        command = decode_action(obs, (64, 64), PrimitiveKind.PICK_PLACE)
        mid = 0.5 * (command.grasp_a[:2] + command.grasp_b[:2])
        assert np.linalg.norm(mid) <= obs.pixel_size

    def test_quarter_turn(self) -> None:
        state = patch_state()
        plain = render_observation(state)
        turned = render_observation(state, rotation=4)
        a = decode_action(plain, (64, 64), PrimitiveKind.FLING)
        b = decode_action(turned, (64, 64), PrimitiveKind.FLING)
        quarter = rotation(math.pi / 2)
        assert np.allclose(b.grasp_a[:2], quarter @ a.grasp_a[:2], atol=1e-9)
        assert np.allclose(b.grasp_b[:2], quarter @ a.grasp_b[:2], atol=1e-9)
        assert np.allclose(b.direction, quarter @ a.direction, atol=1e-9)

    def test_separation_scales_linearly(self) -> None:
        state = patch_state()
        separations = []
        for scale in (1.0, 2.0):
            obs = render_observation(state, scale=scale)
            command = decode_action(obs, (64, 64), PrimitiveKind.PICK_PLACE)
            separation = np.linalg.norm(command.grasp_b[:2] - command.grasp_a[:2])
            assert separation == pytest.approx(20 * obs.pixel_size, abs=1e-12)
            separations.append(separation)
        assert separations[1] / separations[0] == pytest.approx(2.0)

    def test_grasp_heights_from_height_map(self) -> None:
        state = patch_state()
        state.positions[:, 2] = 0.02
        obs = render_observation(state)
        command = decode_action(obs, (64, 64), PrimitiveKind.PICK_PLACE)
        assert command.grasp_a[2] == pytest.approx(0.02)
        assert command.grasp_b[2] == pytest.approx(0.02)

    @pytest.mark.parametrize("pixel", [(64, 5), (64, 120), (128, 64), (-1, 64)])
    def test_invalid_pixel(self, pixel: tuple[int, int]) -> None:
        obs = render_observation(patch_state())
        with pytest.raises(InvalidPixel):
            decode_action(obs, pixel, PrimitiveKind.FLING)


class TestValidity:
    def test_center_is_valid(self) -> None:
        obs = render_observation(patch_state())
        for kind in PrimitiveKind:
            assert entry_validity(obs, kind)[64, 64]

    def test_off_cloth_is_invalid(self) -> None:
        obs = render_observation(patch_state())
        valid = entry_validity(obs, PrimitiveKind.PICK_PLACE)
        assert not valid[64, 5]
        assert not valid[5:10].any()

    def test_wide_grasps_are_invalid(self) -> None:
        obs = render_observation(patch_state(), scale=3.0)
        assert 20 * obs.pixel_size > 0.7
        assert not entry_validity(obs, PrimitiveKind.FLING).any()

    def test_valid_pixels_decode_to_feasible_commands(self) -> None:
        obs = render_observation(patch_state(), scale=1.5, rotation=2)
        for kind in PrimitiveKind:
            rows, cols = np.nonzero(entry_validity(obs, kind))
            assert len(rows) > 0
            for row, col in list(zip(rows, cols))[::37]:
                command = decode_action(obs, (int(col), int(row)), kind)
                assert is_feasible(command)

    def test_infeasible_command(self) -> None:
        command = ActionCommand(
            kind=PrimitiveKind.FLING,
            grasp_a=np.array([-0.5, 0.0, 0.0]),
            grasp_b=np.array([0.5, 0.0, 0.0]),
            direction=np.array([0.0, 1.0]),
            tag=EntryTag(0, 1.0),
            pixel=(64, 64),
        )
        assert not is_feasible(command)


class TestSelection:
    @pytest.fixture(scope="function")
    def rng(self) -> np.random.Generator:
        return np.random.default_rng(17)

    def test_alignment_values_zero(self, rng: np.random.Generator) -> None:
        shape = (2, 3, 8, 8)
        value_c = rng.normal(size=shape)
        values = ValueStack(value_c, np.zeros(shape), np.ones(shape, dtype=bool))
        selection = select_index(values, 0.6)
        expected = np.unravel_index(int(np.argmax(value_c)), shape)
        assert (
            selection.primitive,
            selection.entry,
            selection.row,
            selection.col,
        ) == tuple(int(i) for i in expected)

    def test_single_valid_pixel(self, rng: np.random.Generator) -> None:
        shape = (2, 3, 8, 8)
        validity = np.zeros(shape, dtype=bool)
        validity[1, 2, 3, 4] = True
        values = ValueStack(
            rng.normal(size=shape) - 100, rng.normal(size=shape), validity
        )
        selection = select_index(values, 0.3)
        assert (selection.primitive, selection.entry, selection.row, selection.col) == (
            1,
            2,
            3,
            4,
        )

    def test_matches_exhaustive_scan(self, rng: np.random.Generator) -> None:
        shape = (2, 4, 6, 6)
        for _ in range(10):
            value_c = rng.normal(size=shape)
            value_a = rng.normal(size=shape)
            validity = rng.random(size=shape) < 0.3
            alpha = float(rng.uniform(0.1, 0.9))
            combined = np.where(
                validity, (1 - alpha) * value_c + alpha * value_a, -np.inf
            )
            selection = select_index(ValueStack(value_c, value_a, validity), alpha)
            assert (
                selection.primitive,
                selection.entry,
                selection.row,
                selection.col,
            ) == exhaustive_best(combined)

    def test_ties_go_to_lowest_index(self) -> None:
        shape = (2, 2, 4, 4)
        ones = np.ones(shape)
        selection = select_index(
            ValueStack(ones, ones, np.ones(shape, dtype=bool)), 0.5
        )
        assert (selection.primitive, selection.entry, selection.row, selection.col) == (
            0,
            0,
            0,
            0,
        )

    def test_all_invalid(self) -> None:
        shape = (2, 1, 4, 4)
        values = ValueStack(np.ones(shape), np.ones(shape), np.zeros(shape, bool))
        with pytest.raises(AllInvalid):
            select_index(values, 0.6)

    def test_shape_mismatch(self) -> None:
        shape = (2, 1, 4, 4)
        with pytest.raises(DimensionMismatch):
            ValueStack(np.ones(shape), np.ones((2, 1, 4, 5)), np.ones(shape, bool))
        three = (3, 1, 4, 4)
        with pytest.raises(DimensionMismatch):
            ValueStack(np.ones(three), np.ones(three), np.ones(three, bool))

    def test_bad_alpha(self) -> None:
        shape = (2, 1, 4, 4)
        values = ValueStack(np.ones(shape), np.ones(shape), np.ones(shape, bool))
        with pytest.raises(ValueError):
            select_index(values, 0.0)

    def test_combine_and_select(self, rng: np.random.Generator) -> None:
        stack = build_stack(patch_state())
        shape = (2, len(stack), 128, 128)
        values = ValueStack.from_stack(
            stack, rng.random(size=shape), rng.random(size=shape)
        )
        command, value = combine_and_select(values, 0.6, stack)
        selection = select_index(values, 0.6)
        assert value == selection.value
        assert command.kind is values.primitives[selection.primitive]
        assert command.pixel == (selection.col, selection.row)
        assert command.tag == stack[selection.entry].tag
        assert is_feasible(command)
