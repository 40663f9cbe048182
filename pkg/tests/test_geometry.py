import math

import numpy as np
import pytest
from pytest_benchmark.fixture import BenchmarkFixture

from cloth_canal.exceptions import DegenerateSubset, DimensionMismatch
from cloth_canal.garments import make_shirt
from cloth_canal.geometry import (
    PlanarTransform,
    VertexConfiguration,
    apply_transform,
    fit_rigid_planar,
    mirror_flip,
    planar_distances,
    trimmed_align,
    trimmed_cost,
)
from cloth_canal.warnings import DegenerateRotation

from .helpers import (
    circle,
    coarse_shirt,
    grid_search_cost,
    registration_instance,
    rigid,
    trimmed_grid_search_cost,
)

TRIANGLE = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)]


class TestVertexConfiguration:
    def test_lifts_planar_input(self) -> None:
        cfg = VertexConfiguration(np.array(TRIANGLE))
        assert cfg.positions.shape == (3, 3)
        assert np.all(cfg.positions[:, 2] == 0)

    def test_read_only(self) -> None:
        cfg = VertexConfiguration(np.array(TRIANGLE))
        with pytest.raises(ValueError):
            cfg.positions[0, 0] = 5.0

    def test_rejects_bad_shapes(self) -> None:
        with pytest.raises(DimensionMismatch):
            VertexConfiguration(np.zeros((4, 4)))
        with pytest.raises(DimensionMismatch):
            VertexConfiguration(np.zeros((2, 3)))

    def test_rejects_non_finite(self) -> None:
        with pytest.raises(ValueError, match="finite"):
            VertexConfiguration(np.array([[0, 0, 0], [1, 0, 0], [np.nan, 1, 0]]))

    def test_extent(self) -> None:
        cfg = VertexConfiguration(np.array([(0, 0), (0.5, 0), (0, 0.72)]))
        assert cfg.extent() == pytest.approx((0.5, 0.72))


class TestPlanarTransform:
    def test_theta_is_wrapped(self) -> None:
        assert PlanarTransform(theta=3 * math.pi).theta == pytest.approx(math.pi)
        assert PlanarTransform(theta=-math.pi).theta == pytest.approx(math.pi)

    def test_compose_and_inverse(self) -> None:
        t = PlanarTransform(0.3, -0.2, 1.1)
        u = PlanarTransform(-0.1, 0.4, -0.5, mirrored=True)
        points = circle(7)
        composed = t.compose(u).apply_points(points)
        assert np.allclose(composed, t.apply_points(u.apply_points(points)))

        identity = u.compose(u.inverse())
        assert identity.magnitude() < 1e-12
        assert not identity.mirrored

    def test_matrix_round_trip(self) -> None:
        t = PlanarTransform(0.25, 0.5, -2.0, mirrored=True)
        back = PlanarTransform.from_matrix(t.as_matrix())
        assert back.mirrored
        assert np.allclose(back.as_matrix(), t.as_matrix())

    def test_dict_round_trip(self) -> None:
        t = PlanarTransform(0.1, 0.2, 0.3, mirrored=True)
        back = PlanarTransform.from_dict(t.to_dict())
        assert back.mirrored
        assert np.allclose(back.as_matrix(), t.as_matrix(), atol=1e-15)


class TestApplyTransform:
    def test_identity(self) -> None:
        cfg = VertexConfiguration(np.array([(0.1, 0.2, 0.3), (1, 0, 0), (0, 1, 0)]))
        assert apply_transform(PlanarTransform.identity(), cfg).allclose(cfg, 0.0)

    def test_translation_keeps_z(self) -> None:
        cfg = VertexConfiguration(np.array([(0, 0, 0.1), (1, 0, 0), (0, 1, 0)]))
        moved = apply_transform(PlanarTransform(1.0, 2.0, 0.0), cfg)
        assert np.allclose(moved.positions[0], (1.0, 2.0, 0.1))

    def test_half_turn(self) -> None:
        cfg = VertexConfiguration(np.array([(1, 0, 0), (0, 1, 0), (0, 0, 0)]))
        moved = apply_transform(PlanarTransform(0.0, 0.0, math.pi), cfg)
        assert np.allclose(moved.positions[0], (-1.0, 0.0, 0.0), atol=1e-12)

    def test_preserves_pairwise_distances(self) -> None:
        rng = np.random.default_rng(3)
        cfg = VertexConfiguration(rng.normal(size=(30, 3)))
        moved = apply_transform(PlanarTransform(0.7, -1.2, 2.4), cfg)
        before = np.linalg.norm(cfg.planar[:, None] - cfg.planar[None], axis=-1)
        after = np.linalg.norm(moved.planar[:, None] - moved.planar[None], axis=-1)
        assert np.max(np.abs(before - after)) <= 1e-12

    def test_mirror_flip_in_frame(self) -> None:
        frame = PlanarTransform(0.2, 0.0, math.pi / 2)
        cfg = VertexConfiguration(np.array([(0.2, 1.0), (0.5, 0.0), (0.2, -1.0)]))
        # the frame's local y axis runs along the workspace x axis
        flipped = mirror_flip(cfg, frame)
        assert np.allclose(flipped.planar, [(0.2, -1.0), (0.5, 0.0), (0.2, 1.0)])


class TestFitRigidPlanar:
    def test_identity(self) -> None:
        t = fit_rigid_planar(TRIANGLE, TRIANGLE)
        assert t.magnitude() < 1e-12

    def test_quarter_turn(self) -> None:
        dst = [(0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]
        t = fit_rigid_planar(TRIANGLE, dst)
        assert t.theta == pytest.approx(math.pi / 2, abs=1e-12)
        assert t.tx == pytest.approx(0.0, abs=1e-12)
        assert t.ty == pytest.approx(0.0, abs=1e-12)
        assert not t.mirrored

    def test_subset_ignores_outlier(self) -> None:
        src = circle(20)
        dst = rigid(src, 0.3, 0.15, -0.05)
        dst[0] += (5.0, 5.0)
        t = fit_rigid_planar(src, dst, subset=range(1, 20))
        assert t.theta == pytest.approx(0.3, abs=1e-9)
        assert t.tx == pytest.approx(0.15, abs=1e-9)
        assert t.ty == pytest.approx(-0.05, abs=1e-9)

        theta, _ = grid_search_cost(src[1:], dst[1:])
        assert abs(theta - t.theta) <= 1e-4

    def test_exact_on_rigid_data(self) -> None:
        rng = np.random.default_rng(11)
        for _ in range(20):
            src = rng.uniform(-1, 1, size=(15, 2))
            theta, tx, ty = rng.uniform(-math.pi, math.pi), *rng.normal(size=2)
            dst = rigid(src, theta, tx, ty)
            t = fit_rigid_planar(src, dst)
            residual = planar_distances(t.apply_points(src), dst).sum()
            assert residual <= 1e-9 * len(src)

    def test_optimal_against_perturbations(self) -> None:
        rng = np.random.default_rng(5)
        for _ in range(25):
            src = rng.uniform(-1, 1, size=(12, 2))
            dst = rigid(src, 0.4, 0.1, 0.2) + rng.normal(scale=0.05, size=(12, 2))
            t = fit_rigid_planar(src, dst)
            best = np.sum((t.apply_points(src) - dst) ** 2)
            for noise in rng.normal(scale=0.01, size=(200, 3)):
                dx, dy, dtheta = noise
                other = PlanarTransform(t.tx + dx, t.ty + dy, t.theta + dtheta)
                assert np.sum((other.apply_points(src) - dst) ** 2) >= best - 1e-12

    def test_needs_two_indices(self) -> None:
        with pytest.raises(DegenerateSubset):
            fit_rigid_planar(TRIANGLE, TRIANGLE, subset=[1])

    def test_mismatched_counts(self) -> None:
        with pytest.raises(DimensionMismatch):
            fit_rigid_planar(TRIANGLE, circle(4))

    def test_coincident_points_fall_back_to_translation(self) -> None:
        src = np.array([(0.5, 0.5), (0.5, 0.5), (0.5, 0.5)])
        dst = src + (0.2, -0.1)
        with pytest.warns(DegenerateRotation):
            t = fit_rigid_planar(src, dst)
        assert t.theta == 0.0
        assert (t.tx, t.ty) == pytest.approx((0.2, -0.1))


class TestTrimmedAlign:
    def test_equal_configurations(self) -> None:
        g = coarse_shirt().vertices
        result = trimmed_align(g, g, 0.3)
        assert result.transform.magnitude() < 1e-12
        assert result.iterations == 1
        assert len(result.inlier_indices) == g.n
        assert not result.fallback

    def test_pure_translation(self) -> None:
        g = coarse_shirt().vertices
        v = g.translated(0.2, 0.0)
        result = trimmed_align(v, g, 0.3)
        assert result.transform.tx == pytest.approx(0.2, abs=1e-9)
        assert result.transform.ty == pytest.approx(0.0, abs=1e-9)
        assert result.transform.theta == pytest.approx(0.0, abs=1e-9)
        residual = planar_distances(result.aligned_goal.positions, v.positions)
        assert residual.max() < 1e-9

    def test_excludes_displaced_vertices(self) -> None:
        mesh = coarse_shirt()
        g = mesh.vertices
        scale = math.sqrt(mesh.width * mesh.height)
        rng = np.random.default_rng(0)
        outliers = rng.choice(g.n, size=g.n // 10, replace=False)
        v = rigid(g.positions, 0.4, 0.0, 0.0)
        v[outliers, 0] += 0.5 * scale

        result = trimmed_align(v, g, 0.3, scale)
        assert abs(result.transform.theta - 0.4) <= 0.02
        assert not set(outliers.tolist()) & set(result.inlier_indices.tolist())

        # cannot be beaten by a local grid of nearby transforms
        best = trimmed_cost(v, g, result.transform, 0.3 * scale)
        t = result.transform
        for dtheta in np.linspace(-0.02, 0.02, 9):
            for dx in np.linspace(-0.01, 0.01, 5):
                for dy in np.linspace(-0.01, 0.01, 5):
                    other = PlanarTransform(t.tx + dx, t.ty + dy, t.theta + dtheta)
                    assert trimmed_cost(v, g, other, 0.3 * scale) >= best - 1e-9

    def test_idempotent(self) -> None:
        g = coarse_shirt().vertices
        v = rigid(g.positions, -0.7, 0.05, 0.1)
        v[:5, :2] += 0.3
        first = trimmed_align(v, g, 0.3)
        second = trimmed_align(v, first.aligned_goal, 0.3)
        assert second.transform.magnitude() < 1e-6

    def test_equivariant(self) -> None:
        g = coarse_shirt().vertices
        v = rigid(g.positions, 0.2, 0.03, -0.02)
        t = PlanarTransform(0.1, -0.3, 1.3)
        base = trimmed_align(v, g, 0.3).transform
        moved = trimmed_align(apply_transform(t, VertexConfiguration(v)), g, 0.3)
        expected = t.compose(base)
        assert moved.transform.tx == pytest.approx(expected.tx, abs=1e-6)
        assert moved.transform.ty == pytest.approx(expected.ty, abs=1e-6)
        assert moved.transform.theta == pytest.approx(expected.theta, abs=1e-6)

    def test_falls_back_with_few_inliers(self) -> None:
        g = VertexConfiguration(circle(10, radius=0.1))
        v = g.translated(5.0, 5.0)
        result = trimmed_align(v, g, 0.3, 1.0)
        assert result.fallback or len(result.inlier_indices) == g.n
        assert result.transform.tx == pytest.approx(5.0, abs=1e-9)

    @pytest.mark.parametrize("k", range(16))
    def test_recovers_every_goal_rotation(self, k: int) -> None:
        mesh = make_shirt()
        g = mesh.vertices
        scale = math.sqrt(mesh.width * mesh.height)
        v = rigid(g.positions, 2 * math.pi * k / 16, 0.1, -0.05)
        result = trimmed_align(v, g, 0.3, scale)
        assert len(result.inlier_indices) == g.n
        assert result.cost < 1e-18
        residual = planar_distances(result.aligned_goal.positions, v)
        assert residual.max() < 1e-9

    def test_large_rotation_ignores_chance_matches(self) -> None:
        rng = np.random.default_rng(21)
        g = rng.uniform(-0.5, 0.5, size=(34, 2))
        v = rigid(g, -2.61, 0.05, 0.1)
        outliers = np.arange(5)
        v[outliers, 0] += 0.8
        result = trimmed_align(v, g, 0.3)
        assert result.transform.theta == pytest.approx(-2.61, abs=1e-9)
        assert result.inlier_indices.tolist() == list(range(5, 34))

    def test_matches_grid_search_oracle(self) -> None:
        rng = np.random.default_rng(1)
        threshold = 0.3
        for _ in range(200):
            v, g, outliers = registration_instance(rng, threshold)
            result = trimmed_align(v, g, threshold)
            oracle = trimmed_grid_search_cost(v, g, threshold)
            assert abs(result.cost - oracle) <= 1e-3
            assert not set(outliers.tolist()) & set(result.inlier_indices.tolist())

    def test_rejects_bad_tau(self) -> None:
        g = VertexConfiguration(circle(5))
        with pytest.raises(ValueError):
            trimmed_align(g, g, 0.0)

    def test_trimmed_align_benchmark(self, benchmark: BenchmarkFixture) -> None:
        g = coarse_shirt().vertices
        v = rigid(g.positions, 0.5, 0.1, -0.05)
        v[:20, 2] += 0.1
        result = benchmark(trimmed_align, v, g, 0.3)
        assert result.transform.theta == pytest.approx(0.5, abs=1e-6)
