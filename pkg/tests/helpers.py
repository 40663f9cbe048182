import math
from functools import lru_cache

import numpy as np

from cloth_canal.garments import (
    GarmentMesh,
    PantsParams,
    PatchParams,
    ShirtParams,
    make_pants,
    make_patch,
    make_shirt,
)
from cloth_canal.geometry import FloatArray, IndexArray

# Coarse meshes keep simulator-driven tests fast
COARSE_PITCH = 0.05


@lru_cache(maxsize=None)
def coarse_shirt() -> GarmentMesh:
    return make_shirt(ShirtParams(pitch=COARSE_PITCH))


@lru_cache(maxsize=None)
def coarse_pants() -> GarmentMesh:
    return make_pants(PantsParams(pitch=COARSE_PITCH))


@lru_cache(maxsize=None)
def coarse_patch(width: float = 0.4, height: float = 0.4) -> GarmentMesh:
    return make_patch(PatchParams(width=width, height=height, pitch=COARSE_PITCH))


def rotation(theta: float) -> FloatArray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rigid(points: FloatArray, theta: float, tx: float, ty: float) -> FloatArray:
    """Rotates planar points about the origin, then translates them."""
    moved = np.array(points, dtype=np.float64)
    moved[:, :2] = moved[:, :2] @ rotation(theta).T + np.array([tx, ty])
    return moved


def circle(n: int, radius: float = 1.0) -> FloatArray:
    angles = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
    return np.column_stack([radius * np.cos(angles), radius * np.sin(angles)])


def grid_search_cost(
    src: FloatArray, dst: FloatArray, theta_step: float = 1e-4
) -> tuple[float, float]:
    """Best least-squares angle found by scanning theta, with the closed-form
    translation for each angle. Returns ``(theta, cost)``."""
    thetas = np.arange(-math.pi, math.pi, theta_step)
    c, s = np.cos(thetas), np.sin(thetas)
    src_c = src[:, :2] - src[:, :2].mean(axis=0)
    dst_c = dst[:, :2] - dst[:, :2].mean(axis=0)
    # rotated centered source for every theta: (T, N, 2)
    rx = c[:, None] * src_c[None, :, 0] - s[:, None] * src_c[None, :, 1]
    ry = s[:, None] * src_c[None, :, 0] + c[:, None] * src_c[None, :, 1]
    costs = np.sum((rx - dst_c[:, 0]) ** 2 + (ry - dst_c[:, 1]) ** 2, axis=1)
    best = int(np.argmin(costs))
    return float(thetas[best]), float(costs[best])


def trimmed_grid_search_cost(
    v: FloatArray,
    g: FloatArray,
    threshold: float,
    theta_step: float = 1e-3,
    rounds: int = 8,
) -> float:
    """Lowest truncated cost of a rigid ``g -> v`` map over a dense theta grid.

    For each angle the translation starts from the all-vertex mean offset and is
    re-averaged over the vertices within ``threshold`` a few times.
    """
    thetas = np.arange(-math.pi, math.pi, theta_step)
    c, s = np.cos(thetas)[:, None], np.sin(thetas)[:, None]
    # offsets v - R(theta) g for every theta: (T, N)
    dx = v[None, :, 0] - (c * g[None, :, 0] - s * g[None, :, 1])
    dy = v[None, :, 1] - (s * g[None, :, 0] + c * g[None, :, 1])
    tx = dx.mean(axis=1, keepdims=True)
    ty = dy.mean(axis=1, keepdims=True)
    for _ in range(rounds):
        inside = np.hypot(dx - tx, dy - ty) <= threshold
        count = inside.sum(axis=1, keepdims=True)
        denominator = np.maximum(count, 1)
        sum_x = (dx * inside).sum(axis=1, keepdims=True)
        sum_y = (dy * inside).sum(axis=1, keepdims=True)
        tx = np.where(count > 0, sum_x / denominator, tx)
        ty = np.where(count > 0, sum_y / denominator, ty)
    residuals = np.hypot(dx - tx, dy - ty)
    return float(np.min(np.mean(np.minimum(residuals, threshold) ** 2, axis=1)))


def registration_instance(
    rng: np.random.Generator, threshold: float
) -> tuple[FloatArray, FloatArray, IndexArray]:
    """A random planar registration problem with known correspondences.

    Up to 15% of the vertices are outliers, displaced by 2 to 3.3 thresholds.
    Returns ``(v, g, outliers)``.
    """
    n = int(rng.integers(10, 61))
    g = rng.uniform(-0.5, 0.5, size=(n, 2))
    theta = float(rng.uniform(-math.pi, math.pi))
    tx, ty = rng.uniform(-0.5, 0.5, size=2)
    v = rigid(g, theta, float(tx), float(ty))
    v += rng.normal(scale=0.002, size=v.shape)
    n_outliers = int(rng.integers(0, int(0.15 * n) + 1))
    outliers = rng.choice(n, size=n_outliers, replace=False)
    angles = rng.uniform(0.0, 2 * math.pi, size=len(outliers))
    lengths = rng.uniform(2.0, 3.3, size=len(outliers)) * threshold
    v[outliers, 0] += lengths * np.cos(angles)
    v[outliers, 1] += lengths * np.sin(angles)
    return v, g, outliers
