import numpy as np
import pytest

from lifemap.geom.types import PointCloud


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def grid_plane(n: int = 30, spacing: float = 0.1, z: float = 0.0) -> np.ndarray:
    """n x n points on the plane at height z."""
    xs = np.arange(n) * spacing
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    return np.stack([gx.reshape(-1), gy.reshape(-1), np.full(n * n, z)], axis=1)


def box_surface(low, high, spacing: float = 0.1) -> np.ndarray:
    """Regular samples on the six faces of an axis-aligned box."""
    from lifemap.synth.scene import Box, sample_surface

    low, high = np.asarray(low, dtype=float), np.asarray(high, dtype=float)
    return sample_surface(Box("b", (low + high) / 2, high - low), spacing).points


def structured_scene(rng: np.random.Generator, n_ground: int = 6000) -> PointCloud:
    """
    An asymmetric little yard: noisy ground, two walls meeting at a corner,
    a block and a pole. Enough 3D structure for registration tests.
    """
    ground = np.column_stack(
        [rng.uniform(-10, 10, n_ground), rng.uniform(-10, 10, n_ground), rng.normal(0, 0.005, n_ground)]
    )
    wall_x = np.column_stack([rng.uniform(-10, 6, 2000), np.full(2000, 8.0), rng.uniform(0, 3, 2000)])
    wall_y = np.column_stack([np.full(1500, -9.0), rng.uniform(-6, 8, 1500), rng.uniform(0, 4, 1500)])
    block = box_surface((2.0, -3.0, 0.0), (4.0, 0.0, 1.5), 0.15)
    pole = np.column_stack([rng.normal(-4, 0.05, 400), rng.normal(3, 0.05, 400), rng.uniform(0, 5, 400)])
    return PointCloud(np.concatenate([ground, wall_x, wall_y, block, pole]))


@pytest.fixture
def scene_cloud(rng) -> PointCloud:
    return structured_scene(rng)
