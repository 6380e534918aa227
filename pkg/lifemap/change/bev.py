"""
Bird's-eye-view max-height images.

Points are expressed in the frame of a reference plane (two in-plane axes
plus the signed height along its normal) and binned on a regular grid;
each pixel keeps the largest height that falls in it. Images that are
compared must share their grid, so grids are usually built jointly from
every cloud involved.
"""

import typing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lifemap.errors import GridMismatch
from lifemap.geom.types import PlaneModel, PointCloud


@dataclass(frozen=True, slots=True, eq=False)
class BevGrid:
    plane: PlaneModel
    origin: np.ndarray
    resolution: float
    width: int
    height: int

    @classmethod
    def around(cls, plane: PlaneModel, resolution: float, *clouds: PointCloud) -> "BevGrid":
        """Smallest grid aligned to multiples of resolution covering every cloud."""
        if resolution <= 0:
            raise ValueError("BEV resolution must be positive")
        coords = [plane_coordinates(c, plane)[0] for c in clouds if not c.is_empty]
        if not coords:
            return cls(plane, np.zeros(2), resolution, 0, 0)
        uv = np.concatenate(coords)
        origin = np.floor(uv.min(axis=0) / resolution) * resolution
        extent = np.floor((uv.max(axis=0) - origin) / resolution).astype(np.int64) + 1
        return cls(plane, origin, resolution, int(extent[0]), int(extent[1]))

    def pixels(self, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(flat pixel index, inside mask) for in-plane coordinates."""
        ij = np.floor((uv - self.origin) / self.resolution).astype(np.int64)
        inside = (ij[:, 0] >= 0) & (ij[:, 0] < self.width) & (ij[:, 1] >= 0) & (ij[:, 1] < self.height)
        flat = np.where(inside, ij[:, 0] * self.height + ij[:, 1], -1)
        return flat, inside

    def matches(self, other: "BevGrid") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.resolution == other.resolution
            and np.array_equal(self.origin, other.origin)
            and np.array_equal(self.plane.normal, other.plane.normal)
            and self.plane.offset == other.plane.offset
        )


@dataclass(frozen=True, slots=True, eq=False)
class BevImage:
    """cells[i, j] covers [origin + (i, j) * res, origin + (i + 1, j + 1) * res); NaN marks empty."""

    grid: BevGrid
    cells: np.ndarray

    @property
    def occupied(self) -> np.ndarray:
        return ~np.isnan(self.cells)

    @property
    def origin(self) -> np.ndarray:
        return self.grid.origin

    @property
    def resolution(self) -> float:
        return self.grid.resolution


def plane_coordinates(cloud: PointCloud, plane: PlaneModel) -> tuple[np.ndarray, np.ndarray]:
    """(in-plane uv (N, 2), signed height above the plane (N,))."""
    basis = plane.basis()
    uv = cloud.points @ basis[:2].T
    return uv, plane.signed_distance(cloud.points)


def bev_project(
    cloud: PointCloud,
    plane: PlaneModel,
    bev_res: float,
    grid: typing.Optional[BevGrid] = None,
) -> BevImage:
    grid = grid or BevGrid.around(plane, bev_res, cloud)
    flat_cells = np.full(grid.width * grid.height, -np.inf)
    if not cloud.is_empty and len(flat_cells):
        uv, height = plane_coordinates(cloud, plane)
        flat, inside = grid.pixels(uv)
        np.maximum.at(flat_cells, flat[inside], height[inside])
    flat_cells[np.isneginf(flat_cells)] = np.nan
    return BevImage(grid, flat_cells.reshape(grid.width, grid.height))


def changed_pixels(image_a: BevImage, image_b: BevImage, h_thr: float) -> np.ndarray:
    """Occupied in a and empty in b, or occupied in both with heights differing by more than h_thr."""
    if not image_a.grid.matches(image_b.grid):
        raise GridMismatch("BEV images do not share origin, resolution, extent and plane")
    occ_a, occ_b = image_a.occupied, image_b.occupied
    both = occ_a & occ_b
    differs = np.zeros_like(both)
    differs[both] = np.abs(image_a.cells[both] - image_b.cells[both]) > h_thr
    return (occ_a & ~occ_b) | differs


def bev_change_mask(image_a: BevImage, image_b: BevImage, h_thr: float, source_points: PointCloud) -> np.ndarray:
    changed = changed_pixels(image_a, image_b, h_thr).reshape(-1)
    if source_points.is_empty:
        return np.zeros(0, dtype=bool)
    uv, _ = plane_coordinates(source_points, image_a.grid.plane)
    flat, inside = image_a.grid.pixels(uv)
    mask = np.zeros(len(source_points), dtype=bool)
    mask[inside] = changed[flat[inside]]
    return mask


def bev_change(image_a: BevImage, image_b: BevImage, h_thr: float, source_points: PointCloud) -> PointCloud:
    """source_points that fall in changed pixels."""
    return source_points.select(bev_change_mask(image_a, image_b, h_thr, source_points))


def write_pgm(image: BevImage, path, max_height: typing.Optional[float] = None):
    """
    8-bit binary PGM for inspection: empty pixels black, occupied pixels
    scaled from 1 (lowest height) to 255 (max_height or the highest cell).
    Rows run along the second in-plane axis, top row highest.
    """
    cells = image.cells.T[::-1]
    occupied = ~np.isnan(cells)
    pixels = np.zeros(cells.shape, dtype=np.uint8)
    if occupied.any():
        low = float(np.nanmin(cells))
        high = float(max_height) if max_height is not None else float(np.nanmax(cells))
        span = max(high - low, 1e-9)
        scaled = np.clip((cells[occupied] - low) / span, 0.0, 1.0)
        pixels[occupied] = (1 + np.round(scaled * 254)).astype(np.uint8)
    rows, cols = pixels.shape
    Path(path).write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + pixels.tobytes())
