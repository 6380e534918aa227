"""
Sparse log-odds occupancy grid.

Voxels live in a flat hash keyed by floor(p / voxel_size), stored as a
sorted array of packed int64 codes with a parallel array of log-odds.
Updates follow the OctoMap sensor model: the endpoint voxel of a ray
receives l_hit, every voxel strictly between the sensor voxel and the
endpoint receives l_miss, and values are clamped after every scan.
"""

import typing

import numpy as np

from lifemap.dynamic.models import DynRemovalParams, logit
from lifemap.geom.filters import anchor_key, pack_keys, voxel_keys
from lifemap.geom.types import Label, PointCloud

# rays traversed per vectorized batch
RAY_CHUNK = 4096


class OccupancyGrid:
    def __init__(
        self,
        voxel_size: float = 0.2,
        p_hit: float = 0.7,
        p_miss: float = 0.4,
        p_min: float = 0.12,
        p_max: float = 0.97,
        p_occ: float = 0.5,
        max_range: float = 80.0,
    ):
        if voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        self.voxel_size = float(voxel_size)
        self.l_hit = logit(p_hit)
        self.l_miss = logit(p_miss)
        self.l_min = logit(p_min)
        self.l_max = logit(p_max)
        self.l_occ = logit(p_occ)
        self.max_range = float(max_range)
        self.anchor: typing.Optional[np.ndarray] = None
        self.codes = np.empty(0, dtype=np.int64)
        self.values = np.empty(0, dtype=np.float64)
        self.scans = 0

    @classmethod
    def from_params(cls, params: DynRemovalParams) -> "OccupancyGrid":
        return cls(
            voxel_size=params.voxel_size,
            p_hit=params.p_hit,
            p_miss=params.p_miss,
            p_min=params.p_min,
            p_max=params.p_max,
            p_occ=params.p_occ,
            max_range=params.max_range,
        )

    def __len__(self):
        return len(self.codes)

    def key_codes(self, points: np.ndarray, strict: bool = True) -> np.ndarray:
        keys = voxel_keys(points, self.voxel_size)
        if self.anchor is None:
            self.anchor = anchor_key(keys)
        return pack_keys(keys, self.anchor, strict=strict)

    def lookup_codes(self, codes: np.ndarray) -> np.ndarray:
        """Log-odds per code; NaN where the voxel was never touched."""
        out = np.full(len(codes), np.nan)
        if not len(self.codes):
            return out
        pos = np.searchsorted(self.codes, codes)
        pos_c = np.minimum(pos, len(self.codes) - 1)
        found = self.codes[pos_c] == codes
        out[found] = self.values[pos_c[found]]
        return out

    def log_odds(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if self.anchor is None:
            return np.full(len(points), np.nan)
        return self.lookup_codes(self.key_codes(points, strict=False))

    def traversed_codes(self, origin: np.ndarray, ends: np.ndarray) -> np.ndarray:
        """
        Unique codes of the voxels the segments origin -> end pass through
        before reaching their end voxel.
        """
        s = self.voxel_size
        delta = ends - origin
        m = len(ends)
        start_keys = np.floor(origin / s).astype(np.int64)
        end_keys = np.floor(ends / s).astype(np.int64)

        ray_parts = [np.arange(m), np.arange(m)]
        t_parts = [np.zeros(m), np.ones(m)]
        for axis in range(3):
            k0 = start_keys[axis]
            k1 = end_keys[:, axis]
            counts = np.abs(k1 - k0)
            total = int(counts.sum())
            if not total:
                continue
            rays = np.repeat(np.arange(m), counts)
            first = np.repeat(np.cumsum(counts) - counts, counts)
            step = np.arange(total) - first
            low = np.minimum(k0, k1)[rays]
            boundary = (low + 1 + step) * s
            t_parts.append((boundary - origin[axis]) / delta[rays, axis])
            ray_parts.append(rays)

        rays = np.concatenate(ray_parts)
        ts = np.clip(np.concatenate(t_parts), 0.0, 1.0)
        order = np.lexsort((ts, rays))
        rays, ts = rays[order], ts[order]

        same = rays[1:] == rays[:-1]
        width = ts[1:] - ts[:-1]
        keep = same & (width > 1e-12)
        mid = 0.5 * (ts[1:] + ts[:-1])[keep]
        owner = rays[:-1][keep]
        samples = origin + mid[:, None] * delta[owner]
        return np.unique(self.key_codes(samples))

    def integrate(self, origin, points) -> "OccupancyGrid":
        """
        Fold one scan (world frame) into the grid. Each voxel is updated at
        most once per scan; a voxel both hit and traversed counts as hit.
        Returns beyond max_range are shortened to max_range and give
        misses only.
        """
        origin = np.asarray(origin, dtype=np.float64).reshape(3)
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if not len(points):
            return self
        if self.anchor is None:
            self.anchor = voxel_keys(origin, self.voxel_size).reshape(3)

        delta = points - origin
        dist = np.linalg.norm(delta, axis=1)
        far = dist > self.max_range
        ends = points.copy()
        if far.any():
            ends[far] = origin + delta[far] * (self.max_range / dist[far])[:, None]
        hits = np.unique(self.key_codes(points[~far]))

        misses = []
        for start in range(0, len(ends), RAY_CHUNK):
            misses.append(self.traversed_codes(origin, ends[start:start + RAY_CHUNK]))
        miss = np.unique(np.concatenate(misses)) if misses else np.empty(0, dtype=np.int64)
        miss = np.setdiff1d(miss, hits, assume_unique=True)
        miss = miss[miss != self.key_codes(origin)[0]]

        self._apply(hits, self.l_hit)
        self._apply(miss, self.l_miss)
        self.scans += 1
        return self

    def _apply(self, codes: np.ndarray, delta: float):
        if not len(codes):
            return
        merged = np.union1d(self.codes, codes)
        values = np.zeros(len(merged))
        if len(self.codes):
            values[np.searchsorted(merged, self.codes)] = self.values
        idx = np.searchsorted(merged, codes)
        values[idx] = np.clip(values[idx] + delta, self.l_min, self.l_max)
        self.codes = merged
        self.values = values

    def classify(self, points) -> np.ndarray:
        """Static at or above l_occ, Dynamic below, Unknown where untouched."""
        odds = self.log_odds(points)
        labels = np.full(len(odds), int(Label.UNKNOWN), dtype=np.uint8)
        seen = ~np.isnan(odds)
        labels[seen & (odds >= self.l_occ)] = int(Label.STATIC)
        labels[seen & (odds < self.l_occ)] = int(Label.DYNAMIC)
        return labels


def integrate_scan(grid: OccupancyGrid, origin, scan: PointCloud) -> OccupancyGrid:
    return grid.integrate(origin, scan.points)


def classify_by_occupancy(grid: OccupancyGrid, map_cloud: PointCloud) -> PointCloud:
    return map_cloud.with_labels(grid.classify(map_cloud.points))

