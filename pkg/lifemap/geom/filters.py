import typing

import numpy as np

from lifemap.geom.index import SpatialIndex
from lifemap.geom.types import PointCloud, Pose

# voxel keys are packed into one int64, 21 bits per axis, relative to an anchor key
_KEY_BITS = 21
_KEY_OFFSET = 1 << (_KEY_BITS - 1)
_KEY_MASK = (1 << _KEY_BITS) - 1

# code of a key that falls outside the packable window
OUTSIDE = -1


def voxel_keys(points: np.ndarray, cell: float) -> np.ndarray:
    """Integer voxel coordinates floor(p / cell), shape (N, 3)."""
    return np.floor(np.asarray(points, dtype=np.float64) / cell).astype(np.int64)


def anchor_key(keys: np.ndarray) -> np.ndarray:
    """Midpoint of the keys' bounding box; packing is exact within 2^20 voxels of it."""
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
    if not len(keys):
        return np.zeros(3, dtype=np.int64)
    return (keys.min(axis=0) + keys.max(axis=0)) // 2


def pack_keys(keys: np.ndarray, anchor: typing.Optional[np.ndarray] = None, strict: bool = True) -> np.ndarray:
    """
    Pack (N, 3) integer voxel keys into sortable int64 codes.

    Keys are taken relative to anchor (the origin when None). Keys too far
    from the anchor raise ValueError, or get the OUTSIDE code when strict is
    False. Valid codes are never negative.
    """
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
    if anchor is not None:
        keys = keys - np.asarray(anchor, dtype=np.int64).reshape(3)
    shifted = keys + _KEY_OFFSET
    inside = ((shifted >= 0) & (shifted <= _KEY_MASK)).all(axis=1)
    if strict and not inside.all():
        raise ValueError("voxel key outside the packable range")
    shifted = np.where(inside[:, None], shifted, 0)
    codes = (shifted[:, 0] << (2 * _KEY_BITS)) | (shifted[:, 1] << _KEY_BITS) | shifted[:, 2]
    codes[~inside] = OUTSIDE
    return codes


def group_voxels(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Group points by voxel key. Returns (inverse, counts): the voxel index of
    every key, voxels in sorted key order, and the size of each voxel.
    """
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
    span = np.ptp(keys, axis=0) if len(keys) else np.zeros(3, dtype=np.int64)
    if span.max() < _KEY_MASK:
        codes = pack_keys(keys, anchor_key(keys))
        _, inverse, counts = np.unique(codes, return_inverse=True, return_counts=True)
    else:
        _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    return inverse.reshape(-1), counts


def voxel_downsample(cloud: PointCloud, cell: float) -> PointCloud:
    """
    One point per occupied voxel, placed at the centroid of that voxel's
    points. Labels are dropped.
    """
    if cell <= 0:
        raise ValueError("voxel cell size must be positive")
    if cloud.is_empty:
        return PointCloud.empty()
    inverse, counts = group_voxels(voxel_keys(cloud.points, cell))
    sums = np.zeros((len(counts), 3))
    for axis in range(3):
        sums[:, axis] = np.bincount(inverse, weights=cloud.points[:, axis], minlength=len(counts))
    return PointCloud(sums / counts[:, None])


def estimate_normals(
    cloud: PointCloud, n_neighbors: int, chunk: int = 4096
) -> tuple[np.ndarray, np.ndarray]:
    """
    Least-eigenvalue eigenvector of each point's k-neighbourhood covariance.

    Returns (normals, valid). Normals point toward a viewpoint high above
    the cloud centroid. valid is False where the neighbourhood has rank < 2;
    those normals are zero.
    """
    n = len(cloud)
    if n < 3:
        raise ValueError("normal estimation needs at least three points")
    k = max(3, min(int(n_neighbors), n))
    index = SpatialIndex(cloud)
    points = cloud.points
    normals = np.zeros((n, 3))
    valid = np.zeros(n, dtype=bool)

    center = points.mean(axis=0)
    extent = float(np.ptp(points, axis=0).max()) if n else 0.0
    viewpoint = center + np.array([0.0, 0.0, 10.0 * extent + 1.0])

    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        _, idx = index.knn(points[start:stop], k)
        neigh = points[idx]
        centered = neigh - neigh.mean(axis=1, keepdims=True)
        cov = np.einsum("nki,nkj->nij", centered, centered) / k
        evals, evecs = np.linalg.eigh(cov)
        scale = np.maximum(evals[:, 2], 1e-300)
        ok = evals[:, 1] > 1e-10 * scale
        ok &= evals[:, 2] > 0
        nrm = evecs[:, :, 0]
        to_view = viewpoint - points[start:stop]
        flip = np.einsum("ij,ij->i", nrm, to_view) < 0
        nrm[flip] *= -1
        nrm[~ok] = 0.0
        normals[start:stop] = nrm
        valid[start:stop] = ok
    return normals, valid


def sor_mask(cloud: PointCloud, k: int, std_mul: float) -> np.ndarray:
    """
    Keep-mask of statistical outlier removal: a point is dropped when the
    mean distance to its k nearest neighbours exceeds the global mean of
    that statistic plus std_mul standard deviations.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    n = len(cloud)
    if n <= k:
        return np.ones(n, dtype=bool)
    dist, _ = SpatialIndex(cloud).knn(cloud.points, k + 1)
    # first column is the point itself
    mean_dist = dist[:, 1:].mean(axis=1)
    threshold = mean_dist.mean() + std_mul * mean_dist.std()
    return mean_dist <= threshold + 1e-9 * max(threshold, 1.0)


def statistical_outlier_removal(cloud: PointCloud, k: int, std_mul: float) -> PointCloud:
    keep = sor_mask(cloud, k, std_mul)
    if keep.all():
        return cloud
    return cloud.select(keep)


def transform(cloud: PointCloud, pose: Pose) -> PointCloud:
    """Map every point by R p + t; labels are preserved."""
    if cloud.is_empty:
        return cloud
    return PointCloud(pose.apply(cloud.points), cloud.labels)
