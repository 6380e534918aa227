"""
Keypoints and SHOT-style local descriptors compressed by per-pair PCA.

The raw descriptor is a 352-bin histogram: 8 azimuth x 2 elevation x 2
radial sectors of the support sphere, each with 11 bins over |cos| of the
angle between a neighbour's normal and the local reference frame's z axis.
"""

import typing
from dataclasses import dataclass

import numpy as np
from loguru import logger

from lifemap.geom.filters import estimate_normals, voxel_downsample
from lifemap.geom.index import SpatialIndex
from lifemap.geom.types import PointCloud

AZIMUTH_BINS = 8
ELEVATION_BINS = 2
RADIAL_BINS = 2
COSINE_BINS = 11
RAW_DIMS = AZIMUTH_BINS * ELEVATION_BINS * RADIAL_BINS * COSINE_BINS
PCA_DIMS = 50

MIN_SUPPORT = 5
# nearest support points kept per keypoint
MAX_SUPPORT = 1024
# keypoints described per vectorized batch
KEYPOINT_CHUNK = 128


@dataclass(frozen=True, slots=True, eq=False)
class Descriptors:
    keypoints: np.ndarray
    features: np.ndarray

    def __len__(self):
        return len(self.keypoints)

    @classmethod
    def empty(cls, dims: int = RAW_DIMS) -> "Descriptors":
        return cls(np.empty((0, 3)), np.empty((0, dims)))


@dataclass(frozen=True, slots=True, eq=False)
class SurfaceCloud:
    """A down-sampled cloud with its normals, shared by every keypoint query."""

    cloud: PointCloud
    normals: np.ndarray
    valid: np.ndarray
    index: SpatialIndex

    @classmethod
    def build(cls, cloud: PointCloud, pc_ds: float, n_n: int) -> "SurfaceCloud":
        ds = voxel_downsample(cloud, pc_ds)
        if len(ds) < 3:
            return cls(ds, np.zeros((len(ds), 3)), np.zeros(len(ds), dtype=bool), SpatialIndex(ds))
        normals, valid = estimate_normals(ds, n_n)
        return cls(ds, normals, valid, SpatialIndex(ds))


def select_keypoints(cloud: PointCloud, k_r: float) -> PointCloud:
    """
    Voxel centroids at cell k_r, each snapped to the nearest original point.
    Duplicates after snapping are dropped; order follows the original cloud.
    """
    if k_r <= 0:
        raise ValueError("k_r must be positive")
    if cloud.is_empty:
        return PointCloud.empty()
    centers = voxel_downsample(cloud, k_r)
    _, idx = SpatialIndex(cloud).nearest(centers.points)
    return PointCloud(cloud.points[np.unique(idx)])


def _local_frames(rel: np.ndarray, weight: np.ndarray, radius: float) -> np.ndarray:
    """
    Batched local reference frames, rows (x, y, z), from distance-weighted
    covariance with sign disambiguation by point majority.
    """
    dist = np.linalg.norm(rel, axis=2)
    w = np.where(weight, np.maximum(radius - dist, 0.0), 0.0)
    total = np.maximum(w.sum(axis=1), 1e-12)
    cov = np.einsum("nk,nki,nkj->nij", w, rel, rel) / total[:, None, None]
    _, vecs = np.linalg.eigh(cov)
    x = vecs[:, :, 2]
    z = vecs[:, :, 0]

    for axis in (x, z):
        proj = np.einsum("nki,ni->nk", rel, axis)
        balance = (weight & (proj >= 0)).sum(axis=1) - (weight & (proj < 0)).sum(axis=1)
        # a tied vote falls back to the sign of the summed projections
        spread = np.where(weight, proj, 0.0).sum(axis=1)
        axis[(balance < 0) | ((balance == 0) & (spread < 0))] *= -1
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def shot_descriptors(surface: SurfaceCloud, keypoints: PointCloud, fd_r: float) -> Descriptors:
    """
    Raw 352-d descriptors for every keypoint with at least MIN_SUPPORT
    valid-normal neighbours within fd_r; others are skipped.
    """
    if keypoints.is_empty or surface.cloud.is_empty:
        return Descriptors.empty()
    points = surface.cloud.points
    kept_points = []
    kept_features = []
    skipped = 0

    for start in range(0, len(keypoints), KEYPOINT_CHUNK):
        centers = keypoints.points[start:start + KEYPOINT_CHUNK]
        dist, idx = surface.index.knn(centers, MAX_SUPPORT, max_distance=fd_r)
        found = np.isfinite(dist)
        safe = np.where(found, idx, 0)
        weight = found & surface.valid[safe]
        enough = weight.sum(axis=1) >= MIN_SUPPORT
        skipped += int((~enough).sum())
        if not enough.any():
            continue
        centers, dist, safe, weight = centers[enough], dist[enough], safe[enough], weight[enough]

        rel = points[safe] - centers[:, None, :]
        frames = _local_frames(rel, weight, fd_r)
        local = np.einsum("nij,nkj->nki", frames, rel)
        cosine = np.abs(np.einsum("nkj,nj->nk", surface.normals[safe], frames[:, 2]))

        azimuth = np.arctan2(local[:, :, 1], local[:, :, 0]) % (2 * np.pi)
        az_bin = np.minimum((azimuth / (2 * np.pi) * AZIMUTH_BINS).astype(np.int64), AZIMUTH_BINS - 1)
        el_bin = (local[:, :, 2] >= 0).astype(np.int64)
        rad_bin = (np.where(found[enough], dist, fd_r) >= 0.5 * fd_r).astype(np.int64)
        cos_bin = np.minimum((cosine * COSINE_BINS).astype(np.int64), COSINE_BINS - 1)
        flat = ((az_bin * ELEVATION_BINS + el_bin) * RADIAL_BINS + rad_bin) * COSINE_BINS + cos_bin

        hist = np.zeros((len(centers), RAW_DIMS))
        rows = np.broadcast_to(np.arange(len(centers))[:, None], flat.shape)
        np.add.at(hist, (rows[weight], flat[weight]), 1.0)
        norms = np.linalg.norm(hist, axis=1)
        ok = norms > 0
        kept_points.append(centers[ok])
        kept_features.append(hist[ok] / norms[ok, None])

    if skipped:
        logger.debug(f"skipped {skipped} keypoints with fewer than {MIN_SUPPORT} support points")
    if not kept_points:
        return Descriptors.empty()
    return Descriptors(np.concatenate(kept_points), np.concatenate(kept_features))


def compute_descriptors(cloud: PointCloud, keypoints: PointCloud, params, surface: typing.Optional[SurfaceCloud] = None) -> Descriptors:
    """Raw descriptors of keypoints over cloud down-sampled at params.pc_ds."""
    surface = surface or SurfaceCloud.build(cloud, params.pc_ds, params.n_n)
    return shot_descriptors(surface, keypoints, params.fd_r)


def fit_pca(*raw: np.ndarray, dims: int = PCA_DIMS) -> tuple[np.ndarray, np.ndarray]:
    """
    PCA basis over the union of raw descriptor sets: (mean, components).
    Component signs are fixed so the largest-magnitude entry is positive.
    """
    stacked = np.concatenate([r for r in raw if len(r)], axis=0) if any(len(r) for r in raw) else np.empty((0, RAW_DIMS))
    if not len(stacked):
        return np.zeros(RAW_DIMS), np.zeros((0, RAW_DIMS))
    mean = stacked.mean(axis=0)
    _, _, vt = np.linalg.svd(stacked - mean, full_matrices=False)
    components = vt[:dims]
    pivot = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), pivot])
    signs[signs == 0] = 1.0
    return mean, components * signs[:, None]


def project(descriptors: Descriptors, mean: np.ndarray, components: np.ndarray, dims: int = PCA_DIMS) -> Descriptors:
    """Project onto the PCA basis; zero-padded when the basis has fewer than dims axes."""
    out = np.zeros((len(descriptors), dims))
    if len(descriptors) and len(components):
        out[:, :len(components)] = (descriptors.features - mean) @ components.T
    return Descriptors(descriptors.keypoints, out)


def pca_pair(a: Descriptors, b: Descriptors, dims: int = PCA_DIMS) -> tuple[Descriptors, Descriptors]:
    """Compress both descriptor sets of a map pair with one basis fitted on their union."""
    mean, components = fit_pca(a.features, b.features, dims=dims)
    return project(a, mean, components, dims), project(b, mean, components, dims)
