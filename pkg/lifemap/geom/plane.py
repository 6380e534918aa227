import math
import typing

import numpy as np
from loguru import logger

from lifemap.errors import DegenerateInput
from lifemap.geom.types import PlaneModel, PointCloud

# hypotheses scored per vectorized batch
_BATCH = 64


def fit_plane_lsq(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares plane through points: (unit normal, offset)."""
    center = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - center, full_matrices=False)
    normal = vt[-1]
    return normal, -float(normal @ center)


def _orient(normal: np.ndarray, offset: float) -> tuple[np.ndarray, float]:
    # upward-facing normals, so ground planes read as heights above them
    if normal[2] < 0 or (normal[2] == 0 and (normal[1] < 0 or (normal[1] == 0 and normal[0] < 0))):
        return -normal, -offset
    return normal, offset


def ransac_plane(
    cloud: PointCloud,
    dist_thr: float,
    max_iters: int = 1000,
    rng: typing.Optional[np.random.Generator] = None,
    confidence: float = 0.999,
) -> PlaneModel:
    """
    Fit the plane with the largest consensus set.

    Three-point hypotheses are drawn from rng and scored in batches; the
    iteration count shrinks adaptively once the best inlier ratio makes a
    better hypothesis unlikely. The winner is refit by least squares over
    its inliers, and inliers are recomputed against the refit.

    Raises:
        DegenerateInput: fewer than three points, or every sample collinear.
    """
    if len(cloud) < 3:
        raise DegenerateInput(f"plane fit needs at least 3 points, got {len(cloud)}")
    if dist_thr <= 0:
        raise ValueError("dist_thr must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    points = cloud.points
    n = len(points)

    best_count = -1
    best_normal = None
    best_offset = 0.0
    needed = max(1, int(max_iters))
    done = 0

    while done < needed:
        batch = min(_BATCH, needed - done)
        idx = np.stack([rng.choice(n, size=3, replace=False) for _ in range(batch)])
        a, b, c = points[idx[:, 0]], points[idx[:, 1]], points[idx[:, 2]]
        normals = np.cross(b - a, c - a)
        norms = np.linalg.norm(normals, axis=1)
        good = norms > 1e-12
        done += batch
        if not good.any():
            continue
        normals = normals[good] / norms[good, None]
        offsets = -np.einsum("ij,ij->i", normals, a[good])
        counts = (np.abs(points @ normals.T + offsets) <= dist_thr).sum(axis=0)
        pick = int(np.argmax(counts))
        if counts[pick] > best_count:
            best_count = int(counts[pick])
            best_normal, best_offset = normals[pick], float(offsets[pick])
            ratio = best_count / n
            if ratio >= 1.0:
                needed = done
            elif ratio**3 > 1e-9:
                adaptive = math.log(1.0 - confidence) / math.log(1.0 - ratio**3)
                needed = min(needed, max(done, int(math.ceil(adaptive))))

    if best_normal is None:
        raise DegenerateInput("all plane hypotheses were degenerate (collinear points)")

    inliers = np.flatnonzero(np.abs(points @ best_normal + best_offset) <= dist_thr)
    normal, offset = best_normal, best_offset
    if len(inliers) >= 3:
        refit_normal, refit_offset = fit_plane_lsq(points[inliers])
        refit_inliers = np.flatnonzero(np.abs(points @ refit_normal + refit_offset) <= dist_thr)
        if len(refit_inliers) >= len(inliers):
            normal, offset, inliers = refit_normal, refit_offset, refit_inliers
        else:
            logger.trace("least-squares refit lost inliers; keeping the sampled plane")

    normal, offset = _orient(normal, offset)
    return PlaneModel(normal, offset, inliers)


def extract_planes(
    cloud: PointCloud,
    dist_thr: float,
    ratio_thr: float,
    max_iters: int = 1000,
    rng: typing.Optional[np.random.Generator] = None,
    max_planes: int = 16,
) -> list[PlaneModel]:
    """
    Iterative plane extraction: fit, remove the inliers, repeat.

    The first plane is always accepted. Each later plane is accepted while
    its inlier count divided by the size of the whole input is at least
    ratio_thr; the first rejected plane stops the extraction. Returned
    inlier indices refer to the input cloud.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    total = len(cloud)
    remaining = np.arange(total)
    planes = []
    while len(remaining) >= 3 and len(planes) < max_planes:
        try:
            plane = ransac_plane(cloud.select(remaining), dist_thr, max_iters, rng)
        except DegenerateInput:
            break
        if planes and len(plane.inlier_indices) / total < ratio_thr:
            break
        global_inliers = remaining[plane.inlier_indices]
        planes.append(PlaneModel(plane.normal, plane.offset, global_inliers))
        keep = np.ones(len(remaining), dtype=bool)
        keep[plane.inlier_indices] = False
        remaining = remaining[keep]
    return planes
