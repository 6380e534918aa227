import typing
from dataclasses import dataclass

import numpy as np
from loguru import logger
from scipy.spatial import cKDTree

from lifemap.alignment.features import Descriptors
from lifemap.geom.index import SpatialIndex
from lifemap.geom.types import PointCloud, Pose

RANSAC_ITERATIONS = 2000
RANSAC_BATCH = 200
EARLY_EXIT_RATIO = 0.8
# sample edges must agree in length to this ratio
EDGE_LENGTH_RATIO = 0.9
MIN_INLIERS = 10
MIN_INLIER_FRACTION = 0.05


def kabsch(source: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation and translation with R @ source + t ~= target."""
    cs = source.mean(axis=0)
    ct = target.mean(axis=0)
    h = (source - cs).T @ (target - ct)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return rot, ct - rot @ cs


def _kabsch_batch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cs = src.mean(axis=1, keepdims=True)
    cd = dst.mean(axis=1, keepdims=True)
    h = np.einsum("bki,bkj->bij", src - cs, dst - cd)
    u, _, vt = np.linalg.svd(h)
    v = np.transpose(vt, (0, 2, 1))
    ut = np.transpose(u, (0, 2, 1))
    d = np.sign(np.linalg.det(v @ ut))
    d[d == 0] = 1.0
    fix = np.tile(np.eye(3), (len(src), 1, 1))
    fix[:, 2, 2] = d
    rot = v @ fix @ ut
    trans = cd[:, 0, :] - np.einsum("bij,bj->bi", rot, cs[:, 0, :])
    return rot, trans


@dataclass(slots=True)
class CoarseResult:
    pose: typing.Optional[Pose]
    correspondences: int
    inliers: int
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.pose is not None


def mutual_matches(source: Descriptors, target: Descriptors) -> np.ndarray:
    """(C, 2) index pairs that are each other's nearest neighbour in feature space."""
    if not len(source) or not len(target):
        return np.empty((0, 2), dtype=np.int64)
    _, fwd = cKDTree(target.features).query(source.features, k=1)
    _, back = cKDTree(source.features).query(target.features, k=1)
    src = np.arange(len(source))
    mutual = back[fwd] == src
    return np.stack([src[mutual], fwd[mutual]], axis=1)


def coarse_align(
    source: Descriptors,
    target: Descriptors,
    k_r: float,
    rng: typing.Optional[np.random.Generator] = None,
    iterations: int = RANSAC_ITERATIONS,
) -> CoarseResult:
    """
    RANSAC over mutual descriptor matches. A correspondence is an inlier
    when the transformed source keypoint lands within 2*k_r of its match.
    The best hypothesis is refit on its inliers.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    pairs = mutual_matches(source, target)
    count = len(pairs)
    if count < 3:
        return CoarseResult(None, count, 0, f"{count} correspondences")

    src = source.keypoints[pairs[:, 0]]
    dst = target.keypoints[pairs[:, 1]]
    threshold = 2.0 * k_r
    best_inliers = -1
    best = None
    done = 0
    while done < iterations:
        batch = min(RANSAC_BATCH, iterations - done)
        done += batch
        sample = np.stack([rng.choice(count, size=3, replace=False) for _ in range(batch)])
        s, d = src[sample], dst[sample]
        edges_s = np.linalg.norm(s - np.roll(s, 1, axis=1), axis=2)
        edges_d = np.linalg.norm(d - np.roll(d, 1, axis=1), axis=2)
        longest = np.maximum(edges_s, edges_d)
        ratio = np.minimum(edges_s, edges_d) / np.where(longest > 0, longest, 1.0)
        good = (ratio >= EDGE_LENGTH_RATIO).all(axis=1) & (edges_s.min(axis=1) > 1e-9)
        if not good.any():
            continue
        rot, trans = _kabsch_batch(s[good], d[good])
        moved = np.einsum("bij,nj->bni", rot, src) + trans[:, None, :]
        inliers = (np.linalg.norm(moved - dst[None], axis=2) <= threshold).sum(axis=1)
        pick = int(np.argmax(inliers))
        if inliers[pick] > best_inliers:
            best_inliers = int(inliers[pick])
            best = (rot[pick], trans[pick])
        if best_inliers >= EARLY_EXIT_RATIO * count:
            break

    needed = max(MIN_INLIERS, MIN_INLIER_FRACTION * count)
    if best is None or best_inliers < needed:
        return CoarseResult(None, count, max(best_inliers, 0), f"{max(best_inliers, 0)} inliers of {count} matches")

    rot, trans = best
    mask = np.linalg.norm(src @ rot.T + trans - dst, axis=1) <= threshold
    refit_rot, refit_trans = kabsch(src[mask], dst[mask])
    refit_mask = np.linalg.norm(src @ refit_rot.T + refit_trans - dst, axis=1) <= threshold
    if refit_mask.sum() >= mask.sum():
        rot, trans, mask = refit_rot, refit_trans, refit_mask
    logger.trace(f"coarse alignment: {int(mask.sum())} inliers of {count} matches")
    return CoarseResult(Pose.from_matrix(rot, trans), count, int(mask.sum()))


def icp(
    source: PointCloud,
    target: PointCloud,
    init: typing.Optional[Pose] = None,
    max_distance: float = 1.0,
    max_iters: int = 50,
    tol: float = 1e-6,
) -> tuple[Pose, float]:
    """
    Point-to-point ICP baseline. Returns the pose mapping source into target
    and the final RMS distance of the matched pairs (inf when nothing matches).
    """
    pose = init or Pose.identity()
    index = SpatialIndex(target)
    rms = float("inf")
    for _ in range(max_iters):
        moved = pose.apply(source.points)
        dist, idx = index.nearest(moved)
        close = dist <= max_distance
        if close.sum() < 3:
            break
        rms = float(np.sqrt(np.mean(dist[close] ** 2)))
        rot, trans = kabsch(moved[close], target.points[idx[close]])
        step = Pose.from_matrix(rot, trans)
        pose = step @ pose
        if np.linalg.norm(trans) < tol and step.angle() < tol:
            break
    return pose, rms
