import typing
from dataclasses import dataclass

import numpy as np
from loguru import logger

from lifemap.dynamic.models import DynRemovalParams
from lifemap.dynamic.occupancy import OccupancyGrid
from lifemap.geom.filters import sor_mask, transform
from lifemap.geom.index import SpatialIndex
from lifemap.geom.plane import extract_planes
from lifemap.geom.types import Label, PointCloud
from lifemap.mapio.session import SessionMap, assemble_map, frame_offsets
from lifemap.utils import LogTime, make_rng

STATIC = int(Label.STATIC)
DYNAMIC = int(Label.DYNAMIC)
UNKNOWN = int(Label.UNKNOWN)


@dataclass(frozen=True, slots=True, eq=False)
class RemovalResult:
    """
    Final labels over the assembled session map. Points dropped by the
    outlier filter are in neither output map and carry the Dynamic label,
    since they are not preserved.
    """

    labeled: PointCloud
    removed: np.ndarray

    @property
    def static_map(self) -> PointCloud:
        return self.labeled.select((self.labeled.labels == STATIC) & ~self.removed).without_labels()

    @property
    def dynamic_map(self) -> PointCloud:
        return self.labeled.select((self.labeled.labels == DYNAMIC) & ~self.removed).without_labels()

    @property
    def counts(self) -> dict:
        return {
            "points": len(self.labeled),
            "static": int(((self.labeled.labels == STATIC) & ~self.removed).sum()),
            "dynamic": int(((self.labeled.labels == DYNAMIC) & ~self.removed).sum()),
            "outliers": int(self.removed.sum()),
        }


def _require_labels(labeled: PointCloud):
    if labeled.labels is None:
        raise ValueError("a labeled map is required")


def build_grid(session: SessionMap, params: DynRemovalParams) -> OccupancyGrid:
    """Serial fold of every frame into a fresh grid."""
    grid = OccupancyGrid.from_params(params)
    for frame in session.frames:
        if frame.scan.is_empty:
            continue
        world = transform(frame.scan, frame.pose)
        grid.integrate(frame.pose.translation, world.points)
    return grid


def height_filter(labeled: PointCloud, cutoff: float) -> PointCloud:
    """Everything above cutoff (world z) becomes Static."""
    _require_labels(labeled)
    labels = labeled.labels.copy()
    labels[labeled.points[:, 2] > cutoff] = STATIC
    return labeled.with_labels(labels)


def restore_planes(
    session: SessionMap,
    labeled: PointCloud,
    params: DynRemovalParams,
    rng: typing.Optional[np.random.Generator] = None,
) -> PointCloud:
    """
    Per window of submap_window consecutive frames, extract planes from the
    window's points in the world frame. The largest plane becomes Static
    unconditionally; later planes become Static while they hold at least
    plane_ratio_thr of the window's points.
    """
    _require_labels(labeled)
    rng = rng if rng is not None else make_rng(params.seed, 1)
    labels = labeled.labels.copy()
    offsets = frame_offsets(session)
    if offsets[-1] != len(labeled):
        raise ValueError("labeled map does not match the session's assembled map")

    window = params.submap_window
    for first in range(0, len(session), window):
        last = min(len(session), first + window)
        lo, hi = offsets[first], offsets[last]
        if hi - lo < 3:
            logger.debug(f"submap frames {first}-{last - 1}: fewer than 3 points, skipped")
            continue
        submap = labeled.select(np.arange(lo, hi))
        planes = extract_planes(
            submap,
            params.plane_dist_thr,
            params.plane_ratio_thr,
            params.plane_max_iters,
            rng,
        )
        for plane in planes:
            labels[lo + plane.inlier_indices] = STATIC
        logger.trace(f"submap frames {first}-{last - 1}: restored {len(planes)} planes")
    return labeled.with_labels(labels)


def vote_unknown(labeled: PointCloud, params: DynRemovalParams, exclude: typing.Optional[np.ndarray] = None) -> PointCloud:
    """
    Unknown points take the majority label of their knn_k nearest labeled
    neighbours within knn_radius. Ties and empty neighbourhoods give Static.
    Points flagged in exclude neither vote nor get relabeled.
    """
    _require_labels(labeled)
    labels = labeled.labels.copy()
    exclude = np.zeros(len(labels), dtype=bool) if exclude is None else exclude
    unknown = np.flatnonzero((labels == UNKNOWN) & ~exclude)
    if not len(unknown):
        return labeled
    voters = np.flatnonzero((labels != UNKNOWN) & ~exclude)
    if not len(voters):
        labels[unknown] = STATIC
        return labeled.with_labels(labels)

    index = SpatialIndex(labeled.points[voters])
    dist, idx = index.knn(labeled.points[unknown], params.knn_k, max_distance=params.knn_radius)
    valid = np.isfinite(dist)
    voter_labels = np.full(idx.shape, STATIC, dtype=np.uint8)
    voter_labels[valid] = labels[voters[idx[valid]]]
    dynamic_votes = ((voter_labels == DYNAMIC) & valid).sum(axis=1)
    static_votes = ((voter_labels == STATIC) & valid).sum(axis=1)
    labels[unknown] = np.where(dynamic_votes > static_votes, DYNAMIC, STATIC)
    return labeled.with_labels(labels)


def radial_reassign(labeled: PointCloud, params: DynRemovalParams, exclude: typing.Optional[np.ndarray] = None) -> PointCloud:
    """
    A Dynamic point with at least reassign_min_neighbors Static points
    within reassign_radius becomes Static. Neighbours are counted on the
    labels as they were before the pass.
    """
    _require_labels(labeled)
    labels = labeled.labels.copy()
    exclude = np.zeros(len(labels), dtype=bool) if exclude is None else exclude
    dynamic = np.flatnonzero((labels == DYNAMIC) & ~exclude)
    static = np.flatnonzero((labels == STATIC) & ~exclude)
    if not len(dynamic) or not len(static):
        return labeled
    counts = SpatialIndex(labeled.points[static]).count_within(labeled.points[dynamic], params.reassign_radius)
    labels[dynamic[counts >= params.reassign_min_neighbors]] = STATIC
    return labeled.with_labels(labels)


def dynamic_outliers(labeled: PointCloud, params: DynRemovalParams) -> np.ndarray:
    """Mask of Dynamic points the statistical outlier filter rejects."""
    removed = np.zeros(len(labeled), dtype=bool)
    dynamic = np.flatnonzero(labeled.labels == DYNAMIC)
    if not len(dynamic):
        return removed
    keep = sor_mask(labeled.select(dynamic), params.sor_k, params.sor_std_mul)
    removed[dynamic[~keep]] = True
    return removed


def remove_dynamic_labeled(
    session: SessionMap,
    params: typing.Optional[DynRemovalParams] = None,
    timings: typing.Optional[dict] = None,
) -> RemovalResult:
    params = params or DynRemovalParams()
    with LogTime("Assembling session map", "DEBUG", timings, "assemble"):
        assembled = assemble_map(session).without_labels()

    with LogTime("Integrating occupancy", "INFO", timings, "occupancy"):
        grid = build_grid(session, params)
    labeled = assembled.with_labels(grid.classify(assembled.points))
    logger.debug(f"occupancy grid holds {len(grid)} voxels over {grid.scans} scans")

    if params.height_cutoff is not None:
        labeled = height_filter(labeled, params.height_cutoff)

    with LogTime("Restoring planes", "INFO", timings, "planes"):
        labeled = restore_planes(session, labeled, params, make_rng(params.seed, 1))

    with LogTime("Filtering dynamic outliers", "DEBUG", timings, "sor"):
        removed = dynamic_outliers(labeled, params)

    with LogTime("Voting unknown points", "DEBUG", timings, "vote"):
        labeled = vote_unknown(labeled, params, exclude=removed)

    with LogTime("Radial reassignment", "DEBUG", timings, "reassign"):
        labeled = radial_reassign(labeled, params, exclude=removed)

    labels = labeled.labels.copy()
    labels[removed] = DYNAMIC
    result = RemovalResult(labeled.with_labels(labels), removed)
    logger.info(f"dynamic removal on {session.id}: {result.counts}")
    return result


def remove_dynamic(
    session: SessionMap,
    params: typing.Optional[DynRemovalParams] = None,
    timings: typing.Optional[dict] = None,
) -> tuple[PointCloud, PointCloud]:
    """Clean static map and dynamic-point map of a session."""
    result = remove_dynamic_labeled(session, params, timings)
    return result.static_map, result.dynamic_map
