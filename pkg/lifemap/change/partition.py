import numpy as np

from lifemap.geom.index import SpatialIndex
from lifemap.geom.types import PointCloud


def neighbor_mask(points: PointCloud, reference: PointCloud, radius: float) -> np.ndarray:
    """True for points with at least one reference point within radius."""
    if points.is_empty:
        return np.zeros(0, dtype=bool)
    if reference.is_empty:
        return np.zeros(len(points), dtype=bool)
    return SpatialIndex(reference).has_neighbor(points.points, radius)


def spatial_partition(
    base: PointCloud, session: PointCloud, r_coexist: float
) -> tuple[PointCloud, PointCloud, PointCloud]:
    """
    (base_diff, coexist, session_diff): base points with a session
    neighbour within r_coexist form coexist (base side), the rest base_diff;
    session points without a base neighbour form session_diff.
    """
    if r_coexist <= 0:
        raise ValueError("r_coexist must be positive")
    base_shared = neighbor_mask(base, session, r_coexist)
    session_shared = neighbor_mask(session, base, r_coexist)
    return base.select(~base_shared), base.select(base_shared), session.select(~session_shared)


def overlap_split(diff: PointCloud, coexist: PointCloud, r_overlap: float) -> tuple[PointCloud, PointCloud]:
    """(overlap, nonoverlap): diff points with and without a coexist neighbour within r_overlap."""
    if r_overlap <= 0:
        raise ValueError("r_overlap must be positive")
    near = neighbor_mask(diff, coexist, r_overlap)
    return diff.select(near), diff.select(~near)
