import numpy as np
from scipy.spatial import cKDTree

from lifemap.geom.types import PointCloud

# query fan-out for scipy's tree; the CLI sets it from --threads
QUERY_WORKERS = 1


def set_query_workers(n: int):
    global QUERY_WORKERS
    QUERY_WORKERS = max(1, int(n))


class SpatialIndex:
    """
    k-d tree over a snapshot of points. Read-only after construction.
    """

    def __init__(self, cloud):
        points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
        self.points = points
        self.size = len(points)
        self._tree = cKDTree(points) if self.size else None

    def __len__(self):
        return self.size

    def radius(self, query, r: float) -> np.ndarray:
        """Sorted indices of points within distance r (inclusive) of one query point."""
        if self._tree is None:
            return np.empty(0, dtype=np.int64)
        found = self._tree.query_ball_point(np.asarray(query, dtype=np.float64), r)
        return np.array(sorted(found), dtype=np.int64)

    def count_within(self, queries, r: float) -> np.ndarray:
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if self._tree is None or not len(queries):
            return np.zeros(len(queries), dtype=np.int64)
        return np.asarray(
            self._tree.query_ball_point(queries, r, workers=QUERY_WORKERS, return_length=True),
            dtype=np.int64,
        )

    def nearest(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Distance to and index of the nearest point for every query."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if self._tree is None:
            return np.full(len(queries), np.inf), np.full(len(queries), -1, dtype=np.int64)
        if not len(queries):
            return np.empty(0), np.empty(0, dtype=np.int64)
        dist, idx = self._tree.query(queries, k=1, workers=QUERY_WORKERS)
        return np.asarray(dist, dtype=np.float64), np.asarray(idx, dtype=np.int64)

    def has_neighbor(self, queries, r: float) -> np.ndarray:
        """True for queries with at least one indexed point within r (inclusive)."""
        dist, _ = self.nearest(queries)
        return dist <= r

    def knn(self, queries, k: int, max_distance: float = np.inf) -> tuple[np.ndarray, np.ndarray]:
        """
        k nearest neighbours, k clamped to the index size. Always returns
        (M, k) arrays; missing neighbours beyond max_distance come back with
        distance inf and index == len(self).
        """
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        k = min(int(k), self.size)
        if self._tree is None or k < 1 or not len(queries):
            return np.empty((len(queries), 0)), np.empty((len(queries), 0), dtype=np.int64)
        dist, idx = self._tree.query(
            queries, k=k, distance_upper_bound=max_distance, workers=QUERY_WORKERS
        )
        if k == 1:
            dist = dist[:, None]
            idx = idx[:, None]
        return np.asarray(dist, dtype=np.float64), np.asarray(idx, dtype=np.int64)


def radius_neighbors(index: SpatialIndex, query, r: float) -> np.ndarray:
    """Indices i with |p_i - query| <= r."""
    if r <= 0:
        raise ValueError("radius must be positive")
    return index.radius(query, r)
