import math
import typing

import numpy as np

from lifemap.geom.index import SpatialIndex
from lifemap.geom.types import PointCloud


def chamfer_distance(
    a: PointCloud,
    b: PointCloud,
    tau: float = 0.5,
    index_a: typing.Optional[SpatialIndex] = None,
    index_b: typing.Optional[SpatialIndex] = None,
) -> float:
    """
    Outlier-filtered Chamfer distance.

    Each cloud is filtered to the points whose nearest neighbour in the other
    (raw) cloud is closer than tau. The result is the mean squared
    nearest-neighbour distance of the filtered a against raw b, plus the
    same for filtered b against raw a. Returns inf when nothing survives
    the filter or either input is empty. Prebuilt indices over a or b may be
    passed to skip rebuilding them.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if a.is_empty or b.is_empty:
        return math.inf
    da, _ = (index_b if index_b is not None else SpatialIndex(b)).nearest(a.points)
    db, _ = (index_a if index_a is not None else SpatialIndex(a)).nearest(b.points)
    keep_a = da < tau
    keep_b = db < tau
    if not keep_a.any() or not keep_b.any():
        return math.inf
    return float(np.mean(da[keep_a] ** 2) + np.mean(db[keep_b] ** 2))
