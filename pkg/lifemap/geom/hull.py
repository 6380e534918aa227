import numpy as np
from scipy.spatial import ConvexHull, QhullError

from lifemap.errors import DegenerateInput
from lifemap.geom.types import HullPolygon, PointCloud


def hull_of(cloud: PointCloud) -> HullPolygon:
    """
    Convex footprint of a cloud: the 2D hull of its projections onto the
    gravity-aligned ground plane (xy).
    """
    if len(cloud) < 3:
        raise DegenerateInput("hull needs at least three points")
    xy = cloud.points[:, :2]
    try:
        hull = ConvexHull(xy)
    except QhullError as err:
        raise DegenerateInput(f"ground projections are collinear: {err}") from err
    # scipy returns 2D hull vertices counter-clockwise
    return HullPolygon(xy[hull.vertices])


def hull_crop(cloud: PointCloud, hull: HullPolygon, tol: float = 1e-7) -> PointCloud:
    """Points whose ground projection lies inside or on the hull."""
    if cloud.is_empty:
        return cloud
    return cloud.select(hull.contains(cloud.points[:, :2], tol))


def format_hull(hull: HullPolygon) -> str:
    """One `x y` vertex per line, counter-clockwise."""
    return "".join(f"{x:.17g} {y:.17g}\n" for x, y in hull.vertices)


def parse_hull(text: str) -> HullPolygon:
    rows = [line.split() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    try:
        vertices = np.array([[float(r[0]), float(r[1])] for r in rows])
    except (ValueError, IndexError) as err:
        raise DegenerateInput(f"malformed hull text: {err}") from err
    return HullPolygon(vertices)
