import typing

from lifemap.change.partition import neighbor_mask
from lifemap.geom.types import PointCloud


def eval_change_pr(
    detected: PointCloud, truth: PointCloud, match_radius: float
) -> tuple[typing.Optional[float], typing.Optional[float]]:
    """
    (precision, recall) of detected change points. A detected point is true
    when a truth point lies within match_radius; recall counts the truth
    points that some detected point covers. Undefined ratios are None.
    """
    if match_radius <= 0:
        raise ValueError("match_radius must be positive")
    precision = None
    if len(detected):
        precision = float(neighbor_mask(detected, truth, match_radius).mean())
    recall = None
    if len(truth):
        recall = float(neighbor_mask(truth, detected, match_radius).mean())
    return precision, recall
