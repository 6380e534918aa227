import typing

from lifemap.geom.types import Label, PointCloud


def f1_score(pr: typing.Optional[float], rr: typing.Optional[float]) -> typing.Optional[float]:
    if pr is None or rr is None or pr + rr == 0:
        return None
    return 2.0 * pr * rr / (pr + rr)


def evaluate_pr_rr_f1(predicted: PointCloud, truth: PointCloud) -> tuple[typing.Optional[float], ...]:
    """
    Preservation rate, rejection rate and F1 of a labeled prediction against
    ground truth over the same points in the same order. None marks a
    metric whose denominator is zero.
    """
    if predicted.labels is None or truth.labels is None:
        raise ValueError("both maps must carry labels")
    if len(predicted) != len(truth):
        raise ValueError(f"point counts differ: {len(predicted)} predicted, {len(truth)} truth")
    true_static = truth.labels == int(Label.STATIC)
    true_dynamic = truth.labels == int(Label.DYNAMIC)
    kept = predicted.labels == int(Label.STATIC)

    pr = float((kept & true_static).sum() / true_static.sum()) if true_static.any() else None
    rr = float((~kept & true_dynamic).sum() / true_dynamic.sum()) if true_dynamic.any() else None
    return pr, rr, f1_score(pr, rr)
