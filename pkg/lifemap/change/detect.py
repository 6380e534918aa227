import typing

import numpy as np
from loguru import logger

from lifemap.change.bev import BevGrid, bev_change_mask, bev_project, plane_coordinates
from lifemap.change.models import ChangeParams, DiffResult
from lifemap.change.partition import neighbor_mask, overlap_split, spatial_partition
from lifemap.errors import DegenerateInput
from lifemap.geom.plane import ransac_plane
from lifemap.geom.types import PlaneModel, PointCloud
from lifemap.utils import LogTime, make_rng

# reference planes tilted further than this from vertical are not ground
MIN_GROUND_NZ = 0.5


def reference_plane(
    clouds: typing.Sequence[PointCloud], params: ChangeParams, rng: typing.Optional[np.random.Generator] = None
) -> PlaneModel:
    """
    Dominant plane of the union of the clouds, fitted on a random subsample.
    Falls back to z = 0 when no usable ground plane is found.
    """
    union = PointCloud.concat(c.without_labels() for c in clouds if not c.is_empty)
    if len(union) < 3:
        return PlaneModel.horizontal()
    rng = rng if rng is not None else make_rng(params.seed)
    if len(union) > params.plane_sample:
        union = union.select(np.sort(rng.choice(len(union), params.plane_sample, replace=False)))
    try:
        plane = ransac_plane(union, params.plane_dist_thr, rng=rng)
    except DegenerateInput as err:
        logger.warning(f"no reference plane ({err}); projecting along z")
        return PlaneModel.horizontal()
    if abs(plane.normal[2]) < MIN_GROUND_NZ:
        logger.warning(f"dominant plane normal {np.round(plane.normal, 3).tolist()} is not ground; projecting along z")
        return PlaneModel.horizontal()
    return plane


def _layered_change(
    source: PointCloud,
    reference: PointCloud,
    grid: BevGrid,
    params: ChangeParams,
) -> np.ndarray:
    """Mask over source of points in changed pixels, per height slab when layer_height is set."""
    if source.is_empty:
        return np.zeros(0, dtype=bool)
    if params.layer_height is None:
        image_src = bev_project(source, grid.plane, params.bev_res, grid)
        image_ref = bev_project(reference, grid.plane, params.bev_res, grid)
        return bev_change_mask(image_src, image_ref, params.h_thr, source)

    _, src_height = plane_coordinates(source, grid.plane)
    src_layer = np.floor(src_height / params.layer_height).astype(np.int64)
    ref_layer = np.empty(0, dtype=np.int64)
    if not reference.is_empty:
        _, ref_height = plane_coordinates(reference, grid.plane)
        ref_layer = np.floor(ref_height / params.layer_height).astype(np.int64)

    mask = np.zeros(len(source), dtype=bool)
    for layer in np.unique(src_layer):
        in_src = src_layer == layer
        layer_src = source.select(in_src)
        layer_ref = reference.select(ref_layer == layer) if len(ref_layer) else reference
        image_src = bev_project(layer_src, grid.plane, params.bev_res, grid)
        image_ref = bev_project(layer_ref, grid.plane, params.bev_res, grid)
        mask[in_src] = bev_change_mask(image_src, image_ref, params.h_thr, layer_src)
    return mask


def detect_changes(
    base: PointCloud,
    session: PointCloud,
    params: typing.Optional[ChangeParams] = None,
    plane: typing.Optional[PlaneModel] = None,
    timings: typing.Optional[dict] = None,
) -> DiffResult:
    """
    Split an aligned base/session pair into shared and differing structure
    and extract the negative differences (in base, gone from session) and
    positive differences (new in session).
    """
    params = params or ChangeParams()
    with LogTime("spatial partition", "DEBUG", timings, "partition"):
        base_diff, coexist, session_diff = spatial_partition(base, session, params.r_coexist)
        base_overlap, base_nonoverlap = overlap_split(base_diff, coexist, params.r_overlap)
        session_overlap, session_nonoverlap = overlap_split(session_diff, coexist, params.r_overlap)

    with LogTime("BEV comparison", "DEBUG", timings, "bev"):
        if base_overlap.is_empty and session_overlap.is_empty:
            base_nd, session_pd = base_overlap, session_overlap
        else:
            plane = plane or reference_plane((base, session), params)
            grid = BevGrid.around(plane, params.bev_res, base, session)
            base_nd = base_overlap.select(_layered_change(base_overlap, session, grid, params))
            pd_reference = base if params.pairing == "symmetric" else base_overlap
            session_pd = session_overlap.select(_layered_change(session_overlap, pd_reference, grid, params))

    result = DiffResult(
        coexist=coexist,
        base_diff=base_diff,
        session_diff=session_diff,
        base_overlap=base_overlap,
        base_nonoverlap=base_nonoverlap,
        session_overlap=session_overlap,
        session_nonoverlap=session_nonoverlap,
        base_nd=base_nd,
        session_pd=session_pd,
    )
    logger.info(f"change detection: {len(base_nd)} negative, {len(session_pd)} positive difference points")
    return result


def knn_change(source: PointCloud, target: PointCloud, radius: float) -> PointCloud:
    """Source points with no target point within radius; the plain k-d tree baseline."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    return source.select(~neighbor_mask(source, target, radius))
