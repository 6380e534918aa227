import threading
import typing
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from loguru import logger

from lifemap.alignment.coarse import coarse_align
from lifemap.alignment.features import SurfaceCloud, compute_descriptors, pca_pair, select_keypoints
from lifemap.alignment.models import AlignmentResult, AlignParams, CandidateLog, StageOutcome, full_grid
from lifemap.alignment.ndt import NdtTarget, ndt_register
from lifemap.errors import AlignmentFailed, FineRegistrationFailed
from lifemap.geom.filters import transform
from lifemap.geom.index import SpatialIndex
from lifemap.geom.metrics import chamfer_distance
from lifemap.geom.types import PointCloud
from lifemap.utils import make_rng

CHAMFER_TAU = 0.5


class _Cache:
    """Memoized per-parameter intermediates shared by candidate workers."""

    def __init__(self, target: PointCloud, source: PointCloud):
        self.target = target
        self.source = source
        self._lock = threading.Lock()
        self._items = dict()

    def _get(self, key, build):
        with self._lock:
            if key in self._items:
                return self._items[key]
        value = build()
        with self._lock:
            return self._items.setdefault(key, value)

    def surfaces(self, pc_ds: float, n_n: int) -> tuple[SurfaceCloud, SurfaceCloud]:
        return self._get(
            ("surface", pc_ds, n_n),
            lambda: (SurfaceCloud.build(self.target, pc_ds, n_n), SurfaceCloud.build(self.source, pc_ds, n_n)),
        )

    def keypoints(self, k_r: float) -> tuple[PointCloud, PointCloud]:
        return self._get(
            ("keypoints", k_r),
            lambda: (select_keypoints(self.target, k_r), select_keypoints(self.source, k_r)),
        )

    def ndt_target(self, pc_ds: float, n_n: int, ndt_r: float) -> NdtTarget:
        return self._get(
            ("ndt", pc_ds, ndt_r),
            lambda: NdtTarget.build(self.surfaces(pc_ds, n_n)[0].cloud, ndt_r),
        )


def _evaluate_group(
    cache: _Cache,
    target_index: SpatialIndex,
    candidates: list[tuple[int, AlignParams]],
    rng: np.random.Generator,
    tau: float,
) -> list[CandidateLog]:
    """Candidates sharing keypoint and descriptor parameters: one coarse stage, one NDT run each."""
    params = candidates[0][1]
    surface_t, surface_s = cache.surfaces(params.pc_ds, params.n_n)
    kp_t, kp_s = cache.keypoints(params.k_r)
    desc_t = compute_descriptors(cache.target, kp_t, params, surface_t)
    desc_s = compute_descriptors(cache.source, kp_s, params, surface_s)

    if len(desc_t) < 3 or len(desc_s) < 3:
        reason = f"too few descriptors ({len(desc_s)} source, {len(desc_t)} target)"
        return [CandidateLog(i, p, StageOutcome.FAILED_COARSE, reason=reason) for i, p in candidates]

    proj_s, proj_t = pca_pair(desc_s, desc_t)
    coarse = coarse_align(proj_s, proj_t, params.k_r, rng)
    if not coarse.ok:
        return [CandidateLog(i, p, StageOutcome.FAILED_COARSE, reason=coarse.reason) for i, p in candidates]

    logs = []
    for index, candidate in candidates:
        try:
            pose, converged = ndt_register(
                surface_s.cloud,
                cache.ndt_target(candidate.pc_ds, candidate.n_n, candidate.ndt_r),
                coarse.pose,
                candidate.ndt_r,
                candidate.ndt_ss,
            )
        except FineRegistrationFailed as err:
            logs.append(CandidateLog(index, candidate, StageOutcome.FAILED_FINE, reason=str(err)))
            continue
        chamfer = chamfer_distance(transform(cache.source, pose), cache.target, tau, index_b=target_index)
        if not np.isfinite(chamfer):
            logs.append(
                CandidateLog(
                    index, candidate, StageOutcome.FAILED_FINE, converged=converged,
                    reason=f"no overlap within {tau:g} m", transform=pose,
                )
            )
            continue
        logs.append(
            CandidateLog(index, candidate, StageOutcome.SUCCEEDED, chamfer=chamfer, converged=converged, transform=pose)
        )
    return logs


def grid_search_align(
    map_a: PointCloud,
    map_b: PointCloud,
    grid: typing.Optional[typing.Sequence[AlignParams]] = None,
    seed: typing.Optional[int] = 0,
    workers: int = 1,
    tau: float = CHAMFER_TAU,
) -> AlignmentResult:
    """
    Align map_b onto map_a by trying every parameter candidate and keeping
    the one with the lowest Chamfer distance. Candidates that share keypoint
    and descriptor parameters share one coarse alignment. Without a grid
    the full 1280 candidate grid is searched.

    Raises:
        AlignmentFailed: every candidate failed; carries the full stage log.
    """
    grid = list(grid) if grid is not None else full_grid()
    if not grid:
        raise ValueError("the parameter grid is empty")
    if map_a.is_empty or map_b.is_empty:
        raise AlignmentFailed("cannot align an empty map", [])

    groups: dict[tuple, list[tuple[int, AlignParams]]] = dict()
    for index, params in enumerate(grid):
        groups.setdefault(params.feature_key, []).append((index, params))

    cache = _Cache(map_a.without_labels(), map_b.without_labels())
    target_index = SpatialIndex(cache.target)
    logger.info(f"grid search over {len(grid)} candidates in {len(groups)} feature groups")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [
            pool.submit(_evaluate_group, cache, target_index, members, make_rng(seed, number), tau)
            for number, members in enumerate(groups.values())
        ]
        stage_log = sorted((log for f in futures for log in f.result()), key=lambda c: c.index)

    for entry in stage_log:
        if entry.outcome is not StageOutcome.SUCCEEDED:
            logger.debug(f"candidate {entry.index} ({entry.params.label()}): {entry.outcome.value}, {entry.reason}")

    succeeded = [c for c in stage_log if c.outcome is StageOutcome.SUCCEEDED]
    if not succeeded:
        raise AlignmentFailed(f"all {len(grid)} alignment candidates failed", stage_log)
    best = min(succeeded, key=lambda c: (c.chamfer, c.index))
    logger.info(f"best candidate {best.index} ({best.params.label()}): chamfer {best.chamfer:.6g}")
    return AlignmentResult(best.transform, best.chamfer, best.params, stage_log)
