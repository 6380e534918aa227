"""
Normal Distributions Transform registration.

The target is voxelized at resolution r and every voxel with enough points
becomes a Gaussian. Each transformed source point is scored against the
Gaussian of the voxel containing it, using the mixture-with-outliers score
of Magnusson's NDT. The pose is refined by Newton steps in se(3) applied on
the left, with a backtracking line search whose step is capped.
"""

import math
import typing
from dataclasses import dataclass

import numpy as np
from loguru import logger
from scipy.spatial.transform import Rotation

from lifemap.errors import FineRegistrationFailed
from lifemap.geom.filters import anchor_key, pack_keys, voxel_keys
from lifemap.geom.types import PointCloud, Pose

MIN_VOXEL_POINTS = 5
EIGEN_FLOOR = 1e-3
OUTLIER_RATIO = 0.55
MAX_ITERATIONS = 60
UPDATE_EPS = 1e-4
LINE_SEARCH_STEPS = 20


@dataclass(frozen=True, slots=True, eq=False)
class NdtTarget:
    resolution: float
    anchor: np.ndarray
    codes: np.ndarray
    means: np.ndarray
    inv_covs: np.ndarray

    def __len__(self):
        return len(self.codes)

    @classmethod
    def build(cls, target: PointCloud, resolution: float) -> "NdtTarget":
        if resolution <= 0:
            raise ValueError("NDT resolution must be positive")
        empty = cls(
            resolution,
            np.zeros(3, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.empty((0, 3)),
            np.empty((0, 3, 3)),
        )
        if target.is_empty:
            return empty
        keys = voxel_keys(target.points, resolution)
        anchor = anchor_key(keys)
        codes = pack_keys(keys, anchor)
        order = np.argsort(codes, kind="stable")
        codes_sorted = codes[order]
        points = target.points[order]
        uniq, starts, counts = np.unique(codes_sorted, return_index=True, return_counts=True)
        dense = counts >= MIN_VOXEL_POINTS
        if not dense.any():
            return empty

        owner = np.repeat(np.arange(len(uniq)), counts)
        sums = np.zeros((len(uniq), 3))
        np.add.at(sums, owner, points)
        means = sums / counts[:, None]
        centered = points - means[owner]
        covs = np.zeros((len(uniq), 3, 3))
        np.add.at(covs, owner, np.einsum("ni,nj->nij", centered, centered))
        covs /= np.maximum(counts - 1, 1)[:, None, None]

        covs, means, uniq = covs[dense], means[dense], uniq[dense]
        vals, vecs = np.linalg.eigh(covs)
        vals = np.maximum(vals, EIGEN_FLOOR * resolution**2)
        inv = np.einsum("nij,nj,nkj->nik", vecs, 1.0 / vals, vecs)
        return cls(resolution, anchor, uniq, means, inv)

    def lookup(self, points: np.ndarray) -> np.ndarray:
        """Voxel row per point, -1 where the containing voxel has no Gaussian."""
        out = np.full(len(points), -1, dtype=np.int64)
        if not len(self.codes):
            return out
        codes = pack_keys(voxel_keys(points, self.resolution), self.anchor, strict=False)
        pos = np.minimum(np.searchsorted(self.codes, codes), len(self.codes) - 1)
        hit = self.codes[pos] == codes
        out[hit] = pos[hit]
        return out


def score_constants(resolution: float, outlier_ratio: float = OUTLIER_RATIO) -> tuple[float, float]:
    c1 = 10.0 * (1.0 - outlier_ratio)
    c2 = outlier_ratio / resolution**3
    d3 = -math.log(c2)
    d1 = -math.log(c1 + c2) - d3
    d2 = -2.0 * math.log((-math.log(c1 * math.exp(-0.5) + c2) - d3) / d1)
    return d1, d2


def _skew(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def _exp_se3(delta: np.ndarray) -> Pose:
    """Left increment: rotation vector delta[:3] about the origin, then translation delta[3:]."""
    return Pose.from_rotation(Rotation.from_rotvec(delta[:3]), delta[3:])


class _Objective:
    def __init__(self, target: NdtTarget, source: np.ndarray):
        self.target = target
        self.source = source
        self.d1, self.d2 = score_constants(target.resolution)

    def score(self, pose: Pose) -> float:
        moved = pose.apply(self.source)
        rows = self.target.lookup(moved)
        hit = rows >= 0
        if not hit.any():
            return 0.0
        x = moved[hit] - self.target.means[rows[hit]]
        m = np.einsum("ni,nij,nj->n", x, self.target.inv_covs[rows[hit]], x)
        return float(self.d1 * np.exp(-0.5 * self.d2 * m).sum())

    def derivatives(self, pose: Pose) -> tuple[float, np.ndarray, np.ndarray, int]:
        moved = pose.apply(self.source)
        rows = self.target.lookup(moved)
        hit = rows >= 0
        if not hit.any():
            return 0.0, np.zeros(6), np.zeros((6, 6)), 0
        q = moved[hit]
        x = q - self.target.means[rows[hit]]
        c = self.target.inv_covs[rows[hit]]
        cx = np.einsum("nij,nj->ni", c, x)
        m = np.einsum("ni,ni->n", x, cx)
        e = np.exp(-0.5 * self.d2 * m)

        # d(R q + t)/d(omega, v) at zero for a left increment
        jac = np.zeros((len(q), 3, 6))
        jac[:, :, :3] = -_skew(q)
        jac[:, :, 3:] = np.eye(3)

        g_terms = np.einsum("ni,nik->nk", cx, jac)
        coeff = -self.d1 * self.d2 * e
        grad = (coeff[:, None] * g_terms).sum(axis=0)
        jcj = np.einsum("nik,nij,njl->nkl", jac, c, jac)
        hess = (
            coeff[:, None, None] * (jcj - self.d2 * np.einsum("nk,nl->nkl", g_terms, g_terms))
        ).sum(axis=0)
        value = float(self.d1 * e.sum())
        return value, grad, hess, int(hit.sum())


def ndt_register(
    source: PointCloud,
    target: typing.Union[PointCloud, NdtTarget],
    init: typing.Optional[Pose] = None,
    resolution: float = 1.0,
    step_size: float = 5.0,
    max_iters: int = MAX_ITERATIONS,
) -> tuple[Pose, bool]:
    """
    Refine init so that source, once transformed, fits the target's voxel
    Gaussians. Returns (pose, converged); converged is False when the
    iteration limit is reached or no source point lands in a Gaussian.

    Raises:
        FineRegistrationFailed: no target voxel holds enough points.
    """
    grid = target if isinstance(target, NdtTarget) else NdtTarget.build(target, resolution)
    if not len(grid):
        raise FineRegistrationFailed(f"no NDT voxel with {MIN_VOXEL_POINTS} or more points at resolution {grid.resolution:g}")
    pose = init or Pose.identity()
    objective = _Objective(grid, source.points)

    for iteration in range(max_iters):
        value, grad, hess, used = objective.derivatives(pose)
        if not used:
            logger.debug("NDT: no source point falls in a target Gaussian")
            return pose, False

        direction = None
        try:
            if np.linalg.eigvalsh(hess).min() > 0:
                direction = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            direction = None
        if direction is None:
            direction = -grad

        length = float(np.linalg.norm(direction))
        if length < UPDATE_EPS:
            return pose, True
        if length > step_size:
            direction *= step_size / length
            length = step_size

        alpha = 1.0
        accepted = None
        for _ in range(LINE_SEARCH_STEPS):
            candidate = _exp_se3(alpha * direction) @ pose
            if objective.score(candidate) < value:
                accepted = candidate
                break
            alpha *= 0.5
        if accepted is None:
            # no descent along the direction: stationary within line-search resolution
            return pose, True
        pose = accepted
        if alpha * length < UPDATE_EPS:
            return pose, True
        logger.trace(f"NDT iteration {iteration}: score {value:.6g}, step {alpha * length:.3g}")

    return pose, False
