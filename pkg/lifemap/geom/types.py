import enum
import typing
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from lifemap.errors import DegenerateInput


class Label(enum.IntEnum):
    STATIC = 0
    DYNAMIC = 1
    UNKNOWN = 2


def _frozen_array(data, dtype, shape_tail: tuple) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=dtype)
    if isinstance(data, np.ndarray) and arr.flags.writeable and np.may_share_memory(arr, data):
        arr = arr.copy()
    if arr.size == 0:
        arr = arr.reshape((0,) + shape_tail)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, slots=True, eq=False)
class PointCloud:
    """
    Dense (N, 3) float64 points in meters with optional per-point labels.

    Arrays are made read-only at construction so clouds can be shared
    between threads.
    """

    points: np.ndarray
    labels: typing.Optional[np.ndarray] = None

    def __post_init__(self):
        pts = _frozen_array(self.points, np.float64, (3,))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains NaN or infinite coordinates")
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            labels = _frozen_array(self.labels, np.uint8, ())
            if labels.shape != (len(pts),):
                raise ValueError(
                    f"labels must have one entry per point ({len(pts)}), got {labels.shape}"
                )
            if labels.size and labels.max() > max(Label):
                raise ValueError(f"invalid label value {labels.max()}")
            object.__setattr__(self, "labels", labels)

    @classmethod
    def empty(cls, labeled: bool = False) -> "PointCloud":
        return cls(
            np.empty((0, 3)), np.empty(0, dtype=np.uint8) if labeled else None
        )

    @classmethod
    def concat(cls, clouds: typing.Iterable["PointCloud"]) -> "PointCloud":
        """
        Concatenate clouds in order. Labels survive only when every input
        carries them.
        """
        clouds = list(clouds)
        if not clouds:
            return cls.empty()
        points = np.concatenate([c.points for c in clouds], axis=0)
        if all(c.labels is not None for c in clouds):
            return cls(points, np.concatenate([c.labels for c in clouds]))
        return cls(points)

    def __len__(self):
        return len(self.points)

    @property
    def is_empty(self) -> bool:
        return len(self.points) == 0

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None

    def select(self, which) -> "PointCloud":
        """Subset by boolean mask or index array, keeping labels."""
        which = np.asarray(which)
        labels = None if self.labels is None else self.labels[which]
        return PointCloud(self.points[which], labels)

    def with_labels(self, labels) -> "PointCloud":
        return PointCloud(self.points, labels)

    def without_labels(self) -> "PointCloud":
        return PointCloud(self.points)

    def as_float32(self) -> "PointCloud":
        """
        Round coordinates to float32 precision. Files store float32, so
        anything that must match stored points exactly goes through this.
        """
        return PointCloud(self.points.astype(np.float32).astype(np.float64), self.labels)


@dataclass(frozen=True, slots=True, eq=False)
class Pose:
    """
    Rigid transform p -> R p + t with R from the unit quaternion (w, x, y, z).
    """

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(q)
        if not np.isfinite(norm) or norm < 1e-12:
            raise ValueError("pose quaternion must be finite and non-zero")
        if not np.isfinite(t).all():
            raise ValueError("pose translation must be finite")
        q = q / norm
        # canonical hemisphere
        if q[0] < 0:
            q = -q
        q.flags.writeable = False
        t = t.copy()
        t.flags.writeable = False
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_rotation(cls, rot: Rotation, translation=(0.0, 0.0, 0.0)) -> "Pose":
        x, y, z, w = rot.as_quat()
        return cls(np.array([w, x, y, z]), np.asarray(translation, dtype=np.float64))

    @classmethod
    def from_matrix(cls, matrix, translation=None) -> "Pose":
        """
        Build from a 3x3 rotation plus translation, or from a 3x4 / 4x4
        homogeneous matrix.
        """
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape in ((3, 4), (4, 4)):
            translation = m[:3, 3]
            m = m[:3, :3]
        if translation is None:
            translation = np.zeros(3)
        return cls.from_rotation(Rotation.from_matrix(m), translation)

    @property
    def scipy_rotation(self) -> Rotation:
        w, x, y, z = self.rotation
        return Rotation.from_quat([x, y, z, w])

    @property
    def matrix(self) -> np.ndarray:
        return self.scipy_rotation.as_matrix()

    def as_matrix4(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.matrix
        m[:3, 3] = self.translation
        return m

    def as_row(self) -> np.ndarray:
        """Row-major 3x4 matrix as 12 numbers."""
        return self.as_matrix4()[:3, :].reshape(12)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.matrix.T + self.translation

    def inverse(self) -> "Pose":
        inv = self.scipy_rotation.inv()
        return Pose.from_rotation(inv, -inv.apply(self.translation))

    def __matmul__(self, other: "Pose") -> "Pose":
        """(a @ b).apply(p) == a.apply(b.apply(p))"""
        rot = self.scipy_rotation * other.scipy_rotation
        return Pose.from_rotation(rot, self.apply(other.translation))

    def angle(self) -> float:
        """Rotation angle in radians."""
        return float(self.scipy_rotation.magnitude())

    def distance(self, other: "Pose") -> tuple[float, float]:
        """(translation error in m, rotation error in rad) between two poses."""
        delta = self.inverse() @ other
        return float(np.linalg.norm(delta.translation)), delta.angle()


@dataclass(frozen=True, slots=True, eq=False)
class PlaneModel:
    normal: np.ndarray
    offset: float
    inlier_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            raise DegenerateInput("plane normal has zero length")
        n = n / norm
        n.flags.writeable = False
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset) / norm)
        inliers = np.array(self.inlier_indices, dtype=np.int64).reshape(-1)
        inliers.flags.writeable = False
        object.__setattr__(self, "inlier_indices", inliers)

    @classmethod
    def horizontal(cls, height: float = 0.0) -> "PlaneModel":
        return cls(np.array([0.0, 0.0, 1.0]), -height)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal + self.offset

    def basis(self) -> np.ndarray:
        """
        Orthonormal (3, 3) rows (u, v, n): u and v span the plane, n is the
        normal. Deterministic for a given normal.
        """
        n = self.normal
        helper = np.eye(3)[int(np.argmin(np.abs(n)))]
        u = np.cross(helper, n)
        u /= np.linalg.norm(u)
        v = np.cross(n, u)
        return np.stack([u, v, n])


@dataclass(frozen=True, slots=True, eq=False)
class HullPolygon:
    """Convex footprint polygon in the xy ground plane, counter-clockwise."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise DegenerateInput("hull needs at least three 2D vertices")
        v.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        if self.signed_area() <= 0:
            raise DegenerateInput("hull must be counter-clockwise with positive area")

    def signed_area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    @property
    def area(self) -> float:
        return abs(self.signed_area())

    def contains(self, xy: np.ndarray, tol: float = 1e-7) -> np.ndarray:
        """
        Mask of 2D points inside or on the polygon; tol is a distance in
        meters outside the edges that still counts as on.
        """
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        inside = np.ones(len(xy), dtype=bool)
        start = self.vertices
        end = np.roll(self.vertices, -1, axis=0)
        for a, b in zip(start, end):
            edge = b - a
            length = np.hypot(edge[0], edge[1])
            if length == 0:
                continue
            rel = xy - a
            # signed distance to the edge line, positive on the inner (left) side
            dist = (edge[0] * rel[:, 1] - edge[1] * rel[:, 0]) / length
            inside &= dist >= -tol
        return inside
