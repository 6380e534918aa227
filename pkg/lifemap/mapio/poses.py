"""
Pose files.

The native format is one pose per line, `timestamp tx ty tz qx qy qz qw`,
whitespace separated, `#` starting a comment. KITTI odometry files (twelve
numbers per line, a row-major 3x4 matrix) can be converted into it.
"""

from pathlib import Path

import numpy as np
from loguru import logger

from lifemap.errors import ParseError
from lifemap.geom.types import Pose

# quaternion norms further than this from 1 are reported before normalizing
QUAT_TOLERANCE = 1e-3


def _data_lines(path):
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            content = line.split("#", 1)[0].strip()
            if content:
                yield line_no, content


def read_poses(path) -> list[tuple[float, Pose]]:
    path = Path(path)
    poses = []
    for line_no, content in _data_lines(path):
        parts = content.split()
        if len(parts) != 8:
            raise ParseError(f"expected 8 values (t tx ty tz qx qy qz qw), got {len(parts)}", line_no, path)
        try:
            values = np.array([float(p) for p in parts])
        except ValueError:
            raise ParseError("non-numeric value", line_no, path)
        if not np.isfinite(values).all():
            raise ParseError("non-finite value", line_no, path)
        t, translation, (qx, qy, qz, qw) = values[0], values[1:4], values[4:8]
        quat = np.array([qw, qx, qy, qz])
        norm = float(np.linalg.norm(quat))
        if norm < 1e-12:
            raise ParseError("zero quaternion", line_no, path)
        if abs(norm - 1.0) > QUAT_TOLERANCE:
            logger.warning(f"{path}:{line_no}: quaternion norm {norm:.6g} normalized to 1")
        poses.append((float(t), Pose(quat / norm, translation)))
    return poses


def format_poses(poses: list[tuple[float, Pose]]) -> str:
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for t, pose in poses:
        w, x, y, z = pose.rotation
        tx, ty, tz = pose.translation
        lines.append(" ".join(f"{v:.17g}" for v in (t, tx, ty, tz, x, y, z, w)))
    return "\n".join(lines) + "\n"


def write_poses(path, poses: list[tuple[float, Pose]]):
    Path(path).write_text(format_poses(poses), encoding="utf-8")


def read_kitti_poses(path) -> list[tuple[float, Pose]]:
    """KITTI 3x4 rows; the line index becomes the timestamp."""
    path = Path(path)
    poses = []
    for line_no, content in _data_lines(path):
        parts = content.split()
        if len(parts) != 12:
            raise ParseError(f"expected 12 values (row-major 3x4), got {len(parts)}", line_no, path)
        try:
            matrix = np.array([float(p) for p in parts]).reshape(3, 4)
        except ValueError:
            raise ParseError("non-numeric value", line_no, path)
        rotation = matrix[:, :3]
        if abs(np.linalg.det(rotation) - 1.0) > QUAT_TOLERANCE:
            logger.warning(f"{path}:{line_no}: rotation block is not orthonormal; projecting onto SO(3)")
        try:
            pose = Pose.from_matrix(matrix)
        except ValueError as err:
            raise ParseError(f"invalid rotation: {err}", line_no, path)
        poses.append((float(len(poses)), pose))
    return poses
