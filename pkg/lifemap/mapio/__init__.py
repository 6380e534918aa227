from pathlib import Path

from lifemap.errors import UnsupportedFormat
from lifemap.geom.types import PointCloud
from lifemap.mapio.pcd import read_pcd, write_pcd
from lifemap.mapio.ply import read_ply, write_ply
from lifemap.mapio.poses import read_poses, write_poses, read_kitti_poses
from lifemap.mapio.session import (
    Frame,
    SessionMap,
    SessionManifest,
    assemble_map,
    save_session,
    load_session,
)


def read_cloud(path) -> PointCloud:
    """Read a .pcd or .ply file."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pcd":
        return read_pcd(path)
    if suffix == ".ply":
        return read_ply(path)
    raise UnsupportedFormat(f"{path}: unknown point cloud extension {suffix!r}")


def write_cloud(cloud: PointCloud, path, encoding: str = "binary"):
    suffix = Path(path).suffix.lower()
    if suffix == ".pcd":
        return write_pcd(cloud, path, encoding)
    if suffix == ".ply":
        if encoding != "ascii":
            raise UnsupportedFormat("PLY is written as ascii only")
        return write_ply(cloud, path)
    raise UnsupportedFormat(f"{path}: unknown point cloud extension {suffix!r}")
