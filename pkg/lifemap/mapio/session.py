import re
import typing
from dataclasses import dataclass, field
from pathlib import Path

import orjson
from loguru import logger
from pydantic import BaseModel, ValidationError

from lifemap.errors import ChecksumMismatch, InvalidSession, ParseError
from lifemap.geom.filters import transform
from lifemap.geom.types import PointCloud, Pose
from lifemap.mapio.pcd import read_pcd, write_pcd
from lifemap.mapio.poses import read_poses, write_poses
from lifemap.utils import sha256_file

MANIFEST_NAME = "session.json"
POSES_NAME = "poses.txt"
SCANS_DIR = "scans"


@dataclass(frozen=True, slots=True)
class Frame:
    pose: Pose
    scan: PointCloud
    timestamp: float = 0.0


@dataclass(frozen=True)
class SessionMap:
    """
    One mapping run: (pose, scan) frames in acquisition order, scans in the
    sensor frame.
    """

    id: str
    frames: tuple[Frame, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise InvalidSession(f"session {self.id!r} has no frames")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    @property
    def point_count(self) -> int:
        return sum(len(f.scan) for f in self.frames)

    @property
    def poses(self) -> list[Pose]:
        return [f.pose for f in self.frames]


class FileRef(BaseModel):
    path: str
    sha256: str


class SessionManifest(BaseModel):
    schema_version: int = 1
    id: str
    frame_count: int
    poses: FileRef
    scans: list[FileRef]
    extras: dict[str, FileRef] = dict()
    metadata: dict[str, typing.Any] = dict()


def assemble_map(session: SessionMap) -> PointCloud:
    """World-frame map: every scan transformed by its pose, concatenated in frame order."""
    return PointCloud.concat(transform(f.scan, f.pose) for f in session.frames)


def frame_offsets(session: SessionMap):
    """Start index of every frame's points within assemble_map(session), plus the total."""
    offsets = [0]
    for f in session.frames:
        offsets.append(offsets[-1] + len(f.scan))
    return offsets


def _ref(root: Path, relative: str) -> FileRef:
    return FileRef(path=relative, sha256=sha256_file(root / relative))


def save_session(session: SessionMap, root, extras: typing.Optional[dict[str, PointCloud]] = None) -> SessionManifest:
    """
    Write scans/<i>.pcd, poses.txt and session.json under root. extras are
    additional named clouds (ground truth, for instance) stored next to the
    scans and listed in the manifest.
    """
    root = Path(root)
    (root / SCANS_DIR).mkdir(parents=True, exist_ok=True)
    scan_refs = []
    for i, frame in enumerate(session.frames):
        relative = f"{SCANS_DIR}/{i}.pcd"
        write_pcd(frame.scan, root / relative)
        scan_refs.append(_ref(root, relative))
    write_poses(root / POSES_NAME, [(f.timestamp, f.pose) for f in session.frames])
    extra_refs = dict()
    for name, cloud in (extras or dict()).items():
        relative = f"{name}.pcd"
        write_pcd(cloud, root / relative)
        extra_refs[name] = _ref(root, relative)
    manifest = SessionManifest(
        id=session.id,
        frame_count=len(session),
        poses=_ref(root, POSES_NAME),
        scans=scan_refs,
        extras=extra_refs,
        metadata=session.metadata,
    )
    (root / MANIFEST_NAME).write_bytes(
        orjson.dumps(manifest.model_dump(mode="json"), option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS)
    )
    logger.debug(f"saved session {session.id} ({len(session)} frames) to {root}")
    return manifest


def _verify(root: Path, ref: FileRef):
    target = root / ref.path
    if not target.exists():
        raise InvalidSession(f"{root}: manifest references missing file {ref.path}")
    actual = sha256_file(target)
    if actual != ref.sha256:
        raise ChecksumMismatch(f"{target}: sha256 {actual} does not match manifest {ref.sha256}")


def read_manifest(root) -> SessionManifest:
    root = Path(root)
    try:
        return SessionManifest.model_validate(orjson.loads((root / MANIFEST_NAME).read_bytes()))
    except orjson.JSONDecodeError as err:
        raise ParseError(f"invalid JSON: {err}", path=root / MANIFEST_NAME)
    except ValidationError as err:
        raise InvalidSession(f"{root / MANIFEST_NAME}: {err}")


def _scan_number(path: Path) -> int:
    match = re.fullmatch(r"(\d+)", path.stem)
    return int(match.group(1)) if match else -1


def load_session(root) -> SessionMap:
    """
    Load a session directory. With a session.json every referenced file is
    checksum-verified; without one, scans/*.pcd are taken in numeric order
    and paired with poses.txt.
    """
    root = Path(root)
    if not root.is_dir():
        raise InvalidSession(f"{root} is not a session directory")

    if (root / MANIFEST_NAME).exists():
        manifest = read_manifest(root)
        _verify(root, manifest.poses)
        for ref in manifest.scans:
            _verify(root, ref)
        if manifest.frame_count != len(manifest.scans):
            raise InvalidSession(f"{root}: frame_count {manifest.frame_count} but {len(manifest.scans)} scans listed")
        scan_paths = [root / ref.path for ref in manifest.scans]
        session_id = manifest.id
        metadata = manifest.metadata
    else:
        scan_paths = sorted((root / SCANS_DIR).glob("*.pcd"), key=_scan_number)
        session_id = root.name
        metadata = dict()

    poses = read_poses(root / POSES_NAME)
    if len(poses) != len(scan_paths):
        raise InvalidSession(f"{root}: {len(poses)} poses for {len(scan_paths)} scans")
    frames = [Frame(pose, read_pcd(p), t) for (t, pose), p in zip(poses, scan_paths)]
    return SessionMap(session_id, tuple(frames), metadata)


def load_extra(root, name: str) -> PointCloud:
    """A named extra cloud stored by save_session, checksum-verified."""
    root = Path(root)
    manifest = read_manifest(root)
    ref = manifest.extras.get(name)
    if ref is None:
        raise InvalidSession(f"{root}: session has no {name!r} cloud")
    _verify(root, ref)
    return read_pcd(root / ref.path)
