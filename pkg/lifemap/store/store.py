"""
Map version control.

A store keeps the current base map plus, for every committed session, the
negative differences it removed from the previous base map (nd.pcd), the
positive differences it added (pd.pcd) and its footprint (boundary.txt).
Session maps themselves are never kept: any historic session is rebuilt
by rolling the base map back through the stored differences and cropping
to that session's footprint.

Layout:

    root/manifest.json
    root/base_map.pcd
    root/sessions/<t>/nd.pcd          base ND(t-1), absent for t = 0
    root/sessions/<t>/pd.pcd          session PD(t), absent for t = 0
    root/sessions/<t>/boundary.txt
    root/sessions/<t>/base_boundary.txt
    root/sessions/<t>/transform.txt
    root/sessions/<t>/meta.json

A commit stages its files under root/.staging; writing manifest.json is
the commit point, after which the staged files are moved into place. A
store opened with a leftover staging area finishes or discards it.
"""

import contextlib
import os
import shutil
import typing
from pathlib import Path

import numpy as np
import orjson
from loguru import logger
from pydantic import ValidationError

from lifemap.alignment.models import AlignParams
from lifemap.alignment.search import CHAMFER_TAU, grid_search_align
from lifemap.change.detect import detect_changes
from lifemap.change.models import ChangeParams, DiffResult
from lifemap.dynamic.models import DynRemovalParams
from lifemap.dynamic.pipeline import remove_dynamic
from lifemap.errors import (
    ChecksumMismatch,
    NoSuchSession,
    ParseError,
    StoreCorrupt,
    StoreExists,
    StoreLocked,
)
from lifemap.geom.filters import transform, voxel_downsample
from lifemap.geom.hull import format_hull, hull_crop, hull_of, parse_hull
from lifemap.geom.index import SpatialIndex
from lifemap.geom.types import HullPolygon, PointCloud, Pose
from lifemap.mapio.pcd import encode_pcd, read_pcd
from lifemap.mapio.session import FileRef, SessionMap
from lifemap.store.models import (
    SessionRecord,
    SessionRef,
    StoreManifest,
    StoreSettings,
    StoreStats,
    efficiency_ratio,
)
from lifemap.utils import LogTime, atomic_write_bytes, sha256_file, utcnow

EPS_RM = 1e-3

MANIFEST = "manifest.json"
BASE_MAP = "base_map.pcd"
SESSIONS = "sessions"
LOCK = ".lock"
STAGING = ".staging"
STAGED_SESSION = "session"

ND_FILE = "nd.pcd"
PD_FILE = "pd.pcd"
BOUNDARY_FILE = "boundary.txt"
BASE_BOUNDARY_FILE = "base_boundary.txt"
TRANSFORM_FILE = "transform.txt"
META_FILE = "meta.json"

_JSON = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS


def _dump(model) -> bytes:
    return orjson.dumps(model.model_dump(mode="json"), option=_JSON)


def format_transform(pose: Pose) -> str:
    """3x4 row-major matrix, one row per line."""
    rows = pose.as_matrix4()[:3]
    return "".join(" ".join(f"{v:.17g}" for v in row) + "\n" for row in rows)


def parse_transform(text: str) -> Pose:
    try:
        values = np.array([float(v) for v in text.split()])
    except ValueError as err:
        raise ParseError(f"malformed transform: {err}") from err
    if values.size != 12:
        raise ParseError(f"transform needs 12 numbers, got {values.size}")
    return Pose.from_matrix(values.reshape(3, 4))


@contextlib.contextmanager
def store_lock(root: Path):
    """Exclusive writer lock: a lock file created with O_EXCL, removed on exit."""
    path = Path(root) / LOCK
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StoreLocked(f"{root} is locked by another writer ({path})")
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


class VersionStore:
    """Read access to a store directory; every file is checked against the manifest."""

    def __init__(self, root, manifest: StoreManifest):
        self.root = Path(root)
        self.manifest = manifest

    @classmethod
    def open(cls, root) -> "VersionStore":
        root = Path(root)
        if not (root / MANIFEST).is_file():
            raise StoreCorrupt(f"{root} is not a lifemap store (no {MANIFEST})")
        if (root / LOCK).exists():
            raise StoreLocked(f"{root} is being written; try again when the commit finishes")
        try:
            manifest = StoreManifest.model_validate(orjson.loads((root / MANIFEST).read_bytes()))
        except orjson.JSONDecodeError as err:
            raise ParseError(f"invalid JSON: {err}", path=root / MANIFEST)
        except ValidationError as err:
            raise StoreCorrupt(f"{root / MANIFEST}: {err}")
        if (root / STAGING).exists():
            with store_lock(root):
                recover(root, manifest)
        return cls(root, manifest)

    def __len__(self):
        return len(self.manifest.sessions)

    @property
    def settings(self) -> StoreSettings:
        return self.manifest.settings

    @property
    def latest(self) -> SessionRef:
        record = self.manifest.sessions[-1]
        return SessionRef(record.index, record.id)

    def ref(self, index: int) -> SessionRef:
        if not 0 <= index < len(self):
            raise NoSuchSession(f"session {index} does not exist; the store holds sessions 0..{len(self) - 1}")
        record = self.manifest.sessions[index]
        return SessionRef(record.index, record.id)

    def resolve(self, key: typing.Union[int, str, SessionRef]) -> SessionRef:
        """A session by index, by id, or a ref already."""
        if isinstance(key, SessionRef):
            return self.ref(key.index)
        if isinstance(key, int):
            return self.ref(key)
        if key.lstrip("-").isdigit():
            return self.ref(int(key))
        for record in self.manifest.sessions:
            if record.id == key:
                return SessionRef(record.index, record.id)
        raise NoSuchSession(f"no session with id {key!r}")

    def _verified(self, ref: FileRef) -> Path:
        path = self.root / ref.path
        if not path.is_file():
            raise StoreCorrupt(f"{self.root}: missing {ref.path}")
        actual = sha256_file(path)
        if actual != ref.sha256:
            raise ChecksumMismatch(f"{path}: sha256 {actual} does not match manifest {ref.sha256}")
        return path

    def _session_file(self, index: int, name: str) -> Path:
        record = self.manifest.sessions[self.ref(index).index]
        ref = record.files.get(name)
        if ref is None:
            raise StoreCorrupt(f"session {index} has no {name}")
        return self._verified(ref)

    def base_map(self) -> PointCloud:
        return read_pcd(self._verified(self.manifest.base_map))

    def nd(self, index: int) -> PointCloud:
        """Negative differences recorded when session index was committed."""
        return read_pcd(self._session_file(index, ND_FILE))

    def pd(self, index: int) -> PointCloud:
        return read_pcd(self._session_file(index, PD_FILE))

    def boundary(self, index: int) -> HullPolygon:
        return parse_hull(self._session_file(index, BOUNDARY_FILE).read_text())

    def base_boundary(self, index: int) -> HullPolygon:
        return parse_hull(self._session_file(index, BASE_BOUNDARY_FILE).read_text())

    def transform(self, index: int) -> Pose:
        return parse_transform(self._session_file(index, TRANSFORM_FILE).read_text())

    def log(self) -> list[SessionRecord]:
        return list(self.manifest.sessions)


def point_subtract(a: PointCloud, b: PointCloud, eps_rm: float = EPS_RM) -> PointCloud:
    """Points of a with no point of b within eps_rm."""
    if eps_rm <= 0:
        raise ValueError("eps_rm must be positive")
    if a.is_empty or b.is_empty:
        return a
    return a.select(~SpatialIndex(b).has_neighbor(a.points, eps_rm))


def forward_update(
    coexist: PointCloud,
    base_overlap: PointCloud,
    base_nonoverlap: PointCloud,
    session_nonoverlap: PointCloud,
    session_pd: PointCloud,
    base_nd: PointCloud,
    eps_rm: float = EPS_RM,
) -> PointCloud:
    """Next base map: the five additive sets concatenated, minus the negative differences."""
    merged = PointCloud.concat(
        c.without_labels() for c in (coexist, base_overlap, base_nonoverlap, session_nonoverlap, session_pd)
    )
    return point_subtract(merged, base_nd.without_labels(), eps_rm)


def forward_update_from(diff: DiffResult, eps_rm: float = EPS_RM) -> PointCloud:
    return forward_update(
        diff.coexist,
        diff.base_overlap,
        diff.base_nonoverlap,
        diff.session_nonoverlap,
        diff.session_pd,
        diff.base_nd,
        eps_rm,
    )


def prepare_clean(clean: PointCloud, settings: StoreSettings) -> PointCloud:
    """Unlabeled, down-sampled to the store cell when one is set."""
    clean = clean.without_labels()
    if settings.voxel_size is not None:
        clean = voxel_downsample(clean, settings.voxel_size)
    return clean


class _Staging:
    """
    Files of one pending commit, written under root/.staging. The manifest
    write is the commit point; publish then moves the staged files into
    place. A staging area left by a crash is finished or discarded by
    recover().
    """

    def __init__(self, root: Path, index: int, settings: StoreSettings):
        self.root = root
        self.settings = settings
        self.index = index
        self.relative = f"{SESSIONS}/{index}"
        self.path = root / STAGING
        shutil.rmtree(self.path, ignore_errors=True)
        (self.path / STAGED_SESSION).mkdir(parents=True)
        self.files: dict[str, FileRef] = dict()

    def write(self, name: str, data: bytes):
        target = self.path / STAGED_SESSION / name
        target.write_bytes(data)
        self.files[name] = FileRef(path=f"{self.relative}/{name}", sha256=sha256_file(target))

    def cloud(self, name: str, cloud: PointCloud):
        self.write(name, encode_pcd(cloud.without_labels(), self.settings.encoding))

    def base(self, base: PointCloud) -> FileRef:
        target = self.path / BASE_MAP
        target.write_bytes(encode_pcd(base, self.settings.encoding))
        return FileRef(path=BASE_MAP, sha256=sha256_file(target))

    def publish(self):
        _publish(self.root, self.index)

    def discard(self):
        shutil.rmtree(self.path, ignore_errors=True)


def _publish(root: Path, index: int):
    staging = root / STAGING
    session = staging / STAGED_SESSION
    target = root / SESSIONS / str(index)
    if session.is_dir():
        if target.exists():
            # left by an attempt that never reached its manifest write
            shutil.rmtree(target)
        target.parent.mkdir(parents=True, exist_ok=True)
        os.replace(session, target)
    if (staging / BASE_MAP).is_file():
        os.replace(staging / BASE_MAP, root / BASE_MAP)
    shutil.rmtree(staging, ignore_errors=True)


def _staged_matches(staging: Path, record: SessionRecord, base: FileRef) -> bool:
    session = staging / STAGED_SESSION
    for name, ref in record.files.items():
        path = session / name
        if not path.is_file() or sha256_file(path) != ref.sha256:
            return False
    staged_base = staging / BASE_MAP
    return staged_base.is_file() and sha256_file(staged_base) == base.sha256


def recover(root, manifest: StoreManifest) -> bool:
    """
    Finish or discard a commit interrupted after staging. Staged files that
    match the manifest's latest session are published; anything else is
    dropped. Returns True when a commit was rolled forward.
    """
    root = Path(root)
    staging = root / STAGING
    if not staging.exists():
        return False
    latest = manifest.sessions[-1] if manifest.sessions else None
    if latest is not None and _staged_matches(staging, latest, manifest.base_map):
        logger.warning(f"{root}: finishing interrupted commit of session {latest.index} ({latest.id})")
        _publish(root, latest.index)
        return True
    logger.warning(f"{root}: discarding staged files of an uncommitted session")
    shutil.rmtree(staging, ignore_errors=True)
    return False


def init_store(
    root,
    clean_session0: PointCloud,
    settings: typing.Optional[StoreSettings] = None,
    session_id: str = "0",
) -> VersionStore:
    """
    Create a store whose base map is the given clean session map. The map
    is taken as is; see prepare_clean for the store's down-sampling.
    """
    root = Path(root)
    settings = settings or StoreSettings()
    if root.exists() and (not root.is_dir() or any(root.iterdir())):
        raise StoreExists(f"{root} exists and is not empty")
    base = clean_session0.without_labels().as_float32()
    boundary = hull_of(base)
    root.mkdir(parents=True, exist_ok=True)

    with store_lock(root):
        staging = _Staging(root, 0, settings)
        try:
            staging.write(BOUNDARY_FILE, format_hull(boundary).encode("ascii"))
            staging.write(BASE_BOUNDARY_FILE, format_hull(boundary).encode("ascii"))
            staging.write(TRANSFORM_FILE, format_transform(Pose.identity()).encode("ascii"))
            record = SessionRecord(
                index=0,
                id=session_id,
                committed=utcnow(),
                counts={"base": len(base)},
                transform=Pose.identity().as_row().tolist(),
                clean_bytes=len(encode_pcd(base, settings.encoding)),
            )
            staging.write(META_FILE, _dump(record))
            record = record.model_copy(update={"files": dict(staging.files)})
            manifest = StoreManifest(
                created=record.committed,
                settings=settings,
                base_map=staging.base(base),
                sessions=[record],
            )
            atomic_write_bytes(root / MANIFEST, _dump(manifest))
        except BaseException:
            staging.discard()
            raise
        staging.publish()

    logger.info(f"initialized store at {root} with {len(base)} base points")
    return VersionStore(root, manifest)


def commit_clean(
    store: VersionStore,
    clean: PointCloud,
    session_id: str,
    align_grid: typing.Optional[typing.Sequence[AlignParams]] = None,
    change_params: typing.Optional[ChangeParams] = None,
    pose: typing.Optional[Pose] = None,
    seed: typing.Optional[int] = 0,
    workers: int = 1,
    timings: typing.Optional[dict] = None,
    tau: float = CHAMFER_TAU,
) -> SessionRef:
    """
    Commit an already cleaned session map. The map is aligned to the base
    map (unless pose is given), compared against it and folded into it;
    only the differences, the footprint and the transform are kept.

    align_grid defaults to the full candidate grid; tau is the Chamfer
    truncation distance used to rank candidates.

    Nothing under the store root changes unless the commit succeeds.
    """
    root = store.root
    settings = store.settings
    change_params = change_params or ChangeParams()
    clean = clean.without_labels()

    with store_lock(root):
        recover(root, store.manifest)
        base = store.base_map()
        chamfer = None
        align_params = None
        if pose is None:
            with LogTime("Aligning session to base map", "INFO", timings, "align"):
                result = grid_search_align(base, clean, align_grid, seed, workers, tau)
            pose, chamfer, align_params = result.transform, result.chamfer, result.params.model_dump()
        aligned = transform(clean, pose).as_float32()

        with LogTime("Detecting changes", "INFO", timings, "change"):
            diff = detect_changes(base, aligned, change_params, timings=timings)
        with LogTime("Updating base map", "DEBUG", timings, "update"):
            new_base = forward_update_from(diff, settings.eps_rm)

        index = len(store)
        staging = _Staging(root, index, settings)
        try:
            staging.cloud(ND_FILE, diff.base_nd)
            staging.cloud(PD_FILE, diff.session_pd)
            staging.write(BOUNDARY_FILE, format_hull(hull_of(aligned)).encode("ascii"))
            staging.write(BASE_BOUNDARY_FILE, format_hull(hull_of(new_base)).encode("ascii"))
            staging.write(TRANSFORM_FILE, format_transform(pose).encode("ascii"))
            record = SessionRecord(
                index=index,
                id=session_id,
                committed=utcnow(),
                counts={"session": len(aligned), "base": len(new_base), **diff.counts()},
                transform=pose.as_row().tolist(),
                chamfer=chamfer,
                align_params=align_params,
                clean_bytes=len(encode_pcd(aligned, settings.encoding)),
            )
            staging.write(META_FILE, _dump(record))
            record = record.model_copy(update={"files": dict(staging.files)})
            manifest = store.manifest.model_copy(
                update={"base_map": staging.base(new_base), "sessions": [*store.manifest.sessions, record]}
            )
            atomic_write_bytes(root / MANIFEST, _dump(manifest))
        except BaseException:
            staging.discard()
            raise
        store.manifest = manifest
        staging.publish()

    logger.info(
        f"committed session {index} ({session_id}): {len(diff.base_nd)} ND, "
        f"{len(diff.session_pd)} PD, base map now {len(new_base)} points"
    )
    return SessionRef(index, session_id)


def commit(
    store: VersionStore,
    session: SessionMap,
    dyn_params: typing.Optional[DynRemovalParams] = None,
    align_grid: typing.Optional[typing.Sequence[AlignParams]] = None,
    change_params: typing.Optional[ChangeParams] = None,
    pose: typing.Optional[Pose] = None,
    seed: typing.Optional[int] = 0,
    workers: int = 1,
    timings: typing.Optional[dict] = None,
    tau: float = CHAMFER_TAU,
) -> SessionRef:
    """Remove dynamic points from a raw session, then commit its clean map."""
    static, _ = remove_dynamic(session, dyn_params, timings)
    clean = prepare_clean(static, store.settings)
    return commit_clean(store, clean, session.id, align_grid, change_params, pose, seed, workers, timings, tau)


def rollback(store: VersionStore, k: int) -> PointCloud:
    """
    Base map rolled back to just after session k was committed: for every
    later session, newest first, its negative differences are restored and
    its positive differences removed.
    """
    k = store.ref(k).index
    eps_rm = store.settings.eps_rm
    current = store.base_map()
    for i in range(len(store) - 1, k, -1):
        current = PointCloud.concat([current, store.nd(i)])
        current = point_subtract(current, store.pd(i), eps_rm)
    return current


def reconstruct(store: VersionStore, k: typing.Union[int, str, SessionRef]) -> PointCloud:
    """Clean map of session k: the rolled-back base map cropped to that session's footprint."""
    ref = store.resolve(k)
    with LogTime(f"Reconstructing session {ref.index}", "DEBUG"):
        return hull_crop(rollback(store, ref.index), store.boundary(ref.index))


def diff_between(
    store: VersionStore,
    a: typing.Union[int, str, SessionRef],
    b: typing.Union[int, str, SessionRef],
    change_params: typing.Optional[ChangeParams] = None,
    timings: typing.Optional[dict] = None,
) -> DiffResult:
    """Changes between two historic sessions, from their reconstructions."""
    ref_a, ref_b = store.resolve(a), store.resolve(b)
    map_a = reconstruct(store, ref_a)
    map_b = map_a if ref_a == ref_b else reconstruct(store, ref_b)
    return detect_changes(map_a, map_b, change_params, timings=timings)


def stats(store: VersionStore) -> StoreStats:
    """Bytes kept by the store against bytes every clean session would have taken."""
    base_bytes = (store.root / BASE_MAP).stat().st_size
    diff_bytes = 0
    boundary_bytes = 0
    for record in store.manifest.sessions:
        for name, ref in record.files.items():
            size = (store.root / ref.path).stat().st_size
            if name in (ND_FILE, PD_FILE):
                diff_bytes += size
            elif name in (BOUNDARY_FILE, BASE_BOUNDARY_FILE):
                boundary_bytes += size
    return StoreStats(len(store), base_bytes, diff_bytes, boundary_bytes, store.manifest.all_bytes)
