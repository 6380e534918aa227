import hashlib
from pathlib import Path

import numpy as np
import pytest

from lifemap.alignment import AlignParams
from lifemap.change import ChangeParams, eval_change_pr
from lifemap.dynamic import DynRemovalParams, remove_dynamic
from lifemap.errors import (
    AlignmentFailed,
    ChecksumMismatch,
    NoSuchSession,
    StoreCorrupt,
    StoreExists,
    StoreLocked,
)
from lifemap.geom import PointCloud, Pose
from lifemap.store import (
    StoreSettings,
    VersionStore,
    commit,
    commit_clean,
    diff_between,
    efficiency_ratio,
    forward_update,
    init_store,
    point_subtract,
    prepare_clean,
    reconstruct,
    recover,
    rollback,
    stats,
)
from lifemap.store import store as store_module
from lifemap.synth import Box, Scene, SimConfig, make_session, straight_trajectory
from tests.conftest import box_surface, grid_plane

CHANGES = ChangeParams(r_overlap=3.0)
LIGHT = AlignParams(k_r=1.0, pc_ds=0.2, n_n=30, fd_r=3.0, ndt_r=1.0, ndt_ss=5.0)

GROUND = grid_plane(100, spacing=0.1) + [0.05, 0.05, 0.0]
BOX_A = box_surface((4.0, 4.0, 0.6), (6.0, 5.0, 2.0))
BOX_B = box_surface((1.0, 1.0, 0.6), (2.0, 2.0, 1.6))
BOX_C = box_surface((7.0, 1.0, 0.6), (8.0, 2.0, 1.8))
BOX_D = box_surface((7.0, 7.0, 0.6), (8.5, 8.0, 1.5))


def _cloud(*parts) -> PointCloud:
    return PointCloud(np.vstack(parts))


def _rows(cloud: PointCloud) -> set:
    return set(map(tuple, cloud.as_float32().points.tolist()))


def _snapshot(root: Path) -> dict:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture
def store(tmp_path) -> VersionStore:
    """Three sessions: box A, then A replaced by B, then C added."""
    store = init_store(tmp_path / "store", _cloud(GROUND, BOX_A), session_id="s0")
    commit_clean(store, _cloud(GROUND, BOX_B), "s1", change_params=CHANGES, pose=Pose.identity())
    commit_clean(store, _cloud(GROUND, BOX_B, BOX_C), "s2", change_params=CHANGES, pose=Pose.identity())
    return store


# ============================================================
# Base map algebra
# ============================================================


class TestAlgebra:
    def test_point_subtract(self):
        a = PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]]))
        b = PointCloud(np.array([[1.0, 0, 0.0005]]))
        assert point_subtract(a, b).points.tolist() == [[0.0, 0, 0], [2.0, 0, 0]]
        assert point_subtract(a, PointCloud.empty()) is a

    def test_point_subtract_needs_positive_eps(self):
        with pytest.raises(ValueError):
            point_subtract(PointCloud.empty(), PointCloud.empty(), 0.0)

    def test_forward_update(self):
        def p(*xs):
            return PointCloud(np.array([[x, 0.0, 0.0] for x in xs]).reshape(-1, 3))

        merged = forward_update(p(0, 1), p(2, 3), p(4), p(10), p(11), p(3))
        assert sorted(merged.points[:, 0].tolist()) == [0, 1, 2, 4, 10, 11]

    def test_efficiency_ratio(self):
        assert efficiency_ratio(45.4, 27.2) == pytest.approx(0.4009, abs=1e-4)
        assert efficiency_ratio(0, 10) is None

    def test_prepare_clean(self, rng):
        cloud = PointCloud(rng.uniform(0, 1, (2000, 3)), np.zeros(2000, dtype=np.uint8))
        clean = prepare_clean(cloud, StoreSettings(voxel_size=0.5))
        assert not clean.is_labeled
        assert len(clean) <= 8
        assert prepare_clean(cloud, StoreSettings(voxel_size=None)).points.shape == (2000, 3)


# ============================================================
# Store lifecycle
# ============================================================


class TestStore:
    def test_layout(self, store):
        assert len(store) == 3
        assert [r.id for r in store.log()] == ["s0", "s1", "s2"]
        session_dirs = store.root / "sessions"
        assert not (session_dirs / "0" / "nd.pcd").exists()
        assert len(list(session_dirs.glob("*/nd.pcd"))) == 2
        assert len(list(session_dirs.glob("*/pd.pcd"))) == 2
        for index in range(3):
            assert (session_dirs / str(index) / "boundary.txt").is_file()
            assert (session_dirs / str(index) / "base_boundary.txt").is_file()
        assert not (store.root / ".lock").exists()
        assert not (store.root / ".staging").exists()

    def test_recorded_differences(self, store):
        assert _rows(store.nd(1)) == _rows(PointCloud(BOX_A))
        assert _rows(store.pd(1)) == _rows(PointCloud(BOX_B))
        assert store.nd(2).is_empty
        assert _rows(store.pd(2)) == _rows(PointCloud(BOX_C))

    def test_base_map(self, store):
        assert _rows(store.base_map()) == _rows(_cloud(GROUND, BOX_B, BOX_C))

    def test_reopen(self, store):
        again = VersionStore.open(store.root)
        assert again.latest.id == "s2"
        assert np.allclose(again.transform(1).as_matrix4(), np.eye(4))
        assert again.manifest.sessions[1].counts["base_nd"] == len(BOX_A)

    def test_init_twice(self, store):
        with pytest.raises(StoreExists):
            init_store(store.root, _cloud(GROUND))

    def test_open_missing(self, tmp_path):
        with pytest.raises(StoreCorrupt):
            VersionStore.open(tmp_path)

    def test_locked_store(self, store):
        (store.root / ".lock").write_text("1")
        with pytest.raises(StoreLocked):
            VersionStore.open(store.root)
        with pytest.raises(StoreLocked):
            commit_clean(store, _cloud(GROUND), "s3", pose=Pose.identity())
        assert len(VersionStore(store.root, store.manifest)) == 3

    def test_tampered_base_map(self, store):
        path = store.root / "base_map.pcd"
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ChecksumMismatch):
            VersionStore.open(store.root).base_map()

    def test_failed_commit_changes_nothing(self, store):
        before = _snapshot(store.root)
        tiny = PointCloud(np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]]))
        with pytest.raises(AlignmentFailed):
            commit_clean(store, tiny, "bad", align_grid=[LIGHT])
        assert _snapshot(store.root) == before
        assert len(VersionStore.open(store.root)) == 3

    def test_manifest_write_failure_changes_nothing(self, store, monkeypatch):
        before = _snapshot(store.root)

        def fail(path, data):
            raise OSError("disk full")

        monkeypatch.setattr(store_module, "atomic_write_bytes", fail)
        with pytest.raises(OSError):
            commit_clean(store, _cloud(GROUND, BOX_C), "s3", change_params=CHANGES, pose=Pose.identity())
        assert _snapshot(store.root) == before
        assert not (store.root / ".staging").exists()

    def test_interrupted_publish_is_finished_on_open(self, store, monkeypatch):
        def crash(self):
            raise OSError("power cut")

        monkeypatch.setattr(store_module._Staging, "publish", crash)
        with pytest.raises(OSError):
            commit_clean(store, _cloud(GROUND, BOX_C), "s3", change_params=CHANGES, pose=Pose.identity())
        assert (store.root / ".staging").exists()

        again = VersionStore.open(store.root)
        assert len(again) == 4
        assert not (store.root / ".staging").exists()
        assert _rows(again.base_map()) == _rows(_cloud(GROUND, BOX_C))
        assert _rows(again.nd(3)) == _rows(PointCloud(BOX_B))

    def test_next_commit_finishes_interrupted_publish(self, store, monkeypatch):
        with monkeypatch.context() as patched:
            patched.setattr(store_module._Staging, "publish", lambda self: None)
            commit_clean(store, _cloud(GROUND, BOX_C), "s3", change_params=CHANGES, pose=Pose.identity())
        commit_clean(store, _cloud(GROUND, BOX_C, BOX_D), "s4", change_params=CHANGES, pose=Pose.identity())
        assert [r.id for r in store.log()] == ["s0", "s1", "s2", "s3", "s4"]
        assert _rows(store.base_map()) == _rows(_cloud(GROUND, BOX_C, BOX_D))
        assert _rows(rollback(store, 3)) == _rows(_cloud(GROUND, BOX_C))

    def test_uncommitted_staging_is_discarded(self, store):
        staged = store.root / ".staging" / "session"
        staged.mkdir(parents=True)
        (staged / "meta.json").write_bytes(b"{}")
        assert recover(store.root, store.manifest) is False
        assert not (store.root / ".staging").exists()

        staged.mkdir(parents=True)
        again = VersionStore.open(store.root)
        assert len(again) == 3
        assert not (store.root / ".staging").exists()

    def test_orphaned_session_dir_does_not_block(self, store):
        orphan = store.root / "sessions" / "3"
        orphan.mkdir()
        (orphan / "nd.pcd").write_bytes(b"junk")
        commit_clean(store, _cloud(GROUND, BOX_C), "s3", change_params=CHANGES, pose=Pose.identity())
        assert _rows(store.nd(3)) == _rows(PointCloud(BOX_B))
        assert _rows(VersionStore.open(store.root).base_map()) == _rows(_cloud(GROUND, BOX_C))


# ============================================================
# Rollback and reconstruction
# ============================================================


class TestRollback:
    def test_latest_is_base(self, store):
        assert _rows(rollback(store, 2)) == _rows(store.base_map())

    def test_one_back(self, store):
        assert _rows(rollback(store, 1)) == _rows(_cloud(GROUND, BOX_B))

    def test_to_first_session(self, store):
        assert _rows(rollback(store, 0)) == _rows(_cloud(GROUND, BOX_A))

    def test_reconstruct_by_id(self, store):
        assert _rows(reconstruct(store, "s0")) == _rows(_cloud(GROUND, BOX_A))
        assert _rows(reconstruct(store, "1")) == _rows(_cloud(GROUND, BOX_B))

    def test_no_such_session(self, store):
        with pytest.raises(NoSuchSession):
            reconstruct(store, 99)
        with pytest.raises(NoSuchSession):
            reconstruct(store, "missing")

    def test_reconstruct_crops_to_footprint(self, tmp_path):
        store = init_store(tmp_path / "store", _cloud(GROUND))
        far = grid_plane(20, spacing=0.1) + [30.0, 0.0, 0.0]
        commit_clean(store, _cloud(GROUND, far), "wider", change_params=CHANGES, pose=Pose.identity())
        assert _rows(reconstruct(store, 0)) == _rows(_cloud(GROUND))
        assert len(reconstruct(store, 1)) == len(GROUND) + len(far)

    def test_diff_between(self, store):
        diff = diff_between(store, 0, 1, CHANGES)
        assert _rows(diff.base_nd) == _rows(PointCloud(BOX_A))
        assert _rows(diff.session_pd) == _rows(PointCloud(BOX_B))

    def test_diff_with_itself(self, store):
        diff = diff_between(store, 2, "s2")
        assert diff.base_nd.is_empty and diff.session_pd.is_empty


class TestStats:
    def test_counts(self, store):
        result = stats(store)
        assert result.sessions == 3
        assert result.all_bytes == sum(r.clean_bytes for r in store.log())
        assert result.base_bytes == (store.root / "base_map.pcd").stat().st_size
        assert result.ours_bytes == result.base_bytes + result.diff_bytes + result.boundary_bytes
        assert result.ratio == pytest.approx(1 - result.ours_bytes / result.all_bytes)
        assert set(result.as_dict()) >= {"ours_bytes", "all_bytes", "efficiency_ratio"}

    def test_ratio_grows_with_history(self, tmp_path):
        corners = [(1.0, 1.0), (1.0, 8.0), (8.0, 8.0), (8.0, 1.0), (4.0, 1.0), (1.0, 4.0), (8.0, 4.0)]
        small = [box_surface((x, y, 0.6), (x + 0.5, y + 0.5, 1.1)) for x, y in corners]
        store = init_store(tmp_path / "store", _cloud(GROUND, small[0]))
        ratios = []
        for t in range(1, 7):
            commit_clean(store, _cloud(GROUND, small[t]), f"s{t}", change_params=CHANGES, pose=Pose.identity())
            ratios.append(stats(store).ratio)
        later = ratios[1:]
        assert min(later) >= 0.6
        assert all(b >= a for a, b in zip(later, later[1:]))


# ============================================================
# Replaying a history
# ============================================================


def _agrees(detected: PointCloud, stored: PointCloud):
    precision, recall = eval_change_pr(detected, stored, 0.2)
    if len(detected):
        assert precision >= 0.9
    if len(stored):
        assert recall >= 0.9


class TestHistory:
    def test_five_commits_against_shadow(self, tmp_path):
        shadow = [
            _cloud(GROUND, BOX_A),
            _cloud(GROUND, BOX_B),
            _cloud(GROUND, BOX_B, BOX_C),
            _cloud(GROUND, BOX_C),
            _cloud(GROUND, BOX_C, BOX_D),
            _cloud(GROUND, BOX_D, BOX_A),
        ]
        store = init_store(tmp_path / "store", shadow[0], session_id="s0")
        for t, session in enumerate(shadow[1:], start=1):
            commit_clean(store, session, f"s{t}", change_params=CHANGES, pose=Pose.identity())
        assert len(store) == 6

        for t, expected in enumerate(shadow):
            assert _rows(rollback(store, t)) == _rows(expected)
        for t in range(5):
            diff = diff_between(store, t, t + 1, CHANGES)
            _agrees(diff.base_nd, store.nd(t + 1))
            _agrees(diff.session_pd, store.pd(t + 1))
        latest = store.latest.index
        assert _rows(reconstruct(store, latest)) == _rows(store.base_map())
        assert _rows(reconstruct(store, latest)) == _rows(shadow[-1])

    @pytest.mark.slow
    def test_commit_raw_session(self, tmp_path):
        walls = (
            Box("wall-n", (0.0, 9.0, 2.0), (30.0, 1.0, 4.0)),
            Box("wall-s", (0.0, -9.0, 2.0), (30.0, 1.0, 4.0)),
        )
        kiosk = Box("kiosk", (3.0, 4.0, 1.25), (2.0, 2.0, 2.5))
        sim = SimConfig(horizontal_rays=240, vertical_rays=16, vertical_fov=40.0, max_range=30.0, seed=3)
        trajectory = straight_trajectory(4, step=1.0)
        dyn = DynRemovalParams(submap_window=10)

        before, _ = make_session(Scene(static_objects=walls), trajectory, sim, session_id="a")
        static, _ = remove_dynamic(before, dyn)
        store = init_store(tmp_path / "store", prepare_clean(static, StoreSettings()), session_id="a")
        after, _ = make_session(Scene(static_objects=(*walls, kiosk)), trajectory, sim, session_id="b")
        ref = commit(store, after, dyn, change_params=CHANGES, pose=Pose.identity())

        assert ref.id == "b" and len(store) == 2
        pd = store.pd(1).points
        near_kiosk = np.all((pd >= kiosk.low - 0.2) & (pd <= kiosk.high + 0.2), axis=1)
        assert len(pd) > 0
        assert near_kiosk.mean() >= 0.9
        base = store.base_map().points
        assert np.all((base >= kiosk.low - 0.2) & (base <= kiosk.high + 0.2), axis=1).any()
