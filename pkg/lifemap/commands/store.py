from pathlib import Path

from lifemap.change.bev import BevGrid, bev_project, write_pgm
from lifemap.change.detect import knn_change, reference_plane
from lifemap.change.models import ChangeParams
from lifemap.commands.base import Command
from lifemap.commands.pipeline import add_dynamic_arguments, alignment_grid, chamfer_tau, dynamic_params
from lifemap.dynamic.pipeline import remove_dynamic
from lifemap.mapio import read_cloud, write_cloud
from lifemap.mapio.session import load_session
from lifemap.store.models import StoreSettings
from lifemap.store.store import (
    VersionStore,
    commit_clean,
    diff_between,
    init_store,
    parse_transform,
    prepare_clean,
    reconstruct,
    stats,
)


class StoreCommand(Command):
    """Base for commands working on a store directory."""

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("--store", type=Path, help="store directory (default from [store] root)")

    @property
    def store_root(self) -> Path:
        return self.args.store or Path(self.settings("store").get("root", "lifemap-store"))

    def store_settings(self) -> StoreSettings:
        config = self.settings("store")
        config.pop("root", None)
        # 0 in a config file turns down-sampling off
        if config.get("voxel_size") == 0:
            config["voxel_size"] = None
        try:
            settings = StoreSettings.model_validate(config)
        except ValueError as err:
            raise self.Error(f"invalid store settings: {err}")
        self.params["store"] = settings.model_dump(mode="json")
        return settings

    def open_store(self) -> VersionStore:
        return VersionStore.open(self.store_root)

    def clean_input(self, path: Path, settings: StoreSettings):
        """(session id, clean map) from a session directory or an already clean map file."""
        if path.is_dir():
            session = load_session(path)
            static, _ = remove_dynamic(session, dynamic_params(self), self.timings)
            return session.id, prepare_clean(static, settings)
        if not path.exists():
            raise FileNotFoundError(f"{path} does not exist")
        return path.stem, prepare_clean(read_cloud(path), settings)


def change_params(cmd: Command) -> ChangeParams:
    args = cmd.args
    layer_height = None
    if getattr(args, "multilayer", False):
        layer_height = float(cmd.settings("change").get("multilayer_height", 3.0))
    return cmd.load_params(
        ChangeParams,
        "change",
        r_coexist=getattr(args, "r_coexist", None),
        r_overlap=getattr(args, "r_overlap", None),
        bev_res=getattr(args, "bev_res", None),
        h_thr=getattr(args, "h_thr", None),
        mode=getattr(args, "mode", None),
        pairing=getattr(args, "pairing", None),
        layer_height=layer_height,
    )


def add_change_arguments(parser):
    group = parser.add_argument_group("change detection")
    group.add_argument("--r-coexist", type=float, help="coexist radius (m)")
    group.add_argument("--r-overlap", type=float, help="overlap radius (m)")
    group.add_argument("--bev-res", type=float, help="BEV pixel size (m)")
    group.add_argument("--h-thr", type=float, help="BEV height difference threshold (m)")
    group.add_argument("--mode", choices=("precise", "efficient"), help="BEV resolution range")
    group.add_argument("--pairing", choices=("symmetric", "literal"), help="reference map for positive differences")
    group.add_argument("--multilayer", action="store_true", help="compare BEV images per height slab")


class InitCommand(StoreCommand):
    """
    Create a store from the first session.

    Usage:
        lifemap init <session_dir | clean_map.pcd> [--store DIR]
    """

    name = "init"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("input", type=Path, help="session directory or clean map file")
        super().add_arguments(parser)
        parser.add_argument("--id", help="session id (default: from the input)")
        add_dynamic_arguments(parser)

    def func(self):
        settings = self.store_settings()
        session_id, clean = self.clean_input(self.args.input, settings)
        store = init_store(self.store_root, clean, settings, self.args.id or session_id)
        self.metrics.update({"sessions": len(store), "base_points": len(clean)})
        self.outputs.append(str(self.store_root))
        self.send_line(f"initialized {self.store_root} with {len(clean)} base points")


class CommitCommand(StoreCommand):
    """
    Clean, align and fold a new session into the store.

    Usage:
        lifemap commit <session_dir | clean_map.pcd> [--store DIR] [--grid fast|full|single]
    """

    name = "commit"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("input", type=Path, help="session directory or clean map file")
        super().add_arguments(parser)
        parser.add_argument("--id", help="session id (default: from the input)")
        parser.add_argument("--grid", choices=("fast", "full", "single"), help="alignment candidate grid")
        parser.add_argument("--transform", type=Path, help="skip alignment and use this 3x4 transform")
        add_dynamic_arguments(parser)
        add_change_arguments(parser)

    def func(self):
        store = self.open_store()
        params = change_params(self)
        pose = None
        grid = None
        tau = chamfer_tau(self)
        if self.args.transform:
            pose = parse_transform(self.args.transform.read_text())
        else:
            grid = alignment_grid(self)
        session_id, clean = self.clean_input(self.args.input, store.settings)
        ref = commit_clean(
            store, clean, self.args.id or session_id, grid, params, pose, self.seed, self.threads, self.timings, tau
        )
        record = store.manifest.sessions[ref.index]
        self.metrics.update({"session": ref.index, "id": ref.id, "chamfer": record.chamfer, **record.counts})
        self.outputs.append(str(self.store_root))
        self.send_line(
            f"committed session {ref.index} ({ref.id}): {record.counts['base_nd']} ND, "
            f"{record.counts['session_pd']} PD, base map {record.counts['base']} points"
        )


class CheckoutCommand(StoreCommand):
    """
    Reconstruct a historic session's clean map.

    Usage:
        lifemap checkout <t> [-o out.pcd] [--store DIR]
    """

    name = "checkout"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("session", help="session index or id")
        super().add_arguments(parser)
        parser.add_argument("-o", "--output", type=Path, help="output map (default: session_<t>.pcd)")

    def func(self):
        store = self.open_store()
        ref = store.resolve(self.args.session)
        cloud = reconstruct(store, ref)
        out = self.args.output or Path(f"session_{ref.index}.pcd")
        write_cloud(cloud, self.output(out))
        self.metrics.update({"session": ref.index, "id": ref.id, "points": len(cloud)})
        self.send_line(f"session {ref.index} ({ref.id}): {len(cloud)} points written to {out}")


class DiffCommand(StoreCommand):
    """
    Changes between two sessions.

    Usage:
        lifemap diff <a> <b> [-o out_dir] [--bev-dir DIR] [--store DIR]
        lifemap diff <map_a.pcd> <map_b.pcd> --method knn [--radius R]

    Writes base_nd.pcd (in a, gone in b), session_pd.pcd (new in b) and a
    summary.txt with the size of every set.
    """

    name = "diff"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("a", help="earlier session (index or id), or a map file with --method knn")
        parser.add_argument("b", help="later session (index or id), or a map file with --method knn")
        super().add_arguments(parser)
        parser.add_argument("-o", "--output", type=Path, help="output directory (default: diff_<a>_<b>)")
        parser.add_argument("--method", choices=("bev", "knn"), default="bev")
        parser.add_argument("--radius", type=float, help="knn method search radius (m)")
        parser.add_argument("--bev-dir", type=Path, help="also export both BEV images as PGM")
        add_change_arguments(parser)

    def _write(self, out: Path, counts: dict, base_nd, session_pd):
        out.mkdir(parents=True, exist_ok=True)
        write_cloud(base_nd, self.output(out / "base_nd.pcd"))
        write_cloud(session_pd, self.output(out / "session_pd.pcd"))
        summary = "".join(f"{k} {v}\n" for k, v in counts.items())
        self.output(out / "summary.txt").write_text(summary)
        self.metrics.update(counts)
        table = self.make_table("set", "points")
        for key, value in counts.items():
            table.add_row(key, str(value))
        self.send_rich(table)

    def func(self):
        if self.args.method == "knn":
            radius = self.args.radius or float(self.settings("change").get("r_coexist", 0.3))
            if radius <= 0:
                raise self.Error("--radius must be positive")
            self.params["diff"] = {"method": "knn", "radius": radius}
            map_a = read_cloud(Path(self.args.a))
            map_b = read_cloud(Path(self.args.b))
            base_nd = knn_change(map_a, map_b, radius)
            session_pd = knn_change(map_b, map_a, radius)
            out = self.args.output or Path(f"diff_{Path(self.args.a).stem}_{Path(self.args.b).stem}")
            self._write(out, {"base_nd": len(base_nd), "session_pd": len(session_pd)}, base_nd, session_pd)
            return

        store = self.open_store()
        params = change_params(self)
        ref_a, ref_b = store.resolve(self.args.a), store.resolve(self.args.b)
        result = diff_between(store, ref_a, ref_b, params, self.timings)
        out = self.args.output or Path(f"diff_{ref_a.index}_{ref_b.index}")
        self._write(out, result.counts(), result.base_nd, result.session_pd)

        if self.args.bev_dir:
            map_a = reconstruct(store, ref_a)
            map_b = reconstruct(store, ref_b)
            plane = reference_plane((map_a, map_b), params)
            grid = BevGrid.around(plane, params.bev_res, map_a, map_b)
            self.args.bev_dir.mkdir(parents=True, exist_ok=True)
            write_pgm(bev_project(map_a, plane, params.bev_res, grid), self.output(self.args.bev_dir / f"bev_{ref_a.index}.pgm"))
            write_pgm(bev_project(map_b, plane, params.bev_res, grid), self.output(self.args.bev_dir / f"bev_{ref_b.index}.pgm"))


class LogCommand(StoreCommand):
    """
    List committed sessions.

    Usage:
        lifemap log [--store DIR]
    """

    name = "log"

    def func(self):
        store = self.open_store()
        table = self.make_table("t", "id", "committed", "base points", "ND", "PD", "chamfer")
        sessions = []
        for record in store.log():
            counts = record.counts
            table.add_row(
                str(record.index),
                record.id,
                record.committed.isoformat(timespec="seconds"),
                str(counts.get("base", "")),
                str(counts.get("base_nd", "-")),
                str(counts.get("session_pd", "-")),
                "-" if record.chamfer is None else f"{record.chamfer:.4f}",
            )
            sessions.append({"index": record.index, "id": record.id, "counts": counts, "chamfer": record.chamfer})
        self.metrics["sessions"] = sessions
        self.send_rich(table)


class StatsCommand(StoreCommand):
    """
    Storage used by the store against keeping every clean session.

    Usage:
        lifemap stats [--store DIR]
    """

    name = "stats"

    def func(self):
        result = stats(self.open_store())
        self.metrics.update(result.as_dict())
        table = self.make_table("quantity", "value")
        for key, value in result.as_dict().items():
            if key == "efficiency_ratio":
                table.add_row(key, "undefined" if value is None else f"{100 * value:.1f}%")
            else:
                table.add_row(key, str(value))
        self.send_rich(table)
