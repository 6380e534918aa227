import csv
from pathlib import Path

from loguru import logger

from lifemap.alignment.models import AlignParams, grid_by_name
from lifemap.alignment.search import CHAMFER_TAU, grid_search_align
from lifemap.change.metrics import eval_change_pr
from lifemap.commands.base import Command
from lifemap.dynamic.metrics import evaluate_pr_rr_f1
from lifemap.dynamic.models import DynRemovalParams
from lifemap.dynamic.pipeline import remove_dynamic_labeled
from lifemap.errors import AlignmentFailed
from lifemap.geom.filters import transform
from lifemap.mapio import read_cloud, write_cloud
from lifemap.mapio.poses import read_kitti_poses, write_poses
from lifemap.mapio.session import load_session
from lifemap.store.store import format_transform


def _fmt(value) -> str:
    return "undefined" if value is None else f"{value:.4f}"


def dynamic_params(cmd: Command) -> DynRemovalParams:
    args = cmd.args
    return cmd.load_params(
        DynRemovalParams,
        "dynamic",
        voxel_size=getattr(args, "voxel_size", None),
        max_range=getattr(args, "max_range", None),
        submap_window=getattr(args, "submap_window", None),
        plane_ratio_thr=getattr(args, "plane_ratio", None),
        height_cutoff=getattr(args, "height_cutoff", None),
    )


def add_dynamic_arguments(parser):
    group = parser.add_argument_group("dynamic removal")
    group.add_argument("--voxel-size", type=float, help="occupancy voxel edge (m)")
    group.add_argument("--max-range", type=float, help="ignore returns beyond this range (m)")
    group.add_argument("--submap-window", type=int, help="frames per plane-restoration submap")
    group.add_argument("--plane-ratio", type=float, help="minimum inlier ratio of restored planes")
    group.add_argument("--height-cutoff", type=float, help="points above this z are always kept")


def alignment_grid(cmd: Command) -> list[AlignParams]:
    """The candidate grid named by --grid or the config; 'single' is one candidate from the config table."""
    config = cmd.settings("alignment")
    name = getattr(cmd.args, "grid", None) or config.get("grid", "fast")
    if name == "single":
        params = cmd.load_params(AlignParams, "alignment")
        grid = [params]
    else:
        try:
            grid = grid_by_name(name)
        except ValueError as err:
            raise cmd.Error(str(err))
    cmd.params["alignment_grid"] = {"name": name, "candidates": len(grid)}
    return grid


def chamfer_tau(cmd: Command) -> float:
    """[alignment] tau, the Chamfer truncation used to rank candidates."""
    tau = float(cmd.settings("alignment").get("tau", CHAMFER_TAU))
    if tau <= 0:
        raise cmd.Error(f"[alignment] tau must be positive, got {tau:g}")
    cmd.params["tau"] = tau
    return tau


def write_stage_log(path, stage_log):
    with open(path, "w", newline="") as f:
        writer = None
        for entry in stage_log:
            row = entry.as_row()
            if writer is None:
                writer = csv.DictWriter(f, fieldnames=list(row.keys()))
                writer.writeheader()
            writer.writerow(row)


class CleanCommand(Command):
    """
    Remove dynamic points from a session.

    Usage:
        lifemap clean <session_dir> -o <out_dir>

    Writes static.pcd (the clean map), dynamic.pcd and labels.pcd (every
    assembled point with its final label).
    """

    name = "clean"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("session", type=Path, help="session directory")
        parser.add_argument("-o", "--output", type=Path, required=True, help="output directory")
        add_dynamic_arguments(parser)

    def func(self):
        params = dynamic_params(self)
        session = load_session(self.args.session)
        result = remove_dynamic_labeled(session, params, self.timings)

        out = self.args.output
        out.mkdir(parents=True, exist_ok=True)
        write_cloud(result.static_map, self.output(out / "static.pcd"))
        write_cloud(result.dynamic_map, self.output(out / "dynamic.pcd"))
        write_cloud(result.labeled, self.output(out / "labels.pcd"))

        self.metrics.update(result.counts)
        self.send_line(
            f"{session.id}: {result.counts['static']} static, {result.counts['dynamic']} dynamic, "
            f"{result.counts['outliers']} outliers of {result.counts['points']} points"
        )


class AlignCommand(Command):
    """
    Align the second map onto the first.

    Usage:
        lifemap align <map_a> <map_b> [-o aligned.pcd] [--grid fast|full|single]
    """

    name = "align"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("map_a", type=Path, help="target map (.pcd or .ply)")
        parser.add_argument("map_b", type=Path, help="map to move onto map_a")
        parser.add_argument("-o", "--output", type=Path, help="write map_b transformed into map_a's frame")
        parser.add_argument("--grid", choices=("fast", "full", "single"), help="candidate grid")
        parser.add_argument("--transform-out", type=Path, help="write the 3x4 transform")
        parser.add_argument("--stage-log", type=Path, help="write the per-candidate log as CSV")

    def func(self):
        grid = alignment_grid(self)
        map_a = read_cloud(self.args.map_a)
        map_b = read_cloud(self.args.map_b)
        tau = chamfer_tau(self)
        try:
            result = grid_search_align(map_a, map_b, grid, self.seed, self.threads, tau)
        except AlignmentFailed as err:
            self.metrics["candidates"] = len(err.stage_log)
            self.metrics["succeeded"] = 0
            if self.args.stage_log:
                write_stage_log(self.output(self.args.stage_log), err.stage_log)
            raise

        if self.args.stage_log:
            write_stage_log(self.output(self.args.stage_log), result.stage_log)
        if self.args.transform_out:
            self.output(self.args.transform_out).write_text(format_transform(result.transform))
        if self.args.output:
            write_cloud(transform(map_b, result.transform), self.output(self.args.output))

        self.metrics.update(
            {
                "chamfer": result.chamfer,
                "transform": result.transform.as_row().tolist(),
                "best": result.params.model_dump(),
                "candidates": len(result.stage_log),
                "succeeded": len(result.succeeded),
            }
        )
        self.send_line(f"best candidate: {result.params.label()}")
        self.send_line(f"chamfer distance: {result.chamfer:.6f}")
        self.send_line(format_transform(result.transform).rstrip())


class EvalCommand(Command):
    """
    Score results against ground truth.

    Usage:
        lifemap eval dynamic <labels.pcd> <truth.pcd>
        lifemap eval change <detected.pcd> <truth.pcd> [--radius R]

    dynamic reports preservation rate, rejection rate and F1 over two
    labeled maps of the same points; change reports precision and recall
    of detected change points.
    """

    name = "eval"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("kind", choices=("dynamic", "change"))
        parser.add_argument("predicted", type=Path)
        parser.add_argument("truth", type=Path)
        parser.add_argument("--radius", type=float, default=None, help="change match radius (m)")

    def func(self):
        predicted = read_cloud(self.args.predicted)
        truth = read_cloud(self.args.truth)
        table = self.make_table("metric", "value")

        if self.args.kind == "dynamic":
            if predicted.labels is None or truth.labels is None:
                raise self.Error("both files must carry a label field")
            if len(predicted) != len(truth):
                raise self.Error(f"point counts differ: {len(predicted)} predicted, {len(truth)} truth")
            pr, rr, f1 = evaluate_pr_rr_f1(predicted, truth)
            self.metrics.update({"pr": pr, "rr": rr, "f1": f1})
        else:
            radius = self.args.radius or float(self.settings("change").get("match_radius", 0.1))
            if radius <= 0:
                raise self.Error("--radius must be positive")
            self.params["eval"] = {"match_radius": radius}
            precision, recall = eval_change_pr(predicted, truth, radius)
            self.metrics.update({"precision": precision, "recall": recall})

        for key, value in self.metrics.items():
            table.add_row(key, _fmt(value))
        self.send_rich(table)


class ConvertPosesCommand(Command):
    """
    Convert a KITTI pose file (12 numbers per line) to timestamped quaternion poses.

    Usage:
        lifemap convert-poses <kitti.txt> <poses.txt>
    """

    name = "convert-poses"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("kitti", type=Path)
        parser.add_argument("output", type=Path)

    def func(self):
        poses = read_kitti_poses(self.args.kitti)
        write_poses(self.output(self.args.output), poses)
        self.metrics["poses"] = len(poses)
        logger.debug(f"converted {len(poses)} poses from {self.args.kitti}")
        self.send_line(f"wrote {len(poses)} poses to {self.args.output}")
