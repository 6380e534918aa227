from pathlib import Path

from lifemap.commands.base import Command
from lifemap.geom.types import Label
from lifemap.mapio.session import Frame, SessionMap, save_session
from lifemap.synth.lidar import SimConfig, make_session, straight_trajectory
from lifemap.synth.scene import default_scene, mutate_scene, street_mutation


class SynthCommand(Command):
    """
    Simulate sessions of a synthetic street.

    Usage:
        lifemap synth <out_dir> [--sessions N] [--frames F]

    Writes out_dir/session_<i> for every session. Session 0 sees the
    street as generated; every later one sees it after one parked car was
    removed and another added. Each session directory holds the scans,
    poses.txt, truth.pcd (the labeled assembled map) and, from session 1
    on, truth_pd.pcd and truth_nd.pcd with the surfaces that changed
    since the previous session.
    """

    name = "synth"

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("output", type=Path, help="output directory")
        parser.add_argument("--sessions", type=int, help="number of sessions")
        parser.add_argument("--frames", type=int, help="scans per session")
        parser.add_argument("--step", type=float, help="sensor travel per scan (m)")
        parser.add_argument("--noise", type=float, help="range noise sigma (m)")

    def func(self):
        config = self.settings("synth")
        sessions = self.args.sessions or int(config.get("sessions", 1))
        frames = self.args.frames or int(config.get("frames", 20))
        step = self.args.step or float(config.get("step", 2.0))
        if sessions < 1 or frames < 1:
            raise self.Error("--sessions and --frames must be at least 1")
        if step <= 0:
            raise self.Error("--step must be positive")
        cfg = self.load_params(SimConfig, "synth", noise_sigma=self.args.noise)
        self.params["synth"].update({"sessions": sessions, "frames": frames, "step": step})

        scene = default_scene(frames, step, cfg.seed)
        trajectory = straight_trajectory(frames, step)
        for index in range(sessions):
            extras = dict()
            if index:
                add, remove = street_mutation(scene, index)
                scene, truth = mutate_scene(scene, add, remove)
                extras.update({"truth_pd": truth.positive, "truth_nd": truth.negative})
            session_cfg = cfg.model_copy(update={"seed": None if cfg.seed is None else cfg.seed + index})
            session, labeled = make_session(scene, trajectory, session_cfg, f"session_{index}")
            extras["truth"] = labeled

            # scans go to disk unlabeled; the labels live in truth.pcd
            unlabeled = SessionMap(
                session.id,
                tuple(Frame(f.pose, f.scan.without_labels(), f.timestamp) for f in session.frames),
                session.metadata,
            )
            out = self.args.output / session.id
            save_session(unlabeled, out, extras)
            self.output(out)
            dynamic = int((labeled.labels == int(Label.DYNAMIC)).sum())
            self.metrics[session.id] = {name: len(cloud) for name, cloud in extras.items()}
            self.metrics[session.id]["dynamic"] = dynamic
            self.send_line(f"{session.id}: {frames} scans, {len(labeled)} points, {dynamic} dynamic")
