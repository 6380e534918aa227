import typing

import numpy as np
from pydantic import BaseModel, Field

from lifemap.geom.types import Label, PointCloud, Pose
from lifemap.mapio.session import Frame, SessionMap, assemble_map
from lifemap.synth.scene import Scene
from lifemap.utils import make_rng

# hits closer than this to the ray origin are ignored
MIN_RANGE = 1e-6

NO_HIT = -1


class SimConfig(BaseModel):
    horizontal_rays: int = Field(360, ge=1)
    vertical_rays: int = Field(16, ge=1)
    vertical_fov: float = Field(30.0, gt=0, le=180, description="degrees, symmetric about the horizon")
    max_range: float = Field(50.0, gt=0)
    noise_sigma: float = Field(0.005, ge=0)
    seed: typing.Optional[int] = 0


def ray_directions(cfg: SimConfig) -> np.ndarray:
    """Unit ray directions in the sensor frame, elevation rings outermost."""
    azimuth = np.linspace(0.0, 2 * np.pi, cfg.horizontal_rays, endpoint=False)
    half = np.radians(cfg.vertical_fov) / 2
    elevation = np.linspace(-half, half, cfg.vertical_rays) if cfg.vertical_rays > 1 else np.zeros(1)
    el, az = np.meshgrid(elevation, azimuth, indexing="ij")
    el, az = el.reshape(-1), az.reshape(-1)
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)


def _box_entry(origin: np.ndarray, directions: np.ndarray, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    """Ray parameter where each ray enters the box; inf for misses."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t1 = (low - origin) * inv
        t2 = (high - origin) * inv
    t_near = np.minimum(t1, t2).max(axis=1)
    t_far = np.maximum(t1, t2).min(axis=1)
    hit = (t_near <= t_far) & (t_near > MIN_RANGE)
    return np.where(hit, t_near, np.inf)


def cast_rays(
    scene: Scene,
    frame: int,
    origin,
    directions: np.ndarray,
    max_range: float,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Nearest surface along each world-frame ray.

    Returns:
        (range, label): range is inf and label NO_HIT where nothing lies
        within max_range; label is Label.DYNAMIC for hits on dynamic boxes.
    """
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    n = len(directions)

    normal, offset = scene.ground.normal, scene.ground.offset
    facing = directions @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = -(origin @ normal + offset) / facing
    best = np.where((facing < 0) & (t_ground > MIN_RANGE), t_ground, np.inf)
    label = np.full(n, int(Label.STATIC), dtype=np.int8)

    for box, dynamic in scene.boxes_at(frame):
        t_box = _box_entry(origin, directions, box.low, box.high)
        closer = t_box < best
        best[closer] = t_box[closer]
        label[closer] = int(Label.DYNAMIC) if dynamic else int(Label.STATIC)

    missed = best > max_range
    best[missed] = np.inf
    label[missed] = NO_HIT
    return best, label


def raycast_scan(
    scene: Scene,
    frame_index: int,
    pose: Pose,
    cfg: SimConfig,
    rng: typing.Optional[np.random.Generator] = None,
) -> PointCloud:
    """
    One labeled scan in the sensor frame. Returns are perturbed along their
    ray by Gaussian range noise; rays without a return produce no point.
    """
    rng = rng if rng is not None else make_rng(cfg.seed, frame_index)
    local = ray_directions(cfg)
    ranges, labels = cast_rays(scene, frame_index, pose.translation, pose.apply(local) - pose.translation, cfg.max_range)
    hit = labels != NO_HIT
    ranges = ranges[hit]
    if cfg.noise_sigma > 0:
        ranges = ranges + rng.normal(0.0, cfg.noise_sigma, len(ranges))
    return PointCloud(local[hit] * ranges[:, None], labels[hit].astype(np.uint8))


def straight_trajectory(frames: int, step: float = 2.0, height: float = 1.8, y: float = 0.0) -> list[Pose]:
    """Sensor driving along +x, centered on the origin."""
    if frames < 1:
        raise ValueError("a trajectory needs at least one frame")
    x = -step * frames / 2 + step * np.arange(frames)
    return [Pose(translation=(float(xi), y, height)) for xi in x]


def make_session(
    scene: Scene,
    trajectory: typing.Sequence[Pose],
    cfg: typing.Optional[SimConfig] = None,
    session_id: str = "synthetic",
) -> tuple[SessionMap, PointCloud]:
    """
    Simulate one scan per pose. Returns the session (scans carry truth
    labels) and its assembled, labeled world-frame map.
    """
    cfg = cfg or SimConfig()
    if not trajectory:
        raise ValueError("a session needs a non-empty trajectory")
    if scene.frame_count is not None and scene.frame_count < len(trajectory):
        raise ValueError(f"scene moves for {scene.frame_count} frames but the trajectory has {len(trajectory)}")
    frames = tuple(
        Frame(pose, raycast_scan(scene, i, pose, cfg), float(i)) for i, pose in enumerate(trajectory)
    )
    session = SessionMap(session_id, frames, {"simulated": True, "seed": cfg.seed})
    return session, assemble_map(session)
