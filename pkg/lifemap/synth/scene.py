import typing
from dataclasses import dataclass, field, replace

import numpy as np

from lifemap.errors import UnknownObject
from lifemap.geom.types import PlaneModel, PointCloud
from lifemap.utils import make_rng

CAR_SIZE = (4.0, 1.8, 1.5)
CAR_CLEARANCE = 0.3
TRUTH_SPACING = 0.1


def _vector(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64).reshape(3).copy()
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, slots=True, eq=False)
class Box:
    """Axis-aligned box; extents are full edge lengths."""

    id: str
    center: np.ndarray
    extents: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", _vector(self.center, "center"))
        object.__setattr__(self, "extents", _vector(self.extents, "extents"))
        if (self.extents <= 0).any():
            raise ValueError(f"box {self.id!r} needs positive extents, got {self.extents.tolist()}")

    @property
    def low(self) -> np.ndarray:
        return self.center - self.extents / 2

    @property
    def high(self) -> np.ndarray:
        return self.center + self.extents / 2


@dataclass(frozen=True, slots=True, eq=False)
class DynamicObject:
    """A box that moves: one center per frame."""

    id: str
    extents: np.ndarray
    centers: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "extents", _vector(self.extents, "extents"))
        centers = np.array(self.centers, dtype=np.float64).reshape(-1, 3)
        centers.flags.writeable = False
        object.__setattr__(self, "centers", centers)
        if (self.extents <= 0).any():
            raise ValueError(f"object {self.id!r} needs positive extents")

    def __len__(self):
        return len(self.centers)

    def at(self, frame: int) -> Box:
        if not 0 <= frame < len(self.centers):
            raise IndexError(f"object {self.id!r} has no pose for frame {frame}")
        return Box(self.id, self.centers[frame], self.extents)


@dataclass(frozen=True, slots=True, eq=False)
class Scene:
    ground: PlaneModel = field(default_factory=PlaneModel.horizontal)
    static_objects: tuple[Box, ...] = ()
    dynamic_objects: tuple[DynamicObject, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "static_objects", tuple(self.static_objects))
        object.__setattr__(self, "dynamic_objects", tuple(self.dynamic_objects))
        lengths = {len(d) for d in self.dynamic_objects}
        if len(lengths) > 1:
            raise ValueError(f"dynamic trajectories disagree on frame count: {sorted(lengths)}")
        ids = [b.id for b in self.static_objects] + [d.id for d in self.dynamic_objects]
        if len(ids) != len(set(ids)):
            raise ValueError("object ids must be unique")

    @property
    def frame_count(self) -> typing.Optional[int]:
        """Frames the dynamic trajectories cover; None for a static scene."""
        return len(self.dynamic_objects[0]) if self.dynamic_objects else None

    def boxes_at(self, frame: int) -> list[tuple[Box, bool]]:
        """Every box present at a frame with its dynamic flag."""
        boxes = [(b, False) for b in self.static_objects]
        boxes.extend((d.at(frame), True) for d in self.dynamic_objects)
        return boxes

    def static_by_id(self, object_id: str) -> Box:
        for box in self.static_objects:
            if box.id == object_id:
                return box
        raise UnknownObject(f"scene has no static object {object_id!r}")


@dataclass(frozen=True, slots=True, eq=False)
class ChangeTruth:
    """Surface samples of what a mutation added (positive) and removed (negative)."""

    positive: PointCloud
    negative: PointCloud


def sample_surface(box: Box, spacing: float = TRUTH_SPACING, ground: typing.Optional[PlaneModel] = None) -> PointCloud:
    """
    Points on the box faces at roughly the given spacing, at the centers of
    a regular grid on each face. A bottom face resting on the ground is
    skipped.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    low, high = box.low, box.high
    faces = []
    for axis in range(3):
        u_axis, v_axis = [a for a in range(3) if a != axis]
        nu = max(1, int(np.ceil(box.extents[u_axis] / spacing)))
        nv = max(1, int(np.ceil(box.extents[v_axis] / spacing)))
        u = low[u_axis] + (np.arange(nu) + 0.5) * box.extents[u_axis] / nu
        v = low[v_axis] + (np.arange(nv) + 0.5) * box.extents[v_axis] / nv
        uu, vv = np.meshgrid(u, v, indexing="ij")
        for side in (low[axis], high[axis]):
            face = np.empty((uu.size, 3))
            face[:, axis] = side
            face[:, u_axis] = uu.reshape(-1)
            face[:, v_axis] = vv.reshape(-1)
            faces.append(face)
    points = np.concatenate(faces)
    if ground is not None:
        points = points[np.abs(ground.signed_distance(points)) > 1e-9]
    return PointCloud(points)


def mutate_scene(
    scene: Scene,
    add: typing.Iterable[Box] = (),
    remove: typing.Iterable[str] = (),
    spacing: float = TRUTH_SPACING,
) -> tuple[Scene, ChangeTruth]:
    """
    Scene with static boxes added and removed, plus the surface points of
    those boxes as ground-truth positive and negative changes.

    Raises:
        UnknownObject: a removed id names no static object.
    """
    add = list(add)
    removed = [scene.static_by_id(i) for i in remove]
    removed_ids = {b.id for b in removed}
    kept = [b for b in scene.static_objects if b.id not in removed_ids]
    mutated = replace(scene, static_objects=(*kept, *add))
    truth = ChangeTruth(
        positive=PointCloud.concat(sample_surface(b, spacing, scene.ground) for b in add),
        negative=PointCloud.concat(sample_surface(b, spacing, scene.ground) for b in removed),
    )
    return mutated, truth


def car(object_id: str, x: float, y: float) -> Box:
    """A parked car floating at the usual ground clearance."""
    length, width, height = CAR_SIZE
    return Box(object_id, (x, y, CAR_CLEARANCE + height / 2), (length, width, height))


def default_scene(frames: int, step: float = 2.0, seed: typing.Optional[int] = 0) -> Scene:
    """
    A street along x: building blocks on both sides, parked cars, poles,
    one car driving the opposite way and a pedestrian crossing. The
    dynamic objects cover the given number of frames of a sensor moving
    step meters per frame from x = -step * frames / 2.
    """
    rng = make_rng(seed)
    half = step * frames / 2
    statics = []
    block = 10.0
    for side, y in (("n", 14.0), ("s", -14.0)):
        for i, x in enumerate(np.arange(-half - 10, half + 10, block + 2)):
            height = float(rng.uniform(5.0, 12.0))
            depth = float(rng.uniform(5.0, 8.0))
            statics.append(Box(f"building-{side}{i}", (x + block / 2, y + np.sign(y) * depth / 2, height / 2), (block, depth, height)))
    for i, x in enumerate(np.arange(-half + 3, half - 3, 9.0)):
        statics.append(car(f"car-{i}", float(x), 5.0 if i % 2 else -5.0))
    for i, x in enumerate(np.arange(-half, half, 12.0)):
        statics.append(Box(f"pole-{i}", (float(x) + 6.0, 8.0, 2.0), (0.3, 0.3, 4.0)))

    t = np.arange(frames)
    length, width, height = CAR_SIZE
    oncoming = np.stack([half - 1.5 * step * t, np.full(frames, 1.8), np.full(frames, CAR_CLEARANCE + height / 2)], axis=1)
    walker = np.stack([np.full(frames, 4.0), np.minimum(-9.0 + 1.2 * t, 9.0), np.full(frames, 0.9)], axis=1)
    dynamics = (
        DynamicObject("moving-car", (length, width, height), oncoming),
        DynamicObject("pedestrian", (0.5, 0.5, 1.8), walker),
    )
    return Scene(PlaneModel.horizontal(), tuple(statics), dynamics)


def street_mutation(scene: Scene, number: int) -> tuple[list[Box], list[str]]:
    """
    The number-th change to a default street: one parked car goes and a
    new one appears 4.5 m further along on the other side of the street.
    """
    cars = sorted((b for b in scene.static_objects if b.id.startswith("car-")), key=lambda b: b.center[0])
    if not cars:
        raise UnknownObject("scene has no parked cars left to move")
    gone = cars[(number - 1) % len(cars)]
    x, y, _ = gone.center
    return [car(f"car-new-{number}", float(x) + 4.5, float(-y))], [gone.id]
