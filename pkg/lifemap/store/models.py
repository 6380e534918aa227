import typing
from dataclasses import dataclass
from datetime import datetime

from pydantic import BaseModel, Field

from lifemap.mapio.session import FileRef

SCHEMA_VERSION = 1


class StoreSettings(BaseModel):
    # cell for down-sampling clean maps before they enter the store; None keeps every point
    voxel_size: typing.Optional[float] = Field(0.1, gt=0)
    eps_rm: float = Field(1e-3, gt=0)
    encoding: typing.Literal["binary", "ascii"] = "binary"


class SessionRecord(BaseModel):
    index: int = Field(ge=0)
    id: str
    committed: datetime
    files: dict[str, FileRef] = dict()
    counts: dict[str, int] = dict()
    # row-major 3x4, maps the clean session into the store frame
    transform: list[float] = Field(min_length=12, max_length=12)
    chamfer: typing.Optional[float] = None
    align_params: typing.Optional[dict[str, typing.Any]] = None
    # size the clean session map would have taken as its own PCD file
    clean_bytes: int = Field(0, ge=0)


class StoreManifest(BaseModel):
    schema_version: int = SCHEMA_VERSION
    created: datetime
    settings: StoreSettings = StoreSettings()
    base_map: FileRef
    sessions: list[SessionRecord] = list()

    @property
    def all_bytes(self) -> int:
        return sum(s.clean_bytes for s in self.sessions)


def efficiency_ratio(all_bytes: int, ours_bytes: int) -> typing.Optional[float]:
    """1 - ours/all; None when nothing has been committed."""
    if all_bytes <= 0:
        return None
    return 1.0 - ours_bytes / all_bytes


@dataclass(frozen=True, slots=True)
class SessionRef:
    index: int
    id: str


@dataclass(frozen=True, slots=True)
class StoreStats:
    sessions: int
    base_bytes: int
    diff_bytes: int
    boundary_bytes: int
    all_bytes: int

    @property
    def ours_bytes(self) -> int:
        return self.base_bytes + self.diff_bytes + self.boundary_bytes

    @property
    def ratio(self) -> typing.Optional[float]:
        return efficiency_ratio(self.all_bytes, self.ours_bytes)

    def as_dict(self) -> dict:
        return {
            "sessions": self.sessions,
            "base_bytes": self.base_bytes,
            "diff_bytes": self.diff_bytes,
            "boundary_bytes": self.boundary_bytes,
            "ours_bytes": self.ours_bytes,
            "all_bytes": self.all_bytes,
            "efficiency_ratio": self.ratio,
        }
