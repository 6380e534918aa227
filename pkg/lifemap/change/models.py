import typing
from dataclasses import dataclass

from pydantic import BaseModel, ConfigDict, Field, model_validator

from lifemap.geom.types import PointCloud

BEV_RANGES = {
    "precise": (0.05, 0.15),
    "efficient": (0.5, 2.0),
}


class ChangeParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    r_coexist: float = Field(0.3, gt=0)
    r_overlap: float = Field(1.0, gt=0)
    bev_res: float = Field(0.1, gt=0)
    h_thr: float = Field(0.3, ge=0)
    mode: typing.Literal["precise", "efficient"] = "precise"
    # None: single layer; otherwise the height of each BEV slab
    layer_height: typing.Optional[float] = Field(None, gt=0)
    # symmetric: PD compares session overlap against the whole base map
    # literal: PD compares session overlap against base overlap
    pairing: typing.Literal["symmetric", "literal"] = "symmetric"
    plane_dist_thr: float = Field(0.1, gt=0)
    plane_sample: int = Field(20000, ge=3)
    seed: int = 0

    @model_validator(mode="after")
    def _check_resolution(self):
        low, high = BEV_RANGES[self.mode]
        if not low <= self.bev_res <= high:
            raise ValueError(f"bev_res {self.bev_res} outside the {self.mode} range [{low}, {high}]")
        return self


@dataclass(frozen=True, slots=True, eq=False)
class DiffResult:
    """
    Partition of a base map and an aligned session map. coexist is the
    base-side copy of the structure both maps share.
    """

    coexist: PointCloud
    base_diff: PointCloud
    session_diff: PointCloud
    base_overlap: PointCloud
    base_nonoverlap: PointCloud
    session_overlap: PointCloud
    session_nonoverlap: PointCloud
    base_nd: PointCloud
    session_pd: PointCloud

    def counts(self) -> dict[str, int]:
        return {name: len(getattr(self, name)) for name in self.__slots__}
