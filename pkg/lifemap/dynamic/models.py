import math
import typing

from loguru import logger
from pydantic import BaseModel, Field, model_validator


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


class DynRemovalParams(BaseModel):
    """Knobs of the dynamic point removal pipeline."""

    voxel_size: float = Field(0.2, gt=0)
    p_hit: float = Field(0.7, gt=0.5, lt=1.0)
    p_miss: float = Field(0.4, gt=0.0, lt=0.5)
    p_min: float = Field(0.12, gt=0.0, lt=0.5)
    p_max: float = Field(0.97, gt=0.5, lt=1.0)
    p_occ: float = Field(0.5, gt=0.0, lt=1.0)
    max_range: float = Field(80.0, gt=0)

    submap_window: int = Field(20, ge=1)
    plane_dist_thr: float = Field(0.1, gt=0)
    plane_ratio_thr: float = Field(0.10, ge=0, le=1)
    plane_max_iters: int = Field(500, ge=1)

    knn_k: int = Field(7, ge=1)
    knn_radius: float = Field(0.5, gt=0)
    sor_k: int = Field(12, ge=1)
    sor_std_mul: float = Field(1.0, ge=0)
    reassign_radius: float = Field(0.15, gt=0)
    reassign_min_neighbors: int = Field(3, ge=1)
    height_cutoff: typing.Optional[float] = None

    seed: int = 0

    @model_validator(mode="after")
    def _check_window(self):
        if self.p_min >= self.p_max:
            raise ValueError("p_min must be below p_max")
        if not 10 <= self.submap_window <= 50:
            logger.warning(f"submap_window {self.submap_window} is outside the usual 10-50 frames")
        return self

    @property
    def l_hit(self) -> float:
        return logit(self.p_hit)

    @property
    def l_miss(self) -> float:
        return logit(self.p_miss)

    @property
    def l_min(self) -> float:
        return logit(self.p_min)

    @property
    def l_max(self) -> float:
        return logit(self.p_max)

    @property
    def l_occ(self) -> float:
        return logit(self.p_occ)
