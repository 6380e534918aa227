import enum
import itertools
import typing
from dataclasses import dataclass, field

from pydantic import BaseModel, ConfigDict, Field

from lifemap.geom.types import Pose

# recommended value lists; the full grid is their cross product
K_R_VALUES = (0.5, 1.0, 2.0, 5.0, 10.0)
PC_DS_VALUES = (0.1, 0.2, 0.3, 1.0)
N_N_VALUES = (200, 500)
FD_R_VALUES = (5.0, 10.0, 20.0, 50.0)
NDT_R_VALUES = (0.5, 1.0, 2.0, 5.0)
NDT_SS_VALUES = (5.0, 10.0)


class AlignParams(BaseModel):
    """One point of the alignment hyper-parameter grid."""

    model_config = ConfigDict(frozen=True)

    k_r: float = Field(K_R_VALUES[0], gt=0, description="keypoint radius (m)")
    pc_ds: float = Field(PC_DS_VALUES[0], gt=0, description="down-sampling cell (m)")
    n_n: int = Field(N_N_VALUES[0], ge=3, description="normal neighbours")
    fd_r: float = Field(FD_R_VALUES[0], gt=0, description="descriptor support radius (m)")
    ndt_r: float = Field(NDT_R_VALUES[0], gt=0, description="NDT voxel resolution (m)")
    ndt_ss: float = Field(NDT_SS_VALUES[0], gt=0, description="NDT maximum step size")

    @property
    def feature_key(self) -> tuple:
        """Parameters that decide keypoints, descriptors and the coarse pose."""
        return self.k_r, self.pc_ds, self.n_n, self.fd_r

    def label(self) -> str:
        return (
            f"k_r={self.k_r:g} pc_ds={self.pc_ds:g} n_n={self.n_n} "
            f"fd_r={self.fd_r:g} ndt_r={self.ndt_r:g} ndt_ss={self.ndt_ss:g}"
        )


def make_grid(
    k_r=K_R_VALUES,
    pc_ds=PC_DS_VALUES,
    n_n=N_N_VALUES,
    fd_r=FD_R_VALUES,
    ndt_r=NDT_R_VALUES,
    ndt_ss=NDT_SS_VALUES,
) -> list[AlignParams]:
    """Cross product with k_r outermost and the NDT parameters innermost."""
    return [
        AlignParams(k_r=a, pc_ds=b, n_n=c, fd_r=d, ndt_r=e, ndt_ss=f)
        for a, b, c, d, e, f in itertools.product(k_r, pc_ds, n_n, fd_r, ndt_r, ndt_ss)
    ]


def full_grid() -> list[AlignParams]:
    return make_grid()


def fast_grid() -> list[AlignParams]:
    return [AlignParams()]


def grid_by_name(name: str) -> list[AlignParams]:
    match name:
        case "full":
            return full_grid()
        case "fast":
            return fast_grid()
    raise ValueError(f"unknown grid {name!r} (full or fast)")


class StageOutcome(str, enum.Enum):
    FAILED_COARSE = "FailedCoarse"
    FAILED_FINE = "FailedFine"
    SUCCEEDED = "Succeeded"


@dataclass(slots=True)
class CandidateLog:
    index: int
    params: AlignParams
    outcome: StageOutcome
    chamfer: typing.Optional[float] = None
    converged: typing.Optional[bool] = None
    reason: str = ""
    transform: typing.Optional[Pose] = None

    def as_row(self) -> dict:
        return {
            "index": self.index,
            **self.params.model_dump(),
            "outcome": self.outcome.value,
            "chamfer": "" if self.chamfer is None else f"{self.chamfer:.17g}",
            "converged": "" if self.converged is None else str(self.converged).lower(),
            "reason": self.reason,
        }


@dataclass(slots=True)
class AlignmentResult:
    """Best candidate of a grid search: transform maps the source map into the target frame."""

    transform: Pose
    chamfer: float
    params: AlignParams
    stage_log: list[CandidateLog] = field(default_factory=list)

    @property
    def succeeded(self) -> list[CandidateLog]:
        return [c for c in self.stage_log if c.outcome is StageOutcome.SUCCEEDED]
