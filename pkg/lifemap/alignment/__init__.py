from lifemap.alignment.models import (
    AlignParams,
    AlignmentResult,
    CandidateLog,
    StageOutcome,
    full_grid,
    fast_grid,
    make_grid,
    grid_by_name,
)
from lifemap.alignment.features import Descriptors, select_keypoints, compute_descriptors, pca_pair
from lifemap.alignment.coarse import coarse_align, icp, kabsch
from lifemap.alignment.ndt import ndt_register
from lifemap.alignment.search import grid_search_align
