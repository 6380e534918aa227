from lifemap.dynamic.models import DynRemovalParams
from lifemap.dynamic.occupancy import OccupancyGrid, integrate_scan, classify_by_occupancy
from lifemap.dynamic.pipeline import (
    RemovalResult,
    restore_planes,
    vote_unknown,
    radial_reassign,
    remove_dynamic,
    remove_dynamic_labeled,
)
from lifemap.dynamic.metrics import evaluate_pr_rr_f1, f1_score
