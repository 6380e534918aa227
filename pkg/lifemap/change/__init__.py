from lifemap.change.models import ChangeParams, DiffResult
from lifemap.change.partition import spatial_partition, overlap_split
from lifemap.change.bev import BevGrid, BevImage, bev_project, bev_change, write_pgm
from lifemap.change.detect import detect_changes, knn_change, reference_plane
from lifemap.change.metrics import eval_change_pr
