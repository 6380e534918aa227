from lifemap.geom.types import Label, PointCloud, Pose, PlaneModel, HullPolygon
from lifemap.geom.index import SpatialIndex, radius_neighbors, set_query_workers
from lifemap.geom.filters import (
    voxel_downsample,
    estimate_normals,
    statistical_outlier_removal,
    transform,
)
from lifemap.geom.plane import ransac_plane, extract_planes
from lifemap.geom.hull import hull_of, hull_crop
from lifemap.geom.metrics import chamfer_distance
