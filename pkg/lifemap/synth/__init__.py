from lifemap.synth.scene import (
    Box,
    ChangeTruth,
    DynamicObject,
    Scene,
    car,
    default_scene,
    mutate_scene,
    sample_surface,
    street_mutation,
)
from lifemap.synth.lidar import SimConfig, cast_rays, make_session, ray_directions, raycast_scan, straight_trajectory
