"""viziscan: virtual range scanning, visibility-augmented point clouds,
visibility-carving reconstruction, and mesh evaluation metrics."""

__version__ = "0.1.0"

from .augment import (AugMode, ApPlacement, AugmentConfig, AugmentedPointCloud,
                      assemble_channels, auxiliary_points, characteristic_distance,
                      local_knn_distance, sightline_vectors, variant_channels)
from .mesh import (RayHit, SimilarityTransform, Sphere, TriangleMesh, bounding_sphere,
                   inscribed_target_sphere, is_inside, load_mesh, normalize_unit_cube,
                   sample_surface, save_mesh)
from .metrics import (EvalConfig, MetricsReport, chamfer, evaluate, normal_consistency,
                      volumetric_iou)
from .normals import (OrientationMethod, OrientedNormals, estimate_normals, gt_normals,
                      orient_mst, orient_sensor)
from .reconstruct import (OccupancyGrid, carve_occupancy, density_occupancy,
                          marching_cubes, reconstruct_pipeline)
from .scanner import (ScanConfig, ScannedPointCloud, decimate_voxel, load_cloud,
                      place_sensors, save_cloud, scan)

__all__ = [
    "AugMode", "ApPlacement", "AugmentConfig", "AugmentedPointCloud", "EvalConfig",
    "MetricsReport", "OccupancyGrid", "OrientationMethod", "OrientedNormals", "RayHit",
    "ScanConfig", "ScannedPointCloud", "SimilarityTransform", "Sphere", "TriangleMesh",
    "assemble_channels", "auxiliary_points", "bounding_sphere", "carve_occupancy",
    "chamfer", "characteristic_distance", "decimate_voxel", "density_occupancy",
    "estimate_normals", "evaluate", "gt_normals", "inscribed_target_sphere", "is_inside",
    "load_cloud", "load_mesh", "local_knn_distance", "marching_cubes",
    "normal_consistency", "normalize_unit_cube", "orient_mst", "orient_sensor",
    "place_sensors", "reconstruct_pipeline", "sample_surface", "save_cloud", "save_mesh",
    "scan", "sightline_vectors", "variant_channels", "volumetric_iou",
]
