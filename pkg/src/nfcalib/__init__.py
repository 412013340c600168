"""Near-field extrinsic calibration between a depth camera and an imaging radar.

The package estimates the rigid transform (with a fixed a-priori scale)
mapping the optical frame into the radar frame from a single view of a
multi-sphere calibration target, refines it against flat validation
objects, and ships a synthetic scene generator so the whole pipeline can
be exercised and scored without hardware.
"""

from .config import (CORNER_NAMES, ENV_CONFIG_VAR, PipelineConfig,
                     TargetGeometry, config_from_dict, load_config,
                     resolve_config, save_config)
from .errors import (AmbiguousOrdering, CalibError, ConfigError,
                     DegenerateGeometry, EmptyInput, FitFailed,
                     InsufficientClusters, InsufficientCorrespondences,
                     InsufficientData, LocalizationFailed, MalformedInput,
                     NoTargetDetected, SceneError, ValidationError)
from .evaluation import (capture_points, chamfer_distance, directed_rmse,
                         export_residuals, inlier_fraction,
                         nearest_distances)
from .geometry import (Plane, RigidTransform, SphereModel, fit_plane_tls,
                       point_plane_distance, project_onto_plane,
                       rotation_angle_deg, rotation_from_axis_angle)
from .io_formats import (CameraIntrinsics, DepthCapture, RadarCloud,
                         RigidCalibration, load_calibration,
                         load_capture_bundle, load_depth, load_radar_cloud,
                         read_ply, save_calibration, save_capture_bundle,
                         save_depth, save_radar_cloud, write_ply)
from .optical import (CircleCandidate, OpticalTarget, backproject_circle,
                      detect_circles, filter_circles, fit_sphere,
                      fit_spheres_ransac, order_centers)
from .pipeline import (CalibrationResult, calibrate_scene,
                       detect_optical_target, detect_radar_target)
from .radar import (ClusterSet, RadarTarget, detect_clusters,
                    evaluate_energy, localize_radar_target)
from .ransac import accept_candidate, spawn_rngs
from .registration import (CorrespondenceSet, find_correspondences,
                           kabsch_register, refine_calibration)
from .synthetic import (DEFAULT_PALETTE, EVAL_OBJECTS, SceneSpec,
                        SyntheticScene, ball_positions_radar,
                        generate_scene, render_depth_capture,
                        render_eval_object, render_radar_cloud)

__version__ = "0.1.0"

__all__ = [
    "AmbiguousOrdering",
    "CORNER_NAMES",
    "CalibError",
    "CalibrationResult",
    "CameraIntrinsics",
    "CircleCandidate",
    "ClusterSet",
    "ConfigError",
    "CorrespondenceSet",
    "DEFAULT_PALETTE",
    "DegenerateGeometry",
    "DepthCapture",
    "EVAL_OBJECTS",
    "EmptyInput",
    "ENV_CONFIG_VAR",
    "FitFailed",
    "InsufficientClusters",
    "InsufficientCorrespondences",
    "InsufficientData",
    "LocalizationFailed",
    "MalformedInput",
    "NoTargetDetected",
    "OpticalTarget",
    "PipelineConfig",
    "Plane",
    "RadarCloud",
    "RadarTarget",
    "RigidCalibration",
    "RigidTransform",
    "SceneError",
    "SceneSpec",
    "SphereModel",
    "SyntheticScene",
    "TargetGeometry",
    "ValidationError",
    "accept_candidate",
    "backproject_circle",
    "ball_positions_radar",
    "calibrate_scene",
    "capture_points",
    "chamfer_distance",
    "config_from_dict",
    "detect_circles",
    "detect_clusters",
    "detect_optical_target",
    "detect_radar_target",
    "directed_rmse",
    "evaluate_energy",
    "export_residuals",
    "filter_circles",
    "find_correspondences",
    "fit_plane_tls",
    "fit_sphere",
    "fit_spheres_ransac",
    "generate_scene",
    "inlier_fraction",
    "kabsch_register",
    "load_calibration",
    "load_capture_bundle",
    "load_config",
    "load_depth",
    "load_radar_cloud",
    "localize_radar_target",
    "nearest_distances",
    "order_centers",
    "point_plane_distance",
    "project_onto_plane",
    "read_ply",
    "refine_calibration",
    "render_depth_capture",
    "render_eval_object",
    "render_radar_cloud",
    "resolve_config",
    "rotation_angle_deg",
    "rotation_from_axis_angle",
    "save_calibration",
    "save_capture_bundle",
    "save_config",
    "save_depth",
    "save_radar_cloud",
    "spawn_rngs",
    "write_ply",
]
