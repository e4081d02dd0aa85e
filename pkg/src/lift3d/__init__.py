"""Lift 2D detections with keypoints to 3D prototypes and poses, and score
multi-view detectors with joint localization/viewpoint metrics."""

__version__ = "0.1.0"

from .geometry import BBox, CameraPose, azimuth_error, iou, project, rotation_from_pose
from .lifting import ClassPriors, Correspondence, Detection, LiftResult, fit_pose, init_pose, lift
from .metrics import aavp, app, avp_binned, match_and_pr, seg_accuracy
from .prototypes import Prototype, PrototypeRegistry, load_registry, render_silhouette
from .regression import Regressor, predict, train
from .spatial import KeypointCandidate, SpatialModel, fit_spatial, pool_keypoints, select_component_guided

__all__ = [
    "BBox", "CameraPose", "azimuth_error", "iou", "project", "rotation_from_pose",
    "ClassPriors", "Correspondence", "Detection", "LiftResult", "fit_pose", "init_pose", "lift",
    "aavp", "app", "avp_binned", "match_and_pr", "seg_accuracy",
    "Prototype", "PrototypeRegistry", "load_registry", "render_silhouette",
    "Regressor", "predict", "train",
    "KeypointCandidate", "SpatialModel", "fit_spatial", "pool_keypoints", "select_component_guided",
]
