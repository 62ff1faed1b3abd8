"""Pairwise point cloud registration with globally matched keypoints (IGSP) and an ICP baseline.

Keypoints with binary shape descriptors are matched by a thresholded
minimum-weight bipartite assignment whose cost blends descriptor distance
with scaled Euclidean distance; the rigid transform is re-estimated from the
matches until the per-iteration update falls below a threshold.
"""

__version__ = "0.1.0"

from .assignment import CostMatrix, MatchResult, brute_force_solve, build_cost_matrix, km_solve
from .engine import IgspConfig, RegistrationError, RegistrationReport, estimate_transform, register
from .evaluation import EvalResult, evaluate, label_correspondences, transform_error
from .geometry import PointCloud, RigidTransform, compose
from .icp import run_icp_baseline
from .keypoints import BinaryDescriptor, DetectorConfig, Keypoint, compute_descriptor, detect_keypoints, hamming
from .scenes import GroundTruth, SceneSpec, generate_scene

__all__ = [
    "BinaryDescriptor", "CostMatrix", "DetectorConfig", "EvalResult", "GroundTruth", "IgspConfig", "Keypoint",
    "MatchResult", "PointCloud", "RegistrationError", "RegistrationReport", "RigidTransform", "SceneSpec",
    "brute_force_solve", "build_cost_matrix", "compose", "compute_descriptor", "detect_keypoints",
    "estimate_transform", "evaluate", "generate_scene", "hamming", "km_solve", "label_correspondences",
    "register", "run_icp_baseline", "transform_error",
]
