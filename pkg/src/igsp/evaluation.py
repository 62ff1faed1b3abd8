"""Registration error against ground truth and correspondence precision/recall."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import RigidTransform, compose, rotation_angle
from .scenes import GroundTruth


@dataclass(frozen=True)
class EvalResult:
    rotation_error: float  # radians
    translation_error: float
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    precision_defined: bool = True

    @property
    def rotation_error_mdeg(self) -> float:
        return math.degrees(self.rotation_error) * 1000.0

    def as_dict(self) -> dict:
        return {
            "e_r_rad": self.rotation_error, "e_r_mdeg": self.rotation_error_mdeg,
            "e_t": self.translation_error, "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall,
            "precision_defined": self.precision_defined,
        }


def transform_error(T: RigidTransform, gt: GroundTruth | RigidTransform) -> tuple[float, float]:
    """Angle and translation norm of T * inverse(T_G)."""
    T_G = gt.transform if isinstance(gt, GroundTruth) else gt
    delta = compose(T, T_G.inverse())
    return rotation_angle(delta.R), float(np.linalg.norm(delta.t))


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float, bool]:
    """Precision and recall; an empty pair set gives precision 0 with the flag cleared."""
    defined = tp + fp > 0
    precision = tp / (tp + fp) if defined else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return precision, recall, defined


def label_correspondences(pairs, source_keypoints, target_keypoints, gt: GroundTruth) -> tuple[int, int, int]:
    """Count (TP, FP, FN) for matched keypoint index pairs.

    ``target_keypoints`` are the original, untransformed target positions. A
    pair is a true positive when the ground-truth-mapped target keypoint lies
    within the tolerance of its source keypoint. Source keypoints that have
    some ground-truth partner but are unmatched or mismatched count as false
    negatives; source keypoints without any partner are ignored.
    """
    skp = np.asarray(source_keypoints, dtype=np.float64).reshape(-1, 3)
    tkp = gt.transform.transform_points(np.asarray(target_keypoints, dtype=np.float64).reshape(-1, 3))
    tp = fp = 0
    correct = set()
    for i, j in pairs:
        if np.linalg.norm(skp[i] - tkp[j]) <= gt.tolerance:
            tp += 1
            correct.add(i)
        else:
            fp += 1
    if len(tkp) and len(skp):
        d, _ = cKDTree(tkp).query(skp, k=1)
        has_partner = d <= gt.tolerance
    else:
        has_partner = np.zeros(len(skp), dtype=bool)
    fn = sum(1 for i in np.flatnonzero(has_partner) if i not in correct)
    return tp, fp, fn


def evaluate(T: RigidTransform, pairs, source_keypoints, target_keypoints, gt: GroundTruth) -> EvalResult:
    e_r, e_t = transform_error(T, gt)
    tp, fp, fn = label_correspondences(pairs, source_keypoints, target_keypoints, gt)
    precision, recall, defined = precision_recall(tp, fp, fn)
    return EvalResult(e_r, e_t, tp, fp, fn, precision, recall, defined)
