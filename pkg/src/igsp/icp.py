"""Classical point-to-point ICP, used as a comparison baseline.

Moves the target onto the source, like IGSP, and returns the same report
type so both methods flow through one evaluation and reporting path.
"""

from __future__ import annotations

import math
import time

import numpy as np
from scipy.spatial import cKDTree

from .assignment import MatchResult
from .engine import (
    DegenerateCorrespondences,
    IterationRecord,
    RegistrationReport,
    estimate_transform,
    iteration_delta,
)
from .geometry import PointCloud, RigidTransform, compose

MAX_ICP_POINTS = 5000


def _subsample(n: int, limit: int) -> np.ndarray:
    if n <= limit:
        return np.arange(n)
    return np.linspace(0, n - 1, limit).round().astype(np.intp)


def run_icp_baseline(source: PointCloud, target: PointCloud, max_iter: int = 50, eps: float = 1e-8,
                     sigma_r: float = math.radians(0.01), sigma_t: float | None = None,
                     max_points: int = MAX_ICP_POINTS) -> RegistrationReport:
    """Nearest-neighbour ICP.

    Stops when the per-iteration update is below (sigma_r, sigma_t), or when
    the relative change of the RMS residual drops below ``eps``. Either way
    the run is reported as converged; convergence says nothing about whether
    the minimum is the right one.
    """
    if len(source) == 0 or len(target) == 0:
        raise ValueError("clouds must be non-empty")
    t_start = time.perf_counter()
    sigma_t = sigma_t if sigma_t is not None else 1e-3 * source.diagonal()
    tree = cKDTree(source.points)
    sample = _subsample(len(target), max_points)
    original = target.points[sample]
    moving = original.copy()
    prep = time.perf_counter() - t_start

    Rt = RigidTransform.identity()
    records = []
    prev_rms = math.inf
    converged = False
    for k in range(max_iter):
        t0 = time.perf_counter()
        dist, nn = tree.query(moving)
        rms = float(np.sqrt(np.mean(dist ** 2)))
        try:
            step = estimate_transform(source.points[nn], moving)
        except DegenerateCorrespondences:
            break
        moving = step.transform_points(moving)
        Rt = compose(step, Rt)
        dr, dt = iteration_delta(step)
        records.append(IterationRecord(
            k=k, transform=step, delta_r=dr, delta_t=dt, threshold=math.inf, w_ed=1.0, w_fd=0.0,
            mean_ed=float(dist.mean()), mean_fd=0.0, match_count=len(nn), unmatched_source=0,
            unmatched_target=0, energy=rms, total_cost=rms, pairs=(), seconds=time.perf_counter() - t0,
        ))
        if (dr <= sigma_r and dt <= sigma_t) or abs(prev_rms - rms) <= eps * max(rms, 1e-300):
            converged = True
            break
        prev_rms = rms

    # the final correspondence set is bookkeeping for evaluation, not part of the timed run
    total = time.perf_counter() - t_start
    dist, nn = tree.query(moving)
    pairs = tuple((int(i), int(j)) for j, i in enumerate(nn))
    match = MatchResult(pairs, (), (), float(np.sum(dist)), float(np.sum(dist)), ())
    return RegistrationReport(
        transform=Rt, records=tuple(records), converged=converged, match=match, method="icp",
        source_keypoints=source.points, target_keypoints=original, prep_seconds=prep,
        total_seconds=total,
        config={"icp": {"max_iter": max_iter, "eps": eps, "sigma_r": sigma_r, "sigma_t": sigma_t,
                        "max_points": max_points}},
    )
