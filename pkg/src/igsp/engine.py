"""IGSP registration: global keypoint assignment alternated with rigid transform estimation.

The target keypoints are moved onto the source keypoints. Each iteration
builds a compound distance that blends descriptor (Hamming) distance with
scaled Euclidean distance, solves a thresholded minimum-weight bipartite
matching over all keypoints at once, and re-estimates a rigid transform from
the matched pairs. Early iterations are driven by the descriptors; the
Euclidean term takes over as the weights decay.

The returned transform maps target coordinates into the source frame.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .assignment import MatchResult, build_cost_matrix, dump_csv, km_solve, match_energy
from .geometry import PointCloud, RigidTransform, SpatialIndex, compose, rotation_angle
from .keypoints import (
    BinaryDescriptor,
    DescriptorError,
    DetectorConfig,
    Keypoint,
    compute_descriptors,
    detect_keypoints,
)

logger = logging.getLogger(__name__)


class RegistrationError(RuntimeError):
    pass


class DegenerateCorrespondences(RegistrationError):
    pass


@dataclass(frozen=True)
class IgspConfig:
    s_ed_numerator: float = 30.0
    weight_rate: float = 8.0
    p1_t: float = 2.5
    p2_t: float = 1.5
    p3_t: float = 1.25
    sigma_r: float = math.radians(0.01)
    sigma_t: Optional[float] = None  # None: 0.001 x source bounding-box diagonal
    max_iterations: int = 50
    max_failed_iterations: int = 3
    # multiplier on the normalised Hamming distance inside the compound distance;
    # 128 turns it back into raw bit counts, the scale s_ed_numerator = 30 is balanced against
    feature_scale: float = 128.0

    def __post_init__(self):
        for name in ("s_ed_numerator", "weight_rate", "p1_t", "p2_t", "p3_t", "sigma_r", "feature_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.sigma_t is not None and not self.sigma_t > 0:
            raise ValueError("sigma_t must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    transform: RigidTransform  # Rt_temp estimated at this iteration
    delta_r: float
    delta_t: float
    threshold: float
    w_ed: float
    w_fd: float
    mean_ed: float  # mean raw Euclidean distance term over matched pairs
    mean_fd: float
    match_count: int
    unmatched_source: int
    unmatched_target: int
    energy: float
    total_cost: float
    pairs: tuple[tuple[int, int], ...]
    flagged: bool = False  # threshold fallback or no usable correspondences
    seconds: float = 0.0


@dataclass(frozen=True)
class RegistrationReport:
    transform: RigidTransform
    records: tuple[IterationRecord, ...]
    converged: bool
    match: Optional[MatchResult]
    method: str = "igsp"
    source_keypoints: NDArray[np.float64] = field(default_factory=lambda: np.zeros((0, 3)))
    target_keypoints: NDArray[np.float64] = field(default_factory=lambda: np.zeros((0, 3)))
    prep_seconds: float = 0.0
    total_seconds: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def iteration_seconds(self) -> float:
        if not self.records:
            return 0.0
        return float(np.mean([r.seconds for r in self.records]))


def feature_distance_matrix(sdesc: Sequence[BinaryDescriptor], tdesc: Sequence[BinaryDescriptor]) -> NDArray[np.float64]:
    """Normalised Hamming distance between every source/target descriptor pair."""
    for d in list(sdesc) + list(tdesc):
        if not d.valid:
            raise DescriptorError("degenerate descriptor in matching")
    if not sdesc or not tdesc:
        return np.zeros((len(sdesc), len(tdesc)))
    A = np.array([d.bits for d in sdesc], dtype=np.float64)
    B = np.array([d.bits for d in tdesc], dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise DescriptorError("descriptor lengths differ")
    # integer-valued products, exact in float64
    diff = A @ (1.0 - B).T + (1.0 - A) @ B.T
    return diff / A.shape[1]


def euclidean_distance_matrix(skp: ArrayLike, tkp: ArrayLike, s_ed: float) -> NDArray[np.float64]:
    skp = np.asarray(skp, dtype=np.float64).reshape(-1, 3)
    tkp = np.asarray(tkp, dtype=np.float64).reshape(-1, 3)
    return s_ed * np.linalg.norm(skp[:, None, :] - tkp[None, :, :], axis=2)


def weights(k: int, weight_rate: float = 8.0) -> tuple[float, float]:
    """(W_fd, W_ed) at iteration ``k``: the feature weight decays as exp(-k / rate)."""
    if k < 0:
        raise ValueError("iteration index must be >= 0")
    w_fd = math.exp(-k / weight_rate)
    return w_fd, 1.0 - w_fd


def compute_threshold(k: int, cfg: IgspConfig, cd_stats: tuple[float, float] | None = None,
                      previous: IterationRecord | None = None) -> tuple[float, bool]:
    """Mismatch threshold T_cd and a flag set when the zero-match fallback fired.

    At k = 0 the threshold is mean + p1 * stdev of the compound distances; after
    that it tracks the mean matched Euclidean and feature distances of the
    previous iteration.
    """
    if k == 0:
        if cd_stats is None:
            raise ValueError("k = 0 needs the compound distance mean and stdev")
        mu, sigma = cd_stats
        return mu + cfg.p1_t * sigma, False
    if previous is None:
        raise ValueError("k > 0 needs the previous iteration record")
    if previous.match_count == 0:
        return previous.threshold, True
    decay = math.exp(-k / cfg.weight_rate)
    t = cfg.p2_t * (1.0 - decay) * previous.mean_ed + cfg.p3_t * decay * previous.mean_fd
    return t, False


def estimate_transform(p: ArrayLike, q: ArrayLike) -> RigidTransform:
    """Least-squares rigid transform with p ~ R q + t (Kabsch, reflection-corrected)."""
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    if len(p) != len(q):
        raise ValueError("point sets differ in length")
    if len(p) < 3:
        raise DegenerateCorrespondences("insufficient correspondences")
    pc, qc = p.mean(axis=0), q.mean(axis=0)
    H = (q - qc).T @ (p - pc)
    U, S, Vt = np.linalg.svd(H)
    if S[0] == 0 or S[1] < 1e-12 * S[0]:
        raise DegenerateCorrespondences("degenerate configuration")
    d = 1.0 if np.linalg.det(Vt.T @ U.T) > 0 else -1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(R, pc - R @ qc)


def iteration_delta(T: RigidTransform) -> tuple[float, float]:
    return rotation_angle(T.R), float(np.linalg.norm(T.t))


def alignment_objective(T: RigidTransform, p, q) -> float:
    return float(np.sum((np.asarray(p) - T.transform_points(q)) ** 2))


def match_keypoints(skp, tkp, sdesc, tdesc, cfg: IgspConfig, nms_radius: float, sigma_t: float,
                    dump_dir=None) -> tuple[RigidTransform, list[IterationRecord], bool, Optional[MatchResult]]:
    """The iteration loop on already detected and described keypoints.

    With ``dump_dir`` set, each iteration's cost matrix and assignment are
    written there as ``iteration_KKK.csv``.
    """
    skp = np.asarray(skp, dtype=np.float64).reshape(-1, 3)
    tkp = np.asarray(tkp, dtype=np.float64).reshape(-1, 3)
    m_fd = cfg.feature_scale * feature_distance_matrix(sdesc, tdesc)
    s_ed = cfg.s_ed_numerator / nms_radius
    m, n = len(skp), len(tkp)

    Rt = RigidTransform.identity()
    records: list[IterationRecord] = []
    delta_r = delta_t = math.inf
    k = 0
    failed = 0
    converged = False
    last_match = None
    while k < cfg.max_iterations:
        t0 = time.perf_counter()
        m_ed = euclidean_distance_matrix(skp, tkp, s_ed)
        w_fd, w_ed = weights(k, cfg.weight_rate)
        m_cd = w_ed * m_ed + w_fd * m_fd
        stats = (float(m_cd.mean()), float(m_cd.std())) if k == 0 else None
        threshold, flagged = compute_threshold(k, cfg, stats, records[-1] if records else None)
        if not threshold > 0:
            # all compound distances identical; admit every pair
            threshold, flagged = float(np.nextafter(max(m_cd.max(), 0.0), math.inf)), True
        cost = build_cost_matrix(m_cd, threshold)
        result = km_solve(cost)
        last_match = result
        if dump_dir is not None:
            dump_csv(cost, result, Path(dump_dir) / f"iteration_{k:03d}.csv")
        pairs = result.pairs
        si = np.array([i for i, _ in pairs], dtype=np.intp)
        ti = np.array([j for _, j in pairs], dtype=np.intp)
        try:
            Rt_temp = estimate_transform(skp[si], tkp[ti])
            usable = True
        except DegenerateCorrespondences as exc:
            logger.debug("iteration %d: %s", k, exc)
            Rt_temp = RigidTransform.identity()
            usable = False
        tkp = Rt_temp.transform_points(tkp)
        Rt = compose(Rt_temp, Rt)
        delta_r, delta_t = iteration_delta(Rt_temp)
        energy = match_energy(pairs, result.unmatched_count, m_cd, cost.penalty)
        records.append(IterationRecord(
            k=k, transform=Rt_temp, delta_r=delta_r, delta_t=delta_t, threshold=threshold,
            w_ed=w_ed, w_fd=w_fd,
            mean_ed=float(m_ed[si, ti].mean()) if len(pairs) else 0.0,
            mean_fd=float(m_fd[si, ti].mean()) if len(pairs) else 0.0,
            match_count=len(pairs), unmatched_source=len(result.unmatched_source),
            unmatched_target=len(result.unmatched_target), energy=energy,
            total_cost=result.total_cost, pairs=pairs, flagged=flagged or not usable,
            seconds=time.perf_counter() - t0,
        ))
        k += 1
        failed = 0 if usable else failed + 1
        if failed >= cfg.max_failed_iterations:
            logger.warning("aborting after %d iterations without usable correspondences", failed)
            break
        if usable and delta_r <= cfg.sigma_r and delta_t <= sigma_t:
            converged = True
            break
    return Rt, records, converged, last_match


def prepare(cloud: PointCloud, det: DetectorConfig):
    """Detect keypoints and descriptors, dropping keypoints whose descriptor is degenerate."""
    index = SpatialIndex(cloud)
    kps = detect_keypoints(cloud, det, index)
    descs = compute_descriptors(cloud, kps, det, index)
    keep = [i for i, d in enumerate(descs) if d.valid]
    return [kps[i] for i in keep], [descs[i] for i in keep]


def register(source: PointCloud, target: PointCloud, cfg: IgspConfig | None = None,
             detector: DetectorConfig | None = None,
             prepared: tuple | None = None, dump_dir=None) -> RegistrationReport:
    """Register ``target`` onto ``source``.

    ``prepared`` may carry precomputed ``(skp, sdesc, tkp, tdesc)`` keypoints
    and descriptors, e.g. loaded from sidecar files. ``dump_dir`` enables the
    per-iteration cost matrix CSV dump.
    """
    cfg = cfg or IgspConfig()
    t_start = time.perf_counter()
    detector = detector or DetectorConfig.for_cloud(source)
    if prepared is None:
        skp, sdesc = prepare(source, detector)
        tkp, tdesc = prepare(target, detector)
    else:
        skp, sdesc, tkp, tdesc = prepared
    if len(skp) < 3 or len(tkp) < 3:
        raise RegistrationError(f"too few valid keypoints (source {len(skp)}, target {len(tkp)})")
    sigma_t = cfg.sigma_t if cfg.sigma_t is not None else 1e-3 * source.diagonal()
    s_pos = np.array([k.position for k in skp])
    t_pos = np.array([k.position for k in tkp])
    prep_seconds = time.perf_counter() - t_start
    logger.info("igsp: %d source / %d target keypoints", len(skp), len(tkp))

    Rt, records, converged, match = match_keypoints(s_pos, t_pos, sdesc, tdesc, cfg, detector.nms_radius, sigma_t,
                                                    dump_dir)
    total = time.perf_counter() - t_start
    return RegistrationReport(
        transform=Rt, records=tuple(records), converged=converged, match=match, method="igsp",
        source_keypoints=s_pos, target_keypoints=t_pos, prep_seconds=prep_seconds, total_seconds=total,
        config={"igsp": {**asdict(cfg), "sigma_t": sigma_t}, "detector": asdict(detector),
                "s_ed": cfg.s_ed_numerator / detector.nms_radius},
    )
