"""Curvature keypoints and a 128-bit binary local shape descriptor.

Saliency is the ratio of the smallest to the largest eigenvalue of the
neighbourhood covariance. Keypoints are saliency local maxima above a
threshold, thinned by non-maximum suppression.

The descriptor bins neighbours on the tangent plane of a local reference
frame (4 radial x 16 angular cells) and stores, per cell, whether the point
count and the mean signed height exceed their medians over all cells.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .geometry import GeometryError, PointCloud, SpatialIndex, median_spacing

DESCRIPTOR_BITS = 128
MIN_NEIGHBOURS = 10
SALIENCY_FLOOR = 1e-9
# relative eigen-gap below which an eigenvector is considered unstable
EIGEN_GAP_TOL = 0.02
SIDECAR_MAGIC = b"IGSPKD1"


class DescriptorError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    nms_radius: float
    neighborhood_radius: float
    saliency_threshold: Optional[float] = None  # None: 75th percentile of the cloud's saliency
    radial_bins: int = 4
    angular_bins: int = 16
    saliency_percentile: float = 75.0

    def __post_init__(self):
        if not (self.nms_radius > 0 and self.neighborhood_radius > 0):
            raise ValueError("radii must be positive")
        if 2 * self.radial_bins * self.angular_bins != DESCRIPTOR_BITS:
            raise ValueError(f"2 * radial_bins * angular_bins must equal {DESCRIPTOR_BITS}")

    @classmethod
    def for_cloud(cls, cloud: PointCloud, **overrides) -> "DetectorConfig":
        """Density-relative defaults: r_d = 6 and r_k = 4 median spacings."""
        s = median_spacing(cloud)
        if s <= 0:
            raise GeometryError("cannot derive detector radii from a degenerate cloud")
        params = dict(nms_radius=4.0 * s, neighborhood_radius=6.0 * s)
        params.update(overrides)
        return cls(**params)


@dataclass(frozen=True)
class Keypoint:
    position: NDArray[np.float64]
    source_index: int
    saliency: float


@dataclass(frozen=True)
class BinaryDescriptor:
    bits: NDArray[np.bool_]
    valid: bool = True

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool).reshape(-1)
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    def __eq__(self, other):
        return isinstance(other, BinaryDescriptor) and self.valid == other.valid and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.valid, self.bits.tobytes()))

    def packed(self) -> bytes:
        return np.packbits(self.bits).tobytes()


def _neighbourhood_covariances(points, neighbours):
    """Covariance and neighbour count per query from ragged neighbour lists."""
    counts = np.fromiter((len(nb) for nb in neighbours), dtype=np.intp, count=len(neighbours))
    flat = np.fromiter((i for nb in neighbours for i in nb), dtype=np.intp, count=int(counts.sum()))
    owner = np.repeat(np.arange(len(neighbours)), counts)
    q = len(neighbours)
    safe = np.maximum(counts, 1)
    p = points[flat]
    mean = np.stack([np.bincount(owner, p[:, a], minlength=q) for a in range(3)], axis=1) / safe[:, None]
    d = p - mean[owner]
    cov = np.empty((q, 3, 3))
    for a in range(3):
        for b in range(a, 3):
            s = np.bincount(owner, d[:, a] * d[:, b], minlength=q) / safe
            cov[:, a, b] = s
            cov[:, b, a] = s
    return cov, counts


def saliency(cloud: PointCloud, radius: float, index: SpatialIndex | None = None) -> NDArray[np.float64]:
    """lambda_min / lambda_max of each point's ``radius`` neighbourhood (0 if fewer than 10 neighbours)."""
    index = index or SpatialIndex(cloud)
    neighbours = index.radius_many(cloud.points, radius)
    cov, counts = _neighbourhood_covariances(cloud.points, neighbours)
    ev = np.linalg.eigvalsh(cov)  # ascending
    ev = np.clip(ev, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        sal = np.where(ev[:, 2] > 0, ev[:, 0] / ev[:, 2], 0.0)
    sal[counts < MIN_NEIGHBOURS] = 0.0
    sal[sal < SALIENCY_FLOOR] = 0.0
    return sal


def detect_keypoints(cloud: PointCloud, cfg: DetectorConfig, index: SpatialIndex | None = None) -> list[Keypoint]:
    if len(cloud) < MIN_NEIGHBOURS:
        raise GeometryError("too few points for detection")
    index = index or SpatialIndex(cloud)
    sal = saliency(cloud, cfg.neighborhood_radius, index)
    if cfg.saliency_threshold is None:
        threshold = float(np.percentile(sal, cfg.saliency_percentile))
    else:
        threshold = cfg.saliency_threshold
    candidates = np.flatnonzero((sal > threshold) & (sal > 0))
    if len(candidates) == 0:
        return []
    # local maxima over the full cloud within r_k
    neighbours = index.radius_many(cloud.points[candidates], cfg.nms_radius)
    is_max = np.array([sal[c] >= sal[nb].max() for c, nb in zip(candidates, neighbours)], dtype=bool)
    maxima = candidates[is_max]
    # stable order: descending saliency, ascending index on ties
    maxima = maxima[np.lexsort((maxima, -sal[maxima]))]
    kept: list[int] = []
    for c in maxima:
        p = cloud.points[c]
        if kept:
            d = np.linalg.norm(cloud.points[kept] - p, axis=1)
            if np.any(d < cfg.nms_radius):
                continue
        kept.append(int(c))
    return [Keypoint(cloud.points[i].copy(), i, float(sal[i])) for i in kept]


def _orient(axis, toward, fallback_axis=2):
    """Flip ``axis`` so it points at ``toward``; ties fall back to the global +z (then +y, +x)."""
    s = float(axis @ toward)
    if abs(s) > 1e-12 * max(1.0, float(np.linalg.norm(toward))):
        return axis if s > 0 else -axis
    for a in (fallback_axis, 1, 0):
        if abs(axis[a]) > 1e-12:
            return axis if axis[a] > 0 else -axis
    return axis


def compute_descriptor(
    cloud: PointCloud, keypoint: Keypoint, cfg: DetectorConfig, index: SpatialIndex | None = None
) -> BinaryDescriptor:
    index = index or SpatialIndex(cloud)
    nb = index.radius(keypoint.position, cfg.neighborhood_radius)
    invalid = BinaryDescriptor(np.zeros(DESCRIPTOR_BITS, dtype=bool), valid=False)
    if len(nb) < MIN_NEIGHBOURS:
        return invalid
    pts = cloud.points[nb]
    centroid = pts.mean(axis=0)
    cov = np.cov((pts - centroid).T, bias=True)
    w, vecs = np.linalg.eigh(cov)  # ascending
    l3, l2, l1 = w
    if l1 <= 0 or ((l1 - l2) < EIGEN_GAP_TOL * l1 and (l2 - l3) < EIGEN_GAP_TOL * l1):
        return invalid
    toward = centroid - keypoint.position
    x = _orient(vecs[:, 2], toward)
    z = _orient(vecs[:, 0], toward)
    y = np.cross(z, x)
    local = pts - keypoint.position
    u, v, h = local @ x, local @ y, local @ z

    nr, na = cfg.radial_bins, cfg.angular_bins
    rad = np.minimum((np.hypot(u, v) / cfg.neighborhood_radius * nr).astype(np.intp), nr - 1)
    ang = np.mod(np.arctan2(v, u), 2 * np.pi)
    sector = np.minimum((ang / (2 * np.pi) * na).astype(np.intp), na - 1)
    cell = rad * na + sector
    counts = np.bincount(cell, minlength=nr * na).astype(np.float64)
    height_sum = np.bincount(cell, weights=h, minlength=nr * na)
    mean_h = np.divide(height_sum, counts, out=np.zeros_like(height_sum), where=counts > 0)
    bits = np.concatenate([counts > np.median(counts), mean_h > np.median(mean_h)])
    return BinaryDescriptor(bits, valid=True)


def compute_descriptors(cloud: PointCloud, keypoints: Sequence[Keypoint], cfg: DetectorConfig,
                        index: SpatialIndex | None = None) -> list[BinaryDescriptor]:
    index = index or SpatialIndex(cloud)
    return [compute_descriptor(cloud, k, cfg, index) for k in keypoints]


def hamming(a: BinaryDescriptor, b: BinaryDescriptor) -> float:
    """Fraction of differing bits, in [0, 1]."""
    if not (a.valid and b.valid):
        raise DescriptorError("degenerate descriptor in matching")
    if a.bits.shape != b.bits.shape:
        raise DescriptorError("descriptor lengths differ")
    return float(np.count_nonzero(a.bits != b.bits)) / a.bits.size


def save_sidecar(path, keypoints: Sequence[Keypoint], descriptors: Sequence[BinaryDescriptor]) -> None:
    """Binary cache of keypoints and descriptors.

    Layout (little-endian): magic ``IGSPKD1``, u32 count, u32 bit length,
    then per keypoint: 3 x f64 position, u64 source index, f64 saliency,
    u8 valid flag, packed descriptor bits.
    """
    if len(keypoints) != len(descriptors):
        raise ValueError("keypoints and descriptors differ in length")
    nbits = DESCRIPTOR_BITS if not descriptors else descriptors[0].bits.size
    with open(path, "wb") as fh:
        fh.write(SIDECAR_MAGIC)
        fh.write(struct.pack("<II", len(keypoints), nbits))
        for k, d in zip(keypoints, descriptors):
            fh.write(struct.pack("<3dQdB", *k.position, k.source_index, k.saliency, int(d.valid)))
            fh.write(d.packed())


def load_sidecar(path) -> tuple[list[Keypoint], list[BinaryDescriptor]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(SIDECAR_MAGIC):
        raise ValueError(f"{path}: not a keypoint sidecar (bad magic)")
    off = len(SIDECAR_MAGIC)
    count, nbits = struct.unpack_from("<II", data, off)
    off += 8
    nbytes = (nbits + 7) // 8
    rec = struct.calcsize("<3dQdB")
    if len(data) != off + count * (rec + nbytes):
        raise ValueError(f"{path}: truncated sidecar")
    kps, descs = [], []
    for _ in range(count):
        x, y, z, idx, sal, valid = struct.unpack_from("<3dQdB", data, off)
        off += rec
        bits = np.unpackbits(np.frombuffer(data, np.uint8, nbytes, off))[:nbits].astype(bool)
        off += nbytes
        kps.append(Keypoint(np.array([x, y, z]), int(idx), sal))
        descs.append(BinaryDescriptor(bits, bool(valid)))
    return kps, descs
