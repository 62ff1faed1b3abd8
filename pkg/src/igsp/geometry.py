"""Point clouds, rigid transforms and nearest-neighbour search.

All coordinates are stored as float64. Containers are immutable: the
underlying arrays are flagged read-only after construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

ORTHO_TOL = 1e-9
NORMAL_TOL = 1e-6


class GeometryError(ValueError):
    """Raised when geometric input violates a precondition."""


def _frozen(a: ArrayLike, shape_tail: tuple[int, ...]) -> NDArray[np.float64]:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.size == 0:
        arr = arr.reshape((0,) + shape_tail)
    if arr.shape[1:] != shape_tail:
        raise GeometryError(f"expected array of shape (N, {shape_tail}), got {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PointCloud:
    """Ordered 3D points with optional unit normals."""

    points: NDArray[np.float64]
    normals: Optional[NDArray[np.float64]] = None

    def __post_init__(self):
        pts = _frozen(self.points, (3,))
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = _frozen(self.normals, (3,))
            if len(nrm) != len(pts):
                raise GeometryError("normals and points differ in length")
            if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > NORMAL_TOL:
                raise GeometryError("normals must have unit length")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, PointCloud) or self.has_normals != other.has_normals:
            return NotImplemented if not isinstance(other, PointCloud) else False
        return np.array_equal(self.points, other.points) and (
            not self.has_normals or np.array_equal(self.normals, other.normals))

    __hash__ = None

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx)
        normals = None if self.normals is None else self.normals[idx]
        return PointCloud(self.points[idx], normals)

    def diagonal(self) -> float:
        """Length of the axis-aligned bounding box diagonal."""
        if len(self) == 0:
            return 0.0
        return float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))


@dataclass(frozen=True)
class RigidTransform:
    """x -> R @ x + t with R a proper rotation."""

    R: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))
    t: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64)
        t = np.array(self.t, dtype=np.float64).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise GeometryError("R must be 3x3 and t a 3-vector")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise GeometryError("transform entries must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL:
            raise GeometryError("R is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise GeometryError("R is not a proper rotation (det != +1)")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t)

    __hash__ = None

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: ArrayLike) -> "RigidTransform":
        T = np.asarray(T, dtype=np.float64)
        if T.shape != (4, 4):
            raise GeometryError("homogeneous matrix must be 4x4")
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> NDArray[np.float64]:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -self.R.T @ self.t)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def transform_points(self, pts: ArrayLike) -> NDArray[np.float64]:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.R.T + self.t


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying ``b`` first, then ``a``."""
    R = a.R @ b.R
    # re-orthonormalise so long chains stay inside the invariant tolerance
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return RigidTransform(R, a.R @ b.t + a.t)


def apply(T: RigidTransform, cloud: PointCloud) -> PointCloud:
    normals = None if cloud.normals is None else cloud.normals @ T.R.T
    return PointCloud(T.transform_points(cloud.points), normals)


def rotation_about_axis(axis: ArrayLike, angle: float) -> NDArray[np.float64]:
    """Rodrigues formula."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def rot_z(angle: float) -> RigidTransform:
    c, s = np.cos(angle), np.sin(angle)
    return RigidTransform(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), np.zeros(3))


def rotation_angle(R: ArrayLike) -> float:
    """Angle of a rotation matrix, arccos((tr(R) - 1) / 2) with a clamped argument."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def random_transform(rng: np.random.Generator, angle_range=(0.0, np.pi), max_translation=1.0) -> RigidTransform:
    """Axis uniform on the sphere, angle uniform in ``angle_range``, translation uniform in a ball."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(*angle_range)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    t = direction * max_translation * rng.uniform() ** (1.0 / 3.0)
    return RigidTransform(rotation_about_axis(axis, angle), t)


class SpatialIndex:
    """k-NN and radius queries over a point cloud (kd-tree backed)."""

    def __init__(self, cloud: PointCloud | NDArray[np.float64]):
        pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self):
        return len(self.points)

    def knn(self, queries: ArrayLike, k: int = 1):
        """Return (distances, indices), each of shape (Q, k)."""
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        d, i = self._tree.query(q, k=k)
        if k == 1:
            d, i = d[:, None], i[:, None]
        return d, i

    def radius(self, query: ArrayLike, r: float) -> NDArray[np.intp]:
        """Sorted indices of all points within distance ``r`` (inclusive) of one query point."""
        idx = self._tree.query_ball_point(np.asarray(query, dtype=np.float64), r)
        return np.array(sorted(idx), dtype=np.intp)

    def radius_many(self, queries: ArrayLike, r: float) -> list:
        return self._tree.query_ball_point(np.asarray(queries, dtype=np.float64), r, return_sorted=False)


def spacing_stats(cloud: PointCloud) -> tuple[float, bool]:
    """Median nearest-neighbour distance and a degeneracy flag.

    The flag is set when more than half of the nearest-neighbour distances
    are zero (duplicate points dominate).
    """
    if len(cloud) < 2:
        raise GeometryError("insufficient points")
    d, _ = cKDTree(cloud.points).query(cloud.points, k=2)
    nn = d[:, 1]
    degenerate = bool(np.mean(nn == 0.0) > 0.5)
    if degenerate:
        logger.warning("median_spacing: duplicate points dominate the cloud")
    return float(np.median(nn)), degenerate


def median_spacing(cloud: PointCloud) -> float:
    return spacing_stats(cloud)[0]
