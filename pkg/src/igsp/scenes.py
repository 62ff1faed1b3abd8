"""Seeded synthetic scenes with repetitive and symmetric structure.

A scene is sampled from a small set of primitives: a ground plane with two
walls, a regular array of columns and a few randomly placed boxes. The
target is a half-space trimmed copy of the source, moved by a random rigid
transform and perturbed by isotropic Gaussian noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, RigidTransform, random_transform

PRIMITIVES = ("planes", "columns", "boxes")
# grid jitter as a fraction of the cell size
JITTER = 0.25


@dataclass(frozen=True)
class GroundTruth:
    """``transform`` maps target coordinates into the source frame."""

    transform: RigidTransform
    tolerance: float

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("correspondence tolerance must be positive")


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple[str, ...] = PRIMITIVES
    n_points: int = 10000
    noise: float = 0.005  # stdev as a fraction of the source diagonal
    overlap: float = 0.75
    seed: int = 0
    min_angle_deg: float = 10.0
    max_angle_deg: float = 60.0
    max_translation: float = 0.5  # fraction of the source diagonal
    extent: tuple[float, float, float] = (12.0, 12.0, 6.0)
    column_grid: tuple[int, int] = (3, 3)
    column_shape: str = "square"  # or "round"
    column_width: float = 1.0
    column_height: float = 3.0
    n_boxes: int = 3

    def __post_init__(self):
        if self.n_points < 100:
            raise ValueError("point budget must be at least 100")
        if not 0 < self.overlap <= 1:
            raise ValueError("overlap must lie in (0, 1]")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.column_shape not in ("square", "round"):
            raise ValueError("column_shape must be 'square' or 'round'")
        unknown = set(self.primitives) - set(PRIMITIVES)
        if unknown or not self.primitives:
            raise ValueError(f"unknown primitives {sorted(unknown)}")


# Each surface patch is (area, sampler(rng, count) -> (count, 3) points).

def _jittered_grid(rng, k, width, height):
    """About ``k`` samples of a width x height parameter rectangle on a jittered grid."""
    h = math.sqrt(width * height / k)
    nu, nv = max(1, round(width / h)), max(1, round(height / h))
    gu, gv = np.meshgrid((np.arange(nu) + 0.5) / nu, (np.arange(nv) + 0.5) / nv, indexing="ij")
    a = gu.ravel() + rng.uniform(-JITTER, JITTER, gu.size) / nu
    b = gv.ravel() + rng.uniform(-JITTER, JITTER, gv.size) / nv
    return np.clip(a, 0, 1), np.clip(b, 0, 1)


def _rect(origin, u, v):
    origin, u, v = (np.asarray(x, dtype=np.float64) for x in (origin, u, v))
    area = np.linalg.norm(np.cross(u, v))

    def sample(rng, k):
        a, b = _jittered_grid(rng, k, np.linalg.norm(u), np.linalg.norm(v))
        return origin + a[:, None] * u + b[:, None] * v
    return area, sample


def _cylinder(center, radius, height):
    cx, cy, cz = center

    def sample(rng, k):
        a, b = _jittered_grid(rng, k, 2 * np.pi * radius, height)
        th, z = 2 * np.pi * a, height * b
        return np.column_stack([cx + radius * np.cos(th), cy + radius * np.sin(th), cz + z])
    return 2 * np.pi * radius * height, sample


def _disk(center, radius):
    cx, cy, cz = center

    def sample(rng, k):
        a, b = _jittered_grid(rng, k * 4 / np.pi, 1.0, 1.0)
        x, y = radius * (2 * a - 1), radius * (2 * b - 1)
        inside = x ** 2 + y ** 2 <= radius ** 2
        x, y = x[inside], y[inside]
        return np.column_stack([cx + x, cy + y, np.full(len(x), cz)])
    return np.pi * radius ** 2, sample


def _box(lo, size):
    x, y, z = lo
    dx, dy, dz = size
    faces = [
        _rect((x, y, z + dz), (dx, 0, 0), (0, dy, 0)),
        _rect((x, y, z), (dx, 0, 0), (0, 0, dz)),
        _rect((x, y + dy, z), (dx, 0, 0), (0, 0, dz)),
        _rect((x, y, z), (0, dy, 0), (0, 0, dz)),
        _rect((x + dx, y, z), (0, dy, 0), (0, 0, dz)),
    ]
    return faces


def _patches(spec: SceneSpec, rng: np.random.Generator):
    W, D, H = spec.extent
    patches = []
    if "planes" in spec.primitives:
        patches.append(_rect((0, 0, 0), (W, 0, 0), (0, D, 0)))
        patches.append(_rect((0, D, 0), (W, 0, 0), (0, 0, H)))
        patches.append(_rect((0, 0, 0), (0, D, 0), (0, 0, H)))
    if "columns" in spec.primitives:
        nx, ny = spec.column_grid
        half, height = spec.column_width / 2, spec.column_height
        for i in range(nx):
            for j in range(ny):
                c = ((j + 1) * W / (ny + 1), (i + 1) * D / (nx + 1), 0.0)
                if spec.column_shape == "square":
                    patches.extend(_box((c[0] - half, c[1] - half, 0.0), (2 * half, 2 * half, height)))
                else:
                    patches.append(_cylinder(c, half, height))
                    patches.append(_disk((c[0], c[1], height), half))
    if "boxes" in spec.primitives:
        for _ in range(spec.n_boxes):
            size = rng.uniform([0.8, 0.8, 0.6], [2.5, 2.0, 2.0])
            lo = (rng.uniform(0.5, W - size[0] - 0.5), rng.uniform(0.5, D - size[1] - 0.5), 0.0)
            patches.extend(_box(lo, size))
    return patches


def sample_scene(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    patches = _patches(spec, rng)
    areas = np.array([a for a, _ in patches])
    counts = areas / areas.sum() * spec.n_points
    pts = [sampler(rng, k) for (_, sampler), k in zip(patches, counts) if k >= 1]
    return np.concatenate(pts, axis=0)


def generate_scene(spec: SceneSpec, tolerance: float | None = None):
    """Return ``(source, target, ground_truth)``.

    ``tolerance`` is the ground-truth correspondence radius; by default twice
    the source's median point spacing.
    """
    from .geometry import median_spacing

    rng = np.random.default_rng(spec.seed)
    src = sample_scene(spec, rng)
    source = PointCloud(src)
    diag = source.diagonal()

    # half-space trim along a random horizontal direction
    phi = rng.uniform(0, 2 * np.pi)
    direction = np.array([math.cos(phi), math.sin(phi), 0.0])
    keep_n = int(round(spec.overlap * len(src)))
    if keep_n >= len(src):
        kept = src
    else:
        order = np.argsort(src @ direction, kind="stable")
        kept = src[np.sort(order[:keep_n])]

    motion = random_transform(
        rng, (math.radians(spec.min_angle_deg), math.radians(spec.max_angle_deg)), spec.max_translation * diag
    )
    moved = motion.transform_points(kept)
    if spec.noise > 0:
        moved = moved + rng.normal(scale=spec.noise * diag, size=moved.shape)
    target = PointCloud(moved)
    tol = tolerance if tolerance is not None else 2.0 * median_spacing(source)
    return source, target, GroundTruth(motion.inverse(), tol)
