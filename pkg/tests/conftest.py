import numpy as np
import pytest

from igsp.geometry import PointCloud, RigidTransform, rotation_about_axis


def random_rotation(rng):
    """Rotation from a QR decomposition of a Gaussian matrix (independent of the library sampler)."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_rigid(rng, scale=1.0):
    return RigidTransform(random_rotation(rng), rng.normal(scale=scale, size=3))


def cube_surface(n_per_face=15, size=1.0):
    """Points on the surface of an axis-aligned cube on a regular grid (corners included)."""
    g = np.linspace(0, size, n_per_face)
    a, b = np.meshgrid(g, g, indexing="ij")
    a, b = a.ravel(), b.ravel()
    faces = []
    for axis in range(3):
        for val in (0.0, size):
            pts = np.empty((len(a), 3))
            others = [i for i in range(3) if i != axis]
            pts[:, axis] = val
            pts[:, others[0]] = a
            pts[:, others[1]] = b
            faces.append(pts)
    pts = np.unique(np.round(np.concatenate(faces), 12), axis=0)
    return PointCloud(pts)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["random_rotation", "random_rigid", "cube_surface", "rotation_about_axis", "ACCEPTANCE_LINES"]


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
