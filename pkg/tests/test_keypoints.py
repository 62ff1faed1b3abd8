import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import cube_surface, random_rigid
from igsp.geometry import GeometryError, PointCloud, apply, median_spacing
from igsp.keypoints import (
    DESCRIPTOR_BITS,
    BinaryDescriptor,
    DescriptorError,
    DetectorConfig,
    Keypoint,
    compute_descriptor,
    compute_descriptors,
    detect_keypoints,
    hamming,
    load_sidecar,
    saliency,
    save_sidecar,
)
from igsp.scenes import SceneSpec, sample_scene


def brute_saliency(pts, r):
    out = np.zeros(len(pts))
    for i, p in enumerate(pts):
        nb = pts[np.linalg.norm(pts - p, axis=1) <= r]
        if len(nb) < 10:
            continue
        w = np.linalg.eigvalsh(np.cov(nb.T, bias=True))
        out[i] = w[0] / w[2] if w[2] > 0 else 0.0
    return out


def desc(bits):
    return BinaryDescriptor(np.asarray(bits, dtype=bool))


class TestDetectorConfig:
    def test_bits_constraint(self):
        with pytest.raises(ValueError):
            DetectorConfig(1.0, 1.0, radial_bins=3)

    def test_positive_radii(self):
        with pytest.raises(ValueError):
            DetectorConfig(0.0, 1.0)

    def test_density_relative_defaults(self):
        c = cube_surface(11)
        s = median_spacing(c)
        cfg = DetectorConfig.for_cloud(c)
        assert cfg.nms_radius == pytest.approx(4 * s) and cfg.neighborhood_radius == pytest.approx(6 * s)


class TestSaliency:
    def test_matches_brute_force(self, rng):
        pts = rng.uniform(size=(300, 3))
        assert np.allclose(saliency(PointCloud(pts), 0.25), brute_saliency(pts, 0.25), atol=1e-9)


class TestDetect:
    def test_plane_has_no_keypoints(self):
        g = np.stack(np.meshgrid(np.arange(20.0), np.arange(20.0)), -1).reshape(-1, 2)
        plane = PointCloud(np.column_stack([g, np.zeros(len(g))]))
        assert detect_keypoints(plane, DetectorConfig(3.0, 3.0)) == []

    def test_cube_corner_detected(self):
        c = cube_surface(15)
        r = 3.5 * median_spacing(c)
        cfg = DetectorConfig(nms_radius=r, neighborhood_radius=r)
        kps = detect_keypoints(c, cfg)
        # oracle: brute-force saliency argmax is a cube corner and is returned
        sal = brute_saliency(c.points, r)
        best = int(np.argmax(sal))
        assert set(np.round(c.points[best], 9)) <= {0.0, 1.0}
        assert best in [k.source_index for k in kps]
        corners = [k for k in kps if set(np.round(k.position, 9)) <= {0.0, 1.0}]
        assert len(corners) == 8

    def test_sorted_and_members(self, rng):
        c = PointCloud(sample_scene(SceneSpec(n_points=3000), rng))
        kps = detect_keypoints(c, DetectorConfig.for_cloud(c))
        sal = [k.saliency for k in kps]
        assert sal == sorted(sal, reverse=True)
        for k in kps:
            assert np.array_equal(c.points[k.source_index], k.position)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 0.3))
    def test_nms_consistent(self, seed, rk):
        pts = np.random.default_rng(seed).uniform(size=(400, 3))
        kps = detect_keypoints(PointCloud(pts), DetectorConfig(nms_radius=rk, neighborhood_radius=0.2))
        P = np.array([k.position for k in kps]).reshape(-1, 3)
        D = np.linalg.norm(P[:, None] - P[None], axis=2) + np.eye(len(P)) * 1e9
        assert len(P) < 2 or D.min() >= rk

    def test_too_few_points(self):
        with pytest.raises(GeometryError, match="too few points for detection"):
            detect_keypoints(PointCloud(np.zeros((5, 3))), DetectorConfig(1.0, 1.0))


class TestDescriptor:
    def test_three_point_neighbourhood_invalid(self):
        c = PointCloud([[0, 0, 0], [0.1, 0, 0], [0, 0.1, 0], [50, 50, 50]])
        d = compute_descriptor(c, Keypoint(c.points[0], 0, 0.0), DetectorConfig(1.0, 1.0))
        assert not d.valid

    def test_length(self):
        c = cube_surface(15)
        kps = detect_keypoints(c, DetectorConfig.for_cloud(c))
        assert all(d.bits.size == DESCRIPTOR_BITS for d in compute_descriptors(c, kps, DetectorConfig.for_cloud(c)))

    def test_rigid_invariance(self, rng):
        c = PointCloud(sample_scene(SceneSpec(n_points=6000, seed=3), np.random.default_rng(3)))
        cfg = DetectorConfig.for_cloud(c)
        kps = detect_keypoints(c, cfg)
        before = compute_descriptors(c, kps, cfg)
        flips = []
        for trial in range(3):
            T = random_rigid(rng, 10.0)
            moved = apply(T, c)
            after = compute_descriptors(moved, [Keypoint(moved.points[k.source_index], k.source_index, k.saliency)
                                                for k in kps], cfg)
            flips += [np.count_nonzero(a.bits != b.bits) for a, b in zip(before, after) if a.valid and b.valid]
        assert np.mean(np.array(flips) <= 4) >= 0.95

    def test_corner_differs_from_plane_centre(self):
        c = cube_surface(21)
        cfg = DetectorConfig.for_cloud(c)
        corner = int(np.argmin(np.linalg.norm(c.points - [0, 0, 0], axis=1)))
        centre = int(np.argmin(np.linalg.norm(c.points - [0.5, 0.5, 0.0], axis=1)))
        a = compute_descriptor(c, Keypoint(c.points[corner], corner, 0.0), cfg)
        b = compute_descriptor(c, Keypoint(c.points[centre], centre, 0.0), cfg)
        # the flat patch has near-equal in-plane eigenvalues but a clear normal, so it is valid
        assert a.valid and b.valid and hamming(a, b) > 0

    def test_deterministic(self):
        c = cube_surface(15)
        cfg = DetectorConfig.for_cloud(c)
        kps = detect_keypoints(c, cfg)
        assert compute_descriptors(c, kps, cfg) == compute_descriptors(c, kps, cfg)


class TestHamming:
    def test_identical(self):
        a = desc(np.random.default_rng(0).integers(0, 2, 128))
        assert hamming(a, a) == 0.0

    def test_complement(self):
        bits = np.random.default_rng(1).integers(0, 2, 128).astype(bool)
        assert hamming(desc(bits), desc(~bits)) == 1.0

    def test_single_bit(self):
        bits = np.zeros(128, dtype=bool)
        other = bits.copy()
        other[17] = True
        assert hamming(desc(bits), desc(other)) == 1 / 128

    def test_invalid_raises(self):
        with pytest.raises(DescriptorError, match="degenerate descriptor in matching"):
            hamming(desc(np.zeros(128)), BinaryDescriptor(np.zeros(128), valid=False))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_metric_axioms(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (desc(rng.integers(0, 2, 128)) for _ in range(3))
        assert hamming(a, b) == hamming(b, a) >= 0
        assert hamming(a, c) <= hamming(a, b) + hamming(b, c)
        assert (hamming(a, b) == 0) == (a == b)


class TestSidecar:
    def test_round_trip(self, tmp_path):
        c = cube_surface(15)
        cfg = DetectorConfig.for_cloud(c)
        kps = detect_keypoints(c, cfg)
        ds = compute_descriptors(c, kps, cfg) + [BinaryDescriptor(np.zeros(128), valid=False)]
        kps = kps + [Keypoint(c.points[0], 0, 0.0)]
        p = tmp_path / "k.igspkd"
        save_sidecar(p, kps, ds)
        assert p.read_bytes()[:7] == b"IGSPKD1"
        k2, d2 = load_sidecar(p)
        assert d2 == ds
        assert all(np.array_equal(a.position, b.position) and a.source_index == b.source_index
                   and a.saliency == b.saliency for a, b in zip(kps, k2))

    def test_bad_magic_and_truncation(self, tmp_path):
        p = tmp_path / "x"
        p.write_bytes(b"NOTMAGIC")
        with pytest.raises(ValueError, match="magic"):
            load_sidecar(p)
        save_sidecar(p, [Keypoint(np.zeros(3), 0, 0.0)], [desc(np.zeros(128))])
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(ValueError, match="truncated"):
            load_sidecar(p)
