import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lift3d.errors import BehindCamera
from lift3d.geometry import (
    BBox,
    CameraPose,
    azimuth_error,
    camera_center,
    circular_mean,
    iou,
    project,
    project_points,
    project_points_jacobian,
    rotation_from_pose,
)


def random_pose(rng, focal=3000.0):
    return CameraPose(rng.uniform(0, 360), rng.uniform(-90, 90), rng.uniform(-180, 180),
                      rng.uniform(0.5, 100), (rng.uniform(-500, 500), rng.uniform(-500, 500)), focal)


class TestCameraPose:
    def test_normalization(self):
        p = CameraPose(370, 95, 190, 5)
        assert p.azimuth == pytest.approx(10)
        assert p.elevation < 90
        assert p.theta == pytest.approx(-170)

    def test_replace_renormalizes(self):
        p = CameraPose(10, 0, 0, 5).replace(azimuth=-30)
        assert p.azimuth == pytest.approx(330)

    @pytest.mark.parametrize("kw", [{"distance": 0}, {"distance": -1}, {"focal": 0}])
    def test_rejects_nonpositive(self, kw):
        args = dict(azimuth=0, elevation=0, theta=0, distance=1)
        args.update(kw)
        with pytest.raises(ValueError):
            CameraPose(**args)

    def test_vector_round_trip(self):
        p = CameraPose(123.4, -12.5, 7.0, 9.0, (10.0, -3.0), 1500.0)
        q = CameraPose.from_vector(p.to_vector(), p.focal)
        assert q.azimuth == pytest.approx(p.azimuth)
        assert q.distance == p.distance and q.translation == p.translation

    def test_dict_round_trip(self):
        p = CameraPose(1.5, 2.5, -3.5, 4.5, (5.5, 6.5), 700.0)
        assert CameraPose.from_dict(p.to_dict()) == p


class TestRotation:
    def test_zero_angles_is_reference_view(self):
        R = rotation_from_pose(CameraPose(0, 0, 0, 1))
        # camera on -Y looking along +Y, world Z up maps to image up (-y)
        np.testing.assert_allclose(R @ [0, 1, 0], [0, 0, 1], atol=1e-15)
        np.testing.assert_allclose(R @ [0, 0, 1], [0, -1, 0], atol=1e-15)
        np.testing.assert_allclose(camera_center(CameraPose(0, 0, 0, 3)), [0, -3, 0], atol=1e-15)

    def test_inverse_symmetry(self):
        Ra = rotation_from_pose(CameraPose(90, 0, 0, 1))
        Rb = rotation_from_pose(CameraPose(-90, 0, 0, 1))
        R0 = rotation_from_pose(CameraPose(0, 0, 0, 1))
        # panning by +90 then -90 about world Z returns to the reference view
        np.testing.assert_allclose(Ra @ R0.T @ Rb, R0, atol=1e-12)

    def test_orthonormal_example(self):
        R = rotation_from_pose(CameraPose(37, 12, 5, 1))
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)

    def test_orthonormal_random(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            R = rotation_from_pose(random_pose(rng))
            assert np.abs(R.T @ R - np.eye(3)).max() < 1e-10
            assert abs(np.linalg.det(R) - 1) <= 1e-10

    def test_camera_center_maps_to_camera_origin(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            p = random_pose(rng)
            c = rotation_from_pose(p) @ camera_center(p) + [0, 0, p.distance]
            np.testing.assert_allclose(c, 0, atol=1e-9 * p.distance)


class TestProject:
    def test_origin_to_translation(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            p = random_pose(rng)
            np.testing.assert_allclose(project(p, [0, 0, 0]), p.translation, rtol=0, atol=1e-9)

    def test_translation_additivity(self):
        p = CameraPose(33, 10, 4, 7, (100, 50))
        np.testing.assert_array_equal(project(p, [0, 0, 0]), [100, 50])

    def test_ray_invariance(self):
        p = CameraPose(33, 10, 4, 7, (100, 50))
        X = np.array([0.4, -0.3, 0.8])
        C = camera_center(p)
        for s in (0.25, 0.5, 0.9):
            np.testing.assert_allclose(project(p, C + s * (X - C)), project(p, X), atol=1e-9)

    def test_behind_camera(self):
        p = CameraPose(0, 0, 0, 5)
        # camera at (0, -5, 0) looking along +Y
        with pytest.raises(BehindCamera):
            project(p, [0, -6, 0])
        with pytest.raises(BehindCamera):
            project(p, [0, -5, 0])

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(3)
        p = CameraPose(200, 20, -5, 20, (320, 240))
        X = rng.uniform(-1, 1, (10, 3))
        np.testing.assert_allclose(project_points(p.to_vector(), X, p.focal),
                                   [project(p, x) for x in X])

    def test_elevation_lifts_top(self):
        # seen from above, the object's top projects above its center
        assert project(CameraPose(0, 30, 0, 10), [0, 0, 1])[1] < 0

    def test_jacobian_against_central_differences(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(-1, 1, (6, 3))
        p = CameraPose(40, 15, 3, 12, (300, 200)).to_vector()
        J = project_points_jacobian(p, X).reshape(-1, 6)
        h = np.array([1e-5, 1e-5, 1e-5, 1e-5 * p[3], 1e-5, 1e-5])
        for k in range(6):
            dp = np.zeros(6)
            dp[k] = h[k]
            fd = (project_points(p + dp, X) - project_points(p - dp, X)).ravel() / (2 * h[k])
            np.testing.assert_allclose(J[:, k], fd, rtol=1e-5, atol=1e-5)


class TestAzimuthError:
    @pytest.mark.parametrize("a,b,expected", [(10, 350, 20), (42, 42, 0), (0, 180, 180),
                                              (-10, 10, 20), (720, 0, 0)])
    def test_examples(self, a, b, expected):
        assert azimuth_error(a, b) == pytest.approx(expected)

    def test_properties_random(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            a, b, c = rng.uniform(-720, 720, 3)
            assert azimuth_error(a, b) == azimuth_error(b, a)
            assert azimuth_error(a, c) <= azimuth_error(a, b) + azimuth_error(b, c) + 1e-9
            assert 0 <= azimuth_error(a, b) <= 180

    @given(st.floats(-1e4, 1e4), st.integers(-5, 5))
    def test_zero_iff_congruent(self, a, k):
        assert azimuth_error(a, a + 360 * k) == pytest.approx(0, abs=1e-9)

    @given(st.floats(0, 360), st.floats(1e-3, 359.999))
    def test_nonzero_when_not_congruent(self, a, d):
        assert azimuth_error(a, a + d) > 0

    def test_circular_mean_wraps(self):
        assert azimuth_error(circular_mean([350, 10]), 0) < 1e-9
        assert circular_mean([90] * 5) == pytest.approx(90)


def _pixel_count_iou(b1, b2, lo, hi):
    """Count unit cells covered by integer boxes."""
    xs, ys = np.meshgrid(np.arange(lo, hi) + 0.5, np.arange(lo, hi) + 0.5)

    def inside(b):
        return (xs >= b.xmin) & (xs <= b.xmax) & (ys >= b.ymin) & (ys <= b.ymax)

    m1, m2 = inside(b1), inside(b2)
    return np.count_nonzero(m1 & m2) / np.count_nonzero(m1 | m2)


class TestIoU:
    def test_identical(self):
        b = BBox(3, 4, 10, 20)
        assert iou(b, b) == 1.0

    def test_third(self):
        assert iou(BBox(0, 0, 10, 10), BBox(5, 0, 15, 10)) == pytest.approx(1 / 3)

    def test_disjoint(self):
        assert iou(BBox(0, 0, 1, 1), BBox(2, 2, 3, 3)) == 0.0
        assert iou(BBox(0, 0, 1, 1), BBox(1, 0, 2, 1)) == 0.0

    def test_against_pixel_count(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            boxes = []
            for _ in range(2):
                x0, y0 = rng.integers(0, 40, 2)
                w, h = rng.integers(1, 25, 2)
                boxes.append(BBox(x0, y0, x0 + w, y0 + h))
            assert iou(*boxes) == pytest.approx(iou(boxes[1], boxes[0]), abs=1e-15)
            assert abs(iou(*boxes) - _pixel_count_iou(*boxes, 0, 70)) < 1e-3

    def test_invalid_box(self):
        with pytest.raises(ValueError):
            BBox(5, 0, 5, 10)


@settings(max_examples=200)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_azimuth_normalization_range(a, t):
    p = CameraPose(a, 0, t, 1)
    assert 0 <= p.azimuth < 360
    assert -180 <= p.theta < 180
    assert math.isclose(azimuth_error(p.azimuth, a), 0, abs_tol=1e-9)
