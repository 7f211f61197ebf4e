import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zp3.errors import InvalidArgumentError
from zp3.views import (Camera, RotationPlan, ViewSpec, angular_distance,
                       camera_from_entry, camera_from_spec, classify_view,
                       far_field_adapt, make_input_set, make_rotation_plan,
                       max_coverage_gap, pose_entry, spec_from_camera)


class TestCameraFromSpec:
    def test_front_position(self):
        cam = camera_from_spec(ViewSpec(0.0, 0.0, 2.0), 50, 50, 16, 16)
        np.testing.assert_allclose(cam.center, [2.0, 0.0, 0.0], atol=1e-12)
        # forward axis points toward -x (at the origin target)
        np.testing.assert_allclose(cam.rotation[2], [-1.0, 0.0, 0.0], atol=1e-12)

    def test_quarter_turn(self):
        cam = camera_from_spec(ViewSpec(90.0, 0.0, 2.0), 50, 50, 16, 16)
        np.testing.assert_allclose(cam.center, [0.0, 2.0, 0.0], atol=1e-12)

    def test_zero_radius_rejected(self):
        with pytest.raises(InvalidArgumentError):
            ViewSpec(0.0, 0.0, 0.0)

    def test_target_projects_to_principal_point(self):
        cam = camera_from_spec(ViewSpec(33.0, 21.0, 2.5), 40, 42, 15, 17)
        px, z = cam.project_points(np.zeros(3))
        np.testing.assert_allclose(px[0], [15.0, 17.0], atol=1e-9)
        assert z[0] == pytest.approx(2.5)

    def test_rotation_is_right_handed(self):
        cam = camera_from_spec(ViewSpec(123.0, -45.0, 3.0), 40, 40, 16, 16)
        R = cam.rotation
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)


class TestFarField:
    def test_factor_100(self):
        cam = camera_from_spec(ViewSpec(0.0, 0.0, 2.0), 50, 50, 16, 16)
        far = far_field_adapt(cam, 100.0)
        assert np.linalg.norm(far.center) == pytest.approx(200.0)
        assert far.fx == pytest.approx(5000.0)
        assert far.projection == "far-field"

    def test_identity(self):
        cam = camera_from_spec(ViewSpec(10.0, 5.0, 2.0), 50, 50, 16, 16)
        same = far_field_adapt(cam, 1.0)
        np.testing.assert_allclose(same.center, cam.center, atol=1e-12)
        assert same.fx == cam.fx

    def test_target_projection_invariant(self):
        cam = camera_from_spec(ViewSpec(77.0, 13.0, 2.3), 64, 60, 31.5, 32.5)
        far = far_field_adapt(cam, 100.0)
        p0, _ = cam.project_points(np.zeros(3))
        p1, _ = far.project_points(np.zeros(3))
        np.testing.assert_allclose(p0, p1, atol=1e-6)

    def test_near_axis_point_nearly_invariant(self):
        cam = camera_from_spec(ViewSpec(0.0, 0.0, 2.0), 50, 50, 16, 16)
        far = far_field_adapt(cam, 100.0)
        p = np.array([0.05, 0.02, -0.01])
        p0, _ = cam.project_points(p)
        p1, _ = far.project_points(p)
        assert np.all(np.abs(p0 - p1) < 0.1)  # parallax shrinks with distance


class TestClassifyView:
    def test_frontal(self):
        assert classify_view(ViewSpec(0.0, 0.0, 2.0), 0.0) == 2.0

    def test_back(self):
        assert classify_view(ViewSpec(180.0, 0.0, 2.0), 0.0) == 1.5

    def test_side(self):
        assert classify_view(ViewSpec(90.0, 0.0, 2.0), 0.0) == 1.0

    def test_boundaries(self):
        assert classify_view(45.0, 0.0) == 2.0
        assert classify_view(135.0, 0.0) == 1.5

    @given(st.floats(-720, 720), st.floats(-720, 720), st.integers(-3, 3))
    @settings(max_examples=200, deadline=None)
    def test_symmetry_and_wrap(self, a, b, k):
        assert classify_view(a, b) == classify_view(b, a)
        assert classify_view(a + 360.0 * k, b) == classify_view(a, b)


class TestMakeInputSet:
    def test_three_over_quarter(self):
        views = make_input_set((0.0, 90.0), 3)
        assert [v.azimuth for v in views] == [0.0, 45.0, 90.0]
        assert all(v.elevation == 0.0 for v in views)

    def test_two_endpoints(self):
        views = make_input_set((0.0, 45.0), 2)
        assert [v.azimuth for v in views] == [0.0, 45.0]

    def test_span_too_small(self):
        with pytest.raises(InvalidArgumentError):
            make_input_set((0.0, 30.0), 3)

    def test_centred_in_wider_range(self):
        views = make_input_set((0.0, 120.0), 3)
        assert [v.azimuth for v in views] == [15.0, 60.0, 105.0]

    def test_count_validation(self):
        with pytest.raises(InvalidArgumentError):
            make_input_set((0.0, 180.0), 4)


class TestRotationPlan:
    def test_first_batch(self):
        plan = make_rotation_plan(0.0, 45.0, 6.0, 1, 8)
        az = sorted(v.azimuth for v in plan.batches[0])
        assert az == [0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0]

    def test_second_batch_shifted(self):
        plan = make_rotation_plan(0.0, 45.0, 6.0, 2, 8)
        az0 = sorted(v.azimuth for v in plan.batches[0])
        az1 = sorted(v.azimuth for v in plan.batches[1])
        np.testing.assert_allclose(az1, [(a - 6.0) % 360.0 for a in az0])

    def test_alternating_offsets(self):
        plan = make_rotation_plan(0.0, 45.0, 6.0, 5, 1)
        az = [plan.batches[k][0].azimuth for k in range(5)]
        np.testing.assert_allclose(az, [0.0, 354.0, 6.0, 348.0, 12.0])

    def test_elevations_replicated(self):
        plan = make_rotation_plan(0.0, 45.0, 6.0, 1, 4, elevations=(-30.0, 0.0, 30.0))
        assert len(plan.batches[0]) == 12
        els = sorted({v.elevation for v in plan.batches[0]})
        assert els == [-30.0, 0.0, 30.0]

    def test_invalid_arguments(self):
        with pytest.raises(InvalidArgumentError):
            make_rotation_plan(0.0, 45.0, 6.0, 0, 8)
        with pytest.raises(InvalidArgumentError):
            make_rotation_plan(0.0, 45.0, 6.0, 1, 0)
        with pytest.raises(InvalidArgumentError):
            make_rotation_plan(0.0, 0.0, 6.0, 1, 8)

    def test_coverage_gap(self):
        plan = make_rotation_plan(0.0, 45.0, 6.0, 8, 8)
        gap = max_coverage_gap(plan.all_azimuths())
        assert gap <= 6.0 + 1e-9


class TestPoseIO:
    def test_entry_round_trip(self):
        cam = camera_from_spec(ViewSpec(10.0, 20.0, 2.0), 40, 41, 16, 17)
        entry = pose_entry("foo.png", cam)
        back = camera_from_entry(entry)
        np.testing.assert_allclose(back.rotation, cam.rotation)
        np.testing.assert_allclose(back.translation, cam.translation)
        assert back.fx == cam.fx

    def test_spec_recovery(self):
        spec = ViewSpec(123.0, -31.0, 2.7)
        cam = camera_from_spec(spec, 40, 40, 16, 16)
        rec = spec_from_camera(cam, np.zeros(3))
        assert rec.azimuth == pytest.approx(123.0, abs=1e-9)
        assert rec.elevation == pytest.approx(-31.0, abs=1e-9)
        assert rec.radius == pytest.approx(2.7, abs=1e-12)


def test_angular_distance_basics():
    assert angular_distance(10.0, 350.0) == pytest.approx(20.0)
    assert angular_distance(0.0, 180.0) == pytest.approx(180.0)
    assert angular_distance(90.0, 90.0) == 0.0
