import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camfit.camgeom import (
    BBox,
    CameraAngles,
    CameraSpec,
    ImageFrame,
    Intrinsics,
    RigidCamera,
    WeakPerspectiveCam,
    angles_to_rotation,
    camera_conditioning_vector,
    camera_from_json,
    camera_to_json,
    focal_to_vfov,
    ground_plane_height,
    horizon_line,
    project,
    rotation_to_angles,
    vfov_to_focal,
    weak_to_full_translation,
    wrap_angle,
)
from camfit.errors import BehindCameraError, DomainError

angle = st.floats(-math.pi + 1e-6, math.pi, allow_nan=False)


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


# focal / fov


def test_vfov_to_focal_examples():
    assert vfov_to_focal(math.radians(90), 480) == pytest.approx(240.0, abs=1e-12)
    assert vfov_to_focal(math.radians(53.1301), 1080) == pytest.approx(1080.0, abs=1e-3)
    # 500 / tan(35 deg) evaluated at 30 significant digits
    assert vfov_to_focal(math.radians(70), 1000) == pytest.approx(714.074003371057, abs=1e-6)


def test_focal_to_vfov_examples():
    assert math.degrees(focal_to_vfov(240, 480)) == pytest.approx(90.0, abs=1e-12)
    assert math.degrees(focal_to_vfov(1080, 1080)) == pytest.approx(53.13010235415598, abs=1e-10)


@pytest.mark.parametrize("bad", [0.0, math.pi, -0.1, 4.0])
def test_vfov_out_of_range(bad):
    with pytest.raises(DomainError):
        vfov_to_focal(bad, 480)


@pytest.mark.parametrize("bad", [0.0, -5.0])
def test_focal_non_positive(bad):
    with pytest.raises(DomainError):
        focal_to_vfov(bad, 480)


def test_round_trip_random_focals():
    rng = np.random.default_rng(1)
    for f, h in zip(rng.uniform(10, 1e4, 1000), rng.integers(1, 4000, 1000)):
        assert vfov_to_focal(focal_to_vfov(f, h), h) == pytest.approx(f, rel=1e-9)


@given(st.floats(10.0, 170.0), st.integers(1, 5000))
def test_vfov_round_trip(vdeg, h):
    v = math.radians(vdeg)
    assert focal_to_vfov(vfov_to_focal(v, h), h) == pytest.approx(v, rel=1e-9)


def test_focal_strictly_decreasing_in_vfov():
    f = [vfov_to_focal(math.radians(d), 480) for d in np.linspace(5, 175, 200)]
    assert np.all(np.diff(f) < 0)


# rotations


def test_zero_angles_identity():
    assert np.allclose(angles_to_rotation(CameraAngles()), np.eye(3), atol=0)


def test_pitch_ninety():
    R = angles_to_rotation(CameraAngles.from_degrees(pitch=90))
    assert np.allclose(R, [[1, 0, 0], [0, 0, -1], [0, 1, 0]], atol=1e-15)


def test_pitch_roll_product():
    a, r = math.radians(10), math.radians(5)
    R = angles_to_rotation(CameraAngles(a, r, 0.0))
    assert np.allclose(R, _rx(a) @ _rz(r), atol=1e-15)


@given(angle, angle, angle)
def test_rotation_is_proper(p, r, y):
    R = angles_to_rotation(CameraAngles(p, r, y))
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-12
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


def test_rotation_to_angles_identity():
    a, degenerate = rotation_to_angles(np.eye(3))
    assert (a.pitch, a.roll, a.yaw) == (0.0, 0.0, 0.0)
    assert not degenerate


def test_rotation_to_angles_pitch_roll():
    a, degenerate = rotation_to_angles(_rx(math.radians(10)) @ _rz(math.radians(5)))
    assert not degenerate
    assert math.degrees(a.pitch) == pytest.approx(10.0, abs=1e-8)
    assert math.degrees(a.roll) == pytest.approx(5.0, abs=1e-8)
    assert math.degrees(a.yaw) == pytest.approx(0.0, abs=1e-8)


def test_rotation_to_angles_gimbal_flag():
    _, degenerate = rotation_to_angles(_rx(math.radians(89.5)) @ _rz(math.radians(1)))
    assert degenerate


@given(st.floats(-88.9, 88.9), st.floats(-80, 80), st.floats(-179.9, 179.9))
def test_rotation_round_trip(p, r, y):
    R = angles_to_rotation(CameraAngles.from_degrees(p, r, y))
    a, degenerate = rotation_to_angles(R)
    assert not degenerate
    assert np.linalg.norm(angles_to_rotation(a) - R) < 1e-8


def test_rotation_to_angles_rejects_non_rotation():
    with pytest.raises(DomainError):
        rotation_to_angles(np.diag([1.0, 1.0, -1.0]))


def test_wrap_angle_range():
    for a in np.linspace(-20, 20, 401):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-12)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)


def test_camera_angles_validation():
    with pytest.raises(DomainError):
        CameraAngles(vfov=0.0)
    with pytest.raises(DomainError):
        CameraAngles(vfov=math.pi)
    with pytest.raises(DomainError):
        CameraAngles(pitch=float("nan"))


def test_rigid_camera_rejects_reflection():
    with pytest.raises(DomainError):
        RigidCamera(np.diag([1.0, -1.0, 1.0]), np.zeros(3))
    cam = RigidCamera(_rx(0.3), [1, 2, 3])
    assert cam.translation.shape == (3,)


# projection

K_TEST = Intrinsics(1000.0, 1000.0, 500.0, 500.0)


def test_project_examples():
    I = np.eye(3)
    assert np.allclose(project([[0, 0, 5]], K_TEST, I, np.zeros(3)), [[500, 500]])
    assert np.allclose(project([[1, 0, 5]], K_TEST, I, np.zeros(3)), [[700, 500]])
    assert np.allclose(project([[0, 0, 0]], K_TEST, I, [0, 0, 5]), [[500, 500]])


def test_project_behind_camera_names_point():
    with pytest.raises(BehindCameraError) as info:
        project([[0, 0, 5], [0, 0, 1], [0, 0, -1]], K_TEST, np.eye(3), np.zeros(3))
    assert info.value.index == 2
    assert "2" in str(info.value)


@given(st.floats(0.01, 100.0))
def test_project_scale_invariant_along_rays(lam):
    X = np.array([[0.3, -0.2, 2.0], [-1.0, 0.5, 4.0]])
    a = project(X, K_TEST, np.eye(3), np.zeros(3))
    b = project(lam * X, K_TEST, np.eye(3), np.zeros(3))
    assert np.allclose(a, b, rtol=1e-12, atol=1e-9)


def test_project_zero_angle_rotation_equals_identity():
    X = np.random.default_rng(0).normal(size=(10, 3)) + [0, 0, 8]
    R = angles_to_rotation(CameraAngles(0.0, 0.0, 0.0))
    assert np.array_equal(project(X, K_TEST, R, np.zeros(3)), project(X, K_TEST, np.eye(3), np.zeros(3)))


# weak perspective


def test_weak_to_full_examples():
    frame = ImageFrame(224, 224)
    t = weak_to_full_translation(WeakPerspectiveCam(1.0), BBox(112, 112, 224, 224), frame, 5000)
    assert np.allclose(t, [0.0, 0.0, 2 * 5000 / 224], atol=1e-12)
    assert t[2] == pytest.approx(44.642857142857146, abs=1e-9)
    t = weak_to_full_translation(WeakPerspectiveCam(2.0), BBox(112, 112, 200, 200), frame, 1000)
    assert t[2] == pytest.approx(5.0, abs=1e-12)
    t = weak_to_full_translation(WeakPerspectiveCam(1.0), BBox(224, 112, 224, 224), frame, 1000)
    assert t[0] == pytest.approx(1.0, abs=1e-12)


@given(st.floats(0.1, 10), st.floats(50, 2000), st.integers(10, 3000), st.integers(10, 3000))
def test_weak_to_full_centred_bbox(s, f, w, h):
    t = weak_to_full_translation(WeakPerspectiveCam(s), BBox(w / 2, h / 2, 100, 120), ImageFrame(w, h), f)
    assert t[0] == 0.0 and t[1] == 0.0


def test_weak_perspective_errors():
    with pytest.raises(DomainError):
        WeakPerspectiveCam(0.0)
    with pytest.raises(DomainError):
        BBox(0, 0, 0, 10)
    with pytest.raises(DomainError):
        weak_to_full_translation(WeakPerspectiveCam(1.0), BBox(0, 0, 1, 1), ImageFrame(2, 2), 0.0)


# horizon


def test_horizon_level_camera():
    frame = ImageFrame(640, 480)
    for vfov in (30, 60, 100):
        hz = horizon_line(CameraAngles.from_degrees(vfov=vfov), frame)
        assert hz.visible
        assert np.allclose(hz.start, [0, 240]) and np.allclose(hz.end, [640, 240])


def test_horizon_pure_roll():
    frame = ImageFrame(640, 480)
    hz = horizon_line(CameraAngles.from_degrees(roll=5, vfov=60), frame)
    slope = (hz.end[1] - hz.start[1]) / (hz.end[0] - hz.start[0])
    assert abs(slope) == pytest.approx(math.tan(math.radians(5)), abs=1e-12)
    assert hz.v_at(320) == pytest.approx(240.0, abs=1e-9)


def test_horizon_pitch_matches_far_point():
    frame = ImageFrame(640, 480)
    angles = CameraAngles.from_degrees(pitch=10, vfov=60)
    hz = horizon_line(angles, frame)
    K = Intrinsics.from_vfov(angles.vfov, frame)
    R = angles_to_rotation(angles)
    # a far point straight ahead on the world horizontal plane, then extrapolate
    vs = [project([[0, 0, T]], K, R, np.zeros(3))[0, 1] for T in (1e4, 1e6, 1e8)]
    assert hz.v_at(320) == pytest.approx(vs[-1], abs=1e-4)
    assert hz.v_at(320) < 240  # looking down puts the horizon in the upper half


@given(st.floats(-19, 19), st.floats(40, 120))
def test_horizon_horizontal_without_roll(pitch, vfov):
    # visible while |pitch| < vfov / 2
    hz = horizon_line(CameraAngles.from_degrees(pitch=pitch, vfov=vfov), ImageFrame(640, 480))
    assert hz.visible
    assert hz.start[1] == pytest.approx(hz.end[1], abs=1e-9)


def test_horizon_off_screen():
    hz = horizon_line(CameraAngles.from_degrees(pitch=60, vfov=40), ImageFrame(640, 480))
    assert not hz.visible and hz.start is None
    with pytest.raises(DomainError):
        hz.v_at(0)


# conditioning vector and ground plane


def test_conditioning_vector_identity():
    v = camera_conditioning_vector(np.eye(3), 1.2)
    assert v.tolist() == [1, 0, 0, 0, 1, 0, 0, 0, 1, 1.2]


@settings(max_examples=50)
@given(angle, angle, st.floats(0.1, 3.0))
def test_conditioning_vector_layout(p, r, vfov):
    a = CameraAngles(p, r, 0.0, vfov)
    R = angles_to_rotation(a)
    v = camera_conditioning_vector(R, a.vfov)
    assert v.shape == (10,)
    assert np.array_equal(v[:9], R.flatten()) and v[9] == vfov


def test_ground_plane_height_examples():
    pts = np.array([[0, 1.0, 0], [0.2, -0.95, 1], [0, 0.3, 0]])
    assert ground_plane_height(pts) == -0.95
    assert ground_plane_height([[0, 2, 0]]) == 2
    assert ground_plane_height(pts + [0, 0.4, 0]) == pytest.approx(-0.55)
    with pytest.raises(DomainError):
        ground_plane_height(np.zeros((0, 3)))


# JSON boundary


def test_camera_json_round_trip():
    spec = camera_from_json({"pitch_deg": 10, "roll_deg": -2, "yaw_deg": 30, "vfov_deg": 90, "width": 640, "height": 480})
    assert spec.intrinsics.fx == pytest.approx(240.0)
    back = camera_from_json(camera_to_json(spec))
    assert np.allclose(back.rotation, spec.rotation, atol=1e-12)
    assert back.intrinsics == spec.intrinsics


def test_camera_json_overrides_and_errors():
    spec = camera_from_json({"vfov_deg": 90, "width": 640, "height": 480, "fx": 500, "oy": 200})
    assert (spec.intrinsics.fx, spec.intrinsics.oy) == (500.0, 200.0)
    assert spec.intrinsics.fy == pytest.approx(240.0)
    assert isinstance(camera_from_json({"fx": 800, "width": 10, "height": 10}), CameraSpec)
    with pytest.raises(DomainError):
        camera_from_json({"width": 640, "height": 480})
    with pytest.raises(DomainError):
        camera_from_json({"vfov_deg": 90})
