"""Perspective camera model.

Conventions used throughout the package:

* Camera frame: x right, y down, z along the optical axis (pixel v grows
  downwards).
* World frame: coincides with the camera frame when all angles are zero, so
  gravity points along +y and "up" is -y. A body template built with +y up is
  placed upright by ``UPRIGHT`` (180 degrees about x).
* ``X_cam = Rc @ X_world + t``. ``Rc = R_x(pitch) @ R_z(roll) @ R_y(yaw)``;
  yaw is the right-most factor so it turns the camera about the world vertical
  axis. Positive pitch tilts the optical axis towards +y, i.e. downwards, which
  puts the horizon in the upper half of the image.

All angles are radians; degrees appear only at the JSON/CLI boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BehindCameraError, DomainError

GIMBAL_PITCH = math.radians(89.0)


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    if w <= -math.pi:
        w += 2.0 * math.pi
    return w


@dataclass(frozen=True)
class ImageFrame:
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) < 1 or int(self.height) < 1:
            raise DomainError(f"image size must be >= 1, got {self.width}x{self.height}")


@dataclass(frozen=True)
class CameraAngles:
    """Pitch, roll, yaw and vertical field of view, all radians.

    pitch/roll/yaw are wrapped into (-pi, pi]. ``vfov`` may be None when only
    a rotation is described (e.g. the output of :func:`rotation_to_angles`).
    """

    pitch: float = 0.0
    roll: float = 0.0
    yaw: float = 0.0
    vfov: Optional[float] = None

    def __post_init__(self):
        for name in ("pitch", "roll", "yaw"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise DomainError(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, wrap_angle(v))
        if self.vfov is not None:
            v = float(self.vfov)
            if not (0.0 < v < math.pi):
                raise DomainError(f"vfov must lie in (0, pi), got {v}")
            object.__setattr__(self, "vfov", v)

    @classmethod
    def from_degrees(cls, pitch=0.0, roll=0.0, yaw=0.0, vfov=None) -> "CameraAngles":
        return cls(
            math.radians(pitch),
            math.radians(roll),
            math.radians(yaw),
            None if vfov is None else math.radians(vfov),
        )

    def degrees(self) -> dict:
        return {
            "pitch_deg": math.degrees(self.pitch),
            "roll_deg": math.degrees(self.roll),
            "yaw_deg": math.degrees(self.yaw),
            "vfov_deg": None if self.vfov is None else math.degrees(self.vfov),
        }


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    ox: float
    oy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def from_vfov(cls, vfov: float, frame: ImageFrame) -> "Intrinsics":
        """Square-pixel intrinsics with the principal point at the image centre."""
        f = vfov_to_focal(vfov, frame.height)
        return cls(f, f, frame.width / 2.0, frame.height / 2.0)

    @classmethod
    def from_focal(cls, focal: float, frame: ImageFrame) -> "Intrinsics":
        return cls(float(focal), float(focal), frame.width / 2.0, frame.height / 2.0)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.ox], [0.0, self.fy, self.oy], [0.0, 0.0, 1.0]])


def _check_rotation(R: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise DomainError(f"rotation must be 3x3, got shape {R.shape}")
    if np.abs(R.T @ R - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise DomainError("matrix is not a proper rotation")
    return R


@dataclass(frozen=True)
class RigidCamera:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "translation", t)


@dataclass(frozen=True)
class WeakPerspectiveCam:
    scale: float
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError(f"weak-perspective scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class BBox:
    cx: float
    cy: float
    wbox: float
    hbox: float

    def __post_init__(self):
        if not (self.wbox > 0 and self.hbox > 0):
            raise DomainError(f"bbox size must be positive, got {self.wbox}x{self.hbox}")


@dataclass(frozen=True)
class HorizonLine:
    """Horizon endpoints at u=0 and u=width; ``visible`` is False when the
    horizon misses the image (endpoints are then None)."""

    start: Optional[np.ndarray]
    end: Optional[np.ndarray]
    visible: bool

    def v_at(self, u: float) -> float:
        if not self.visible:
            raise DomainError("horizon is not visible in this image")
        (u0, v0), (u1, v1) = self.start, self.end
        return v0 + (v1 - v0) * (u - u0) / (u1 - u0)


# --------------------------------------------------------------------------
# focal length <-> field of view


def vfov_to_focal(vfov: float, image_height: float) -> float:
    """Focal length in pixels for a vertical field of view (radians)."""
    if not (0.0 < vfov < math.pi):
        raise DomainError(f"vfov must lie in (0, pi), got {vfov}")
    if image_height < 1:
        raise DomainError(f"image height must be >= 1, got {image_height}")
    return (image_height / 2.0) / math.tan(vfov / 2.0)


def focal_to_vfov(focal: float, image_height: float) -> float:
    if not focal > 0:
        raise DomainError(f"focal length must be positive, got {focal}")
    if image_height < 1:
        raise DomainError(f"image height must be >= 1, got {image_height}")
    return 2.0 * math.atan2(image_height / 2.0, focal)


# --------------------------------------------------------------------------
# rotations


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# Orientation that stands a +y-up template upright in the (gravity = +y) world,
# facing a camera with zero yaw.
UPRIGHT = rot_x(math.pi)


def euler_rotation(pitch: float, roll: float, yaw: float) -> np.ndarray:
    return rot_x(pitch) @ rot_z(roll) @ rot_y(yaw)


def angles_to_rotation(angles: CameraAngles) -> np.ndarray:
    """World-to-camera rotation ``R_x(pitch) @ R_z(roll) @ R_y(yaw)``."""
    return euler_rotation(angles.pitch, angles.roll, angles.yaw)


def rotation_to_angles(R: np.ndarray) -> tuple[CameraAngles, bool]:
    """Inverse of :func:`angles_to_rotation`.

    Returns the angles (vfov unset) and a ``degenerate`` flag, raised when
    |pitch| >= 89 degrees or when the decomposition loses a degree of freedom
    (|roll| near 90 degrees).
    """
    R = _check_rotation(R, tol=1e-6)
    sin_roll = -R[0, 1]
    cos_roll = math.hypot(R[1, 1], R[2, 1])
    roll = math.atan2(sin_roll, cos_roll)
    pitch = math.atan2(R[2, 1], R[1, 1])
    yaw = math.atan2(R[0, 2], R[0, 0])
    degenerate = abs(pitch) >= GIMBAL_PITCH or cos_roll < 1e-6
    return CameraAngles(pitch, roll, yaw), degenerate


def camera_conditioning_vector(Rc: np.ndarray, vfov: float) -> np.ndarray:
    """Row-major rotation followed by vfov: the 10-vector fed to a regressor."""
    Rc = _check_rotation(Rc)
    return np.concatenate([Rc.reshape(9), [float(vfov)]])


# --------------------------------------------------------------------------
# projection


def project(points, K: Intrinsics, Rc, tb) -> np.ndarray:
    """Project world points to pixels with ``cam = Rc @ X + tb``.

    Raises BehindCameraError naming the first point with non-positive depth.
    """
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    cam = X @ np.asarray(Rc, dtype=float).T + np.asarray(tb, dtype=float).reshape(3)
    z = cam[:, 2]
    bad = np.flatnonzero(~(z > 0))
    if bad.size:
        raise BehindCameraError(bad[0], z[bad[0]])
    u = K.fx * cam[:, 0] / z + K.ox
    v = K.fy * cam[:, 1] / z + K.oy
    return np.stack([u, v], axis=1)


def weak_to_full_translation(
    cam: WeakPerspectiveCam, bbox: BBox, frame: ImageFrame, focal: float
) -> np.ndarray:
    """Convert crop-relative weak-perspective parameters to a camera-frame
    translation for the full image."""
    if not focal > 0:
        raise DomainError(f"focal length must be positive, got {focal}")
    s = cam.scale
    tx = cam.tx + 2.0 * (bbox.cx - frame.width / 2.0) / (s * bbox.wbox)
    ty = cam.ty + 2.0 * (bbox.cy - frame.height / 2.0) / (s * bbox.hbox)
    tz = 2.0 * focal / (bbox.hbox * s)
    return np.array([tx, ty, tz])


# --------------------------------------------------------------------------
# horizon and ground plane


def horizon_line(angles: CameraAngles, frame: ImageFrame, K: Optional[Intrinsics] = None) -> HorizonLine:
    """Image line of world-horizontal directions at infinity.

    A pixel p lies on the horizon when its back-projected ray has no vertical
    world component, i.e. ``(Rc.T @ K^-1 @ p)_y == 0``; the line coefficients
    are therefore ``K^-T @ Rc[:, 1]``.
    """
    if K is None:
        if angles.vfov is None:
            raise DomainError("horizon_line needs a vfov or explicit intrinsics")
        K = Intrinsics.from_vfov(angles.vfov, frame)
    n = angles_to_rotation(angles)[:, 1]
    a = n[0] / K.fx
    b = n[1] / K.fy
    c = n[2] - n[0] * K.ox / K.fx - n[1] * K.oy / K.fy
    w, h = float(frame.width), float(frame.height)
    if abs(b) < 1e-12:
        return HorizonLine(None, None, False)
    v0 = -c / b
    v1 = -(a * w + c) / b
    # the segment between u=0 and u=w misses the image only if both ends are
    # on the same side, outside [0, h]
    if (v0 < 0 and v1 < 0) or (v0 > h and v1 > h):
        return HorizonLine(None, None, False)
    return HorizonLine(np.array([0.0, v0]), np.array([w, v1]), True)


def ground_plane_height(joints3d) -> float:
    """Height y of the plane [0, y, 0] just below a point set given in a
    +y-up frame (the body template frame)."""
    P = np.asarray(joints3d, dtype=float).reshape(-1, 3)
    if P.shape[0] == 0:
        raise DomainError("ground_plane_height needs at least one point")
    return float(P[:, 1].min())


# --------------------------------------------------------------------------
# JSON boundary


@dataclass(frozen=True)
class CameraSpec:
    """A full camera as read from the camera JSON object."""

    angles: CameraAngles
    frame: ImageFrame
    intrinsics: Intrinsics

    @property
    def rotation(self) -> np.ndarray:
        return angles_to_rotation(self.angles)


def camera_from_json(obj: dict) -> CameraSpec:
    try:
        frame = ImageFrame(int(obj["width"]), int(obj["height"]))
        vfov_deg = obj.get("vfov_deg")
        angles = CameraAngles.from_degrees(
            float(obj.get("pitch_deg", 0.0)),
            float(obj.get("roll_deg", 0.0)),
            float(obj.get("yaw_deg", 0.0)),
            None if vfov_deg is None else float(vfov_deg),
        )
    except (KeyError, TypeError) as exc:
        raise DomainError(f"malformed camera object: {exc}") from exc
    if angles.vfov is not None:
        K = Intrinsics.from_vfov(angles.vfov, frame)
    elif "fx" in obj:
        K = Intrinsics(float(obj["fx"]), float(obj.get("fy", obj["fx"])), frame.width / 2.0, frame.height / 2.0)
    else:
        raise DomainError("camera object needs vfov_deg or fx")
    overrides = {k: float(obj[k]) for k in ("fx", "fy", "ox", "oy") if k in obj}
    if overrides:
        fields = dict(fx=K.fx, fy=K.fy, ox=K.ox, oy=K.oy)
        fields.update(overrides)
        K = Intrinsics(**fields)
    return CameraSpec(angles, frame, K)


def camera_to_json(cam: CameraSpec) -> dict:
    d = cam.angles.degrees()
    d.update(
        width=cam.frame.width,
        height=cam.frame.height,
        fx=cam.intrinsics.fx,
        fy=cam.intrinsics.fy,
        ox=cam.intrinsics.ox,
        oy=cam.intrinsics.oy,
    )
    return d
