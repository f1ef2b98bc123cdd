"""Synthetic bodies seen by sampled cameras, and fit problems built from them.

A scene places a posed skeleton in front of a camera at the world origin.
``cam = Rc @ J_body + tb`` where ``J_body`` is root-relative and already
rotated by the body's world orientation. Initial guesses mimic a regressor:
the pose is perturbed, shape starts at the mean, and the camera-relative body
orientation is off by a few degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bodykin import BodyParams, JointSet2D, SkeletonTemplate, body_height, default_template, fk_batch, rodrigues
from .camgeom import (
    UPRIGHT,
    CameraAngles,
    CameraSpec,
    ImageFrame,
    Intrinsics,
    angles_to_rotation,
    camera_to_json,
    euler_rotation,
    rot_y,
)
from .errors import DomainError
from .fitter import FitProblem, FrameObservation, MultiFrameProblem, estimate_translation
from .metrics import EvalSample
from .panosample import sample_specsyn_camera

DEFAULT_FRAME = ImageFrame(640, 480)


@dataclass(frozen=True)
class SceneConfig:
    frame: ImageFrame = DEFAULT_FRAME
    pose_std: float = 0.25  # rad, per non-root joint component
    shape_std: float = 0.05  # log-scale per bone
    depth_range: tuple = (2.5, 6.0)  # m, pelvis depth
    center_margin: float = 0.25  # pelvis pixel kept in the central (1 - 2*margin) box
    keypoint_noise_px: float = 1.0


@dataclass(frozen=True)
class InitNoise:
    theta_std: float = 0.1  # rad
    orient_deg: float = 5.0  # camera-relative body orientation error


@dataclass(frozen=True)
class Scene:
    template: SkeletonTemplate
    params: BodyParams  # ground truth; rb is the world orientation
    angles: CameraAngles
    frame: ImageFrame
    intrinsics: Intrinsics
    observed: JointSet2D

    @property
    def rc(self) -> np.ndarray:
        return angles_to_rotation(self.angles)

    def body_joints(self) -> np.ndarray:
        p = self.params
        return fk_batch(self.template, p.theta[None], p.beta[None], p.rb[None]).positions[0]

    def world_joints(self) -> np.ndarray:
        return self.body_joints() + self.rc.T @ self.params.tb


def _random_rotation_small(rng: np.random.Generator, deg: float) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return rodrigues(axis * math.radians(deg))


def make_scene(
    rng: np.random.Generator,
    template: Optional[SkeletonTemplate] = None,
    config: SceneConfig = SceneConfig(),
    angles: Optional[CameraAngles] = None,
    max_tries: int = 100,
) -> Scene:
    """Sample a camera (synthetic-camera distribution unless given) and a fully visible body."""
    tpl = template or default_template()
    if angles is None:
        angles = sample_specsyn_camera(rng)
    frame = config.frame
    K = Intrinsics.from_vfov(angles.vfov, frame)
    Rc = angles_to_rotation(angles)
    J = tpl.joint_count
    for _ in range(max_tries):
        theta = rng.normal(0.0, config.pose_std, (J, 3))
        theta[0] = 0.0
        beta = rng.normal(0.0, config.shape_std, tpl.bone_count)
        rb = rot_y(rng.uniform(-math.pi, math.pi)) @ UPRIGHT
        m = config.center_margin
        u = rng.uniform(m, 1.0 - m) * frame.width
        v = rng.uniform(m, 1.0 - m) * frame.height
        z = rng.uniform(*config.depth_range)
        tb = z * np.array([(u - K.ox) / K.fx, (v - K.oy) / K.fy, 1.0])
        body = fk_batch(tpl, theta[None], beta[None], rb[None]).positions[0]
        cam = body @ Rc.T + tb
        if cam[:, 2].min() < 0.5:
            continue
        uv = np.stack([K.fx * cam[:, 0] / cam[:, 2] + K.ox, K.fy * cam[:, 1] / cam[:, 2] + K.oy], -1)
        if uv.min() < 0 or np.any(uv[:, 0] > frame.width) or np.any(uv[:, 1] > frame.height):
            continue
        uv = uv + rng.normal(0.0, config.keypoint_noise_px, uv.shape)
        params = BodyParams(theta, beta, rb, tb)
        return Scene(tpl, params, angles, frame, K, JointSet2D(uv, np.ones(J)))
    raise DomainError(f"could not place a visible body in {max_tries} tries")


# --------------------------------------------------------------------------
# camera modes


CAMERA_MODES = ("gt", "f5000", "f2200")


def mode_camera(scene: Scene, mode: str, focal_factor: float = 1.0) -> tuple[Intrinsics, np.ndarray]:
    """(intrinsics, Rc) used by the fitter for a camera mode.

    ``gt``: true K and Rc (focal optionally scaled by ``focal_factor``);
    ``f5000`` / ``f2200``: that constant focal, centred principal point, Rc = I.
    """
    if mode == "gt":
        if not focal_factor > 0:
            raise DomainError(f"focal factor must be positive, got {focal_factor}")
        K = scene.intrinsics
        return Intrinsics(K.fx * focal_factor, K.fy * focal_factor, K.ox, K.oy), scene.rc
    if mode in ("f5000", "f2200"):
        return Intrinsics.from_focal(float(mode[1:]), scene.frame), np.eye(3)
    raise DomainError(f"unknown camera mode {mode!r}")


def regressor_init(scene: Scene, rng: np.random.Generator, noise: InitNoise = InitNoise()) -> tuple:
    """Perturbed pose and camera-relative orientation, mean shape.

    Returns ``(theta, beta, orientation_cam)``; the same draw is reused for every
    camera mode so modes differ only in the camera.
    """
    p = scene.params
    theta = p.theta + rng.normal(0.0, noise.theta_std, p.theta.shape)
    theta[0] = 0.0
    orient_cam = _random_rotation_small(rng, noise.orient_deg) @ scene.rc @ p.rb
    return theta, np.zeros_like(p.beta), orient_cam


def build_problem(scene: Scene, init: tuple, mode: str = "gt", focal_factor: float = 1.0) -> FitProblem:
    K, rc = mode_camera(scene, mode, focal_factor)
    theta, beta, orient_cam = init
    rb = rc.T @ orient_cam
    body = fk_batch(scene.template, theta[None], beta[None], rb[None]).positions[0]
    tb = estimate_translation(body, scene.observed, K, rc)
    return FitProblem(scene.observed, K, rc, scene.template, BodyParams(theta, beta, rb, tb))


def eval_sample(scene: Scene, problem: FitProblem, fitted: BodyParams) -> EvalSample:
    """Camera-frame prediction with the fitter's rotation as the estimate."""
    body = fk_batch(scene.template, fitted.theta[None], fitted.beta[None], fitted.rb[None]).positions[0]
    cam = body @ problem.rc.T + fitted.tb
    return EvalSample(
        predicted=cam,
        ground_truth=scene.world_joints(),
        frame="camera",
        estimated_rc=problem.rc,
        focal_px=scene.intrinsics.fy,
        pitch_deg=math.degrees(scene.angles.pitch),
    )


def problem_json(scene: Scene, init: Optional[tuple] = None) -> dict:
    """Fit-problem JSON for a scene (camera, keypoints, optional regressor init)."""
    obj = {
        "camera": camera_to_json(CameraSpec(scene.angles, scene.frame, scene.intrinsics)),
        "keypoints": np.column_stack([scene.observed.coords, scene.observed.confidence]).tolist(),
    }
    if init is not None:
        theta, beta, orient_cam = init
        obj["init"] = {"theta": theta.tolist(), "beta": beta.tolist(), "rb": (scene.rc.T @ orient_cam).tolist()}
    return obj


# --------------------------------------------------------------------------
# multi-view scenes


@dataclass(frozen=True)
class MultiViewConfig:
    frame: ImageFrame = DEFAULT_FRAME
    vfov_deg: float = 70.0
    pose_std: float = 0.25
    shape_std: float = 0.05
    yaw_spread_deg: float = 60.0  # views spread over [-spread, spread]
    depth_range: tuple = (3.5, 5.0)
    keypoint_noise_px: float = 1.0
    presented_std: float = 0.05  # imitation error of the presented pose
    angle_init_deg: float = 2.0  # camera-angle init error
    tc_init_std: float = 0.05  # camera-translation init error, m


def make_multiview_problem(
    rng: np.random.Generator,
    n_frames: int = 5,
    template: Optional[SkeletonTemplate] = None,
    config: MultiViewConfig = MultiViewConfig(),
    total_views: int = 5,
) -> tuple:
    """One body seen from ``total_views`` cameras; the first ``n_frames`` are kept.

    Drawing every view before truncating means problems with fewer frames are
    nested in the larger ones for the same seed. Returns ``(problem, true_beta)``.
    """
    if not 1 <= n_frames <= total_views:
        raise DomainError(f"n_frames must lie in [1, {total_views}], got {n_frames}")
    tpl = template or default_template()
    J = tpl.joint_count
    theta = rng.normal(0.0, config.pose_std, (J, 3))
    theta[0] = 0.0
    beta = rng.normal(0.0, config.shape_std, tpl.bone_count)
    K = Intrinsics.from_vfov(math.radians(config.vfov_deg), config.frame)
    body = fk_batch(tpl, theta[None], beta[None], UPRIGHT[None]).positions[0]
    frames = []
    for yaw in np.linspace(-config.yaw_spread_deg, config.yaw_spread_deg, total_views):
        ang = np.radians([rng.uniform(-10.0, 15.0), rng.normal(0.0, 2.8), yaw + rng.normal(0.0, 5.0)])
        tc = np.array([rng.normal(0.0, 0.1), rng.normal(0.0, 0.1), rng.uniform(*config.depth_range)])
        cam = body @ euler_rotation(*ang).T + tc
        uv = np.stack([K.fx * cam[:, 0] / cam[:, 2] + K.ox, K.fy * cam[:, 1] / cam[:, 2] + K.oy], -1)
        uv = uv + rng.normal(0.0, config.keypoint_noise_px, uv.shape)
        ang0 = ang + np.radians(rng.normal(0.0, config.angle_init_deg, 3))
        tc0 = tc + rng.normal(0.0, config.tc_init_std, 3)
        frames.append(FrameObservation(JointSet2D(uv, np.ones(J)), ang0, tc0))
    presented = theta + rng.normal(0.0, config.presented_std, theta.shape)
    presented[0] = 0.0
    problem = MultiFrameProblem(tuple(frames[:n_frames]), presented, body_height(tpl, beta), K, tpl, UPRIGHT)
    return problem, beta


def multiview_problem_json(problem: MultiFrameProblem, frame: ImageFrame = DEFAULT_FRAME) -> dict:
    """Multi-frame fit-problem JSON (shared camera intrinsics, per-frame keypoints and init)."""
    K = problem.intrinsics
    return {
        "camera": {"width": frame.width, "height": frame.height, "fx": K.fx, "fy": K.fy, "ox": K.ox, "oy": K.oy},
        "frames": [
            {
                "keypoints": np.column_stack([f.observed.coords, f.observed.confidence]).tolist(),
                "angles_deg": np.degrees(f.angles).tolist(),
                "tc": f.tc.tolist(),
            }
            for f in problem.frames
        ],
        "presented_theta": problem.presented_theta.tolist(),
        "target_height": problem.target_height,
        "rb": problem.rb.tolist(),
    }
