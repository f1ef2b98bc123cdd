"""Fitting the skeleton to 2D keypoints under a known perspective camera.

Single-frame energy (per body)::

    E = sum_j |w_j * gamma * (proj(Rc @ J_j + tb) - x_j)|^2
        + lambda_theta |theta|^2 + lambda_beta |beta|^2

minimised in two stages: (beta, tb) with pose frozen, then
(theta, beta, Rb, tb). The multi-frame variant fits one body seen by F
cameras whose angles and translations are refined alongside it, in three
stages: (beta, cameras) with theta fixed to a presented pose, then
(theta, cameras) twice with a pose-to-presented prior, halving its weight in
the last stage.

All optimisation is plain Adam on exact gradients. Every fit keeps the best
iterate seen, so reported energies never exceed the starting energy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .bodykin import (
    BodyParams,
    JointSet2D,
    SkeletonTemplate,
    fk_backward,
    fk_batch,
    heights_batch,
    orthonormalize,
    rodrigues,
)
from .camgeom import CameraAngles, Intrinsics, euler_rotation, rot_x, rot_y, rot_z
from .errors import BehindCameraError, DomainError, ShapeMismatchError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    steps: int = 100
    step_size: float = 1e-2
    lambda_theta: float = 1e-3
    lambda_beta: float = 1e-2
    lambda_m: float = 1e3
    lambda_presented: float = 10.0
    gamma: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if int(self.steps) < 1:
            raise DomainError("steps must be >= 1")
        if not self.step_size > 0:
            raise DomainError("step size must be positive")
        for name in ("lambda_theta", "lambda_beta", "lambda_m", "lambda_presented", "gamma"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class FitProblem:
    observed: JointSet2D
    intrinsics: Intrinsics
    rc: np.ndarray
    template: SkeletonTemplate
    init: BodyParams

    def __post_init__(self):
        if self.observed.coords.shape[0] != self.template.joint_count:
            raise ShapeMismatchError(
                f"{self.observed.coords.shape[0]} observed joints, template has {self.template.joint_count}"
            )
        object.__setattr__(self, "rc", np.asarray(self.rc, dtype=float))


@dataclass(frozen=True)
class FrameObservation:
    observed: JointSet2D
    angles: np.ndarray  # (pitch, roll, yaw) radians, initial value
    tc: np.ndarray  # camera translation, initial value

    def __post_init__(self):
        a = self.angles
        if isinstance(a, CameraAngles):
            a = (a.pitch, a.roll, a.yaw)
        object.__setattr__(self, "angles", np.asarray(a, dtype=float).reshape(3))
        object.__setattr__(self, "tc", np.asarray(self.tc, dtype=float).reshape(3))


@dataclass(frozen=True)
class MultiFrameProblem:
    frames: tuple
    presented_theta: np.ndarray
    target_height: float
    intrinsics: Intrinsics
    template: SkeletonTemplate
    rb: np.ndarray = field(default_factory=lambda: np.eye(3))
    init_beta: Optional[np.ndarray] = None

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) < 1:
            raise DomainError("a multi-frame problem needs at least one frame")
        K = self.template.joint_count
        for i, fr in enumerate(frames):
            if fr.observed.coords.shape[0] != K:
                raise ShapeMismatchError(f"frame {i} has {fr.observed.coords.shape[0]} joints, template has {K}")
        theta = np.asarray(self.presented_theta, dtype=float)
        if theta.shape != (K, 3):
            raise ShapeMismatchError(f"presented theta must be ({K}, 3), got {theta.shape}")
        beta = np.zeros(self.template.bone_count) if self.init_beta is None else np.asarray(self.init_beta, float)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "presented_theta", theta)
        object.__setattr__(self, "rb", np.asarray(self.rb, dtype=float))
        object.__setattr__(self, "init_beta", beta)

    @property
    def n_frames(self) -> int:
        return len(self.frames)


@dataclass
class StageReport:
    name: str
    free: tuple
    start_energy: float
    final_energy: float
    terms: dict
    trace: list  # best-so-far total energy per iterate
    raw_trace: list  # total energy of each iterate


@dataclass
class FitResult:
    params: BodyParams
    stages: list
    cameras: Optional[list] = None  # multi-frame: per-frame {"angles", "tc"}

    @property
    def trace(self) -> list:
        out = []
        for st in self.stages:
            out.extend(st.trace)
        return out

    @property
    def initial_energy(self) -> float:
        return self.stages[0].start_energy

    @property
    def final_energy(self) -> float:
        return self.stages[-1].final_energy

    def to_json(self) -> dict:
        d = {
            "params": self.params.to_json(),
            "stages": [
                {
                    "name": s.name,
                    "free": list(s.free),
                    "start_energy": s.start_energy,
                    "final_energy": s.final_energy,
                    "terms": s.terms,
                    "trace": s.trace,
                    "raw_trace": s.raw_trace,
                }
                for s in self.stages
            ],
        }
        if self.cameras is not None:
            d["cameras"] = [
                {"angles_deg": np.degrees(c["angles"]).tolist(), "tc": np.asarray(c["tc"]).tolist()}
                for c in self.cameras
            ]
        return d


# --------------------------------------------------------------------------
# projection residuals


def _project_residuals(cam, K4, obs, wg):
    """Weighted squared reprojection error and its gradient w.r.t. camera-frame points.

    cam: (..., K, 3); K4: (..., 4) as fx, fy, ox, oy; obs: (..., K, 2); wg: (..., K).
    Returns energy (...), grad (..., K, 3), bad mask (..., K).
    """
    z = cam[..., 2]
    bad = ~(z > 0)
    zs = np.where(bad, 1.0, z)
    fx, fy, ox, oy = (K4[..., i, None] for i in range(4))
    u = fx * cam[..., 0] / zs + ox
    v = fy * cam[..., 1] / zs + oy
    ru = wg * (u - obs[..., 0])
    rv = wg * (v - obs[..., 1])
    E = np.sum(ru * ru + rv * rv, axis=-1)
    gu = 2.0 * ru * wg
    gv = 2.0 * rv * wg
    g = np.empty_like(cam)
    g[..., 0] = gu * fx / zs
    g[..., 1] = gv * fy / zs
    g[..., 2] = -(gu * fx * cam[..., 0] + gv * fy * cam[..., 1]) / (zs * zs)
    return E, g, bad


def _k4(K: Intrinsics) -> np.ndarray:
    return np.array([K.fx, K.fy, K.ox, K.oy])


# --------------------------------------------------------------------------
# single-frame energy (batched)


@dataclass
class _SingleBatch:
    template: SkeletonTemplate
    k4: np.ndarray  # (B, 4)
    rc: np.ndarray  # (B, 3, 3)
    obs: np.ndarray  # (B, K, 2)
    weight: np.ndarray  # (B, K)
    memo: Optional[tuple] = None  # (theta, rb, cache) of the last evaluation

    def kinematics(self, x: dict):
        # reuse rotations while theta and rb are the very same arrays (frozen)
        m = self.memo
        rot = m[2] if m is not None and m[0] is x["theta"] and m[1] is x["rb"] else None
        cache = fk_batch(self.template, x["theta"], x["beta"], x["rb"], rotations=rot)
        self.memo = (x["theta"], x["rb"], cache)
        return cache

    @classmethod
    def from_problems(cls, problems: Sequence[FitProblem]) -> "_SingleBatch":
        tpl = problems[0].template
        for p in problems:
            if p.template is not tpl and p.template != tpl:
                raise DomainError("batched problems must share a template")
        return cls(
            tpl,
            np.stack([_k4(p.intrinsics) for p in problems]),
            np.stack([p.rc for p in problems]),
            np.stack([p.observed.coords for p in problems]),
            np.stack([p.observed.confidence for p in problems]),
        )


def _single_energy(data: _SingleBatch, x: dict, cfg: FitConfig, want: Sequence[str] = ()):
    tpl = data.template
    cache = data.kinematics(x)
    cam = cache.positions @ np.swapaxes(data.rc, -1, -2) + x["tb"][:, None, :]
    e_data, gcam, bad = _project_residuals(cam, data.k4, data.obs, data.weight * cfg.gamma)
    e_theta = np.sum(x["theta"] ** 2, axis=(1, 2))
    e_beta = np.sum(x["beta"] ** 2, axis=1)
    total = e_data + cfg.lambda_theta * e_theta + cfg.lambda_beta * e_beta
    terms = {"data": e_data, "theta": e_theta, "beta": e_beta}
    grads = {}
    if want:
        gP = gcam @ data.rc
        back = fk_backward(tpl, cache, gP, want_theta="theta" in want)
        if "theta" in want:
            grads["theta"] = back["theta"] + 2.0 * cfg.lambda_theta * x["theta"]
        if "beta" in want:
            grads["beta"] = back["beta"] + 2.0 * cfg.lambda_beta * x["beta"]
        if "rb" in want:
            grads["rb"] = back["rb_delta"]
        if "tb" in want:
            grads["tb"] = gcam.sum(axis=1)
    return total, terms, grads, bad


def reprojection_energy(params: BodyParams, problem: FitProblem, gamma: float = 1.0):
    """Data term and its gradient.

    Returns ``(energy, grads)`` with grads keyed ``theta``, ``beta``, ``rb``
    (left-perturbation axis-angle of Rb at zero) and ``tb``.
    """
    cfg = FitConfig(gamma=gamma, lambda_theta=0.0, lambda_beta=0.0)
    data = _SingleBatch.from_problems([problem])
    x = _params_to_batch([params])
    _, terms, grads, bad = _single_energy(data, x, cfg, want=("theta", "beta", "rb", "tb"))
    _raise_bad(bad)
    return float(terms["data"][0]), {k: v[0] for k, v in grads.items()}


def prior_energies(params: BodyParams, config: Optional[FitConfig] = None, presented_theta=None):
    """Unweighted (E_theta, E_beta, E_presented)."""
    e_theta = float(np.sum(params.theta**2))
    e_beta = float(np.sum(params.beta**2))
    e_pres = 0.0
    if presented_theta is not None:
        e_pres = float(np.sum((params.theta - np.asarray(presented_theta, dtype=float)) ** 2))
    return e_theta, e_beta, e_pres


def _params_to_batch(params: Sequence[BodyParams]) -> dict:
    return {
        "theta": np.stack([p.theta for p in params]),
        "beta": np.stack([p.beta for p in params]),
        "rb": np.stack([p.rb for p in params]),
        "tb": np.stack([p.tb for p in params]),
    }


def _raise_bad(bad: np.ndarray, frame_axis: bool = False):
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        raise BehindCameraError(idx[-1], frame=idx[-2] if frame_axis else None)


# --------------------------------------------------------------------------
# Adam with best-iterate tracking


class _Adam:
    def __init__(self, cfg: FitConfig):
        self.cfg = cfg
        self.m = {}
        self.v = {}
        self.t = 0

    def deltas(self, grads: dict) -> dict:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.adam_beta1**self.t
        bc2 = 1.0 - c.adam_beta2**self.t
        out = {}
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = c.adam_beta1 * self.m[k] + (1.0 - c.adam_beta1) * g
            self.v[k] = c.adam_beta2 * self.v[k] + (1.0 - c.adam_beta2) * (g * g)
            out[k] = -c.step_size * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.adam_eps)
        return out


def _apply(x: dict, d: dict, scale, rotation_keys) -> dict:
    """x + scale * d, treating rotation keys as left axis-angle updates."""
    out = dict(x)
    for k, dk in d.items():
        s = scale.reshape((-1,) + (1,) * (dk.ndim - 1))
        if k in rotation_keys:
            out[k] = orthonormalize(rodrigues(s * dk) @ x[k])
        else:
            out[k] = x[k] + s * dk
    return out


def _select(mask: np.ndarray, a: dict, b: dict) -> dict:
    """Per-problem choice: a where mask else b (leading axis is the batch)."""
    out = {}
    for k in a:
        m = mask.reshape((-1,) + (1,) * (a[k].ndim - 1))
        out[k] = np.where(m, a[k], b[k])
    return out


def _minimize(
    energy: Callable,
    x0: dict,
    free: Sequence[str],
    cfg: FitConfig,
    rotation_keys=("rb",),
    frame_axis: bool = False,
):
    """Adam over the ``free`` entries of ``x0`` (leading axis = batch).

    ``energy(x, want)`` returns (total (B,), terms, grads, bad). Returns the
    best iterate per problem, its terms, and the energy traces (B, steps+1).
    """
    x = dict(x0)
    E, terms, grads, bad = energy(x, free)
    if np.any(bad):
        _raise_bad(bad, frame_axis=frame_axis)
    B = E.shape[0]
    best_x, best_E, best_terms = dict(x), E.copy(), {k: v.copy() for k, v in terms.items()}
    raw = np.empty((B, cfg.steps + 1))
    raw[:, 0] = E
    opt = _Adam(cfg)
    ones = np.ones(B)
    for step in range(1, cfg.steps + 1):
        d = opt.deltas({k: grads[k] for k in free})
        x_new = _apply(x, d, ones, rotation_keys)
        E_new, terms_new, grads_new, bad = energy(x_new, free)
        failed = np.any(bad.reshape(B, -1), axis=1)
        if np.any(failed):
            # recovery: take half the step for the failing problems, once
            log.debug("step %d: %d problems left the camera frustum; halving", step, failed.sum())
            half = np.where(failed, 0.5, 1.0)
            x_new = _apply(x, d, half, rotation_keys)
            E_new, terms_new, grads_new, bad = energy(x_new, free)
            if np.any(bad):
                _raise_bad(bad, frame_axis=frame_axis)
        x, E, grads = x_new, E_new, grads_new
        raw[:, step] = E
        better = E < best_E
        if np.any(better):
            best_x = _select(better, x, best_x)
            best_terms = {k: np.where(better, terms_new[k], best_terms[k]) for k in terms_new}
            best_E = np.where(better, E, best_E)
    return best_x, best_E, best_terms, raw


def _report(name, free, raw_row, best_E, terms, i) -> StageReport:
    trace = np.minimum.accumulate(raw_row)
    return StageReport(
        name=name,
        free=tuple(free),
        start_energy=float(raw_row[0]),
        final_energy=float(best_E[i]),
        terms={k: float(v[i]) for k, v in terms.items()},
        trace=trace.tolist(),
        raw_trace=raw_row.tolist(),
    )


SINGLE_STAGES = (("stage1", ("beta", "tb")), ("stage2", ("theta", "beta", "rb", "tb")))


def fit_batch(problems: Sequence[FitProblem], config: FitConfig = FitConfig()) -> list:
    """Fit many single-frame problems at once (vectorised over problems)."""
    if not problems:
        return []
    data = _SingleBatch.from_problems(problems)
    x = _params_to_batch([p.init for p in problems])

    def energy(xx, want):
        return _single_energy(data, xx, config, want)

    reports = [[] for _ in problems]
    for name, free in SINGLE_STAGES:
        x, best_E, terms, raw = _minimize(energy, x, free, config)
        for i in range(len(problems)):
            reports[i].append(_report(name, free, raw[i], best_E, terms, i))
    out = []
    for i in range(len(problems)):
        params = BodyParams(x["theta"][i], x["beta"][i], x["rb"][i], x["tb"][i])
        out.append(FitResult(params, reports[i]))
    return out


def fit_single(problem: FitProblem, config: FitConfig = FitConfig()) -> FitResult:
    return fit_batch([problem], config)[0]


# --------------------------------------------------------------------------
# helpers for building problems


def estimate_translation(joints_body, observed: JointSet2D, K: Intrinsics, rc, min_depth: float = 0.1) -> np.ndarray:
    """Camera-frame translation that best aligns root-relative joints with keypoints.

    Linear least squares on the cross-multiplied projection equations
    ``fx (a_x + t_x) = (u - ox)(a_z + t_z)`` (same for y), with ``a = Rc @ J``.
    """
    a = np.asarray(joints_body, dtype=float) @ np.asarray(rc, dtype=float).T
    du = observed.coords[:, 0] - K.ox
    dv = observed.coords[:, 1] - K.oy
    w = np.sqrt(observed.confidence)
    n = a.shape[0]
    A = np.zeros((2 * n, 3))
    b = np.zeros(2 * n)
    A[:n, 0] = K.fx
    A[:n, 2] = -du
    b[:n] = du * a[:, 2] - K.fx * a[:, 0]
    A[n:, 1] = K.fy
    A[n:, 2] = -dv
    b[n:] = dv * a[:, 2] - K.fy * a[:, 1]
    W = np.concatenate([w, w])
    t, *_ = np.linalg.lstsq(A * W[:, None], b * W, rcond=None)
    depth = a[:, 2] + t[2]
    if depth.min() < min_depth:
        t[2] += min_depth - depth.min()
    return t


def world_joints(template: SkeletonTemplate, params: BodyParams, rc) -> np.ndarray:
    """Joints in the world frame of a camera at the origin with rotation ``rc``.

    ``cam = rc @ J_body + tb``, so ``world = J_body + rc.T @ tb``.
    """
    cache = fk_batch(template, params.theta[None], params.beta[None], params.rb[None])
    return cache.positions[0] + np.asarray(rc, dtype=float).T @ params.tb


# --------------------------------------------------------------------------
# multi-frame energies


def _axis_rotations(a: np.ndarray, i: int, j: int):
    """Rotation about the axis orthogonal to (i, j) and its derivative, for angles of any shape."""
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    dR = np.zeros(a.shape + (3, 3))
    k = 3 - i - j
    R[..., k, k] = 1.0
    R[..., i, i] = c
    R[..., j, j] = c
    R[..., i, j] = -s
    R[..., j, i] = s
    dR[..., i, i] = -s
    dR[..., j, j] = -s
    dR[..., i, j] = -c
    dR[..., j, i] = c
    return R, dR


def rotation_and_derivatives(angles):
    """R = R_x(pitch) R_z(roll) R_y(yaw) and dR/d(pitch, roll, yaw).

    ``angles`` has shape (..., 3); returns R (..., 3, 3) and dR (..., 3, 3, 3)
    indexed [component, row, col].
    """
    angles = np.asarray(angles, dtype=float)
    Rx, dRx = _axis_rotations(angles[..., 0], 1, 2)
    Rz, dRz = _axis_rotations(angles[..., 1], 0, 1)
    # R_y has the sine signs flipped relative to the (i, j) = (0, 2) pattern
    Ry, dRy = _axis_rotations(angles[..., 2], 2, 0)
    RzRy = Rz @ Ry
    R = Rx @ RzRy
    dR = np.stack([dRx @ RzRy, Rx @ dRz @ Ry, Rx @ Rz @ dRy], axis=-3)
    return R, dR


@dataclass
class _MultiData:
    template: SkeletonTemplate
    k4: np.ndarray
    obs: np.ndarray  # (F, K, 2)
    weight: np.ndarray  # (F, K)
    rb: np.ndarray
    presented: np.ndarray  # (K, 3)
    target_height: float

    @classmethod
    def from_problem(cls, problem: MultiFrameProblem) -> "_MultiData":
        return cls(
            problem.template,
            _k4(problem.intrinsics),
            np.stack([fr.observed.coords for fr in problem.frames]),
            np.stack([fr.observed.confidence for fr in problem.frames]),
            problem.rb,
            problem.presented_theta,
            float(problem.target_height),
        )


def _multi_data_term(data: _MultiData, theta, beta, angles, tc, gamma, want_theta):
    """Batched over bodies: theta (B, K, 3), beta (B, K-1), angles and tc (B, F, 3).

    Returns per-frame energies (B, F), the behind-camera mask (B, F, K) and grads.
    """
    B = theta.shape[0]
    cache = fk_batch(data.template, theta, beta, np.broadcast_to(data.rb, (B, 3, 3)))
    P = cache.positions[:, None]  # (B, 1, K, 3)
    R, dR = rotation_and_derivatives(angles)  # (B, F, 3, 3), (B, F, 3, 3, 3)
    cam = P @ np.swapaxes(R, -1, -2) + tc[:, :, None, :]
    E, gcam, bad = _project_residuals(cam, data.k4, data.obs, data.weight * gamma)
    gP = np.sum(gcam @ R, axis=1)
    gR = np.swapaxes(gcam, -1, -2) @ P  # (B, F, 3, 3)
    g_angles = np.einsum("bfij,bfcij->bfc", gR, dR)
    back = fk_backward(data.template, cache, gP, want_theta=want_theta)
    return E, bad, {
        "theta": back.get("theta"),
        "beta": back["beta"],
        "angles": g_angles,
        "tc": gcam.sum(axis=2),
    }


def _stage1_terms(data: _MultiData, cfg: FitConfig, beta, angles, tc):
    B = beta.shape[0]
    theta = np.broadcast_to(data.presented, (B,) + data.presented.shape)
    E, bad, g = _multi_data_term(data, theta, beta, angles, tc, cfg.gamma, False)
    h, dh = heights_batch(data.template, beta)
    r = h - data.target_height
    e_data = E.sum(axis=1)
    total = e_data + cfg.lambda_m * r * r
    grads = {"beta": g["beta"] + 2.0 * cfg.lambda_m * r[:, None] * dh, "angles": g["angles"], "tc": g["tc"]}
    return total, {"data": e_data, "height": r * r}, grads, bad


def _stage2_terms(data: _MultiData, lam: float, gamma: float, theta, beta, angles, tc):
    E, bad, g = _multi_data_term(data, theta, beta, angles, tc, gamma, True)
    d = theta - data.presented
    e_pres = np.sum(d * d, axis=(1, 2))
    e_data = E.sum(axis=1)
    grads = {"theta": g["theta"] + 2.0 * lam * d, "angles": g["angles"], "tc": g["tc"]}
    return e_data + lam * e_pres, {"data": e_data, "presented": e_pres}, grads, bad


def _frames_args(problem, cam_angles, tc_per_frame):
    F = problem.n_frames
    angles = np.asarray(cam_angles, dtype=float).reshape(F, 3)
    tc = np.asarray(tc_per_frame, dtype=float).reshape(F, 3)
    return angles[None], tc[None]


def multiframe_stage1_energy(beta, cam_angles, tc_per_frame, problem: MultiFrameProblem, config: FitConfig = FitConfig()):
    """lambda_M (height(beta) - target)^2 + sum_i E_J_i with theta = presented pose.

    Returns ``(energy, grads)`` with grads keyed ``beta``, ``angles`` (F, 3) and ``tc`` (F, 3).
    """
    data = _MultiData.from_problem(problem)
    angles, tc = _frames_args(problem, cam_angles, tc_per_frame)
    beta = np.asarray(beta, dtype=float).reshape(1, -1)
    total, _, g, bad = _stage1_terms(data, config, beta, angles, tc)
    _raise_bad(bad[0], frame_axis=True)
    return float(total[0]), {k: v[0] for k, v in g.items()}


def multiframe_stage2_energy(theta, cam_angles, tc_per_frame, beta, problem: MultiFrameProblem, lambda_presented: float, config: FitConfig = FitConfig()):
    """lambda_presented |theta - presented|^2 + sum_i E_J_i with shape frozen."""
    data = _MultiData.from_problem(problem)
    angles, tc = _frames_args(problem, cam_angles, tc_per_frame)
    theta = np.asarray(theta, dtype=float)[None]
    beta = np.asarray(beta, dtype=float).reshape(1, -1)
    total, _, g, bad = _stage2_terms(data, lambda_presented, config.gamma, theta, beta, angles, tc)
    _raise_bad(bad[0], frame_axis=True)
    return float(total[0]), {k: v[0] for k, v in g.items()}


MULTI_STAGES = (
    ("stage1", ("beta", "angles", "tc"), None),
    ("stage2", ("theta", "angles", "tc"), 1.0),
    ("stage3", ("theta", "angles", "tc"), 0.5),
)


def fit_multiframe(problem: MultiFrameProblem, config: FitConfig = FitConfig()) -> FitResult:
    """Three stages: shape and cameras, then pose and cameras twice (prior weight halved)."""
    data = _MultiData.from_problem(problem)
    x = {
        "theta": problem.presented_theta[None].copy(),
        "beta": problem.init_beta[None].copy(),
        "angles": np.stack([fr.angles for fr in problem.frames])[None],
        "tc": np.stack([fr.tc for fr in problem.frames])[None],
    }

    def stage1(xx, want):
        return _stage1_terms(data, config, xx["beta"], xx["angles"], xx["tc"])

    def make_stage2(lam):
        def stage2(xx, want):
            return _stage2_terms(data, lam, config.gamma, xx["theta"], xx["beta"], xx["angles"], xx["tc"])

        return stage2

    reports = []
    for name, free, scale in MULTI_STAGES:
        fn = stage1 if scale is None else make_stage2(scale * config.lambda_presented)
        x, best_E, terms, raw = _minimize(fn, x, free, config, rotation_keys=(), frame_axis=True)
        reports.append(_report(name, free, raw[0], best_E, terms, 0))
    params = BodyParams(x["theta"][0], x["beta"][0], problem.rb, np.zeros(3))
    cameras = [{"angles": x["angles"][0, i].copy(), "tc": x["tc"][0, i].copy()} for i in range(problem.n_frames)]
    return FitResult(params, reports, cameras)


# --------------------------------------------------------------------------
# gradient oracle


def finite_difference_check(
    fn: Callable,
    x,
    epsilon: float = 1e-5,
    floor: float = 1e-8,
    values: Optional[Callable] = None,
) -> float:
    """Largest relative disagreement between ``fn``'s gradient and central differences.

    ``fn(x)`` returns ``(value, grad)``; the error per coordinate is
    ``|g - g_fd| / max(|g_fd|, floor)``. ``values``, if given, maps a stack of
    points (N, D) to their N energies in one call and is used for the
    perturbed evaluations.
    """
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    x = np.asarray(x, dtype=float).reshape(-1).copy()
    _, g = fn(x)
    g = np.asarray(g, dtype=float).reshape(-1)
    if g.size != x.size:
        raise ShapeMismatchError(f"gradient has {g.size} entries for {x.size} coordinates")
    n = x.size
    if values is not None:
        steps = np.eye(n) * epsilon
        f = np.asarray(values(np.concatenate([x + steps, x - steps])), dtype=float)
        fp, fm = f[:n], f[n:]
    else:
        fp, fm = np.empty(n), np.empty(n)
        for i in range(n):
            orig = x[i]
            x[i] = orig + epsilon
            fp[i] = fn(x)[0]
            x[i] = orig - epsilon
            fm[i] = fn(x)[0]
            x[i] = orig
    gfd = (fp - fm) / (2.0 * epsilon)
    err = np.abs(g - gfd) / np.maximum(np.abs(gfd), floor)
    return float(err.max()) if n else 0.0
