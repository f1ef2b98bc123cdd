"""A small articulated skeleton standing in for a parametric body mesh.

Pose is one axis-angle vector per joint; shape is one log-scale per bone
(bone ``j`` connects joint ``j`` to its parent, so there are K-1 bones).
Joint positions follow

    G_0 = Rb @ exp(theta_0),            p_0 = tb
    G_j = G_parent @ exp(theta_j),      p_j = p_parent + G_parent @ (exp(beta_j) * offset_j)

The batched helpers (``fk_batch`` / ``fk_backward``) evaluate many bodies at
once and return exact vector-Jacobian products; the fitter is built on them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, ShapeMismatchError

# --------------------------------------------------------------------------
# rotation helpers


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices for ``v`` of shape (..., 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


_SMALL = 1e-6
_EYE = np.eye(3)
_BASIS_SKEW = skew(np.eye(3))  # [i] -> skew(e_i)


def rodrigues(v: np.ndarray) -> np.ndarray:
    """Exponential map from axis-angle vectors (..., 3) to rotations (..., 3, 3)."""
    v = np.asarray(v, dtype=float)
    th2 = np.sum(v * v, axis=-1)
    th = np.sqrt(th2)
    small = th < _SMALL
    safe = np.where(small, 1.0, th)
    a = np.where(small, 1.0 - th2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - th2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    # [v]^2 = v v^T - |v|^2 I
    out = a[..., None, None] * skew(v) + b[..., None, None] * (v[..., :, None] * v[..., None, :])
    diag = 1.0 - b * th2
    for i in range(3):
        out[..., i, i] += diag
    return out


def rodrigues_jacobian(v: np.ndarray, R: Optional[np.ndarray] = None) -> np.ndarray:
    """dR/dv_i for each component; output shape (..., 3, 3, 3) indexed [i, a, b].

    Uses dR/dv_i = (v_i [v] + [v x (I - R) e_i]) R / |v|^2, with a
    second-order series near the origin.
    """
    v = np.asarray(v, dtype=float)
    if R is None:
        R = rodrigues(v)
    th2 = np.sum(v * v, axis=-1)
    Kv = skew(v)
    M = _EYE - R
    # w[..., i, :] = v x (column i of M)
    w = np.cross(v[..., None, :], np.swapaxes(M, -1, -2))
    S = v[..., :, None, None] * Kv[..., None, :, :] + skew(w)
    safe = np.where(th2 < _SMALL**2, 1.0, th2)
    exact = (S @ R[..., None, :, :]) / safe[..., None, None, None]
    small = th2 < _SMALL**2
    if np.any(small):
        E = _BASIS_SKEW
        Kb = Kv[..., None, :, :]
        series = E + 0.5 * (E @ Kb + Kb @ E)
        exact = np.where(small[..., None, None, None], series, exact)
    return exact


def _left_jacobian_t_apply(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """J_l(v)^T w, where dR/dv_i = [J_l(v) e_i]x R for R = rodrigues(v)."""
    th2 = np.sum(v * v, axis=-1)
    th = np.sqrt(th2)
    small = th < 1e-4
    safe = np.where(small, 1.0, th)
    b = np.where(small, 0.5 - th2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    c = np.where(small, 1.0 / 6.0 - th2 / 120.0, (safe - np.sin(safe)) / (safe * safe * safe))
    vxw = np.cross(v, w)
    return w - b[..., None] * vxw + c[..., None] * np.cross(v, vxw)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation (polar factor) for (..., 3, 3) arrays."""
    U, _, Vt = np.linalg.svd(R)
    d = np.sign(np.linalg.det(U @ Vt))
    U = U.copy()
    U[..., :, 2] *= d[..., None]
    return U @ Vt


# --------------------------------------------------------------------------
# template


DEFAULT_JOINT_NAMES = (
    "pelvis",
    "spine",
    "head",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_clavicle",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_clavicle",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
)

_DEFAULT_PARENTS = (-1, 0, 1, 0, 3, 4, 0, 6, 7, 1, 9, 10, 11, 1, 13, 14, 15)

# +y up, facing +z, so the body's left is +x. Rest height (head to ankles) 1.70 m.
_DEFAULT_OFFSETS = (
    (0.0, 0.0, 0.0),
    (0.0, 0.45, 0.0),
    (0.0, 0.33, 0.02),
    (0.10, -0.08, 0.0),
    (0.0, -0.42, 0.01),
    (0.0, -0.42, -0.03),
    (-0.10, -0.08, 0.0),
    (0.0, -0.42, 0.01),
    (0.0, -0.42, -0.03),
    (0.07, -0.02, 0.0),
    (0.11, -0.01, -0.01),
    (0.03, -0.28, 0.0),
    (0.01, -0.25, 0.04),
    (-0.07, -0.02, 0.0),
    (-0.11, -0.01, -0.01),
    (-0.03, -0.28, 0.0),
    (-0.01, -0.25, 0.04),
)


@dataclass(frozen=True, eq=False)
class SkeletonTemplate:
    """Kinematic tree. Joints must be topologically ordered (parent < child)."""

    parents: tuple
    offsets: np.ndarray
    names: Optional[tuple] = None

    def __post_init__(self):
        parents = tuple(int(p) for p in self.parents)
        offsets = np.asarray(self.offsets, dtype=float)
        K = len(parents)
        if K < 1 or offsets.shape != (K, 3):
            raise ShapeMismatchError(f"offsets must be ({K}, 3), got {offsets.shape}")
        if parents[0] != -1:
            raise DomainError("joint 0 must be the root (parent -1)")
        for j, p in enumerate(parents[1:], start=1):
            if not 0 <= p < j:
                raise DomainError(f"joint {j} has parent {p}; parents must precede children")
        if np.any(offsets[0] != 0):
            raise DomainError("root offset must be the origin")
        offsets = offsets.copy()
        offsets.setflags(write=False)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)
        if self.names is not None:
            if len(self.names) != K:
                raise ShapeMismatchError("names must match joint count")
            object.__setattr__(self, "names", tuple(self.names))

    def __eq__(self, other):
        if not isinstance(other, SkeletonTemplate):
            return NotImplemented
        return self.parents == other.parents and np.array_equal(self.offsets, other.offsets)

    def __hash__(self):
        return hash((self.parents, self.offsets.tobytes()))

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @property
    def bone_count(self) -> int:
        return len(self.parents) - 1

    @cached_property
    def parent_array(self) -> np.ndarray:
        return np.array(self.parents)

    @cached_property
    def levels(self) -> list:
        """Joint index arrays grouped by tree depth (root level first)."""
        depth = [0] * self.joint_count
        for j in range(1, self.joint_count):
            depth[j] = depth[self.parents[j]] + 1
        depth = np.array(depth)
        return [np.flatnonzero(depth == d) for d in range(depth.max() + 1)]

    @cached_property
    def ancestors(self) -> np.ndarray:
        """A[j, k] = 1 when joint k lies on the path root..j (inclusive)."""
        K = self.joint_count
        A = np.zeros((K, K))
        for j in range(K):
            k = j
            while k >= 0:
                A[j, k] = 1.0
                k = self.parents[k]
        return A

    def to_json(self) -> dict:
        return {"parents": list(self.parents), "offsets": self.offsets.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "SkeletonTemplate":
        return cls(tuple(obj["parents"]), np.asarray(obj["offsets"], dtype=float), obj.get("names"))


@lru_cache(maxsize=1)
def default_template() -> SkeletonTemplate:
    """17-joint human-like skeleton, +y up, facing +z, 1.70 m tall at rest."""
    return SkeletonTemplate(_DEFAULT_PARENTS, np.array(_DEFAULT_OFFSETS), DEFAULT_JOINT_NAMES)


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class BodyParams:
    theta: np.ndarray
    beta: np.ndarray
    rb: np.ndarray = field(default_factory=lambda: np.eye(3))
    tb: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 2 or theta.shape[1] != 3:
            raise ShapeMismatchError(f"theta must be (K, 3), got {theta.shape}")
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        rb = np.asarray(self.rb, dtype=float)
        tb = np.asarray(self.tb, dtype=float).reshape(3)
        if rb.shape != (3, 3) or np.abs(rb.T @ rb - _EYE).max() > 1e-6 or np.linalg.det(rb) < 0:
            raise DomainError("rb must be a proper rotation")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(beta))):
            raise DomainError("theta and beta must be finite")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "rb", rb)
        object.__setattr__(self, "tb", tb)

    @classmethod
    def zeros(cls, template: SkeletonTemplate, rb=None, tb=None) -> "BodyParams":
        return cls(
            np.zeros((template.joint_count, 3)),
            np.zeros(template.bone_count),
            np.eye(3) if rb is None else rb,
            np.zeros(3) if tb is None else tb,
        )

    def replace(self, **changes) -> "BodyParams":
        d = dict(theta=self.theta, beta=self.beta, rb=self.rb, tb=self.tb)
        d.update(changes)
        return BodyParams(**d)

    def to_json(self) -> dict:
        from .camgeom import rotation_to_angles

        angles, _ = rotation_to_angles(self.rb)
        d = angles.degrees()
        return {
            "theta": self.theta.tolist(),
            "beta": self.beta.tolist(),
            "rb_angles_deg": [d["pitch_deg"], d["roll_deg"], d["yaw_deg"]],
            "rb": self.rb.tolist(),
            "tb": self.tb.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BodyParams":
        from .camgeom import euler_rotation

        if "rb" in obj:
            rb = np.asarray(obj["rb"], dtype=float)
        elif "rb_angles_deg" in obj:
            rb = euler_rotation(*np.radians(np.asarray(obj["rb_angles_deg"], dtype=float)))
        else:
            rb = np.eye(3)
        return cls(
            np.asarray(obj["theta"], dtype=float).reshape(-1, 3),
            np.asarray(obj["beta"], dtype=float),
            rb,
            np.asarray(obj.get("tb", [0.0, 0.0, 0.0]), dtype=float),
        )


@dataclass(frozen=True)
class JointSet2D:
    coords: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        w = np.asarray(self.confidence, dtype=float).reshape(-1)
        if c.ndim != 2 or c.shape[1] != 2 or w.shape[0] != c.shape[0]:
            raise ShapeMismatchError(f"need (K, 2) coords and K confidences, got {c.shape}, {w.shape}")
        if not np.all(np.isfinite(c)):
            raise DomainError("2D joint coordinates must be finite")
        if np.any((w < 0) | (w > 1)):
            raise DomainError("confidences must lie in [0, 1]")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "confidence", w)

    @classmethod
    def from_rows(cls, rows: Sequence) -> "JointSet2D":
        a = np.asarray(rows, dtype=float)
        if a.ndim != 2 or a.shape[1] not in (2, 3):
            raise ShapeMismatchError("keypoint rows must be [u, v] or [u, v, confidence]")
        w = a[:, 2] if a.shape[1] == 3 else np.ones(a.shape[0])
        return cls(a[:, :2], w)


def _check_dims(template: SkeletonTemplate, theta: np.ndarray, beta: np.ndarray):
    if theta.shape[-2:] != (template.joint_count, 3):
        raise ShapeMismatchError(f"theta has shape {theta.shape[-2:]}, template needs ({template.joint_count}, 3)")
    if beta.shape[-1] != template.bone_count:
        raise ShapeMismatchError(f"beta has {beta.shape[-1]} entries, template has {template.bone_count} bones")


# --------------------------------------------------------------------------
# batched forward / backward


@dataclass
class FKCache:
    """Intermediate values of ``fk_batch`` needed by ``fk_backward``.

    Arrays are stored joint-major (K, B, ...) so per-joint slices are contiguous.
    """

    joints: np.ndarray  # (K, B, 3), root at the origin
    globals_: np.ndarray  # (K, B, 3, 3)
    local: np.ndarray  # (K, B, 3, 3)
    scaled: np.ndarray  # (K-1, B, 3) exp(beta)-scaled offsets of bones 1..K-1
    rb: np.ndarray  # (B, 3, 3)
    theta: np.ndarray  # (K, B, 3)

    @property
    def positions(self) -> np.ndarray:
        """(B, K, 3) joint positions."""
        return np.swapaxes(self.joints, 0, 1)


def fk_batch(template: SkeletonTemplate, theta, beta, rb, rotations: Optional[FKCache] = None) -> FKCache:
    """Joint positions for a batch of bodies, root at the origin (tb excluded).

    theta (B, K, 3), beta (B, K-1), rb (B, 3, 3). When ``rotations`` is a cache
    computed with the same theta and rb, its rotations are reused and only the
    positions are recomputed.
    """
    beta = np.asarray(beta, dtype=float)
    if rotations is None:
        theta = np.asarray(theta, dtype=float)
        rb = np.asarray(rb, dtype=float)
        _check_dims(template, theta, beta)
        th = np.ascontiguousarray(np.swapaxes(theta, 0, 1))
        local = rodrigues(th)
        G = np.empty(local.shape)
        G[0] = rb @ local[0]
        for j in range(1, template.joint_count):
            G[j] = G[template.parents[j]] @ local[j]
    else:
        th, local, G, rb = rotations.theta, rotations.local, rotations.globals_, rotations.rb
        if beta.shape != (G.shape[1], template.bone_count):
            raise ShapeMismatchError(f"beta has shape {beta.shape}, expected {(G.shape[1], template.bone_count)}")
    K, B = G.shape[:2]
    scaled = np.exp(beta).T[:, :, None] * template.offsets[1:, None, :]
    P = np.zeros((K, B, 3))
    for j in range(1, K):
        p = template.parents[j]
        P[j] = P[p] + (G[p] @ scaled[j - 1][..., None])[..., 0]
    return FKCache(P, G, local, scaled, rb, th)


def fk_backward(template: SkeletonTemplate, cache: FKCache, grad_positions, want_theta: bool = True) -> dict:
    """Vector-Jacobian product of ``fk_batch``.

    ``grad_positions`` is (B, K, 3). Returns gradients for ``theta``
    (B, K, 3), ``beta`` (B, K-1) and ``rb_delta`` (B, 3), the latter for a
    left perturbation ``rb <- rodrigues(delta) @ rb`` at delta = 0.
    """
    gP = np.swapaxes(np.asarray(grad_positions, dtype=float), 0, 1)
    K = template.joint_count
    B = gP.shape[1]
    # each position feeds every descendant additively
    S = np.tensordot(template.ancestors.T, gP, axes=1)  # (K, B, 3)
    G = cache.globals_
    localT = np.swapaxes(cache.local, -1, -2)
    gG = np.zeros_like(G)
    gbeta = np.empty((K - 1, B))
    gLocal = np.empty_like(G) if want_theta else None
    for j in range(K - 1, 0, -1):
        p = template.parents[j]
        sc = cache.scaled[j - 1]
        bone = (G[p] @ sc[..., None])[..., 0]
        gbeta[j - 1] = np.sum(S[j] * bone, axis=-1)
        if want_theta:
            gLocal[j] = np.swapaxes(G[p], -1, -2) @ gG[j]
        gG[p] += S[j][:, :, None] * sc[:, None, :] + gG[j] @ localT[j]

    out = {"beta": gbeta.T, "rb_delta": _skew_grad(gG[0] @ np.swapaxes(G[0], -1, -2))}
    if want_theta:
        # <gLocal, dR/dv_i> = <skew part of gLocal R^T, J_l e_i>
        gLocal[0] = np.swapaxes(cache.rb, -1, -2) @ gG[0]
        w = _skew_grad(gLocal @ localT)
        out["theta"] = np.swapaxes(_left_jacobian_t_apply(cache.theta, w), 0, 1)
    return out


def _skew_grad(M: np.ndarray) -> np.ndarray:
    """<M, skew(e_i)> for i = 0..2."""
    return np.stack([M[..., 2, 1] - M[..., 1, 2], M[..., 0, 2] - M[..., 2, 0], M[..., 1, 0] - M[..., 0, 1]], -1)


def heights_batch(template: SkeletonTemplate, beta) -> tuple[np.ndarray, np.ndarray]:
    """Rest-pose heights (max y - min y) and their gradients w.r.t. beta."""
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    if beta.shape[-1] != template.bone_count:
        raise ShapeMismatchError(f"beta has {beta.shape[-1]} entries, template has {template.bone_count} bones")
    contrib = np.exp(beta) * template.offsets[1:, 1]  # (B, K-1) vertical bone lengths
    A = template.ancestors[:, 1:]  # joint j includes bone k
    y = contrib @ A.T  # (B, K), root y = 0
    jmax = np.argmax(y, axis=1)
    jmin = np.argmin(y, axis=1)
    rows = np.arange(beta.shape[0])
    h = y[rows, jmax] - y[rows, jmin]
    grad = (A[jmax] - A[jmin]) * contrib
    return h, grad


# --------------------------------------------------------------------------
# single-body API


def forward_kinematics(template: SkeletonTemplate, params: BodyParams) -> np.ndarray:
    """World joint positions (K, 3) including the translation ``tb``."""
    cache = fk_batch(template, params.theta[None], params.beta[None], params.rb[None])
    return cache.positions[0] + params.tb


def body_height(template: SkeletonTemplate, beta) -> float:
    """max y - min y of the zero-pose skeleton with shape ``beta``."""
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.size != template.bone_count:
        raise ShapeMismatchError(f"beta has {beta.size} entries, template has {template.bone_count} bones")
    h, _ = heights_batch(template, beta[None])
    return float(h[0])


def load_template(path) -> SkeletonTemplate:
    with open(path) as fh:
        return SkeletonTemplate.from_json(json.load(fh))
