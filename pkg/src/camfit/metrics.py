"""Joint-error metrics, Procrustes alignment and per-camera breakdowns.

Inputs are in meters; every joint error is returned in millimeters.
Vertex-error names (``pve`` etc.) alias the joint versions: the skeleton has
no mesh, and the functions accept any point set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateInputError, DomainError, ShapeMismatchError

MM = 1000.0


def _points(a, name="points") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ShapeMismatchError(f"{name} must be (K, 3), got {a.shape}")
    return a


def _pair(pred, gt):
    p, g = _points(pred, "pred"), _points(gt, "gt")
    if p.shape != g.shape:
        raise ShapeMismatchError(f"pred {p.shape} and gt {g.shape} differ")
    return p, g


@dataclass(frozen=True)
class Similarity:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, X) -> np.ndarray:
        return self.scale * np.asarray(X, dtype=float) @ self.rotation.T + self.translation

    def __iter__(self):
        return iter((self.scale, self.rotation, self.translation))


def procrustes_align(X, Y) -> Similarity:
    """Similarity (s, R, t) minimising ||s R X + t - Y||_F (Umeyama)."""
    X, Y = _pair(X, Y)
    if X.shape[0] < 3:
        raise DegenerateInputError("alignment needs at least 3 points")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    var_x = np.sum(Xc * Xc)
    sv = np.linalg.svd(Xc, compute_uv=False)
    if var_x <= 0 or sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateInputError("source points are coincident or collinear")
    U, S, Vt = np.linalg.svd(Yc.T @ Xc)
    d = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        d[2] = -1.0
    R = (U * d) @ Vt
    s = float(np.sum(S * d) / var_x)
    return Similarity(s, R, my - s * R @ mx)


def mpjpe(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return float(np.mean(np.linalg.norm(p - g, axis=1)) * MM)


def pa_mpjpe(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return mpjpe(procrustes_align(p, g).apply(p), g)


@dataclass(frozen=True)
class EvalSample:
    """A prediction, its ground truth (world frame) and camera metadata.

    ``frame`` is "world" or "camera"; camera-frame predictions need
    ``estimated_rc`` to be brought into the world frame.
    """

    predicted: np.ndarray
    ground_truth: np.ndarray
    frame: str = "world"
    estimated_rc: Optional[np.ndarray] = None
    focal_px: Optional[float] = None
    pitch_deg: Optional[float] = None

    def __post_init__(self):
        p, g = _pair(self.predicted, self.ground_truth)
        if self.frame not in ("world", "camera"):
            raise DomainError(f"frame must be 'world' or 'camera', got {self.frame!r}")
        rc = None
        if self.estimated_rc is not None:
            rc = np.asarray(self.estimated_rc, dtype=float)
            if rc.shape != (3, 3):
                raise ShapeMismatchError(f"estimated_rc must be 3x3, got {rc.shape}")
        object.__setattr__(self, "predicted", p)
        object.__setattr__(self, "ground_truth", g)
        object.__setattr__(self, "estimated_rc", rc)

    def world_prediction(self) -> np.ndarray:
        if self.frame == "world":
            return self.predicted
        if self.estimated_rc is None:
            raise DomainError("camera-frame prediction has no estimated rotation")
        # rows are points: (Rc^T p)^T = p^T Rc
        return self.predicted @ self.estimated_rc


def w_mpjpe(sample: EvalSample, root_align: bool = True, root: int = 0) -> float:
    """World-frame joint error; optionally translate so the roots coincide."""
    P = sample.world_prediction()
    g = sample.ground_truth
    if root_align:
        P = P - (P[root] - g[root])
    return float(np.mean(np.linalg.norm(P - g, axis=1)) * MM)


# vertex-set aliases
pve = mpjpe
pa_pve = pa_mpjpe
w_pve = w_mpjpe


def angular_error(pred_deg, gt_deg):
    """|pred - gt| wrapped into [0, 180] degrees. Works elementwise on arrays."""
    d = np.asarray(pred_deg, dtype=float) - np.asarray(gt_deg, dtype=float)
    w = -np.remainder(-d + 180.0, 360.0) + 180.0  # (-180, 180]
    out = np.abs(w)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# bucketing


@dataclass(frozen=True)
class BucketSpec:
    focal_edges: tuple
    pitch_edges: tuple

    def __post_init__(self):
        for name in ("focal_edges", "pitch_edges"):
            e = tuple(float(x) for x in getattr(self, name))
            if len(e) < 2 or any(b <= a for a, b in zip(e, e[1:])):
                raise DomainError(f"{name} must be strictly increasing with at least two entries")
            object.__setattr__(self, name, e)

    @classmethod
    def from_json(cls, obj) -> "BucketSpec":
        return cls(tuple(obj["focal_edges"]), tuple(obj["pitch_edges"]))

    def to_json(self) -> dict:
        return {"focal_edges": list(self.focal_edges), "pitch_edges": list(self.pitch_edges)}


@dataclass(frozen=True)
class BucketRow:
    axis: str  # "focal" or "pitch"
    lo: float  # -inf for the underflow bucket
    hi: float  # +inf for the overflow bucket
    count: int
    mean: Optional[float]

    @property
    def overflow(self) -> bool:
        return math.isinf(self.lo) or math.isinf(self.hi)

    def to_json(self) -> dict:
        return {
            "axis": self.axis,
            "lo": None if math.isinf(self.lo) else self.lo,
            "hi": None if math.isinf(self.hi) else self.hi,
            "count": self.count,
            "mean": self.mean,
            "overflow": self.overflow,
        }


def _axis_rows(axis: str, keys: Sequence, values: np.ndarray, edges: tuple) -> list:
    bounds = [(-math.inf, edges[0])] + list(zip(edges, edges[1:])) + [(edges[-1], math.inf)]
    rows = []
    for lo, hi in bounds:
        sel = [v for k, v in zip(keys, values) if k is not None and lo <= k < hi]
        mean = float(np.mean(sel)) if sel else None
        rows.append(BucketRow(axis, lo, hi, len(sel), mean))
    return rows


def bucket_breakdown(samples: Sequence[EvalSample], values, spec: BucketSpec) -> list:
    """Per-focal and per-pitch bucket counts and means over half-open [lo, hi).

    Values outside the edges land in underflow/overflow rows; empty buckets
    report ``mean=None``.
    """
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size != len(samples):
        raise ShapeMismatchError(f"{len(samples)} samples but {values.size} metric values")
    rows = _axis_rows("focal", [s.focal_px for s in samples], values, spec.focal_edges)
    rows += _axis_rows("pitch", [s.pitch_deg for s in samples], values, spec.pitch_edges)
    return rows


def format_table(rows: Sequence[BucketRow]) -> str:
    """Aligned plain-text rendering of ``bucket_breakdown`` output."""
    lines = [f"{'axis':<6} {'lo':>10} {'hi':>10} {'count':>6} {'mean_mm':>10}"]
    for r in rows:
        mean = "-" if r.mean is None else f"{r.mean:.3f}"
        lines.append(f"{r.axis:<6} {r.lo:>10.2f} {r.hi:>10.2f} {r.count:>6d} {mean:>10}")
    return "\n".join(lines) + "\n"
