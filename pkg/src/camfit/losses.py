"""Losses over discretised camera-parameter heads, plus body regression losses.

Each parameter (pitch, roll, vfov) is predicted as logits over ``B`` bins.
The prediction is the expectation of the bin centres under the softmax mass;
the L2 and biased-L2 losses act on that expectation. Gradients are returned
with respect to the logits and are derived in closed form:

    d e / d z_k = p_k (c_k - e)

where ``e = sum_i p_i c_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .errors import DomainError, ShapeMismatchError

DEFAULT_BINS = 256


@dataclass(frozen=True)
class BinGrid:
    centers: np.ndarray
    lo: float
    hi: float

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1)
        if c.size < 2:
            raise DomainError("a bin grid needs at least two bins")
        if np.any(np.diff(c) <= 0):
            raise DomainError("bin centres must be strictly increasing")
        if c[0] < self.lo or c[-1] > self.hi:
            raise DomainError("bin centres must lie inside [lo, hi]")
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)

    @classmethod
    def uniform(cls, lo: float, hi: float, bins: int = DEFAULT_BINS) -> "BinGrid":
        """Midpoints of ``bins`` equal-width intervals over [lo, hi]."""
        if not hi > lo:
            raise DomainError(f"empty range [{lo}, {hi}]")
        width = (hi - lo) / bins
        return cls(lo + width * (np.arange(bins) + 0.5), lo, hi)

    @classmethod
    def from_json(cls, obj: Mapping) -> "BinGrid":
        return cls.uniform(math.radians(obj["lo_deg"]), math.radians(obj["hi_deg"]), int(obj["bins"]))

    def to_json(self) -> dict:
        return {"lo_deg": math.degrees(self.lo), "hi_deg": math.degrees(self.hi), "bins": int(self.size)}

    @property
    def size(self) -> int:
        return self.centers.size

    @property
    def bin_width(self) -> float:
        return (self.hi - self.lo) / self.size


# Default grids cover the sampling ranges used for dataset synthesis with margin.
PITCH_RANGE = (math.radians(-45.0), math.radians(45.0))
ROLL_RANGE = (math.radians(-45.0), math.radians(45.0))
VFOV_RANGE = (math.radians(15.0), math.radians(140.0))


def default_grids(bins: int = DEFAULT_BINS) -> dict[str, BinGrid]:
    return {
        "pitch": BinGrid.uniform(*PITCH_RANGE, bins),
        "roll": BinGrid.uniform(*ROLL_RANGE, bins),
        "vfov": BinGrid.uniform(*VFOV_RANGE, bins),
    }


@dataclass(frozen=True)
class LossValueWithGrad:
    value: float
    grad: np.ndarray


def softmax_normalize(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float).reshape(-1)
    e = np.exp(z - z.max())
    return e / e.sum()


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max()
    return z - m - math.log(np.exp(z - m).sum())


def softargmax_expectation(p, grid: BinGrid) -> float:
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.size != grid.size:
        raise ShapeMismatchError(f"mass has {p.size} entries, grid has {grid.size} bins")
    return float(p @ grid.centers)


def _check_target(gt: float, grid: BinGrid):
    if not (grid.lo <= gt <= grid.hi):
        raise DomainError(f"ground truth {gt} outside bin range [{grid.lo}, {grid.hi}]")


def _expectation_and_jacobian(logits, grid: BinGrid) -> tuple[float, np.ndarray]:
    z = np.asarray(logits, dtype=float).reshape(-1)
    if z.size != grid.size:
        raise ShapeMismatchError(f"{z.size} logits for a grid of {grid.size} bins")
    p = softmax_normalize(z)
    e = float(p @ grid.centers)
    return e, p * (grid.centers - e)


def softargmax_l2(logits, grid: BinGrid, gt: float) -> LossValueWithGrad:
    _check_target(gt, grid)
    e, de_dz = _expectation_and_jacobian(logits, grid)
    d = e - gt
    return LossValueWithGrad(d * d, 2.0 * d * de_dz)


def biased_l2(pred: float, gt: float) -> float:
    """Squared error above the target, Geman-McClure saturation below it."""
    d = pred - gt
    d2 = d * d
    if d <= 0:
        return d2 / (d2 + 1.0)
    return d2


def biased_l2_derivative(pred: float, gt: float) -> float:
    d = pred - gt
    if d <= 0:
        return 2.0 * d / (d * d + 1.0) ** 2
    return 2.0 * d


def softargmax_biased_l2(logits, grid: BinGrid, gt: float) -> LossValueWithGrad:
    _check_target(gt, grid)
    e, de_dz = _expectation_and_jacobian(logits, grid)
    return LossValueWithGrad(biased_l2(e, gt), biased_l2_derivative(e, gt) * de_dz)


def kl_loss(logits, target) -> LossValueWithGrad:
    """KL(target || softmax(logits)), with 0 log 0 = 0."""
    z = np.asarray(logits, dtype=float).reshape(-1)
    t = np.asarray(target, dtype=float).reshape(-1)
    if z.size != t.size:
        raise ShapeMismatchError(f"{z.size} logits vs {t.size} target entries")
    logp = _log_softmax(z)
    nz = t > 0
    value = float(np.sum(t[nz] * (np.log(t[nz]) - logp[nz])))
    # d/dz of -sum t log softmax(z) is softmax(z) - t when sum(t) == 1
    grad = np.exp(logp) * t.sum() - t
    return LossValueWithGrad(value, grad)


def smoothed_target(gt: float, grid: BinGrid, sigma: Optional[float] = None) -> np.ndarray:
    """Gaussian bump around ``gt``, renormalised. ``sigma`` defaults to two bin widths."""
    if sigma is None:
        sigma = 2.0 * grid.bin_width
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    _check_target(gt, grid)
    d2 = (grid.centers - gt) ** 2
    # shifting by the minimum keeps the nearest bin at exp(0) for tiny sigma
    w = np.exp(-(d2 - d2.min()) / (2.0 * sigma * sigma))
    return w / w.sum()


# --------------------------------------------------------------------------
# body regression losses


DEFAULT_HPS_WEIGHTS = {"3d": 1.0, "2d": 1.0, "smpl": 1.0}


def hps_training_losses(
    pred_j3d,
    gt_j3d,
    pred_j2d,
    gt_j2d,
    pred_theta,
    gt_theta,
    pred_beta,
    gt_beta,
    lambdas: Optional[Mapping[str, float]] = None,
) -> dict[str, float]:
    """Squared-Frobenius joint losses plus parameter losses and their weighted sum."""
    lam = dict(DEFAULT_HPS_WEIGHTS)
    if lambdas:
        lam.update(lambdas)

    def sq(name, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape != b.shape:
            raise ShapeMismatchError(f"{name}: prediction shape {a.shape} != target shape {b.shape}")
        return float(np.sum((a - b) ** 2))

    out = {
        "loss_3d": sq("loss_3d", pred_j3d, gt_j3d),
        "loss_2d": sq("loss_2d", pred_j2d, gt_j2d),
        "loss_smpl": sq("loss_smpl/theta", pred_theta, gt_theta) + sq("loss_smpl/beta", pred_beta, gt_beta),
    }
    out["total"] = lam["3d"] * out["loss_3d"] + lam["2d"] * out["loss_2d"] + lam["smpl"] * out["loss_smpl"]
    return out
