"""Registry of differentiable operations and their finite-difference checks.

Each entry builds a random test function ``f(x) -> (value, grad)`` from a
seeded generator. ``run_checks`` evaluates every registered op over many
random cases and reports the worst relative error per op.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import losses
from .bodykin import BodyParams, JointSet2D, default_template, fk_backward, fk_batch, heights_batch, rodrigues, rodrigues_jacobian
from .camgeom import UPRIGHT, ImageFrame, Intrinsics, euler_rotation
from .fitter import (
    FitConfig,
    FitProblem,
    FrameObservation,
    MultiFrameProblem,
    _MultiData,
    _SingleBatch,
    _single_energy,
    _stage1_terms,
    _stage2_terms,
    finite_difference_check,
    multiframe_stage1_energy,
    multiframe_stage2_energy,
    reprojection_energy,
)
from .panosample import make_rng

TOLERANCE = 1e-4

# builder(rng) -> (fn, x0) or (fn, x0, values), where values(X) evaluates a
# stack of points at once and speeds up the finite differences
Builder = Callable[[np.random.Generator], tuple]


@dataclass(frozen=True)
class GradOp:
    name: str
    suite: str  # "losses" or "fitter"
    build: Builder


REGISTRY: dict = {}


def register(name: str, suite: str):
    def deco(build: Builder) -> Builder:
        REGISTRY[name] = GradOp(name, suite, build)
        return build

    return deco


# --------------------------------------------------------------------------
# losses


def _logits_case(rng, bins=64):
    grid = losses.BinGrid.uniform(-1.0, 1.0, bins)
    z = rng.normal(0.0, 1.5, bins)
    return grid, z


@register("softargmax_expectation", "losses")
def _b_expectation(rng):
    grid, z = _logits_case(rng)

    def fn(x):
        p = losses.softmax_normalize(x)
        e = losses.softargmax_expectation(p, grid)
        return e, p * (grid.centers - e)

    return fn, z


@register("softargmax_l2", "losses")
def _b_l2(rng):
    grid, z = _logits_case(rng)
    gt = rng.uniform(grid.lo, grid.hi)

    def fn(x):
        r = losses.softargmax_l2(x, grid, gt)
        return r.value, r.grad

    return fn, z


@register("softargmax_biased_l2", "losses")
def _b_biased(rng):
    grid, z = _logits_case(rng)
    e = float(losses.softmax_normalize(z) @ grid.centers)
    # keep the expectation clear of the kink at pred == gt
    gt = float(np.clip(e + rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 0.5), grid.lo, grid.hi))
    if abs(gt - e) < 1e-3:
        gt = grid.lo if e > 0 else grid.hi

    def fn(x):
        r = losses.softargmax_biased_l2(x, grid, gt)
        return r.value, r.grad

    return fn, z


@register("biased_l2", "losses")
def _b_biased_scalar(rng):
    gt = rng.normal()
    pred = gt + rng.choice([-1.0, 1.0]) * rng.uniform(0.01, 3.0)

    def fn(x):
        return losses.biased_l2(float(x[0]), gt), np.array([losses.biased_l2_derivative(float(x[0]), gt)])

    return fn, np.array([pred])


@register("kl_loss", "losses")
def _b_kl(rng):
    grid, z = _logits_case(rng)
    target = losses.smoothed_target(rng.uniform(grid.lo, grid.hi), grid, sigma=rng.uniform(0.05, 0.3))

    def fn(x):
        r = losses.kl_loss(x, target)
        return r.value, r.grad

    return fn, z


# --------------------------------------------------------------------------
# kinematics and fitting energies


def _random_body(rng, tpl):
    K = tpl.joint_count
    theta = rng.normal(0.0, 0.3, (K, 3))
    beta = rng.normal(0.0, 0.1, K - 1)
    rb = rodrigues(rng.normal(0.0, 0.2, 3)) @ UPRIGHT
    return theta, beta, rb


@register("rodrigues", "fitter")
def _b_rodrigues(rng):
    W = rng.normal(size=(3, 3))
    v0 = rng.normal(0.0, 1.0, 3)

    def fn(x):
        R = rodrigues(x)
        J = rodrigues_jacobian(x, R)
        return float(np.sum(W * R)), np.einsum("iab,ab->i", J, W)

    return fn, v0


@register("forward_kinematics", "fitter")
def _b_fk(rng):
    tpl = default_template()
    K = tpl.joint_count
    theta, beta, rb = _random_body(rng, tpl)
    W = rng.normal(size=(K, 3))

    def fn(x):
        th = x[: 3 * K].reshape(K, 3)
        be = x[3 * K : 4 * K - 1]
        R = rodrigues(x[4 * K - 1 :]) @ rb
        c = fk_batch(tpl, th[None], be[None], R[None])
        g = fk_backward(tpl, c, W[None])
        # rb_delta is the gradient at delta = 0; shift it to the current delta
        return float(np.sum(W * c.positions[0])), np.concatenate(
            [g["theta"][0].ravel(), g["beta"][0], _delta_grad(x[4 * K - 1 :], g["rb_delta"][0])]
        )

    def values(X):
        N = X.shape[0]
        R = rodrigues(X[:, 4 * K - 1 :]) @ rb
        c = fk_batch(tpl, X[:, : 3 * K].reshape(N, K, 3), X[:, 3 * K : 4 * K - 1], R)
        return np.sum(W * c.positions, axis=(1, 2))

    return fn, np.concatenate([theta.ravel(), beta, np.zeros(3)]), values


def _delta_grad(delta, g_left):
    """Chain a left-perturbation gradient through R = rodrigues(delta) @ R0.

    dR/d delta_i = [w_i]x R, so df/d delta_i = g_left . w_i.
    """
    R = rodrigues(delta)
    J = rodrigues_jacobian(delta, R)  # dR/d delta_i
    Ws = J @ R.T
    w = np.stack([Ws[:, 2, 1], Ws[:, 0, 2], Ws[:, 1, 0]], -1)  # (3 components, 3)
    return w @ g_left


@register("body_height", "fitter")
def _b_height(rng):
    tpl = default_template()
    beta0 = rng.normal(0.0, 0.1, tpl.bone_count)

    def fn(x):
        h, g = heights_batch(tpl, x[None])
        return float(h[0]), g[0]

    return fn, beta0


def _single_problem(rng, tpl):
    theta, beta, rb = _random_body(rng, tpl)
    angles = (rng.uniform(-0.4, 0.2), rng.normal(0.0, 0.05), rng.uniform(-math.pi, math.pi))
    Rc = euler_rotation(*angles)
    frame = ImageFrame(640, 480)
    K = Intrinsics.from_vfov(rng.uniform(1.2, 2.2), frame)
    tb = np.array([rng.normal(0.0, 0.3), rng.normal(0.0, 0.3), rng.uniform(3.0, 6.0)])
    J = tpl.joint_count
    params = BodyParams(theta, beta, Rc.T @ rb, tb)
    # observations a few pixels off the model's own projection: a realistic
    # near-fit point where central differences are not swamped by roundoff
    cam = fk_batch(tpl, theta[None], beta[None], params.rb[None]).positions[0] @ Rc.T + tb
    uv = _pixels(cam, K) + rng.normal(0.0, 3.0, (J, 2))
    obs = JointSet2D(uv, rng.uniform(0.2, 1.0, J))
    return FitProblem(obs, K, Rc, tpl, params)


def _pixels(cam, K):
    return np.stack([K.fx * cam[:, 0] / cam[:, 2] + K.ox, K.fy * cam[:, 1] / cam[:, 2] + K.oy], -1)


@register("reprojection_energy", "fitter")
def _b_reproj(rng):
    tpl = default_template()
    prob = _single_problem(rng, tpl)
    p0 = prob.init
    K = tpl.joint_count
    gamma = rng.uniform(0.5, 2.0)

    def fn(x):
        d = x[4 * K - 1 : 4 * K + 2]
        p = BodyParams(x[: 3 * K].reshape(K, 3), x[3 * K : 4 * K - 1], rodrigues(d) @ p0.rb, x[4 * K + 2 :])
        e, g = reprojection_energy(p, prob, gamma)
        return e, np.concatenate([g["theta"].ravel(), g["beta"], _delta_grad(d, g["rb"]), g["tb"]])

    data = _SingleBatch.from_problems([prob])
    cfg = FitConfig(gamma=gamma, lambda_theta=0.0, lambda_beta=0.0)

    def values(X):
        N = X.shape[0]
        xx = {
            "theta": X[:, : 3 * K].reshape(N, K, 3),
            "beta": X[:, 3 * K : 4 * K - 1],
            "rb": rodrigues(X[:, 4 * K - 1 : 4 * K + 2]) @ p0.rb,
            "tb": X[:, 4 * K + 2 :],
        }
        return _single_energy(_broadcast(data, N), xx, cfg)[1]["data"]

    return fn, np.concatenate([p0.theta.ravel(), p0.beta, np.zeros(3), p0.tb]), values


def _broadcast(data: _SingleBatch, N: int) -> _SingleBatch:
    return _SingleBatch(
        data.template,
        np.repeat(data.k4, N, axis=0),
        np.repeat(data.rc, N, axis=0),
        np.repeat(data.obs, N, axis=0),
        np.repeat(data.weight, N, axis=0),
    )


@register("single_frame_energy", "fitter")
def _b_single_total(rng):
    tpl = default_template()
    prob = _single_problem(rng, tpl)
    data = _SingleBatch.from_problems([prob])
    cfg = FitConfig(lambda_theta=rng.uniform(0.0, 1.0), lambda_beta=rng.uniform(0.0, 1.0))
    p0 = prob.init
    K = tpl.joint_count

    def unpack(X):
        N = X.shape[0]
        return {
            "theta": X[:, : 3 * K].reshape(N, K, 3),
            "beta": X[:, 3 * K : 4 * K - 1],
            "rb": np.broadcast_to(p0.rb, (N, 3, 3)),
            "tb": X[:, 4 * K - 1 :],
        }

    def fn(x):
        total, _, g, _ = _single_energy(data, unpack(x[None]), cfg, want=("theta", "beta", "tb"))
        return float(total[0]), np.concatenate([g["theta"][0].ravel(), g["beta"][0], g["tb"][0]])

    def values(X):
        return _single_energy(_broadcast(data, X.shape[0]), unpack(X), cfg)[0]

    return fn, np.concatenate([p0.theta.ravel(), p0.beta, p0.tb]), values


def _multi_problem(rng, tpl, F=3):
    theta, beta, _ = _random_body(rng, tpl)
    frame = ImageFrame(640, 480)
    K = Intrinsics.from_vfov(rng.uniform(1.0, 2.0), frame)
    J = tpl.joint_count
    body = fk_batch(tpl, theta[None], beta[None], UPRIGHT[None]).positions[0]
    frames = []
    for _ in range(F):
        ang = np.array([rng.uniform(-0.3, 0.2), rng.normal(0.0, 0.05), rng.uniform(-1.0, 1.0)])
        tc = np.array([rng.normal(0.0, 0.2), rng.normal(0.0, 0.2), rng.uniform(3.0, 5.0)])
        uv = _pixels(body @ euler_rotation(*ang).T + tc, K) + rng.normal(0.0, 3.0, (J, 2))
        frames.append(FrameObservation(JointSet2D(uv, rng.uniform(0.2, 1.0, J)), ang, tc))
    prob = MultiFrameProblem(tuple(frames), theta, rng.uniform(1.5, 1.9), K, tpl, UPRIGHT)
    return prob, theta, beta


@register("multiframe_stage1_energy", "fitter")
def _b_multi1(rng):
    tpl = default_template()
    F = 3
    prob, _, beta = _multi_problem(rng, tpl, F)
    cfg = FitConfig(lambda_m=rng.uniform(1.0, 100.0))
    nb = tpl.bone_count
    angles = np.stack([f.angles for f in prob.frames])
    tc = np.stack([f.tc for f in prob.frames])

    def fn(x):
        e, g = multiframe_stage1_energy(x[:nb], x[nb : nb + 3 * F], x[nb + 3 * F :], prob, cfg)
        return e, np.concatenate([g["beta"], g["angles"].ravel(), g["tc"].ravel()])

    data = _MultiData.from_problem(prob)

    def values(X):
        N = X.shape[0]
        return _stage1_terms(data, cfg, X[:, :nb], X[:, nb : nb + 3 * F].reshape(N, F, 3), X[:, nb + 3 * F :].reshape(N, F, 3))[0]

    return fn, np.concatenate([beta, angles.ravel(), tc.ravel()]), values


@register("multiframe_stage2_energy", "fitter")
def _b_multi2(rng):
    tpl = default_template()
    F = 3
    prob, theta, beta = _multi_problem(rng, tpl, F)
    theta = theta + rng.normal(0.0, 0.1, theta.shape)
    lam = rng.uniform(0.1, 10.0)
    n = theta.size
    angles = np.stack([f.angles for f in prob.frames])
    tc = np.stack([f.tc for f in prob.frames])

    def fn(x):
        e, g = multiframe_stage2_energy(x[:n].reshape(theta.shape), x[n : n + 3 * F], x[n + 3 * F :], beta, prob, lam)
        return e, np.concatenate([g["theta"].ravel(), g["angles"].ravel(), g["tc"].ravel()])

    data = _MultiData.from_problem(prob)

    def values(X):
        N = X.shape[0]
        th = X[:, :n].reshape((N,) + theta.shape)
        b = np.broadcast_to(beta, (N, beta.size))
        return _stage2_terms(data, lam, 1.0, th, b, X[:, n : n + 3 * F].reshape(N, F, 3), X[:, n + 3 * F :].reshape(N, F, 3))[0]

    return fn, np.concatenate([theta.ravel(), angles.ravel(), tc.ravel()]), values


# --------------------------------------------------------------------------
# runner


@dataclass(frozen=True)
class CheckReport:
    name: str
    suite: str
    cases: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE

    def to_json(self) -> dict:
        return {
            "op": self.name,
            "suite": self.suite,
            "cases": self.cases,
            "max_rel_error": self.max_rel_error,
            "passed": self.passed,
        }


def select(suite: str) -> list:
    if suite == "all":
        return list(REGISTRY.values())
    ops = [op for op in REGISTRY.values() if op.suite == suite]
    if not ops:
        raise ValueError(f"unknown suite {suite!r}")
    return ops


def run_checks(
    suite: str = "all",
    seed: int = 0,
    cases: int = 100,
    epsilon: float = 1e-5,
    corrupt: Optional[str] = None,
) -> list:
    """Worst finite-difference disagreement per op over ``cases`` random inputs.

    ``corrupt`` names an op whose analytic gradient is deliberately scaled, as a
    negative control for the checker itself.
    """
    if corrupt is not None and corrupt not in REGISTRY:
        raise ValueError(f"unknown op {corrupt!r}")
    reports = []
    for k, op in enumerate(select(suite)):
        rng = make_rng(seed * 1_000_003 + k)
        worst = 0.0
        for _ in range(cases):
            fn, x0, *rest = op.build(rng)
            if op.name == corrupt:
                fn = _corrupted(fn)
            values = rest[0] if rest else None
            worst = max(worst, finite_difference_check(fn, x0, epsilon, values=values))
        reports.append(CheckReport(op.name, op.suite, cases, worst))
    return reports


def _corrupted(fn):
    def bad(x):
        v, g = fn(x)
        return v, np.asarray(g) * 1.01 + 1e-3

    return bad
