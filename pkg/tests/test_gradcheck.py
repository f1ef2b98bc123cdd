import numpy as np
import pytest

from camfit import gradcheck
from camfit.gradcheck import REGISTRY, TOLERANCE, run_checks, select

EXPECTED = {
    "softargmax_expectation",
    "softargmax_l2",
    "softargmax_biased_l2",
    "biased_l2",
    "kl_loss",
    "rodrigues",
    "forward_kinematics",
    "body_height",
    "reprojection_energy",
    "single_frame_energy",
    "multiframe_stage1_energy",
    "multiframe_stage2_energy",
}


def test_registry_contents():
    assert set(REGISTRY) == EXPECTED
    assert {op.suite for op in REGISTRY.values()} == {"losses", "fitter"}
    assert len(select("losses")) + len(select("fitter")) == len(select("all"))
    with pytest.raises(ValueError):
        select("nothing")


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_builders_are_deterministic(name):
    op = REGISTRY[name]
    fa, xa, *_ = op.build(np.random.default_rng(3))
    fb, xb, *_ = op.build(np.random.default_rng(3))
    assert np.array_equal(xa, xb)
    va, ga = fa(xa)
    vb, gb = fb(xb)
    assert va == vb and np.array_equal(ga, gb)


def test_all_ops_pass_on_few_cases():
    reports = run_checks("all", seed=1, cases=5)
    assert [r.name for r in reports] == list(REGISTRY)
    assert all(r.passed for r in reports), [(r.name, r.max_rel_error) for r in reports if not r.passed]


@pytest.mark.parametrize("name", ["kl_loss", "forward_kinematics", "multiframe_stage2_energy"])
def test_corrupted_gradient_is_caught(name):
    suite = REGISTRY[name].suite
    reports = {r.name: r for r in run_checks(suite, cases=3, corrupt=name)}
    assert not reports[name].passed and reports[name].max_rel_error > TOLERANCE
    assert all(r.passed for n, r in reports.items() if n != name)


def test_unknown_corrupt_op():
    with pytest.raises(ValueError, match="unknown op"):
        run_checks("losses", cases=1, corrupt="nope")


def test_report_json():
    r = gradcheck.CheckReport("x", "losses", 4, 2e-4)
    assert r.to_json() == {"op": "x", "suite": "losses", "cases": 4, "max_rel_error": 2e-4, "passed": False}
