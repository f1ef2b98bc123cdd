"""Command-line entry point: synth, fit, eval, sensitivity, gradcheck.

Exit codes: 0 success, 1 bad input or a failed check, 2 internal error.
Every output file is written once, atomically.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import gradcheck, metrics
from .bodykin import BodyParams, JointSet2D, SkeletonTemplate, default_template, fk_batch
from .camgeom import UPRIGHT, CameraSpec, ImageFrame, Intrinsics, camera_from_json, euler_rotation
from .errors import CamfitError
from .fileio import atomic_write_json, atomic_write_text
from .fitter import FitConfig, FitProblem, FrameObservation, MultiFrameProblem, estimate_translation, fit_batch, fit_multiframe, fit_single
from .panosample import (
    MANIFEST_NAME,
    CropSpec,
    SampleRecord,
    crop_from_pano,
    load_pano,
    make_rng,
    sample_pano360_camera,
    sample_specsyn_camera,
    write_sample_record,
)
from .scenes import build_problem, eval_sample, make_scene, regressor_init

log = logging.getLogger("camfit")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2
DEFAULT_FACTORS = (0.4, 0.6, 0.8, 1.0, 1.3, 1.6, 2.0)


class InputError(CamfitError):
    """Bad flags or malformed input files (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(f"{self.prog}: {message}")


def _load_json(path, what: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {what} {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} {path} is not valid JSON: {exc}") from exc


# --------------------------------------------------------------------------
# synth


def _sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def cmd_synth(args) -> int:
    if args.count < 0:
        raise InputError("--count must be >= 0")
    if args.out is None:
        raise InputError("synth needs --out DIR")
    try:
        pano = load_pano(args.pano)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot load panorama {args.pano}: {exc}") from exc
    frame = ImageFrame(args.width, args.height)
    ranges = None
    if args.pitch_range or args.roll_range or args.vfov_range:
        ranges = {}
        for key, val in (("pitch", args.pitch_range), ("roll", args.roll_range), ("vfov", args.vfov_range)):
            if val:
                ranges[key] = tuple(math.radians(v) for v in _floats(val, f"--{key}-range", 2))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tmp_manifest = f".{MANIFEST_NAME}.tmp"
    (out / tmp_manifest).unlink(missing_ok=True)
    (out / tmp_manifest).touch()
    for i in range(args.count):
        s = _sample_seed(args.seed, i)
        rng = make_rng(s)
        if args.dist == "specsyn":
            spec = CropSpec(sample_specsyn_camera(rng), frame)
        else:
            spec = sample_pano360_camera(rng, ranges, frame)
        raster = crop_from_pano(pano, spec)
        write_sample_record(SampleRecord.from_spec(f"crop_{i:05d}.ppm", spec, s), raster, out, tmp_manifest)
    (out / tmp_manifest).replace(out / MANIFEST_NAME)
    log.info("wrote %d crops to %s", args.count, out)
    return EXIT_OK


def _floats(text: str, flag: str, count: Optional[int] = None) -> list:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise InputError(f"{flag}: expected comma-separated numbers, got {text!r}") from exc
    if count is not None and len(vals) != count:
        raise InputError(f"{flag}: expected {count} numbers, got {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise InputError(f"{flag}: values must be finite")
    return vals


# --------------------------------------------------------------------------
# fit


def _camera_for_mode(mode: str, problem_cam: CameraSpec) -> tuple:
    """(intrinsics, Rc) for --camera."""
    if mode == "gt":
        return problem_cam.intrinsics, problem_cam.rotation
    if mode in ("f5000", "f2200"):
        return Intrinsics.from_focal(float(mode[1:]), problem_cam.frame), np.eye(3)
    if mode.startswith("file:"):
        cam = camera_from_json(_load_json(mode[5:], "camera file"))
        return cam.intrinsics, cam.rotation
    raise InputError(f"--camera must be gt, f5000, f2200 or file:PATH, got {mode!r}")


def _template(obj: dict) -> SkeletonTemplate:
    if "template" in obj:
        return SkeletonTemplate.from_json(obj["template"])
    return default_template()


def _keypoints(rows, where: str) -> JointSet2D:
    try:
        return JointSet2D.from_rows(rows)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{where}: bad keypoints: {exc}") from exc


def _config(obj: dict, args) -> FitConfig:
    d = dict(obj.get("config", {}))
    if args.steps is not None:
        d["steps"] = args.steps
    try:
        return FitConfig(**d)
    except TypeError as exc:
        raise InputError(f"bad config: {exc}") from exc


def _single_problem(obj: dict, mode: str) -> tuple:
    cam = camera_from_json(obj["camera"])
    tpl = _template(obj)
    obs = _keypoints(obj["keypoints"], "keypoints")
    K, rc = _camera_for_mode(mode, cam)
    if "init" in obj:
        init = BodyParams.from_json(obj["init"])
        # keep the camera-relative orientation when the fitting camera differs
        rb = rc.T @ cam.rotation @ init.rb
        init = init.replace(rb=rb)
        need_tb = "tb" not in obj["init"] or mode != "gt"
    else:
        init = BodyParams.zeros(tpl, rb=rc.T @ UPRIGHT)
        need_tb = True
    if need_tb:
        body = fk_batch(tpl, init.theta[None], init.beta[None], init.rb[None]).positions[0]
        init = init.replace(tb=estimate_translation(body, obs, K, rc))
    return FitProblem(obs, K, rc, tpl, init)


def _multi_problem(obj: dict, mode: str) -> MultiFrameProblem:
    cam = camera_from_json(obj["camera"])
    tpl = _template(obj)
    K, _ = _camera_for_mode(mode, cam)
    frames = []
    for i, fr in enumerate(obj["frames"]):
        angles = np.radians(np.asarray(fr.get("angles_deg", [0.0, 0.0, 0.0]), dtype=float))
        frames.append(FrameObservation(_keypoints(fr["keypoints"], f"frame {i}"), angles, fr["tc"]))
    if "rb" in obj:
        rb = np.asarray(obj["rb"], dtype=float)
    elif "rb_angles_deg" in obj:
        rb = euler_rotation(*np.radians(obj["rb_angles_deg"]))
    else:
        rb = UPRIGHT
    return MultiFrameProblem(
        tuple(frames),
        np.asarray(obj["presented_theta"], dtype=float),
        float(obj["target_height"]),
        K,
        tpl,
        rb,
        None if obj.get("init_beta") is None else np.asarray(obj["init_beta"], dtype=float),
    )


def cmd_fit(args) -> int:
    if args.out is None:
        raise InputError("fit needs --out FILE")
    obj = _load_json(args.problem, "problem")
    try:
        config = _config(obj, args)
        if args.multi:
            problem = _multi_problem(obj, args.camera)
            result = fit_multiframe(problem, config)
            camera = {"fx": problem.intrinsics.fx, "fy": problem.intrinsics.fy, "ox": problem.intrinsics.ox, "oy": problem.intrinsics.oy}
        else:
            problem = _single_problem(obj, args.camera)
            result = fit_single(problem, config)
            K = problem.intrinsics
            camera = {"fx": K.fx, "fy": K.fy, "ox": K.ox, "oy": K.oy, "rc": problem.rc.tolist()}
    except (KeyError, TypeError, IndexError) as exc:
        raise InputError(f"malformed problem {args.problem}: missing or bad field {exc}") from exc
    out = {"camera_mode": args.camera, "multi": bool(args.multi), "camera": camera, "config": config.to_json()}
    out.update(result.to_json())
    atomic_write_json(args.out, out)
    log.info("fit: %.6g -> %.6g", result.initial_energy, result.final_energy)
    return EXIT_OK


# --------------------------------------------------------------------------
# eval


DEFAULT_BUCKETS = metrics.BucketSpec((0.0, 300.0, 600.0, 900.0, 1200.0, 1600.0, 2400.0), (-30.0, -15.0, 0.0, 15.0, 30.0))


def _parse_sample(i: int, obj) -> metrics.EvalSample:
    try:
        frame = obj.get("pred_frame", "world")
        rc = None
        if "est_rc" in obj:
            rc = np.asarray(obj["est_rc"], dtype=float)
        elif obj.get("est_rc_angles_deg") is not None:
            rc = euler_rotation(*np.radians(np.asarray(obj["est_rc_angles_deg"], dtype=float)))
        if frame == "camera" and rc is None:
            raise InputError(f"sample {i}: camera-frame prediction without est_rc_angles_deg")
        return metrics.EvalSample(
            np.asarray(obj["pred"], dtype=float),
            np.asarray(obj["gt"], dtype=float),
            frame,
            rc,
            None if obj.get("focal_px") is None else float(obj["focal_px"]),
            None if obj.get("pitch_deg") is None else float(obj["pitch_deg"]),
        )
    except InputError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise InputError(f"sample {i}: {exc}") from exc


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def cmd_eval(args) -> int:
    if args.out is None:
        raise InputError("eval needs --out FILE")
    raw = _load_json(args.samples, "samples")
    if not isinstance(raw, list):
        raise InputError("samples file must hold a JSON list")
    samples = [_parse_sample(i, s) for i, s in enumerate(raw)]
    spec = DEFAULT_BUCKETS
    if args.buckets:
        try:
            spec = metrics.BucketSpec.from_json(_load_json(args.buckets, "buckets"))
        except (KeyError, TypeError) as exc:
            raise InputError(f"bad buckets file: {exc}") from exc
    root_align = args.root_align == "on"
    rows = []
    for i, s in enumerate(samples):
        try:
            world = s.world_prediction()
            w = metrics.w_mpjpe(s, root_align=root_align)
            rows.append(
                {
                    "index": i,
                    "frame": s.frame,
                    "mpjpe": metrics.mpjpe(world, s.ground_truth),
                    "pa_mpjpe": metrics.pa_mpjpe(world, s.ground_truth),
                    "w_mpjpe_v1": w if s.frame == "world" else None,
                    "w_mpjpe_v2": w if s.frame == "camera" else None,
                }
            )
        except CamfitError as exc:
            raise InputError(f"sample {i}: {exc}") from exc
    wvals = [r["w_mpjpe_v1"] if r["w_mpjpe_v1"] is not None else r["w_mpjpe_v2"] for r in rows]
    table = metrics.bucket_breakdown(samples, wvals, spec) if samples else []
    summary = {k: _mean(r[k] for r in rows) for k in ("mpjpe", "pa_mpjpe", "w_mpjpe_v1", "w_mpjpe_v2")}
    out = {
        "root_align": root_align,
        "count": len(rows),
        "summary_mm": summary,
        "samples": rows,
        "buckets": {"spec": spec.to_json(), "metric": "w_mpjpe", "rows": [r.to_json() for r in table]},
    }
    atomic_write_json(args.out, out)
    text = _summary_text(summary, root_align) + metrics.format_table(table)
    atomic_write_text(Path(args.out).with_suffix(".txt"), text)
    if not args.quiet:
        sys.stdout.write(text)
    return EXIT_OK


def _summary_text(summary: dict, root_align: bool) -> str:
    lines = [f"root_align={'on' if root_align else 'off'}"]
    for k, v in summary.items():
        lines.append(f"{k:<12} {'-' if v is None else f'{v:.3f}'} mm")
    return "\n".join(lines) + "\n\n"


# --------------------------------------------------------------------------
# sensitivity


def sensitivity_curve(trials: int, seed: int, factors: Sequence[float], config: FitConfig = FitConfig()) -> list:
    """Mean W-MPJPE (mm) per focal factor; one shared set of scenes and inits."""
    rng = make_rng(seed)
    scenes, inits = [], []
    for _ in range(trials):
        sc = make_scene(rng)
        scenes.append(sc)
        inits.append(regressor_init(sc, rng))
    rows = []
    for f in factors:
        probs = [build_problem(sc, ini, "gt", f) for sc, ini in zip(scenes, inits)]
        fits = fit_batch(probs, config)
        errs = [metrics.w_mpjpe(eval_sample(sc, p, r.params)) for sc, p, r in zip(scenes, probs, fits)]
        rows.append((float(f), float(np.mean(errs)) if errs else float("nan"), trials))
    return rows


def cmd_sensitivity(args) -> int:
    if args.out is None:
        raise InputError("sensitivity needs --out FILE")
    factors = _floats(args.factors, "--factors") if args.factors else list(DEFAULT_FACTORS)
    if not factors or any(f <= 0 for f in factors):
        raise InputError("--factors must be positive")
    if args.trials < 1:
        raise InputError("--trials must be >= 1")
    config = FitConfig() if args.steps is None else FitConfig(steps=args.steps)
    rows = sensitivity_curve(args.trials, args.seed, factors, config)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["factor", "mean_wmpjpe_mm", "trials"])
    for f, m, t in rows:
        w.writerow([repr(f), repr(m), t])
    atomic_write_text(args.out, buf.getvalue())
    if not args.quiet:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


# --------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    if args.cases < 1:
        raise InputError("--cases must be >= 1")
    try:
        reports = gradcheck.run_checks(args.suite, args.seed, args.cases, corrupt=args.corrupt)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    failing = [r for r in reports if not r.passed]
    if args.out:
        atomic_write_json(args.out, {"tolerance": gradcheck.TOLERANCE, "checks": [r.to_json() for r in reports]})
    if not args.quiet:
        for r in reports:
            sys.stdout.write(f"{'PASS' if r.passed else 'FAIL'} {r.name:<28} {r.max_rel_error:.3e} ({r.cases} cases)\n")
    if failing:
        sys.stderr.write("failing checks: " + ", ".join(r.name for r in failing) + "\n")
        return EXIT_INPUT
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    p = _Parser(prog="camfit", description="Camera-aware body fitting toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="crop perspective images from a panorama")
    s.add_argument("--pano", default="procedural:checker", help="PPM file or procedural:checker|hemisphere|gradient")
    s.add_argument("--count", type=int, default=10, help="number of crops")
    s.add_argument("--dist", choices=("pano360", "specsyn"), default="pano360", help="camera distribution")
    s.add_argument("--width", type=int, default=256, help="crop width in pixels")
    s.add_argument("--height", type=int, default=192, help="crop height in pixels")
    s.add_argument("--pitch-range", help="pano360 pitch range lo,hi in degrees")
    s.add_argument("--roll-range", help="pano360 roll range lo,hi in degrees")
    s.add_argument("--vfov-range", help="pano360 vfov range lo,hi in degrees")
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("fit", parents=[common], help="fit the skeleton to 2D keypoints")
    f.add_argument("--problem", required=True, help="fit-problem JSON")
    f.add_argument("--camera", default="gt", help="gt | f5000 | f2200 | file:PATH")
    f.add_argument("--multi", action="store_true", help="multi-frame problem (three-stage fit)")
    f.add_argument("--steps", type=int, help="override steps per stage")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", parents=[common], help="joint-error metrics and bucket breakdown")
    e.add_argument("--samples", required=True, help="evaluation samples JSON")
    e.add_argument("--buckets", help="bucket spec JSON {focal_edges, pitch_edges}")
    e.add_argument("--root-align", choices=("on", "off"), default="on", help="root-align W-MPJPE (default on)")
    e.set_defaults(func=cmd_eval)

    n = sub.add_parser("sensitivity", parents=[common], help="W-MPJPE versus focal-length error")
    n.add_argument("--trials", type=int, default=100, help="synthetic bodies per factor")
    n.add_argument("--factors", help="comma-separated focal factors (default 0.4,0.6,0.8,1.0,1.3,1.6,2.0)")
    n.add_argument("--steps", type=int, help="override steps per stage")
    n.set_defaults(func=cmd_sensitivity)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    g.add_argument("--suite", choices=("losses", "fitter", "all"), default="all", help="which ops to check")
    g.add_argument("--cases", type=int, default=100, help="random cases per op")
    g.add_argument("--corrupt", metavar="OP", help="testing: corrupt the named op's gradient")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except InputError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CamfitError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        log.exception("internal error")
        sys.stderr.write(f"internal error: {exc}\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
