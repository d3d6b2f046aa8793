"""Command-line front end: ``symplane detect|synth|eval|complete``.

Exit codes: 0 success, 2 invalid input, 3 pipeline failure, 4 estimator did
not converge (the result is still written and flagged).
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluation, io, pipeline, plot, synth
from .geometry import PointCloud, normalize_cloud, reflect_point
from .pipeline import DetectConfig

EXIT_OK, EXIT_INPUT, EXIT_PIPELINE, EXIT_NOCONVERGE = 0, 2, 3, 4

# flag name -> DetectConfig field
_FLAG_FIELDS = {
    "seed": "seed", "neighbors": "neighbors", "k_eig": "k_eig", "p_times": "p_times",
    "k_signs": "k_signs", "q": "q", "penalty_b": "penalty_b", "sigma": "sigma", "anneal": "anneal",
}


class UsageError(ValueError):
    """Bad flags, config or input files (exit code 2)."""


def _parse_bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_anneal(s: str):
    t = s.strip().lower()
    if t in ("", "none", "off"):
        return None
    parts = [float(x) for x in t.replace(",", " ").split()]
    if len(parts) != 3:
        raise ValueError("anneal takes three numbers: start, decay, floor")
    return tuple(parts)


def coerce_config_value(name: str, text: str):
    """Parse ``text`` for DetectConfig field ``name`` (types read off the dataclass)."""
    types = DetectConfig.field_types()
    if name not in types:
        raise UsageError(f"unknown config key {name!r}")
    typ = types[name]
    t = text.strip()
    if name == "anneal":
        return _parse_anneal(t)
    if "None" in typ and t.lower() in ("", "none", "auto"):
        return None
    base = typ.split("|")[0].strip()
    try:
        if base == "bool":
            return _parse_bool(t)
        if base == "int":
            return int(t)
        if base == "float":
            return float(t)
    except ValueError as e:
        raise UsageError(f"bad value for {name}: {text!r}") from e
    return t


def read_config_file(path) -> dict:
    """key=value lines; dashes in keys are accepted for underscores."""
    try:
        rec = io.read_keyvalue(path)
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    return {k.replace("-", "_"): coerce_config_value(k.replace("-", "_"), v) for k, v in rec.items()}


def build_config(args) -> DetectConfig:
    """Defaults, then the config file, then explicit flags."""
    kw = {}
    if getattr(args, "config", None):
        kw.update(read_config_file(args.config))
    for flag, name in _FLAG_FIELDS.items():
        val = getattr(args, flag, None)
        if val is not None:
            kw[name] = coerce_config_value(name, val) if isinstance(val, str) else val
    try:
        return DetectConfig(**kw)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid configuration: {e}") from e


def _load_cloud(path) -> PointCloud:
    try:
        return io.read_cloud(path)
    except (OSError, ValueError) as e:
        raise UsageError(f"cannot read cloud {path}: {e}") from e


def _run_detect(cloud, cfg):
    """Detection with pipeline failures mapped to exit code 3."""
    try:
        return pipeline.detect(cloud, cfg)
    except UsageError:
        raise
    except Exception as e:  # noqa: BLE001 - every stage failure is a pipeline error
        raise PipelineFailure(f"{type(e).__name__}: {e}") from e


class PipelineFailure(RuntimeError):
    pass


def _detect_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--neighbors", type=int)
    p.add_argument("--k-eig", dest="k_eig", type=int)
    p.add_argument("--p-times", dest="p_times", type=int)
    p.add_argument("--k-signs", dest="k_signs", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--penalty-b", dest="penalty_b", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--anneal", help='"start,decay,floor" or "none"')


# ------------------------------------------------------------------- detect


def cmd_detect(args) -> int:
    cfg = build_config(args)
    cloud = _load_cloud(args.input)
    res = _run_detect(cloud, cfg)
    pipeline.write_result(args.output, res, inline_timing=args.inline_timing)
    if args.timing:
        with open(args.timing, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(pipeline.format_timing(res))
    if args.plot:
        kp = [k.index for k in res.keypoints]
        plot.write_svg(args.plot, plot.detection_svg(cloud.points, res.plane, kp, res.correspondences.pairs,
                                                     title=Path(args.input).name))
    print(f"normal={io.format_value(res.plane.normal)} offset={io.format_value(res.plane.offset)} "
          f"converged={io.format_value(res.converged)}")
    if not res.converged:
        print("warning: estimator did not converge; result flagged", file=sys.stderr)
        return EXIT_NOCONVERGE
    return EXIT_OK


# -------------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    try:
        spec = synth.SynthSpec(shape=args.shape, n=args.n, alpha=args.alpha, gamma=args.gamma,
                               jitter_sigma=args.jitter, pose=args.pose, seed=args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from e
    try:
        cloud, gt = synth.make_model(spec)
    except RuntimeError as e:
        raise UsageError(f"cannot build model: {e}") from e
    io.write_cloud(args.output, cloud.points)
    sidecar = args.sidecar or sidecar_path(args.output)
    _, tf = normalize_cloud(cloud)
    io.write_keyvalue(sidecar, gt.record(scale=1.0 / tf.scale))
    print(f"wrote {len(cloud)} points to {args.output} and ground truth to {sidecar}")
    for k, v in vars(spec).items():
        print(f"spec_{k}={io.format_value(v)}")
    return EXIT_OK


def sidecar_path(cloud_path) -> str:
    p = Path(cloud_path)
    return str(p.with_name(p.stem + ".gt.txt"))


# --------------------------------------------------------------------- eval

_METRIC_COLUMNS = ("row", "cloud", "detected", "matched", "angle_deg", "center_dist", "gte", "sde", "error")


def read_manifest(path) -> list[tuple[str, str, str | None]]:
    """Rows of (cloud, sidecar, optional precomputed result), paths resolved."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise UsageError(f"cannot read manifest {path}: {e}") from e
    rows = []
    for n, line in enumerate(lines, 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3) or not all(p.strip() for p in parts):
            raise UsageError(f"manifest line {n}: expected cloud<TAB>sidecar[<TAB>result]")
        parts = [io.resolve(path, p.strip()) for p in parts]
        rows.append((parts[0], parts[1], parts[2] if len(parts) == 3 else None))
    if not rows:
        raise UsageError("manifest has no rows")
    return rows


def _eval_row(job):
    """One manifest row; never raises (failures come back in ``error``)."""
    i, (cloud_path, gt_path, result_path), cfg, thresholds = job
    out = {"row": i, "cloud": cloud_path, "detected": False, "matched": False, "angle_deg": math.nan,
           "center_dist": math.nan, "gte": math.nan, "sde": math.nan, "error": "", "center_ok": False}
    try:
        cloud = io.read_cloud(cloud_path)
        rec = io.read_keyvalue(gt_path)
        gt = io.plane_from_record(rec)
        if "center" in rec:
            center = io.floats(rec["center"])
        elif "point_a" in rec:
            center = 0.5 * (io.floats(rec["point_a"]) + io.floats(rec["point_c"]))
        else:
            center = gt.normal * gt.offset
        gt_points = None
        if all(f"point_{c}" in rec for c in "abc"):
            gt_points = np.array([io.floats(rec[f"point_{c}"]) for c in "abc"])
        if result_path is not None:
            est = pipeline.plane_from_result(pipeline.read_result(result_path))
        else:
            est = pipeline.detect(cloud, cfg).plane
        out["detected"] = True
        _, tf = normalize_cloud(cloud)
        out["angle_deg"] = evaluation.deviation_angle(est.normal, gt.normal)
        out["matched"] = evaluation.plane_match(est, gt, center, cloud, thresholds, gt_points)
        # center test alone, for the angle sweep
        loose = evaluation.EvalThresholds(t_a=math.pi / 4, t_d=thresholds.t_d)
        out["center_ok"] = evaluation.plane_match(est, gt, center, cloud, loose, gt_points)
        out["center_dist"] = float(abs(est.normal @ center - est.offset))
        out["gte"] = evaluation.gte(est, gt, tf)
        out["sde"] = evaluation.sde(cloud, est)
    except Exception as e:  # noqa: BLE001 - per-row failures are recorded, not fatal
        out["error"] = f"{type(e).__name__}: {e}".replace("\n", " ")
    return out


def cmd_eval(args) -> int:
    cfg = build_config(args)
    try:
        thresholds = evaluation.EvalThresholds(t_a=math.radians(args.t_angle_deg))
    except ValueError as e:
        raise UsageError(str(e)) from e
    rows = read_manifest(args.input)
    os.makedirs(args.output, exist_ok=True)
    jobs = [(i, r, cfg, thresholds) for i, r in enumerate(rows)]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as ex:
            results = list(ex.map(_eval_row, jobs))
    else:
        results = [_eval_row(j) for j in jobs]
    metrics_path = os.path.join(args.output, "metrics.csv")
    with open(metrics_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=_METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in results:
            w.writerow({k: r[k] if isinstance(r[k], str) else io.format_value(r[k]) for k in _METRIC_COLUMNS})
    det = [r["detected"] for r in results]
    ang = [r["angle_deg"] if r["detected"] else 90.0 for r in results]
    matched = [r["matched"] for r in results]
    tp = sum(matched)
    fp = sum(d and not m for d, m in zip(det, matched))
    fn = len(results) - tp
    summary = evaluation.precision_recall_fscore(tp, fp, fn)
    sweep = evaluation.pr_sweep(ang, det, center_ok=[r["center_ok"] for r in results])
    with open(os.path.join(args.output, "pr_sweep.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("t_a_deg,tp,fp,fn,precision,recall,fscore\n")
        for t, rep in sweep:
            fh.write(f"{math.degrees(t)!r},{rep.tp},{rep.fp},{rep.fn},{rep.precision!r},{rep.recall!r},{rep.fscore!r}\n")
    svg_path = args.plot or os.path.join(args.output, "pr_curve.svg")
    degs = [math.degrees(t) for t, _ in sweep]
    plot.write_svg(svg_path, plot.pr_curve_svg([r.recall for _, r in sweep], [r.precision for _, r in sweep],
                                               (degs, [r.fscore for _, r in sweep])))
    io.write_keyvalue(os.path.join(args.output, "summary.txt"), {
        "rows": len(results), "t_a_deg": args.t_angle_deg, "tp": summary.tp, "fp": summary.fp,
        "fn": summary.fn, "precision": summary.precision, "recall": summary.recall, "fscore": summary.fscore,
        "failed_rows": sum(bool(r["error"]) for r in results),
    })
    print(f"rows={len(results)} precision={summary.precision:.4f} recall={summary.recall:.4f} "
          f"fscore={summary.fscore:.4f}")
    return EXIT_OK


# ----------------------------------------------------------------- complete


def cmd_complete(args) -> int:
    cfg = build_config(args)
    cloud = _load_cloud(args.input)
    res = _run_detect(cloud, cfg)
    full = np.vstack([cloud.points, reflect_point(cloud.points, res.plane)])
    io.write_cloud(args.output, full)
    if args.result:
        pipeline.write_result(args.result, res)
    print(f"wrote {len(full)} points to {args.output}")
    return EXIT_OK if res.converged else EXIT_NOCONVERGE


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="symplane", description="Reflection symmetry plane detection for point clouds.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="detect the symmetry plane of a cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="result file")
    p.add_argument("--plot", help="SVG path for the detection figure")
    p.add_argument("--timing", help="write per-stage seconds to this file")
    p.add_argument("--inline-timing", action="store_true", help="also put seconds in the result file")
    _detect_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("synth", help="write a seeded synthetic cloud and its ground truth")
    p.add_argument("--output", required=True)
    p.add_argument("--sidecar")
    p.add_argument("--shape", default=synth.SHAPES[0], choices=synth.SHAPES)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=synth.DEFAULT_JITTER)
    p.add_argument("--pose", action="store_true", help="apply a random rigid motion")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="evaluate detections listed in a manifest")
    p.add_argument("--input", required=True, help="manifest: cloud<TAB>sidecar[<TAB>result] per line")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--t-angle-deg", dest="t_angle_deg", type=float, default=10.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--plot", help="PR curve SVG path (default <output>/pr_curve.svg)")
    _detect_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("complete", help="write the cloud together with its mirror image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--result", help="also write the detection result here")
    _detect_flags(p)
    p.set_defaults(func=cmd_complete)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except PipelineFailure as e:
        print(f"pipeline error: {e}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
