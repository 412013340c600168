"""Command line entry points.

Subcommands cover the whole workflow: ``simulate`` writes a synthetic
scene to disk, ``calibrate`` estimates the extrinsic from a scene,
``refine`` densifies an existing calibration against a validation object,
``evaluate`` scores a calibration, and ``ablate`` compares energy-term
subsets over a directory of scenes. All numeric parameters come from the
config file (``--config`` or $CALIB_CONFIG) and can be overridden
individually with ``--set key=value``; outputs are byte-identical for
identical inputs, config and seeds.

On failure a single-line JSON object naming the error type, pipeline
stage and exit code is written to stderr; stdout carries results only.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig, config_from_dict, resolve_config
from .errors import (AmbiguousOrdering, CalibError, ConfigError,
                     DegenerateGeometry, EmptyInput, FitFailed,
                     InsufficientClusters, InsufficientCorrespondences,
                     InsufficientData, LocalizationFailed, MalformedInput,
                     NoTargetDetected, SceneError, ValidationError)
from .evaluation import (capture_points, chamfer_distance, directed_rmse,
                         export_residuals, inlier_fraction, nearest_distances)
from .geometry import rotation_angle_deg
from .io_formats import (load_calibration, load_capture_bundle,
                         load_radar_cloud, save_calibration,
                         save_capture_bundle, save_radar_cloud)
from .pipeline import calibrate_scene, detect_optical_target, detect_radar_target
from .registration import kabsch_register, refine_calibration
from .synthetic import EVAL_OBJECTS, SceneSpec, generate_scene, render_eval_object

_EXIT_RULES = (
    ((ConfigError, SceneError), 2),
    ((NoTargetDetected, InsufficientData), 3),
    (InsufficientClusters, 4),
    ((FitFailed, AmbiguousOrdering, LocalizationFailed,
      InsufficientCorrespondences), 5),
    (DegenerateGeometry, 6),
    ((MalformedInput, EmptyInput, ValidationError), 7),
)

_STAGE_RULES = (
    (ConfigError, "config"),
    (SceneError, "scene"),
    ((MalformedInput, EmptyInput), "io"),
    (ValidationError, "validation"),
    ((NoTargetDetected, InsufficientData), "optical_detection"),
    ((FitFailed, AmbiguousOrdering), "optical_localization"),
    (InsufficientClusters, "radar_detection"),
    (LocalizationFailed, "radar_localization"),
    (DegenerateGeometry, "registration"),
    (InsufficientCorrespondences, "refinement"),
)


def _exit_code(err: CalibError) -> int:
    for types, code in _EXIT_RULES:
        if isinstance(err, types):
            return code
    return 1


def _stage(err: Exception) -> str:
    for types, stage in _STAGE_RULES:
        if isinstance(err, types):
            return stage
    return "pipeline"


def _emit_error(err: Exception, code: int, stage: str) -> None:
    obj = {
        "error": type(err).__name__,
        "exit_code": code,
        "message": str(err),
        "stage": stage,
    }
    diagnostics = getattr(err, "diagnostics", None)
    if diagnostics:
        obj["diagnostics"] = list(diagnostics)
    print(json.dumps(obj, sort_keys=True), file=sys.stderr)


def _fmt(x: float) -> str:
    return repr(float(x))


def _apply_overrides(config: PipelineConfig, assignments) -> PipelineConfig:
    """Apply repeatable ``--set key=value`` flags on top of the file config.

    Values parse as JSON (numbers, booleans, lists) with bare-string
    fallback; unknown keys and out-of-range values fail config validation.
    """
    if not assignments:
        return config
    data = config.to_dict()
    for item in assignments:
        key, sep, raw = item.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key or not raw:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        data[key] = value
    return config_from_dict(data)


def _config(args) -> PipelineConfig:
    return _apply_overrides(resolve_config(args.config), getattr(args, "set", None))


def _load_truth(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="ascii"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedInput(f"cannot read ground truth {path}: {exc}") from exc
    if not isinstance(data, dict) or "rotation" not in data or "translation" not in data:
        raise MalformedInput(f"ground truth {path} lacks rotation/translation")
    return data


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    config = _config(args)
    seed = config.seed_scene if args.seed is None else args.seed
    if seed < 0:
        raise ConfigError(f"--seed must be >= 0, got {seed}")
    if not math.isfinite(args.distance) or args.distance <= 0:
        raise ConfigError(f"--distance must be > 0, got {args.distance}")
    if args.depth_noise < 0 or args.radar_jitter < 0:
        raise ConfigError("--depth-noise and --radar-jitter must be >= 0")
    spec = SceneSpec(seed=seed, depth_noise=args.depth_noise,
                     radar_jitter=args.radar_jitter, target_distance=args.distance)
    geom = config.target
    palette = config.color_palette
    scene = generate_scene(spec, geom, palette)

    out = Path(args.out)
    (out / "optical").mkdir(parents=True, exist_ok=True)
    save_capture_bundle(scene.capture, out / "optical")
    save_radar_cloud(scene.cloud, out / "radar.ply", binary=True)
    truth = {
        "seed": int(seed),
        "rotation": scene.extrinsic.rotation.tolist(),
        "translation": scene.extrinsic.translation.tolist(),
        "scale": scene.extrinsic.scale,
        "corners_radar": scene.corners_radar.tolist(),
        "anchor_radar": scene.anchor_radar.tolist(),
        "corners_optical": scene.extrinsic.inverse().apply(scene.corners_radar).tolist(),
    }
    (out / "ground_truth.json").write_text(
        json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="ascii")

    if not args.no_objects:
        for kind in EVAL_OBJECTS:
            capture, cloud = render_eval_object(spec, kind, geom)
            obj_dir = out / f"object_{kind}"
            obj_dir.mkdir(parents=True, exist_ok=True)
            save_capture_bundle(capture, obj_dir)
            save_radar_cloud(cloud, out / f"object_{kind}.ply", binary=True)
    print(f"scene written to {out}")
    return 0


# ---------------------------------------------------------------------------
# calibrate


def _calibration_report(result) -> dict:
    calib, t = result.calibration, result.calibration.transform
    return {
        "calibration": {
            "rotation": t.rotation.tolist(),
            "translation": t.translation.tolist(),
            "scale": t.scale,
            "residual_rmse_m": calib.residual_rmse,
            "per_corner_residuals_m": calib.per_point_residuals.tolist(),
        },
        "optical": {
            "sphere_centers": result.optical.centers.tolist(),
            "inlier_ratios": [float(r) for r in result.optical.inlier_ratios],
            "fit_errors": [float(e) for e in result.optical.fit_errors],
        },
        "radar": {
            "n_clusters": len(result.clusters),
            "corners": result.radar.corners.tolist(),
            "anchor": result.radar.anchor.tolist(),
            "energy": result.radar.energy,
            "energy_terms": {k: float(v) for k, v in result.radar.terms.items()},
            "inlier_ratio": result.radar.inlier_ratio,
            "corner_cluster_indices": list(result.radar.corner_indices),
            "anchor_cluster_index": result.radar.anchor_index,
        },
    }


def cmd_calibrate(args) -> int:
    config = _config(args)
    capture = load_capture_bundle(args.optical)
    cloud = load_radar_cloud(args.radar)
    result = calibrate_scene(capture, cloud, config)

    out = Path(args.out)
    save_calibration(result.calibration, out)
    report_path = Path(args.report) if args.report else out.parent / (out.stem + ".report.json")
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(
        json.dumps(_calibration_report(result), indent=2, sort_keys=True) + "\n",
        encoding="ascii")

    print(f"residual_rmse_m: {_fmt(result.calibration.residual_rmse)}")
    print(f"radar_energy: {_fmt(result.radar.energy)}")
    print(f"radar_inlier_ratio: {_fmt(result.radar.inlier_ratio)}")
    print("optical_inlier_ratios: "
          + " ".join(_fmt(r) for r in result.optical.inlier_ratios))
    print(f"calibration written to {out}")
    print(f"report written to {report_path}")
    return 0


# ---------------------------------------------------------------------------
# refine


def cmd_refine(args) -> int:
    config = _config(args)
    capture = load_capture_bundle(args.optical)
    cloud = load_radar_cloud(args.radar)
    initial = load_calibration(args.initial)
    refined = refine_calibration(
        capture, cloud, initial.transform,
        max_range=config.max_range, corr_gate=config.corr_gate,
        min_correspondences=config.min_correspondences,
        iters=config.ransac_iters_refine, t_inl=config.t_inl,
        sample_size=config.sample_size, seed=config.seed_refine)
    save_calibration(refined, args.out)
    print(f"residual_rmse_m: {_fmt(refined.residual_rmse)}")
    print(f"correspondences: {len(refined.per_point_residuals)}")
    print(f"calibration written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args) -> int:
    config = _config(args)
    calib = load_calibration(args.calib)
    capture = load_capture_bundle(args.optical)
    cloud = load_radar_cloud(args.radar)

    # All metrics live in the radar frame: the calibration maps the
    # back-projected depth pixels onto the radar cloud.
    optical_radar = calib.transform.apply(capture_points(capture, config.max_range))
    radar_pts = cloud.points
    metrics = {
        "chamfer_m": chamfer_distance(optical_radar, radar_pts),
        "rmse_optical_to_radar_m": directed_rmse(optical_radar, radar_pts),
        "rmse_radar_to_optical_m": directed_rmse(radar_pts, optical_radar),
        "inlier_fraction_2mm": inlier_fraction(radar_pts, optical_radar, eps=0.002),
    }
    if args.truth is not None:
        truth = _load_truth(args.truth)
        rot = np.asarray(truth["rotation"], dtype=np.float64)
        trans = np.asarray(truth["translation"], dtype=np.float64)
        metrics["rotation_error_deg"] = rotation_angle_deg(calib.transform.rotation, rot)
        metrics["translation_error_m"] = float(
            np.linalg.norm(calib.transform.translation - trans))
        metrics["scale_error"] = abs(calib.transform.scale - float(truth.get("scale", 1.0)))

    width = max(len(k) for k in metrics)
    for key in sorted(metrics):
        print(f"{key:<{width}}  {_fmt(metrics[key])}")
    payload = json.dumps(metrics, sort_keys=True)
    print(payload)
    if args.json is not None:
        Path(args.json).write_text(payload + "\n", encoding="ascii")
        print(f"metrics written to {args.json}")
    if args.export is not None:
        export_residuals(args.export, radar_pts,
                         nearest_distances(radar_pts, optical_radar), binary=True)
        print(f"residuals written to {args.export}")
    return 0


# ---------------------------------------------------------------------------
# ablate


def _ablation_variants(config: PipelineConfig) -> list[tuple[str, PipelineConfig]]:
    # Without the plane/anchor terms there is no anchor prediction to test,
    # so the ablated variants score inliers over the corners alone.
    return [
        ("data_only", config.replace(alpha=0.0, beta=0.0, gamma=0.0,
                                     anchor_in_inliers=False)),
        ("with_sphere", config.replace(beta=0.0, gamma=0.0,
                                       anchor_in_inliers=False)),
        ("full", config),
    ]


def cmd_ablate(args) -> int:
    config = _config(args)
    root = Path(args.scenes)
    if not root.is_dir():
        raise ConfigError(f"scene directory {root} does not exist")
    scenes = sorted(p for p in root.iterdir()
                    if p.is_dir() and (p / "ground_truth.json").is_file())
    if not scenes:
        raise ConfigError(
            f"scene directory {root} holds no scenes "
            "(expected subdirectories with ground_truth.json, as written by simulate)")

    variants = _ablation_variants(config)
    names = [name for name, _ in variants]
    rows: list[tuple[str, str, float, float]] = []
    t_errs: dict = {name: [] for name in names}
    r_errs: dict = {name: [] for name in names}
    for scene_dir in scenes:
        truth = _load_truth(scene_dir / "ground_truth.json")
        rot_gt = np.asarray(truth["rotation"], dtype=np.float64)
        t_gt = np.asarray(truth["translation"], dtype=np.float64)
        capture = load_capture_bundle(scene_dir / "optical")
        cloud = load_radar_cloud(scene_dir / "radar.ply")
        try:
            # The optical side is identical across energy variants.
            optical = detect_optical_target(capture, config)
        except CalibError:
            optical = None
        for name, cfg in variants:
            t_err = r_err = math.inf
            if optical is not None:
                try:
                    radar, _ = detect_radar_target(cloud, cfg)
                    calib = kabsch_register(optical.centers, radar.corners,
                                            scale=cfg.scale)
                    t_err = float(np.linalg.norm(calib.transform.translation - t_gt))
                    r_err = rotation_angle_deg(calib.transform.rotation, rot_gt)
                except CalibError:
                    pass
            rows.append((scene_dir.name, name, t_err, r_err))
            t_errs[name].append(t_err)
            r_errs[name].append(r_err)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scene", "variant", "translation_error_m", "rotation_error_deg"])
        for scene, name, t_err, r_err in rows:
            writer.writerow([scene, name, _fmt(t_err), _fmt(r_err)])
        for stat, fn in (("median", np.median), ("mean", np.mean)):
            for name in names:
                writer.writerow([stat, name,
                                 _fmt(fn(t_errs[name])), _fmt(fn(r_errs[name]))])
    for name in names:
        print(f"{name} median_translation_error_m: {_fmt(np.median(t_errs[name]))}")
    print(f"ablation written to {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None,
                   help="pipeline config TOML (default: $CALIB_CONFIG or built-ins)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                   help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nfcalib",
        description="Near-field extrinsic calibration between a depth camera "
                    "and an imaging radar using a multi-sphere target.")
    sub = parser.add_subparsers(dest="command", required=True)
    base = SceneSpec()

    p = sub.add_parser("simulate", help="generate a synthetic scene on disk")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None,
                   help="scene seed (default: seed_scene from the config)")
    p.add_argument("--distance", type=float, default=base.target_distance,
                   help="target distance in meters")
    p.add_argument("--depth-noise", type=float, default=base.depth_noise,
                   help="depth noise sigma at the reference range, meters")
    p.add_argument("--radar-jitter", type=float, default=base.radar_jitter,
                   help="radar point jitter sigma, meters")
    p.add_argument("--no-objects", action="store_true",
                   help="skip the evaluation object renders")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="estimate the extrinsic from a scene")
    p.add_argument("--optical", required=True, help="capture bundle directory")
    p.add_argument("--radar", required=True, help="radar cloud PLY")
    p.add_argument("--out", required=True, help="calibration output path")
    p.add_argument("--report", default=None,
                   help="JSON stage report path (default: <out>.report.json)")
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("refine", help="refine a calibration against an object scene")
    p.add_argument("--optical", required=True, help="capture bundle directory")
    p.add_argument("--radar", required=True, help="radar cloud PLY")
    p.add_argument("--initial", required=True, help="initial calibration path")
    p.add_argument("--out", required=True, help="refined calibration output path")
    _add_common(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("evaluate", help="score a calibration on an object scene")
    p.add_argument("--calib", required=True, help="calibration path")
    p.add_argument("--optical", required=True, help="capture bundle directory")
    p.add_argument("--radar", required=True, help="radar cloud PLY")
    p.add_argument("--truth", default=None, help="ground truth JSON for error metrics")
    p.add_argument("--json", default=None, help="also write the metrics JSON here")
    p.add_argument("--export", default=None, help="write per-point residuals to this PLY")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="compare energy-term subsets over a scene directory")
    p.add_argument("--scenes", required=True,
                   help="directory of simulate-written scene subdirectories")
    p.add_argument("--out", required=True, help="report CSV path")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CalibError as err:
        code = _exit_code(err)
        _emit_error(err, code, _stage(err))
        return code
    except OSError as err:
        _emit_error(err, 7, "io")
        return 7


if __name__ == "__main__":
    sys.exit(main())
