"""Acceptance gate: eight end-to-end criteria with pinned tolerances.

Each test prints one ``[criterion n] PASS/FAIL`` line with the measured
numbers next to their bounds, then asserts. Run with ``-s`` to see the
lines on passing runs too.
"""

import contextlib
import dataclasses
import io
import json
import math
import time

import numpy as np
import pytest

from nfcalib import cli
from nfcalib.config import PipelineConfig, TargetGeometry
from nfcalib.errors import CalibError
from nfcalib.evaluation import (capture_points, chamfer_distance,
                                directed_rmse)
from nfcalib.geometry import (RigidTransform, rotation_angle_deg,
                              rotation_from_axis_angle)
from nfcalib.io_formats import (RadarCloud, load_calibration, load_depth,
                                load_radar_cloud, read_ply, save_calibration,
                                save_depth, save_radar_cloud, write_ply)
from nfcalib.config import load_config
from nfcalib.optical import fit_sphere
from nfcalib.pipeline import calibrate_scene
from nfcalib.radar import ClusterSet, localize_radar_target
from nfcalib.registration import kabsch_register, refine_calibration
from nfcalib.synthetic import SceneSpec, generate_scene, render_eval_object

GEOM = TargetGeometry()


def report(n, ok, detail):
    print(f"[criterion {n}] {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = cli.main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


def truth_errors(est, gt):
    rot = rotation_angle_deg(est.rotation, gt.rotation)
    trans = float(np.linalg.norm(est.translation - gt.translation))
    return rot, trans


def test_criterion_1_clean_scene_exactness():
    start = time.perf_counter()
    scene = generate_scene(SceneSpec(seed=0, clutter_points=0))
    res = calibrate_scene(scene.capture, scene.cloud)
    elapsed = time.perf_counter() - start
    rot_err, t_err = truth_errors(res.calibration.transform, scene.extrinsic)
    ok = (t_err < 1e-4 and rot_err < 0.02
          and res.radar.energy < 1e-9 and elapsed < 5.0)
    report(1, ok,
           f"translation {t_err * 1e3:.2e} mm (<0.1), rotation "
           f"{rot_err:.2e} deg (<0.02), energy {res.radar.energy:.2e} "
           f"(<1e-9), {elapsed:.1f} s (<5)")


def test_criterion_2_noisy_scene_accuracy():
    start = time.perf_counter()
    draw = np.random.default_rng(2024)
    t_errs, chamfers, failures = [], [], 0
    for i in range(40):
        spec = SceneSpec(
            seed=3000 + i,
            target_distance=float(draw.uniform(0.30, 0.40)),
            target_offset=tuple(draw.uniform(-0.02, 0.02, 2)),
            target_yaw_deg=float(draw.uniform(-8.0, 8.0)),
            target_pitch_deg=float(draw.uniform(-8.0, 8.0)),
            extrinsic_angle_deg=float(draw.uniform(2.0, 6.0)),
            depth_noise=0.002,
            radar_jitter=0.0005)
        try:
            scene = generate_scene(spec)
            res = calibrate_scene(scene.capture, scene.cloud)
        except CalibError:
            failures += 1
            continue
        est = res.calibration.transform
        t_errs.append(np.linalg.norm(est.translation
                                     - scene.extrinsic.translation))
        obj_cap, obj_cloud = render_eval_object(spec, "disk")
        mapped = est.apply(capture_points(obj_cap))
        chamfers.append(chamfer_distance(mapped, obj_cloud.points))
    elapsed = time.perf_counter() - start
    med_t = float(np.median(t_errs)) if t_errs else math.inf
    med_ch = float(np.median(chamfers)) if chamfers else math.inf
    ok = (failures == 0 and med_t <= 0.002 and med_ch <= 0.0025
          and elapsed < 300.0)
    report(2, ok,
           f"median translation {med_t * 1e3:.3f} mm (<=2), median chamfer "
           f"{med_ch * 1e3:.3f} mm (<=2.5), {failures}/40 failures, "
           f"{elapsed:.0f} s (<300)")


def test_criterion_3_seed_repeatability():
    scene = generate_scene(SceneSpec(seed=42, target_distance=0.33,
                                     depth_noise=0.002, radar_jitter=0.002))
    rotations, translations = [], []
    for s in range(20):
        cfg = dataclasses.replace(PipelineConfig(), seed_optical=1000 + s)
        est = calibrate_scene(scene.capture, scene.cloud, cfg)
        rotations.append(est.calibration.transform.rotation)
        translations.append(est.calibration.transform.translation)
    angles = np.array([rotation_angle_deg(r, rotations[0])
                       for r in rotations])
    t_std = float(np.linalg.norm(np.std(translations, axis=0)))
    r_std = float(np.std(angles))
    ok = r_std <= 0.01 and t_std <= 3e-4
    report(3, ok,
           f"rotation std {r_std:.2e} deg (<=0.01), translation std "
           f"{t_std * 1e3:.2e} mm (<=0.3) over 20 RANSAC seeds")


def test_criterion_4_ablation_ordering(tmp_path):
    parent = tmp_path / "scenes"
    for i in range(20):
        code, _, err = run_cli(
            ["simulate", "--out", parent / f"s{i:02d}", "--seed", 4000 + i,
             "--distance", 0.35, "--depth-noise", 0.002,
             "--radar-jitter", 0.002, "--no-objects"])
        assert code == 0, err
    out = tmp_path / "ablate.csv"
    code, _, err = run_cli(["ablate", "--scenes", parent, "--out", out])
    assert code == 0, err
    medians = {}
    for row in out.read_text().strip().splitlines()[1:]:
        scene, variant, t_err, _ = row.split(",")
        if scene == "median":
            medians[variant] = float(t_err)
    gap1 = medians["data_only"] - medians["with_sphere"]
    gap2 = medians["with_sphere"] - medians["full"]
    ok = (medians["data_only"] > medians["with_sphere"] > medians["full"]
          and gap1 > gap2)
    report(4, ok,
           "median translation error over 20 scenes: data_only "
           f"{medians['data_only'] * 1e3:.2f} mm > with_sphere "
           f"{medians['with_sphere'] * 1e3:.3f} mm > full "
           f"{medians['full'] * 1e3:.3f} mm, first gap {gap1 * 1e3:.2f} mm > "
           f"second {gap2 * 1e3:.3f} mm")


def test_criterion_5_robust_subset_selection():
    wins = 0
    for i in range(100):
        rng = np.random.default_rng(5000 + i)
        rot = rotation_from_axis_angle(rng.normal(size=3),
                                       rng.uniform(0.0, 0.5))
        t = np.array([rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                      rng.uniform(0.30, 0.50)])
        corners = GEOM.corner_local_coords() @ rot.T + t
        away = rot @ np.array([0.0, 0.0, -1.0])
        anchor = corners.mean(axis=0) + GEOM.board_offset * away
        clutter = rng.uniform(-0.15, 0.15, (15, 3)) + np.array([0, 0, 0.4])
        centroids = np.vstack([corners, anchor[None], clutter])
        # clutter clusters are the brightest returns in the set
        peak_db = np.concatenate([rng.uniform(-6.0, -3.0, 5), np.zeros(15)])
        clusters = ClusterSet(centroids, np.full(20, 7), peak_db)
        try:
            target = localize_radar_target(clusters, GEOM)
        except CalibError:
            continue
        if (set(map(int, target.corner_indices)) == {0, 1, 2, 3}
                and int(target.anchor_index) == 4):
            wins += 1
    ok = wins >= 95
    report(5, ok, f"true 5-ball subset selected in {wins}/100 trials "
                  "(>=95) against 15 brighter clutter clusters")


def brute_directed(a, b):
    d = np.linalg.norm(a[:, None] - b[None], axis=2).min(axis=1)
    return float(np.sqrt(np.mean(d ** 2)))


def test_criterion_6_oracle_equivalences():
    rng = np.random.default_rng(6000)
    worst_metric = 0.0
    for _ in range(50):
        na, nb = rng.integers(1, 1001, 2)
        a = rng.normal(0.0, 0.5, (int(na), 3))
        b = rng.normal(0.0, 0.5, (int(nb), 3)) + rng.normal(0.0, 0.2, 3)
        for x, y in ((a, b), (b, a)):
            worst_metric = max(worst_metric,
                               abs(directed_rmse(x, y) - brute_directed(x, y)))
        brute_ch = 0.5 * (brute_directed(a, b) + brute_directed(b, a))
        worst_metric = max(worst_metric,
                           abs(chamfer_distance(a, b) - brute_ch))

    rng = np.random.default_rng(6100)
    worst_rot, worst_t = 0.0, 0.0
    for _ in range(100):
        pts = rng.normal(size=(int(rng.integers(4, 51)), 3))
        rot = rotation_from_axis_angle(rng.normal(size=3),
                                       rng.uniform(0.0, math.pi))
        t = rng.uniform(-1.0, 1.0, 3)
        est = kabsch_register(pts, pts @ rot.T + t,
                              warn_anisotropy=False).transform
        worst_rot = max(worst_rot, float(np.abs(est.rotation - rot).max()))
        worst_t = max(worst_t, float(np.linalg.norm(est.translation - t)))

    rng = np.random.default_rng(6200)
    worst_sphere = 0.0
    for _ in range(50):
        center = rng.uniform(-0.2, 0.2, 3) + np.array([0.0, 0.0, 0.4])
        dirs = rng.normal(size=(200, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        fitted = fit_sphere(center + 0.025 * dirs, np.ones(200), 0.025)
        worst_sphere = max(worst_sphere,
                           float(np.linalg.norm(fitted - center)))

    ok = worst_metric <= 1e-12 and worst_rot <= 1e-9 and worst_t <= 1e-9 \
        and worst_sphere <= 1e-6
    report(6, ok,
           f"chamfer/rmse vs brute {worst_metric:.1e} (<=1e-12), kabsch "
           f"matrix {worst_rot:.1e} / translation {worst_t:.1e} m (<=1e-9), "
           f"sphere center {worst_sphere:.1e} m (<=1e-6)")


def test_criterion_7_refinement_fixed_point_and_basin():
    spec = SceneSpec(seed=7)
    cap, cloud = render_eval_object(spec, "disk")
    gt = spec.extrinsic()

    refined = refine_calibration(cap, cloud, gt)
    move_t = float(np.linalg.norm(refined.transform.translation
                                  - gt.translation))
    move_r = rotation_angle_deg(refined.transform.rotation, gt.rotation)

    pose = spec.object_to_radar()
    center, normal = pose.translation, pose.rotation @ np.array([0., 0., 1.])
    inplane = pose.rotation @ np.array([1.0, 0.0, 0.0])
    rot = rotation_from_axis_angle(inplane, np.radians(1.0))
    pert = RigidTransform(rot, center - rot @ center + 0.005 * normal)
    initial = pert.compose(gt)
    init_r, init_t = truth_errors(initial, gt)
    back = refine_calibration(cap, cloud, initial)
    back_r, back_t = truth_errors(back.transform, gt)

    ok = move_t < 1e-4 and move_t < 3e-4 and back_t < 1e-3 and back_r < 0.2
    report(7, ok,
           f"ground-truth start moved {move_t * 1e3:.4f} mm / "
           f"{move_r:.4f} deg (<0.1 mm, degradation <0.3 mm); perturbed "
           f"start {init_t * 1e3:.2f} mm / {init_r:.2f} deg returned to "
           f"{back_t * 1e3:.2f} mm / {back_r:.3f} deg (<1 mm, <0.2 deg)")


def _mutate(rng, data: bytes) -> bytes:
    buf = bytearray(data)
    op = rng.integers(0, 7)
    if op == 0 and buf:
        return bytes(buf[:rng.integers(0, len(buf))])
    if op == 1 and buf:
        for _ in range(int(rng.integers(1, 9))):
            buf[rng.integers(0, len(buf))] ^= int(rng.integers(1, 256))
        return bytes(buf)
    if op == 2:
        at = rng.integers(0, len(buf) + 1)
        return bytes(buf[:at]) + bytes(rng.integers(0, 256, 8,
                                                    dtype=np.uint8)) + bytes(buf[at:])
    if op == 3 and len(buf) > 2:
        a, b = sorted(rng.integers(0, len(buf), 2))
        del buf[a:b]
        return bytes(buf)
    if op == 4 and buf:
        a, b = sorted(rng.integers(0, len(buf), 2))
        return bytes(buf[:b]) + bytes(buf[a:b]) + bytes(buf[b:])
    if op == 5:
        return bytes(rng.integers(0, 256, int(rng.integers(0, 200)),
                                  dtype=np.uint8))
    return b""


def test_criterion_8_determinism_and_fuzzing(tmp_path):
    # byte-identical reruns of the full command line chain
    outputs = []
    for run in ("a", "b"):
        scene = tmp_path / f"det_{run}"
        code, _, err = run_cli(
            ["simulate", "--out", scene, "--seed", 8000, "--distance", 0.35,
             "--depth-noise", 0.001, "--radar-jitter", 0.001, "--no-objects"])
        assert code == 0, err
        calib = tmp_path / f"calib_{run}.txt"
        code, _, err = run_cli(
            ["calibrate", "--optical", scene / "optical",
             "--radar", scene / "radar.ply", "--out", calib,
             "--report", tmp_path / f"report_{run}.json"])
        assert code == 0, err
        outputs.append([
            (scene / "ground_truth.json").read_bytes(),
            (scene / "radar.ply").read_bytes(),
            (scene / "optical" / "depth.f32").read_bytes(),
            calib.read_bytes(),
            (tmp_path / f"report_{run}.json").read_bytes()])
    identical = outputs[0] == outputs[1]

    # parser fuzzing: every mutated input either parses or raises a typed
    # error that maps to a documented exit code
    rng = np.random.default_rng(2026)
    pts = rng.uniform(-0.2, 0.2, (40, 3)) + np.array([0, 0, 0.4])
    cloud = RadarCloud.from_confidence(pts, rng.uniform(0.1, 1.0, 40))
    seeds = {}
    save_radar_cloud(cloud, tmp_path / "radar_a.ply")
    seeds["radar_a.ply"] = load_radar_cloud
    save_radar_cloud(cloud, tmp_path / "radar_b.ply", binary=True)
    seeds["radar_b.ply"] = load_radar_cloud
    write_ply(tmp_path / "plain.ply",
              {"x": rng.normal(size=12), "q": rng.normal(size=12)},
              comments=("made for fuzzing",))
    seeds["plain.ply"] = read_ply
    save_depth(rng.uniform(0.1, 1.0, (6, 8)), tmp_path / "depth.f32")
    seeds["depth.f32"] = load_depth
    save_calibration(
        kabsch_register(pts[:4], pts[:4] + 0.1, warn_anisotropy=False),
        tmp_path / "calib_seed.txt")
    seeds["calib_seed.txt"] = load_calibration
    (tmp_path / "config.toml").write_text(
        "t_db = 12.0\nn_clusters = 18\nalpha = 1.5\nscale = 1.0\n")
    seeds["config.toml"] = load_config
    base = {name: (tmp_path / name).read_bytes() for name in seeds}

    names = sorted(seeds)
    cases, typed, parsed = 0, 0, 0
    untyped = None
    for i in range(10500):
        name = names[int(rng.integers(0, len(names)))]
        blob = _mutate(rng, base[name])
        victim = tmp_path / f"fuzz_{name}"
        victim.write_bytes(blob)
        cases += 1
        try:
            seeds[name](victim)
            parsed += 1
        except CalibError as exc:
            typed += 1
            if cli._exit_code(exc) not in range(1, 8):
                untyped = f"{type(exc).__name__} has no documented exit code"
                break
        except Exception as exc:  # noqa: BLE001
            untyped = f"{name}: {type(exc).__name__}: {exc}"
            break

    ok = identical and untyped is None and cases >= 10000
    report(8, ok,
           f"rerun outputs byte-identical: {identical}; fuzzing {cases} "
           f"mutated inputs -> {typed} typed errors + {parsed} clean parses, "
           f"untyped: {untyped}")
