"""Command line behavior: exit codes, output formats, file layouts."""

import contextlib
import io
import json

import numpy as np
import pytest

from nfcalib.cli import main
from nfcalib.geometry import rotation_angle_deg
from nfcalib.io_formats import load_calibration, read_ply


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


def parse_error(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1, f"expected one-line JSON on stderr, got: {err!r}"
    payload = json.loads(lines[0])
    assert list(payload) == sorted(payload)
    return payload


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def scene(workdir):
    out = workdir / "scene"
    code, stdout, stderr = run_cli(
        ["simulate", "--out", out, "--seed", 4000, "--distance", 0.35,
         "--depth-noise", 0.002, "--radar-jitter", 0.002])
    assert code == 0, stderr
    return {"path": out, "stdout": stdout}


@pytest.fixture(scope="module")
def calib(workdir, scene):
    out = workdir / "calib.txt"
    code, stdout, stderr = run_cli(
        ["calibrate", "--optical", scene["path"] / "optical",
         "--radar", scene["path"] / "radar.ply", "--out", out])
    assert code == 0, stderr
    return {"path": out, "report": workdir / "calib.report.json",
            "stdout": stdout}


@pytest.fixture(scope="module")
def refined(workdir, scene, calib):
    out = workdir / "refined.txt"
    code, stdout, stderr = run_cli(
        ["refine", "--optical", scene["path"] / "object_disk",
         "--radar", scene["path"] / "object_disk.ply",
         "--initial", calib["path"], "--out", out])
    assert code == 0, stderr
    return {"path": out, "stdout": stdout}


class TestSimulate:
    def test_scene_layout(self, scene):
        d = scene["path"]
        for name in ("optical/depth.f32", "optical/rgb.ppm",
                     "optical/intrinsics.txt", "radar.ply",
                     "ground_truth.json"):
            assert (d / name).is_file(), name
        for kind in ("disk", "hand", "symbol"):
            assert (d / f"object_{kind}").is_dir()
            assert (d / f"object_{kind}.ply").is_file()
        assert "scene written to" in scene["stdout"]

    def test_ground_truth_contents(self, scene):
        gt = json.loads((scene["path"] / "ground_truth.json").read_text())
        assert sorted(gt) == ["anchor_radar", "corners_optical",
                              "corners_radar", "rotation", "scale", "seed",
                              "translation"]
        assert gt["seed"] == 4000
        assert gt["scale"] == 1.0
        assert np.asarray(gt["rotation"]).shape == (3, 3)
        assert np.asarray(gt["corners_radar"]).shape == (4, 3)
        assert np.asarray(gt["corners_optical"]).shape == (4, 3)
        assert len(gt["translation"]) == 3 and len(gt["anchor_radar"]) == 3

    def test_no_objects_flag_and_determinism(self, workdir):
        args = ["--seed", 4321, "--distance", 0.35, "--depth-noise", 0.001,
                "--radar-jitter", 0.001, "--no-objects"]
        a, b = workdir / "det_a", workdir / "det_b"
        for out in (a, b):
            code, _, stderr = run_cli(["simulate", "--out", out] + args)
            assert code == 0, stderr
        assert not list(a.glob("object_*"))
        for name in ("ground_truth.json", "radar.ply", "optical/depth.f32",
                     "optical/rgb.ppm", "optical/intrinsics.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_target_outside_gate(self, workdir):
        code, _, err = run_cli(
            ["simulate", "--out", workdir / "far", "--distance", 0.7])
        assert code == 2
        payload = parse_error(err)
        assert payload["error"] == "SceneError"
        assert payload["stage"] == "scene"
        assert payload["exit_code"] == 2

    def test_negative_noise_rejected(self, workdir):
        code, _, err = run_cli(
            ["simulate", "--out", workdir / "neg", "--depth-noise", -0.1])
        assert code == 2
        assert parse_error(err)["error"] == "ConfigError"


class TestCalibrate:
    def test_outputs_and_report(self, calib):
        assert calib["path"].is_file()
        assert calib["path"].with_suffix(calib["path"].suffix + ".json").is_file()
        assert calib["report"].is_file()
        report = json.loads(calib["report"].read_text())
        assert sorted(report) == ["calibration", "optical", "radar"]
        rmse = report["calibration"]["residual_rmse_m"]
        assert f"residual_rmse_m: {rmse!r}" in calib["stdout"]
        loaded = load_calibration(calib["path"])
        assert loaded.residual_rmse == pytest.approx(rmse, rel=1e-12)
        assert len(report["calibration"]["per_corner_residuals_m"]) == 4

    def test_close_to_ground_truth(self, scene, calib):
        gt = json.loads((scene["path"] / "ground_truth.json").read_text())
        est = load_calibration(calib["path"]).transform
        rot_err = rotation_angle_deg(
            est.rotation @ np.asarray(gt["rotation"]).T)
        t_err = np.linalg.norm(est.translation - np.asarray(gt["translation"]))
        # coarse stage under 2 mm radar jitter, refinement tightens later
        assert rot_err < 5.0
        assert t_err < 0.03

    def test_missing_radar_file(self, scene, workdir):
        code, _, err = run_cli(
            ["calibrate", "--optical", scene["path"] / "optical",
             "--radar", workdir / "missing.ply",
             "--out", workdir / "x.txt"])
        assert code == 7
        payload = parse_error(err)
        assert payload["error"] == "MalformedInput"
        assert payload["stage"] == "io"

    def test_corrupt_radar_file(self, scene, workdir):
        bad = workdir / "garbage.ply"
        bad.write_bytes(b"\x00\x01not a ply\xff")
        code, _, err = run_cli(
            ["calibrate", "--optical", scene["path"] / "optical",
             "--radar", bad, "--out", workdir / "x.txt"])
        assert code == 7
        assert parse_error(err)["error"] == "MalformedInput"


class TestSetOverrides:
    def test_syntax_error(self, scene, workdir):
        code, _, err = run_cli(
            ["calibrate", "--optical", scene["path"] / "optical",
             "--radar", scene["path"] / "radar.ply",
             "--out", workdir / "x.txt", "--set", "t_db"])
        assert code == 2
        payload = parse_error(err)
        assert payload["error"] == "ConfigError"
        assert "--set expects key=value" in payload["message"]

    def test_unknown_key(self, scene, workdir):
        code, _, err = run_cli(
            ["calibrate", "--optical", scene["path"] / "optical",
             "--radar", scene["path"] / "radar.ply",
             "--out", workdir / "x.txt", "--set", "bogus=1"])
        assert code == 2
        assert parse_error(err)["error"] == "ConfigError"

    def test_override_reaches_pipeline(self, scene, workdir):
        # a 0.1 dB gate keeps too few clusters, so the failure proves the
        # value flowed through to detection
        code, _, err = run_cli(
            ["calibrate", "--optical", scene["path"] / "optical",
             "--radar", scene["path"] / "radar.ply",
             "--out", workdir / "x.txt", "--set", "t_db=0.1"])
        assert code == 4
        payload = parse_error(err)
        assert payload["error"] == "InsufficientClusters"
        assert payload["stage"] == "radar_detection"


class TestRefine:
    def test_outputs(self, refined):
        assert refined["path"].is_file()
        assert "residual_rmse_m:" in refined["stdout"]
        n = int(refined["stdout"].split("correspondences: ")[1].split()[0])
        assert n > 100

    def test_tightens_truth_errors(self, scene, refined):
        gt = json.loads((scene["path"] / "ground_truth.json").read_text())
        est = load_calibration(refined["path"]).transform
        rot_err = rotation_angle_deg(
            est.rotation @ np.asarray(gt["rotation"]).T)
        t_err = np.linalg.norm(est.translation - np.asarray(gt["translation"]))
        assert rot_err < 1.0
        assert t_err < 0.005


class TestEvaluate:
    def test_with_truth(self, scene, refined):
        code, out, _ = run_cli(
            ["evaluate", "--calib", refined["path"],
             "--optical", scene["path"] / "object_disk",
             "--radar", scene["path"] / "object_disk.ply",
             "--truth", scene["path"] / "ground_truth.json"])
        assert code == 0
        payload = json.loads(out.strip().splitlines()[-1])
        assert sorted(payload) == [
            "chamfer_m", "inlier_fraction_2mm", "rmse_optical_to_radar_m",
            "rmse_radar_to_optical_m", "rotation_error_deg", "scale_error",
            "translation_error_m"]
        assert payload["chamfer_m"] < 0.005
        assert payload["inlier_fraction_2mm"] > 0.5
        assert payload["scale_error"] == 0.0
        # each metric also appears on its own aligned table line
        for key, val in payload.items():
            assert any(line.split() == [key, repr(val)]
                       for line in out.splitlines()), key

    def test_without_truth(self, scene, refined):
        code, out, _ = run_cli(
            ["evaluate", "--calib", refined["path"],
             "--optical", scene["path"] / "object_disk",
             "--radar", scene["path"] / "object_disk.ply"])
        assert code == 0
        payload = json.loads(out.strip().splitlines()[-1])
        assert sorted(payload) == [
            "chamfer_m", "inlier_fraction_2mm", "rmse_optical_to_radar_m",
            "rmse_radar_to_optical_m"]

    def test_json_and_export_files(self, scene, refined, workdir):
        jpath = workdir / "metrics.json"
        epath = workdir / "residuals.ply"
        code, out, _ = run_cli(
            ["evaluate", "--calib", refined["path"],
             "--optical", scene["path"] / "object_disk",
             "--radar", scene["path"] / "object_disk.ply",
             "--json", jpath, "--export", epath])
        assert code == 0
        json_lines = [l for l in out.splitlines() if l.startswith("{")]
        assert len(json_lines) == 1
        payload = json.loads(json_lines[0])
        assert json.loads(jpath.read_text()) == payload
        props, comments = read_ply(epath)
        assert list(props) == ["x", "y", "z", "residual"]
        assert len(props["residual"]) > 100
        assert np.all(props["residual"] >= 0)


@pytest.fixture(scope="module")
def scenes_dir(workdir):
    parent = workdir / "abl"
    code, _, stderr = run_cli(
        ["simulate", "--out", parent / "s0", "--seed", 4100,
         "--distance", 0.35, "--depth-noise", 0.002,
         "--radar-jitter", 0.002, "--no-objects"])
    assert code == 0, stderr
    return parent


class TestAblate:
    def test_csv_shape_and_ordering(self, scenes_dir, workdir):
        out = workdir / "ablate.csv"
        code, stdout, stderr = run_cli(
            ["ablate", "--scenes", scenes_dir, "--out", out])
        assert code == 0, stderr
        rows = [line.split(",") for line in out.read_text().strip().splitlines()]
        assert rows[0] == ["scene", "variant", "translation_error_m",
                           "rotation_error_deg"]
        variants = ["data_only", "with_sphere", "full"]
        assert [r[:2] for r in rows[1:]] == (
            [["s0", v] for v in variants]
            + [["median", v] for v in variants]
            + [["mean", v] for v in variants])
        by_variant = {r[1]: float(r[2]) for r in rows[1:4]}
        # dropping the sphere and anchor terms must hurt on a cluttered scene
        assert by_variant["data_only"] > by_variant["full"]
        for v in variants:
            assert f"{v} median_translation_error_m:" in stdout

    def test_missing_scenes_dir(self, workdir):
        code, _, err = run_cli(
            ["ablate", "--scenes", workdir / "nope", "--out", workdir / "a.csv"])
        assert code == 2
        assert parse_error(err)["error"] == "ConfigError"

    def test_empty_scenes_dir(self, workdir):
        empty = workdir / "empty"
        empty.mkdir()
        code, _, err = run_cli(
            ["ablate", "--scenes", empty, "--out", workdir / "b.csv"])
        assert code == 2
        assert parse_error(err)["error"] == "ConfigError"


class TestUsage:
    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as ei:
            with contextlib.redirect_stderr(io.StringIO()):
                main(["frobnicate"])
        assert ei.value.code == 2

    def test_no_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as ei:
            with contextlib.redirect_stderr(io.StringIO()):
                main([])
        assert ei.value.code == 2
