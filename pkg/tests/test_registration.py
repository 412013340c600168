"""Closed-form registration and the dense projective refinement loop."""

import logging

import numpy as np
import pytest

from nfcalib.errors import (DegenerateGeometry, InsufficientCorrespondences,
                            ValidationError)
from nfcalib.geometry import (RigidTransform, rotation_angle_deg,
                              rotation_from_axis_angle)
from nfcalib.registration import (find_correspondences, kabsch_register,
                                  refine_calibration)
from nfcalib.synthetic import SceneSpec, render_eval_object


def random_transform(rng, scale=1.0):
    rot = rotation_from_axis_angle(rng.normal(size=3), rng.uniform(-np.pi, np.pi))
    return RigidTransform(rot, rng.normal(size=3), scale)


class TestKabschRegister:
    def test_identity(self, rng):
        pts = rng.normal(size=(10, 3))
        calib = kabsch_register(pts, pts)
        assert np.allclose(calib.transform.rotation, np.eye(3), atol=1e-12)
        assert np.allclose(calib.transform.translation, 0.0, atol=1e-12)
        assert calib.residual_rmse < 1e-12

    def test_recovers_random_transforms(self, rng):
        for _ in range(20):
            t = random_transform(rng)
            pts = rng.normal(size=(12, 3))
            calib = kabsch_register(pts, t.apply(pts))
            assert np.allclose(calib.transform.rotation, t.rotation, atol=1e-9)
            assert np.allclose(calib.transform.translation, t.translation, atol=1e-9)
            assert calib.residual_rmse < 1e-9

    def test_coplanar_square_is_fine(self, rng):
        square = np.array([[-0.03, 0.03, 0.0], [0.03, 0.03, 0.0],
                           [-0.03, -0.03, 0.0], [0.03, -0.03, 0.0]])
        for _ in range(10):
            t = random_transform(rng)
            calib = kabsch_register(square, t.apply(square),
                                    warn_anisotropy=False)
            assert rotation_angle_deg(calib.transform.rotation, t.rotation) < 1e-7
            assert calib.residual_rmse < 1e-9

    def test_fixed_scale_honored(self, rng):
        t = random_transform(rng, scale=1.01)
        pts = rng.normal(size=(8, 3))
        calib = kabsch_register(pts, t.apply(pts), scale=1.01)
        assert calib.transform.scale == 1.01
        assert calib.residual_rmse < 1e-9
        # the wrong scale cannot be compensated by rotation/translation
        off = kabsch_register(pts, t.apply(pts), scale=1.0)
        assert off.residual_rmse > 1e-3

    def test_collinear_raises(self):
        line = np.outer(np.linspace(0, 1, 8), [1.0, 0.5, 0.2])
        with pytest.raises(DegenerateGeometry):
            kabsch_register(line, line + 0.1)

    def test_too_few_pairs(self):
        with pytest.raises(DegenerateGeometry):
            kabsch_register(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValidationError):
            kabsch_register(rng.normal(size=(5, 3)), rng.normal(size=(6, 3)))

    def test_reflection_resisted(self, rng):
        # mirrored targets must come back as a proper rotation, not a flip
        pts = rng.normal(size=(15, 3))
        mirrored = pts * [1.0, 1.0, -1.0]
        calib = kabsch_register(pts, mirrored, warn_anisotropy=False)
        assert np.linalg.det(calib.transform.rotation) == pytest.approx(1.0, abs=1e-9)

    def test_residuals_invariant_under_rigid_motion(self, rng):
        pts = rng.normal(size=(10, 3))
        noisy = pts + rng.normal(scale=0.01, size=(10, 3))
        base = kabsch_register(pts, noisy)
        extra = random_transform(rng)
        moved = kabsch_register(pts, extra.apply(noisy))
        assert np.allclose(np.sort(base.per_point_residuals),
                           np.sort(moved.per_point_residuals), atol=1e-9)

    def test_anisotropy_warning_on_skewed_geometry(self, rng, caplog):
        # an elongated cloud: solvable but noise-sensitive across the short axes
        pts = rng.normal(size=(40, 3)) * [1.0, 0.05, 0.05]
        with caplog.at_level(logging.WARNING, logger="nfcalib.registration"):
            kabsch_register(pts, pts)
        assert any("anisotropic" in r.message for r in caplog.records)

    def test_no_warning_on_symmetric_geometry(self, caplog):
        # the planar calibration square: the out-of-plane direction falls
        # under the significance floor and the in-plane spread is even
        square = np.array([[-0.03, 0.03, 0.0], [0.03, 0.03, 0.0],
                           [-0.03, -0.03, 0.0], [0.03, -0.03, 0.0]])
        with caplog.at_level(logging.WARNING, logger="nfcalib.registration"):
            kabsch_register(square, square + 0.001)
        assert not any("anisotropic" in r.message for r in caplog.records)


class TestFindCorrespondences:
    def test_ground_truth_pairs_everything_visible(self):
        spec = SceneSpec(seed=4)
        cap, cloud = render_eval_object(spec, "disk")
        pairs = find_correspondences(cap, cloud, spec.extrinsic())
        assert len(pairs) > 0.9 * len(cloud)
        # pairs agree through the true transform
        mapped = spec.extrinsic().inverse().apply(pairs.radar)
        assert np.linalg.norm(mapped - pairs.optical, axis=1).max() < 0.010

    def test_bad_initial_pairs_nothing(self):
        spec = SceneSpec(seed=4)
        cap, cloud = render_eval_object(spec, "disk")
        off = RigidTransform(np.eye(3), np.array([0.5, 0.5, 0.5]))
        pairs = find_correspondences(cap, cloud, off)
        assert len(pairs) < 20


class TestRefineCalibration:
    def test_ground_truth_is_fixed_point(self):
        spec = SceneSpec(seed=7)
        cap, cloud = render_eval_object(spec, "disk")
        gt = spec.extrinsic()
        refined = refine_calibration(cap, cloud, gt)
        assert np.linalg.norm(refined.transform.translation - gt.translation) < 1e-4
        assert rotation_angle_deg(refined.transform.rotation, gt.rotation) < 0.01

    def test_recovers_from_perturbed_initial(self):
        spec = SceneSpec(seed=7)
        cap, cloud = render_eval_object(spec, "disk")
        gt = spec.extrinsic()
        pose = spec.object_to_radar()
        center = pose.translation
        normal = pose.rotation @ np.array([0.0, 0.0, 1.0])
        inplane = pose.rotation @ np.array([1.0, 0.0, 0.0])
        rot = rotation_from_axis_angle(inplane, np.radians(1.0))
        pert = RigidTransform(rot, center - rot @ center + 0.005 * normal)
        initial = pert.compose(gt)
        assert np.linalg.norm(initial.translation - gt.translation) > 0.004
        refined = refine_calibration(cap, cloud, initial)
        assert np.linalg.norm(refined.transform.translation - gt.translation) < 0.001
        assert rotation_angle_deg(refined.transform.rotation, gt.rotation) < 0.2

    def test_never_degrades_initial(self):
        # when the initial transform is already the truth, refinement must
        # not wander off it
        spec = SceneSpec(seed=9, depth_noise=0.001, radar_jitter=0.001)
        cap, cloud = render_eval_object(spec, "disk")
        gt = spec.extrinsic()
        refined = refine_calibration(cap, cloud, gt)
        res_gt = np.linalg.norm(
            gt.apply(find_correspondences(cap, cloud, gt).optical)
            - find_correspondences(cap, cloud, gt).radar, axis=1)
        assert refined.residual_rmse <= np.sqrt(np.mean(res_gt ** 2)) + 1e-12

    def test_too_far_initial_raises(self):
        spec = SceneSpec(seed=7)
        cap, cloud = render_eval_object(spec, "disk")
        off = RigidTransform(np.eye(3), np.array([0.5, 0.5, 0.5]))
        with pytest.raises(InsufficientCorrespondences):
            refine_calibration(cap, cloud, off)

    def test_deterministic(self):
        spec = SceneSpec(seed=7, depth_noise=0.001, radar_jitter=0.001)
        cap, cloud = render_eval_object(spec, "disk")
        gt = spec.extrinsic()
        a = refine_calibration(cap, cloud, gt, seed=3)
        b = refine_calibration(cap, cloud, gt, seed=3)
        assert np.array_equal(a.transform.rotation, b.transform.rotation)
        assert np.array_equal(a.transform.translation, b.transform.translation)
