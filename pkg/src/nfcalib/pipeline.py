"""End-to-end calibration flows built from the stage modules.

These functions wire detection, localization, and registration together
under one ``PipelineConfig`` so library users and the command line share
the exact same behavior.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import PipelineConfig
from .io_formats import DepthCapture, RadarCloud, RigidCalibration
from .optical import (OpticalTarget, backproject_circle, detect_circles,
                      filter_circles, fit_spheres_ransac)
from .radar import ClusterSet, RadarTarget, detect_clusters, localize_radar_target
from .registration import kabsch_register


@dataclass(frozen=True)
class CalibrationResult:
    """Everything the target pipeline produced for one scene."""

    calibration: RigidCalibration
    optical: OpticalTarget
    radar: RadarTarget
    clusters: ClusterSet


def detect_optical_target(capture: DepthCapture, config: PipelineConfig) -> OpticalTarget:
    """Run the full optical chain: circles, filtering, robust sphere fits."""
    circles = detect_circles(
        capture, config.max_range,
        edge_percentile=config.hough_edge_percentile,
        radius_min_px=config.hough_radius_min_px,
        radius_max_px=config.hough_radius_max_px,
        max_candidates=config.hough_max_candidates)
    accepted = filter_circles(circles, capture, config.color_palette,
                              color_tol=config.color_tol, size_tol=config.size_tol)
    clouds = [backproject_circle(capture, c, config.max_range,
                                 min_pixels=config.min_depth_pixels)
              for c in accepted]
    return fit_spheres_ransac(
        clouds, config.target.styrofoam_radius,
        iters=config.ransac_iters_optical, t_inl=config.t_inl,
        inlier_eps=config.inlier_eps, min_inlier_ratio=config.min_inlier_ratio,
        sample_size=config.sample_size, seed=config.seed_optical,
        up=config.optical_up, right=config.optical_right,
        geometry=config.target)


def detect_radar_target(cloud: RadarCloud, config: PipelineConfig) -> tuple[RadarTarget, ClusterSet]:
    """Run the radar chain: clustering plus exhaustive subset localization."""
    clusters = detect_clusters(
        cloud, t_db=config.t_db, t_min=config.t_min, t_max=config.t_max,
        n_clusters=config.n_clusters, m_samples=config.m_samples)
    target = localize_radar_target(
        clusters, config.target,
        alpha=config.alpha, beta=config.beta, gamma=config.gamma,
        plane_eps=config.plane_eps, energy_reject=config.energy_reject,
        anchor_in_inliers=config.anchor_in_inliers, t_inl=config.t_inl,
        up=config.radar_up, right=config.radar_right)
    return target, clusters


def calibrate_scene(capture: DepthCapture, cloud: RadarCloud,
                    config: PipelineConfig | None = None) -> CalibrationResult:
    """Estimate the optical-to-radar transform from one target scene.

    The four sphere centers from each sensor, matched by their canonical
    labels, feed the closed-form registration. The optional anchor ball is
    radar-only and never part of the correspondence set.
    """
    config = PipelineConfig() if config is None else config
    config.validate()
    optical = detect_optical_target(capture, config)
    radar, clusters = detect_radar_target(cloud, config)
    calibration = kabsch_register(optical.centers, radar.corners, scale=config.scale)
    return CalibrationResult(calibration, optical, radar, clusters)
