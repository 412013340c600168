"""Rigid registration between the optical and radar frames.

The closed-form scaled Kabsch solve turns matched center pairs into the
optical-to-radar transform; the refinement stage densifies an initial
estimate with per-pixel correspondences found by projecting the radar
cloud into the depth image and re-solves robustly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, InsufficientCorrespondences, ValidationError
from .geometry import RigidTransform, as_points
from .io_formats import DepthCapture, RadarCloud, RigidCalibration
from .ransac import accept_candidate, spawn_rngs

log = logging.getLogger(__name__)

# Singular values below this fraction of the largest are treated as
# structural zeros, not anisotropy: a planar target legitimately zeroes one
# direction, and center noise turns that exact zero into a tiny residual
# value (millimeter noise on centimeter spread lands near 1e-4). True
# rank collapse is caught separately by the 1e-9 degeneracy test.
_SV_FLOOR = 1e-3
_SV_SPREAD = 0.10


@dataclass(frozen=True)
class CorrespondenceSet:
    """Matched point pairs, optical frame on the left, radar on the right."""

    optical: np.ndarray  # (N, 3)
    radar: np.ndarray    # (N, 3)

    def __post_init__(self):
        optical = as_points(self.optical, "optical")
        radar = as_points(self.radar, "radar")
        if optical.shape != radar.shape:
            raise ValidationError(
                f"correspondence sides differ: {optical.shape} vs {radar.shape}")
        object.__setattr__(self, "optical", optical)
        object.__setattr__(self, "radar", radar)

    def __len__(self) -> int:
        return self.optical.shape[0]


def kabsch_register(optical_points, radar_points, scale: float = 1.0, *,
                    warn_anisotropy: bool = True) -> RigidCalibration:
    """Closed-form least-squares rigid transform from matched pairs.

    Solves for rotation and translation mapping ``scale * optical`` onto
    ``radar`` by SVD of the cross-covariance, with the usual determinant
    correction so the result is a proper rotation. The scale is a fixed
    input, not estimated. Coplanar point sets are fine; collinear ones are
    not.

    Raises:
        DegenerateGeometry: If fewer than 3 pairs, or the pairs are
            (near-)collinear so the rotation is underdetermined.
    """
    a = as_points(optical_points, "optical_points")
    b = as_points(radar_points, "radar_points")
    if a.shape != b.shape:
        raise ValidationError(f"point sets differ in shape: {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n < 3:
        raise DegenerateGeometry(f"registration needs >= 3 pairs, got {n}")
    scale = float(scale)
    if not np.isfinite(scale) or scale <= 0:
        raise ValidationError(f"scale must be > 0, got {scale}")

    a_mean = a.mean(axis=0)
    b_mean = b.mean(axis=0)
    h = scale * ((b - b_mean).T @ (a - a_mean))
    u, svals, vt = np.linalg.svd(h)
    if svals[0] <= 0.0 or svals[1] <= 1e-9 * svals[0]:
        raise DegenerateGeometry("pairs are collinear or coincident; rotation is underdetermined")
    significant = svals[svals > _SV_FLOOR * svals[0]]
    mean_sv = significant.mean()
    if warn_anisotropy and np.any(np.abs(significant - mean_sv) > _SV_SPREAD * mean_sv):
        log.warning(
            "registration geometry is strongly anisotropic (singular values %s); "
            "the solution may be noise-sensitive", np.array2string(svals, precision=3))
    d = np.sign(np.linalg.det(u @ vt))
    rotation = u @ np.diag([1.0, 1.0, d]) @ vt
    translation = b_mean - rotation @ (scale * a_mean)

    transform = RigidTransform(rotation, translation, scale)
    residuals = np.linalg.norm(transform.apply(a) - b, axis=1)
    rmse = math.sqrt(float(np.mean(residuals ** 2)))
    return RigidCalibration(transform, rmse, residuals)


def find_correspondences(capture: DepthCapture, cloud: RadarCloud,
                         initial: RigidTransform, *, max_range: float = 1.0,
                         corr_gate: float = 0.010) -> CorrespondenceSet:
    """Pair radar points with depth pixels under an initial transform.

    Each radar point is mapped into the optical frame, projected, and
    rounded to the nearest pixel; if that pixel holds valid depth and the
    back-projected point lies within ``corr_gate`` of the mapped radar
    point, the pair is kept.
    """
    mapped = initial.inverse().apply(cloud.points)
    uv = capture.intrinsics.project(mapped)
    # Points behind the camera project to non-finite pixels; park them at -1
    # so the integer cast stays defined before the bounds mask drops them.
    finite = np.all(np.isfinite(uv), axis=1)
    uv = np.where(finite[:, None], uv, -1.0)
    u = np.rint(uv[:, 0]).astype(np.int64)
    v = np.rint(uv[:, 1]).astype(np.int64)
    h, w = capture.depth.shape
    ok = finite & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    u, v = u[ok], v[ok]
    z = capture.depth[v, u]
    valid = (z > 0) & (z <= max_range)
    u, v, z = u[valid], v[valid], z[valid]
    optical = capture.intrinsics.backproject(u, v, z)
    mapped_ok = mapped[ok][valid]
    close = np.linalg.norm(optical - mapped_ok, axis=1) < corr_gate
    radar = cloud.points[ok][valid][close]
    return CorrespondenceSet(optical[close], radar)


def refine_calibration(capture: DepthCapture, cloud: RadarCloud,
                       initial: RigidTransform, *, max_range: float = 1.0,
                       corr_gate: float = 0.010, min_correspondences: int = 20,
                       iters: int = 100, t_inl: float = 0.05,
                       sample_size: int = 4, seed: int = 0) -> RigidCalibration:
    """Dense robust re-registration around an initial calibration.

    Builds projective correspondences with :func:`find_correspondences`,
    runs a small RANSAC (minimal Kabsch solves under the shared trade-off
    acceptance rule), refits on the best inlier set, and keeps the initial
    transform instead if it explains the final inliers at least as well.
    The scale is taken from ``initial`` and never re-estimated.

    Raises:
        InsufficientCorrespondences: If fewer than ``min_correspondences``
            pairs exist, or no consistent subset is found.
    """
    pairs = find_correspondences(capture, cloud, initial,
                                 max_range=max_range, corr_gate=corr_gate)
    n = len(pairs)
    if n < min_correspondences:
        raise InsufficientCorrespondences(
            f"{n} correspondences under the initial transform (need {min_correspondences})")

    rng = spawn_rngs(seed, 1)[0]
    cols = np.argpartition(rng.random((iters, n)), sample_size - 1, axis=1)[:, :sample_size]
    k_best, e_best = -math.inf, math.inf
    best_mask = None
    for i in range(iters):
        sel = cols[i]
        try:
            # Minimal samples from a near-planar patch are anisotropic by
            # construction; only the final refit is worth warning about.
            cand = kabsch_register(pairs.optical[sel], pairs.radar[sel],
                                   scale=initial.scale, warn_anisotropy=False)
        except DegenerateGeometry:
            continue
        res = np.linalg.norm(cand.transform.apply(pairs.optical) - pairs.radar, axis=1)
        inl = res < corr_gate
        k = float(inl.mean())
        e = float(np.mean(res[inl] ** 2)) if np.any(inl) else math.inf
        if accept_candidate(k, e, k_best, e_best, t_inl):
            k_best, e_best, best_mask = k, e, inl
    if best_mask is None or int(best_mask.sum()) < sample_size:
        raise InsufficientCorrespondences("no consistent correspondence subset found")

    refit = kabsch_register(pairs.optical[best_mask], pairs.radar[best_mask],
                            scale=initial.scale)
    final_res = np.linalg.norm(refit.transform.apply(pairs.optical) - pairs.radar, axis=1)
    final_mask = final_res < corr_gate
    if not np.any(final_mask):
        final_mask = best_mask

    # Never degrade the initial estimate: compare both transforms on the
    # same final inlier set and keep the better one.
    opt_in, rad_in = pairs.optical[final_mask], pairs.radar[final_mask]
    res_refined = np.linalg.norm(refit.transform.apply(opt_in) - rad_in, axis=1)
    res_initial = np.linalg.norm(initial.apply(opt_in) - rad_in, axis=1)
    if math.sqrt(float(np.mean(res_initial ** 2))) < math.sqrt(float(np.mean(res_refined ** 2))):
        chosen, res = initial, res_initial
    else:
        chosen, res = refit.transform, res_refined
    return RigidCalibration(chosen, math.sqrt(float(np.mean(res ** 2))), res)
