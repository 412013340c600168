"""Optical target detection: circles in the depth map, spheres in 3D.

The stages mirror the physical target: find circular silhouettes of the
styrofoam spheres in the near-field depth image, filter them by the known
paint colors and common size, back-project the enclosed pixels, and fit
spheres of known radius robustly. The four fitted centers, ordered by the
up/right convention, are the optical half of the calibration
correspondences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .config import TargetGeometry
from .errors import (AmbiguousOrdering, FitFailed, InsufficientData,
                     NoTargetDetected, ValidationError)
from .io_formats import DepthCapture
from .geometry import as_point, as_points
from .ransac import accept_candidate, spawn_rngs


@dataclass(frozen=True)
class CircleCandidate:
    """One circle hypothesis in pixel coordinates (subpixel center)."""

    center_u: float
    center_v: float
    radius_px: float
    score: float


@dataclass(frozen=True)
class OpticalTarget:
    """The four sphere centers in the optical frame, canonically ordered."""

    centers: np.ndarray        # (4, 3) top-left, top-right, bottom-left, bottom-right
    inlier_ratios: np.ndarray  # (4,)
    fit_errors: np.ndarray     # (4,) RMS inlier distance-to-surface, meters

    def __post_init__(self):
        centers = as_points(self.centers, "centers")
        if centers.shape[0] != 4:
            raise ValidationError(f"OpticalTarget needs 4 centers, got {centers.shape[0]}")
        ratios = np.asarray(self.inlier_ratios, dtype=np.float64).reshape(-1)
        errors = np.asarray(self.fit_errors, dtype=np.float64).reshape(-1)
        if ratios.shape != (4,) or errors.shape != (4,):
            raise ValidationError("per-sphere statistics must have length 4")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "inlier_ratios", ratios)
        object.__setattr__(self, "fit_errors", errors)


# ---------------------------------------------------------------------------
# Stage 1: circle detection (two-stage Hough on the clamped depth map)


def detect_circles(capture: DepthCapture, max_range: float = 1.0, *,
                   edge_percentile: float = 90.0, radius_min_px: int = 10,
                   radius_max_px: int = 34, max_candidates: int = 12) -> list[CircleCandidate]:
    """Find circular depth silhouettes via a gradient Hough transform.

    Stage one accumulates center votes from edge pixels against their depth
    gradient direction over the admissible radius range; stage two recovers
    each candidate's radius as the gated median distance of the edge pixels
    aligned with it. Candidates are returned sorted by descending support;
    near-duplicates are kept (downstream filtering decides).

    Raises:
        NoTargetDetected: If the image yields no usable edges or peaks.
    """
    depth = np.clip(capture.depth, 0.0, float(max_range))
    gx = ndimage.sobel(depth, axis=1)
    gy = ndimage.sobel(depth, axis=0)
    mag = np.hypot(gx, gy)
    positive = mag[mag > 1e-12]
    if positive.size == 0:
        raise NoTargetDetected("depth image has no gradients")
    # The percentile tracks the edge population only while edges dominate the
    # positive tail. Sensor noise makes every pixel weakly positive and drags
    # the percentile into the noise floor, so a multiple of the median (a
    # robust noise scale) keeps the threshold above it. Depth steps at object
    # silhouettes are centimeters against a millimeter noise scale.
    threshold = max(np.percentile(positive, edge_percentile),
                    6.0 * float(np.median(positive)))
    ev, eu = np.nonzero(mag >= max(threshold, 1e-12))
    if ev.size == 0:
        raise NoTargetDetected("no edge pixels above the gradient threshold")

    gu = gx[ev, eu] / mag[ev, eu]
    gv = gy[ev, eu] / mag[ev, eu]
    h, w = depth.shape
    acc = np.zeros((h, w), dtype=np.float64)
    radii = np.arange(int(radius_min_px), int(radius_max_px) + 1, dtype=np.float64)
    # Depth increases crossing a silhouette outward, so the center lies
    # against the gradient. Voting only that way halves the clutter and
    # removes the phantom peaks where outward votes of neighboring rims meet.
    cu = np.rint(eu[:, None] - radii[None, :] * gu[:, None]).astype(np.int64)
    cv = np.rint(ev[:, None] - radii[None, :] * gv[:, None]).astype(np.int64)
    ok = (cu >= 0) & (cu < w) & (cv >= 0) & (cv < h)
    np.add.at(acc, (cv[ok], cu[ok]), 1.0)

    # Slight smoothing concentrates votes and breaks integer plateaus.
    acc = ndimage.gaussian_filter(acc, sigma=1.0)
    peak_mask = (acc == ndimage.maximum_filter(acc, size=5)) & (acc >= max(3.0, 0.15 * acc.max()))
    pv, pu = np.nonzero(peak_mask)
    if pv.size == 0:
        raise NoTargetDetected("no circle-center peaks in the Hough accumulator")
    order = np.lexsort((pu, pv, -acc[pv, pu]))
    pv, pu = pv[order][:max_candidates], pu[order][:max_candidates]

    dists_all = None
    candidates = []
    for v0, u0 in zip(pv, pu):
        # Subpixel center: vote-weighted centroid of the 5x5 neighborhood.
        v_lo, v_hi = max(0, v0 - 2), min(h, v0 + 3)
        u_lo, u_hi = max(0, u0 - 2), min(w, u0 + 3)
        win = acc[v_lo:v_hi, u_lo:u_hi]
        vv, uu = np.mgrid[v_lo:v_hi, u_lo:u_hi]
        total = win.sum()
        cv_sub = float((win * vv).sum() / total)
        cu_sub = float((win * uu).sum() / total)

        # Stage two: radius from the edge pixels whose gradient points away
        # from this center. Rims of nearby objects lie inside the annulus
        # too, but their gradients are radial about their own centers, so
        # the signed alignment test leaves an almost pure ring whose median
        # distance is the radius.
        du = eu - cu_sub
        dv = ev - cv_sub
        d = np.hypot(du, dv)
        with np.errstate(divide="ignore", invalid="ignore"):
            align = (du * gu + dv * gv) / d
        sel = (d >= radius_min_px - 1.0) & (d <= radius_max_px + 1.0) & (align >= 0.85)
        if not np.any(sel):
            continue
        r_coarse = float(np.median(d[sel]))
        near = sel & (np.abs(d - r_coarse) <= 2.0)
        support = int(near.sum())
        if support == 0:
            continue
        radius = float(d[near].mean())
        candidates.append(CircleCandidate(cu_sub, cv_sub, radius, float(support)))

    if not candidates:
        raise NoTargetDetected("no circle candidates survived radius estimation")
    candidates.sort(key=lambda c: (-c.score, c.center_v, c.center_u))
    return candidates


def filter_circles(candidates: list[CircleCandidate], capture: DepthCapture,
                   palette: tuple, color_tol: float = 60.0,
                   size_tol: float = 0.3) -> list[CircleCandidate]:
    """Keep the four sphere circles, rejecting duplicates and outliers.

    Walking candidates by descending score, a candidate is accepted iff it
    does not overlap an already accepted circle, its median interior color
    matches one of the palette colors within ``color_tol`` per channel
    (an empty palette disables the color test), and its radius is within
    ``size_tol`` (relative) of the median already-accepted radius.

    Raises:
        NoTargetDetected: With per-candidate diagnostics if fewer than four
            candidates survive.
    """
    h, w = capture.depth.shape
    accepted: list[CircleCandidate] = []
    diagnostics: list[str] = []
    for i, cand in enumerate(candidates):
        if len(accepted) == 4:
            break
        label = f"candidate {i} (u={cand.center_u:.1f}, v={cand.center_v:.1f}, r={cand.radius_px:.1f})"
        overlap = False
        for acc in accepted:
            if math.hypot(cand.center_u - acc.center_u, cand.center_v - acc.center_v) \
                    < 0.8 * (cand.radius_px + acc.radius_px):
                overlap = True
                break
        if overlap:
            diagnostics.append(f"{label}: overlaps an accepted circle")
            continue
        if palette:
            v_lo = max(0, int(cand.center_v - cand.radius_px))
            v_hi = min(h, int(cand.center_v + cand.radius_px) + 1)
            u_lo = max(0, int(cand.center_u - cand.radius_px))
            u_hi = min(w, int(cand.center_u + cand.radius_px) + 1)
            if v_hi <= v_lo or u_hi <= u_lo:
                diagnostics.append(f"{label}: lies outside the image")
                continue
            vv, uu = np.mgrid[v_lo:v_hi, u_lo:u_hi]
            inside = (uu - cand.center_u) ** 2 + (vv - cand.center_v) ** 2 \
                <= (0.7 * cand.radius_px) ** 2
            if not np.any(inside):
                diagnostics.append(f"{label}: no interior pixels")
                continue
            med = np.median(capture.rgb[v_lo:v_hi, u_lo:u_hi][inside], axis=0)
            dev = min(np.max(np.abs(med - np.asarray(color))) for color in palette)
            if dev >= color_tol:
                diagnostics.append(f"{label}: color deviates {dev:.0f} from palette")
                continue
        if accepted:
            ref = float(np.median([a.radius_px for a in accepted]))
            if abs(cand.radius_px - ref) > size_tol * ref:
                diagnostics.append(
                    f"{label}: radius {cand.radius_px:.1f} deviates from accepted median {ref:.1f}")
                continue
        accepted.append(cand)
    if len(accepted) < 4:
        raise NoTargetDetected(
            f"only {len(accepted)} of 4 circles survived filtering", diagnostics)
    return accepted


# ---------------------------------------------------------------------------
# Stage 2: back-projection


def backproject_circle(capture: DepthCapture, circle: CircleCandidate,
                       max_range: float = 1.0, min_pixels: int = 30
                       ) -> tuple[np.ndarray, np.ndarray]:
    """3D points and fit weights for the pixels inside a circle.

    Pixels back-project through the pinhole model. The weight models the
    squared incidence cosine of a sphere seen at the detected silhouette,
    ``1 - (rho / r)^2`` with ``rho`` the pixel's distance from the circle
    center: range noise grows roughly with the secant of incidence, so this
    is the inverse-variance weight, and it is computed from the circle
    rather than from per-pixel normals, which noise renders useless. The
    outer 10% of the silhouette is dropped outright; those grazing pixels
    carry several times the nominal noise.

    Raises:
        InsufficientData: If fewer than ``min_pixels`` valid depth pixels lie
            inside the circle.
    """
    h, w = capture.depth.shape
    v_lo = max(0, int(math.floor(circle.center_v - circle.radius_px)))
    v_hi = min(h, int(math.ceil(circle.center_v + circle.radius_px)) + 1)
    u_lo = max(0, int(math.floor(circle.center_u - circle.radius_px)))
    u_hi = min(w, int(math.ceil(circle.center_u + circle.radius_px)) + 1)
    if v_hi <= v_lo or u_hi <= u_lo:
        raise InsufficientData("circle lies outside the depth image")

    vv, uu = np.mgrid[v_lo:v_hi, u_lo:u_hi]
    z = capture.depth[v_lo:v_hi, u_lo:u_hi]
    valid = (z > 0) & (z <= max_range)
    rho2 = (((uu - circle.center_u) ** 2 + (vv - circle.center_v) ** 2)
            / (circle.radius_px ** 2))
    usable = valid & (rho2 <= 0.81)
    if int(usable.sum()) < min_pixels:
        raise InsufficientData(
            f"only {int(usable.sum())} valid depth pixels inside circle (need {min_pixels})")

    intr = capture.intrinsics
    pts = intr.backproject(uu, vv, z)
    points = pts[usable]
    weights = 1.0 - rho2[usable]
    return points, weights


# ---------------------------------------------------------------------------
# Stage 3: sphere fitting


def _algebraic_centers(samples: np.ndarray, weights: np.ndarray, radius: float) -> np.ndarray:
    """Weighted linear seed for sphere centers (batched over axis 0).

    Uses the auxiliary unknown ``k = |c|^2`` to linearize
    ``|c - s|^2 = r^2`` and solves the weighted normal equations with a
    pseudo-inverse (degenerate samples yield harmless garbage that the
    surrounding RANSAC loop discards).
    """
    m, n, _ = samples.shape
    a = np.concatenate([-2.0 * samples, np.ones((m, n, 1))], axis=2)
    b = radius * radius - np.sum(samples * samples, axis=2)
    wa = weights[..., None] * a
    ata = np.swapaxes(a, 1, 2) @ wa
    atb = np.einsum("mnk,mn->mk", wa, b)
    sol = np.einsum("mkl,ml->mk", np.linalg.pinv(ata), atb)
    return sol[:, :3]


def _gauss_newton_centers(centers: np.ndarray, points: np.ndarray, weights: np.ndarray,
                          radius: float, steps: int = 5) -> np.ndarray:
    """Refine sphere centers on the geometric residual (batched over axis 0)."""
    c = centers.copy()
    for _ in range(steps):
        diff = c[:, None, :] - points
        dist = np.linalg.norm(diff, axis=2)
        safe = np.maximum(dist, 1e-12)
        g = dist - radius
        jac = diff / safe[..., None]
        wj = weights[..., None] * jac
        jtj = np.swapaxes(jac, 1, 2) @ wj
        jtg = np.einsum("mnk,mn->mk", wj, g)
        c = c - np.einsum("mkl,ml->mk", np.linalg.pinv(jtj), jtg)
    return c


def fit_sphere(points: np.ndarray, weights: np.ndarray, radius: float) -> np.ndarray:
    """Weighted fixed-radius sphere fit (algebraic seed + Gauss-Newton)."""
    pts = as_points(points)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(w) != len(pts):
        raise ValidationError("points and weights lengths differ")
    if len(pts) < 4:
        raise InsufficientData(f"sphere fit needs >= 4 points, got {len(pts)}")
    seed = _algebraic_centers(pts[None], w[None], radius)
    return _gauss_newton_centers(seed, pts[None], w[None], radius)[0]


def fit_spheres_ransac(clouds: list[tuple[np.ndarray, np.ndarray]], radius: float,
                       iters: int = 1000, t_inl: float = 0.05, *,
                       inlier_eps: float = 0.003, min_inlier_ratio: float = 0.3,
                       sample_size: int = 4, seed: int = 0,
                       up=(0.0, 1.0, 0.0), right=(1.0, 0.0, 0.0),
                       geometry: TargetGeometry | None = None) -> OpticalTarget:
    """Robustly fit one fixed-radius sphere per point cloud and order the centers.

    Each cloud gets its own deterministic RNG stream (spawned from ``seed``),
    ``iters`` minimal samples of ``sample_size`` points, and the shared
    trade-off acceptance rule on (inlier ratio, weighted inlier error). The
    best model is refit on its inliers. Centers are returned in canonical
    top-left/top-right/bottom-left/bottom-right order.

    Raises:
        FitFailed: If any sphere stays under ``min_inlier_ratio``, or the
            ordered centers disagree with ``geometry`` by more than 20%.
        InsufficientData: If a cloud has fewer points than ``sample_size``.
    """
    if len(clouds) != 4:
        raise ValidationError(f"expected 4 sphere clouds, got {len(clouds)}")
    rngs = spawn_rngs(seed, 4)
    centers = np.zeros((4, 3))
    ratios = np.zeros(4)
    errors = np.zeros(4)
    for s, (points, weights) in enumerate(clouds):
        pts = as_points(points, f"sphere {s} points")
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        n = len(pts)
        if n < sample_size:
            raise InsufficientData(f"sphere {s}: {n} points < sample size {sample_size}")
        rng = rngs[s]
        cols = np.argpartition(rng.random((iters, n)), sample_size - 1, axis=1)[:, :sample_size]
        samples = pts[cols]
        sample_w = w[cols]
        cand = _algebraic_centers(samples, sample_w, radius)
        cand = _gauss_newton_centers(cand, samples, sample_w, radius)

        dist = np.linalg.norm(pts[None, :, :] - cand[:, None, :], axis=2)
        inlier = np.abs(dist - radius) < inlier_eps
        k_all = inlier.mean(axis=1)
        sq = (dist * dist - radius * radius) ** 2
        num = np.sum(np.where(inlier, w[None, :] * sq, 0.0), axis=1)
        den = np.sum(np.where(inlier, w[None, :], 0.0), axis=1)
        e_all = np.where(den > 0, num / np.maximum(den, 1e-300), np.inf)

        k_best, e_best, best = -np.inf, np.inf, -1
        for i in range(iters):
            if not np.isfinite(cand[i]).all():
                continue
            if accept_candidate(k_all[i], e_all[i], k_best, e_best, t_inl):
                k_best, e_best, best = k_all[i], e_all[i], i
        if best < 0 or k_best < min_inlier_ratio:
            raise FitFailed(
                f"sphere {s}: best inlier ratio {max(k_best, 0.0):.2f} "
                f"below minimum {min_inlier_ratio}")

        # The tight band is for picking the candidate. The refit runs on a
        # band scaled to the measured residual spread, iterated until the
        # membership stops changing: with sensor noise comparable to
        # inlier_eps the tight band keeps whichever lucky subset flatters
        # the candidate, and the fixed point washes out both that selection
        # noise and the choice of RNG seed. Gross outliers (background
        # surfaces) sit far outside 3 sigma either way.
        center = cand[best]
        mask = inlier[best]
        band = inlier_eps
        for _ in range(10):
            res = np.abs(np.linalg.norm(pts - center, axis=1) - radius)
            core = res[res < 0.02]
            sigma = 1.4826 * float(np.median(core)) if core.size else 0.0
            band = max(inlier_eps, 3.0 * sigma)
            new_mask = res < band
            if not np.any(new_mask):
                break
            center = fit_sphere(pts[new_mask], w[new_mask], radius)
            if np.array_equal(new_mask, mask):
                mask = new_mask
                break
            mask = new_mask
        final_dist = np.linalg.norm(pts - center, axis=1)
        final_in = np.abs(final_dist - radius) < band
        centers[s] = center
        ratios[s] = final_in.mean()
        errors[s] = math.sqrt(float(np.mean((final_dist[final_in] - radius) ** 2))) \
            if np.any(final_in) else math.inf

    perm = ordering_indices(centers, up, right)
    centers, ratios, errors = centers[perm], ratios[perm], errors[perm]
    if geometry is not None:
        expect = geometry.pairwise_distances
        got = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
        iu = np.triu_indices(4, k=1)
        rel = np.abs(got[iu] - expect[iu]) / expect[iu]
        if np.any(rel > 0.2):
            raise FitFailed(
                f"sphere centers deviate up to {rel.max() * 100:.0f}% from the target geometry")
    return OpticalTarget(centers, ratios, errors)


# ---------------------------------------------------------------------------
# Center ordering


def ordering_indices(centers, up, right, min_separation: float = 0.001) -> np.ndarray:
    """Permutation sorting 4 centers into TL/TR/BL/BR by the up/right convention."""
    pts = as_points(centers, "centers")
    if pts.shape[0] != 4:
        raise ValidationError(f"ordering needs exactly 4 centers, got {pts.shape[0]}")
    up = as_point(up, "up")
    right = as_point(right, "right")
    nu, nr = np.linalg.norm(up), np.linalg.norm(right)
    if nu < 1e-12 or nr < 1e-12:
        raise ValidationError("up/right vectors must be nonzero")
    p_up = pts @ (up / nu)
    p_right = pts @ (right / nr)
    by_up = np.argsort(-p_up, kind="stable")
    if p_up[by_up[1]] - p_up[by_up[2]] < min_separation:
        raise AmbiguousOrdering(
            f"top/bottom split ambiguous ({p_up[by_up[1]] - p_up[by_up[2]]:.4f} m apart)")
    out = []
    for pair in (by_up[:2], by_up[2:]):
        a, b = pair
        if abs(p_right[a] - p_right[b]) < min_separation:
            raise AmbiguousOrdering(
                f"left/right split ambiguous ({abs(p_right[a] - p_right[b]):.4f} m apart)")
        out.extend([a, b] if p_right[a] < p_right[b] else [b, a])
    return np.asarray(out)


def order_centers(centers, up, right, min_separation: float = 0.001) -> np.ndarray:
    """Return the 4 centers ordered top-left, top-right, bottom-left, bottom-right.

    The result is invariant under permutations of the input rows.

    Raises:
        AmbiguousOrdering: If either split is closer than ``min_separation``.
    """
    pts = as_points(centers, "centers")
    return pts[ordering_indices(pts, up, right, min_separation)]
