"""Calibration quality metrics on overlapping point sets.

A good extrinsic maps the radar cloud of a validation object onto the
optical reconstruction of the same object. The symmetric Chamfer distance
and the close-point fraction quantify that overlap; per-point residuals
can be exported for inspection.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import EmptyInput, ValidationError
from .geometry import as_points
from .io_formats import DepthCapture, write_ply

# Below this reference-set size the all-pairs path is faster than hashing.
_BRUTE_LIMIT = 500


def _nearest_sq_brute(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    d2 = np.sum((query[:, None, :] - ref[None, :, :]) ** 2, axis=-1)
    return d2.min(axis=1)


def _ring_min(q: np.ndarray, key, shell: int, buckets: dict, ref: np.ndarray,
              best: float) -> float:
    """Scan one Chebyshev ring of cells around ``key`` for a closer point."""
    kx, ky, kz = key
    for cx in range(kx - shell, kx + shell + 1):
        for cy in range(ky - shell, ky + shell + 1):
            for cz in range(kz - shell, kz + shell + 1):
                if max(abs(cx - kx), abs(cy - ky), abs(cz - kz)) != shell:
                    continue
                bucket = buckets.get((cx, cy, cz))
                if bucket is None:
                    continue
                d2 = np.sum((q - ref[bucket]) ** 2, axis=-1)
                m = float(d2.min())
                if m < best:
                    best = m
    return best


def _nearest_sq_hashed(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Exact nearest squared distances via a uniform grid hash.

    Queries sharing a cell are answered together from the 3x3x3 cell
    neighborhood; any query whose best distance cannot yet rule out
    farther cells keeps expanding Chebyshev shells until it can. Per-pair
    arithmetic matches the all-pairs scan exactly (elementwise difference,
    square, 3-term sum) and min() is order-free, so results agree with the
    brute-force path bit for bit.
    """
    lo = ref.min(axis=0)
    span = float(np.max(ref.max(axis=0) - lo))
    cell = max(span / max(1.0, len(ref) ** (1.0 / 3.0)), 1e-9)
    keys = np.floor((ref - lo) / cell).astype(np.int64)
    buckets: dict = {}
    for idx, key in enumerate(map(tuple, keys)):
        buckets.setdefault(key, []).append(idx)
    buckets = {k: np.asarray(v, dtype=np.int64) for k, v in buckets.items()}

    qkeys = np.floor((query - lo) / cell).astype(np.int64)
    groups: dict = {}
    for qi, key in enumerate(map(tuple, qkeys)):
        groups.setdefault(key, []).append(qi)

    out = np.full(len(query), np.inf)
    for key, members in groups.items():
        qidx = np.asarray(members, dtype=np.int64)
        kx, ky, kz = key
        cand = [buckets[c]
                for c in ((cx, cy, cz)
                          for cx in range(kx - 1, kx + 2)
                          for cy in range(ky - 1, ky + 2)
                          for cz in range(kz - 1, kz + 2))
                if c in buckets]
        if cand:
            refs = ref[np.concatenate(cand)]
            d2 = np.sum((query[qidx][:, None, :] - refs[None, :, :]) ** 2, axis=-1)
            out[qidx] = d2.min(axis=1)
        # After shells 0..1, anything farther sits beyond one cell width;
        # queries not already inside that bound must keep expanding.
        for qi in qidx[out[qidx] > cell * cell]:
            best = out[qi]
            if not np.isfinite(best):
                # Empty neighborhood, possibly very far from the reference
                # grid; ring-walking there could take arbitrarily long.
                out[qi] = float(np.sum((query[qi] - ref) ** 2, axis=-1).min())
                continue
            shell = 2
            while best > ((shell - 1) * cell) ** 2:
                best = _ring_min(query[qi], key, shell, buckets, ref, best)
                shell += 1
            out[qi] = best
    return out


def _nearest_sq(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    if len(ref) < _BRUTE_LIMIT:
        return _nearest_sq_brute(query, ref)
    return _nearest_sq_hashed(query, ref)


def nearest_distances(points_a, points_b) -> np.ndarray:
    """Distance from each A-point to its nearest neighbor in B."""
    a = as_points(points_a, "points_a")
    b = as_points(points_b, "points_b")
    if len(a) == 0 or len(b) == 0:
        raise EmptyInput("nearest distances need non-empty point sets")
    return np.sqrt(_nearest_sq(a, b))


def directed_rmse(points_a, points_b) -> float:
    """Root-mean-square nearest-neighbor distance from set A into set B."""
    a = as_points(points_a, "points_a")
    b = as_points(points_b, "points_b")
    if len(a) == 0 or len(b) == 0:
        raise EmptyInput("directed RMSE needs non-empty point sets")
    return math.sqrt(float(np.mean(_nearest_sq(a, b))))


def chamfer_distance(points_a, points_b) -> float:
    """Symmetric Chamfer distance: mean of the two directed RMSE values."""
    return 0.5 * directed_rmse(points_a, points_b) \
        + 0.5 * directed_rmse(points_b, points_a)


def inlier_fraction(points_a, points_b, eps: float = 0.002) -> float:
    """Fraction of A-points whose nearest B-neighbor is closer than ``eps``."""
    a = as_points(points_a, "points_a")
    b = as_points(points_b, "points_b")
    if len(a) == 0 or len(b) == 0:
        raise EmptyInput("inlier fraction needs non-empty point sets")
    if eps <= 0:
        raise ValidationError(f"eps must be > 0, got {eps}")
    return float(np.mean(np.sqrt(_nearest_sq(a, b)) < eps))


def capture_points(capture: DepthCapture, max_range: float = 1.0) -> np.ndarray:
    """Back-project every valid depth pixel of a capture to 3D."""
    v, u = np.nonzero((capture.depth > 0) & (capture.depth <= max_range))
    if len(v) == 0:
        raise EmptyInput("capture has no valid depth pixels in range")
    return capture.intrinsics.backproject(u, v, capture.depth[v, u])


def export_residuals(path, points, residuals, *, binary: bool = True) -> None:
    """Write points with per-point residuals to a PLY file for inspection."""
    pts = as_points(points)
    res = np.asarray(residuals, dtype=np.float64).reshape(-1)
    if len(res) != len(pts):
        raise ValidationError("points and residuals lengths differ")
    write_ply(path,
              {"x": pts[:, 0], "y": pts[:, 1], "z": pts[:, 2], "residual": res},
              binary=binary, comments=("units meters",))
