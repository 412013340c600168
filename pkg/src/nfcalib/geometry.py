"""Core geometric types and operations.

Conventions used throughout the package:

* Points are float64 arrays of shape ``(3,)``; point sets are ``(N, 3)``.
* A rigid transform maps ``p -> R @ (s * p) + t`` with ``R`` a proper
  rotation and ``s`` a uniform a-priori scale (1.0 for metric sensors).
* Plane normals are unit length and oriented so the z-component (the sensor
  viewing axis) is <= 0; exact ties are broken toward +x, then +y.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry, ValidationError

_ORTHO_TOL = 1e-9


def as_points(points, name: str = "points") -> np.ndarray:
    """Coerce input to a float64 ``(N, 3)`` array and validate it.

    Args:
        points: Array-like of shape ``(N, 3)`` or ``(3,)`` (promoted to 1xN).
        name: Label used in error messages.

    Returns:
        Contiguous float64 array of shape ``(N, 3)``.

    Raises:
        ValidationError: On wrong shape or non-finite entries.
    """
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValidationError(f"{name} must have shape (N, 3), got {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def as_point(p, name: str = "point") -> np.ndarray:
    """Coerce input to a finite float64 ``(3,)`` vector."""
    arr = np.asarray(p, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValidationError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def _check_rotation(rot: np.ndarray) -> np.ndarray:
    rot = np.asarray(rot, dtype=np.float64)
    if rot.shape != (3, 3):
        raise ValidationError(f"rotation must be 3x3, got {rot.shape}")
    if not np.all(np.isfinite(rot)):
        raise ValidationError("rotation contains non-finite values")
    err = np.abs(rot.T @ rot - np.eye(3)).max()
    if err > 1e-6:
        raise ValidationError(f"rotation is not orthonormal (max deviation {err:.3e})")
    if np.linalg.det(rot) < 0:
        raise ValidationError("rotation has negative determinant (reflection)")
    return rot


@dataclass(frozen=True)
class RigidTransform:
    """Similarity transform ``p -> rotation @ (scale * p) + translation``.

    ``scale`` is an a-priori fixed factor (unit conversion between sensors),
    never estimated together with the pose.
    """

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        object.__setattr__(self, "translation", as_point(self.translation, "translation"))
        scale = float(self.scale)
        if not np.isfinite(scale) or scale <= 0:
            raise ValidationError(f"scale must be finite and > 0, got {scale}")
        object.__setattr__(self, "scale", scale)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), 1.0)

    def apply(self, points) -> np.ndarray:
        """Apply the transform to one point or a point set.

        Returns an array of the same leading shape as the input.
        """
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        arr = as_points(pts, "points")
        out = (self.scale * arr) @ self.rotation.T + self.translation
        return out[0] if single else out

    def inverse(self) -> "RigidTransform":
        """Exact inverse: composing with it yields the identity."""
        rot_inv = self.rotation.T
        s_inv = 1.0 / self.scale
        t_inv = -s_inv * (rot_inv @ self.translation)
        return RigidTransform(rot_inv, t_inv, s_inv)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self o other`` (``other`` applied first)."""
        rot = self.rotation @ other.rotation
        trans = self.rotation @ (self.scale * other.translation) + self.translation
        return RigidTransform(rot, trans, self.scale * other.scale)


@dataclass(frozen=True)
class Plane:
    """Oriented plane ``{x : <normal, x> = offset}`` with unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = as_point(self.normal, "normal")
        norm = np.linalg.norm(n)
        if abs(norm - 1.0) > 1e-9:
            raise ValidationError(f"plane normal must be unit length, |n| = {norm:.12f}")
        object.__setattr__(self, "normal", n)
        offset = float(self.offset)
        if not np.isfinite(offset):
            raise ValidationError("plane offset must be finite")
        object.__setattr__(self, "offset", offset)


@dataclass(frozen=True)
class SphereModel:
    """Sphere with fixed physical radius (meters)."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center, "center"))
        radius = float(self.radius)
        if not np.isfinite(radius) or radius <= 0:
            raise ValidationError(f"sphere radius must be > 0, got {radius}")
        object.__setattr__(self, "radius", radius)


def point_plane_distance(points, plane: Plane) -> np.ndarray | float:
    """Signed distance of points to a plane (positive on the normal side)."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    arr = as_points(pts, "points")
    d = arr @ plane.normal - plane.offset
    return float(d[0]) if single else d


def project_onto_plane(points, plane: Plane) -> np.ndarray:
    """Orthogonal projection of points onto a plane. Idempotent."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    arr = as_points(pts, "points")
    d = arr @ plane.normal - plane.offset
    out = arr - d[:, None] * plane.normal
    return out[0] if single else out


def fit_plane_tls(points) -> Plane:
    """Total-least-squares plane through a point set.

    Minimizes the sum of squared orthogonal distances via SVD of the
    mean-centered coordinates. The normal is oriented by the package-wide
    convention (z-component <= 0, ties toward +x then +y) so repeated fits
    of the same data always agree.

    Args:
        points: ``(N, 3)`` array-like, N >= 3.

    Returns:
        The best-fit ``Plane``.

    Raises:
        DegenerateGeometry: If N < 3 or the points are (near-)collinear.
        ValidationError: On malformed input.
    """
    arr = as_points(points)
    if arr.shape[0] < 3:
        raise DegenerateGeometry(f"plane fit needs >= 3 points, got {arr.shape[0]}")
    centroid = arr.mean(axis=0)
    centered = arr - centroid
    # Full SVD of the (N, 3) centered matrix; the right-singular vector of
    # the smallest singular value is the plane normal.
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    if svals[0] <= 0.0 or svals[1] <= _ORTHO_TOL * svals[0]:
        raise DegenerateGeometry("points are collinear or coincident; plane is undetermined")
    normal = vt[2]
    if normal[2] > 0:
        normal = -normal
    elif normal[2] == 0:
        if normal[0] < 0:
            normal = -normal
        elif normal[0] == 0 and normal[1] < 0:
            normal = -normal
    # Renormalize to keep the Plane invariant airtight against fp drift.
    normal = normal / np.linalg.norm(normal)
    return Plane(normal, float(normal @ centroid))


def rotation_from_axis_angle(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix for a rotation of ``angle_rad`` about ``axis``."""
    a = as_point(axis, "axis")
    norm = np.linalg.norm(a)
    if norm < 1e-15:
        raise ValidationError("rotation axis must be nonzero")
    a = a / norm
    k = np.array([
        [0.0, -a[2], a[1]],
        [a[2], 0.0, -a[0]],
        [-a[1], a[0], 0.0],
    ])
    return np.eye(3) + np.sin(angle_rad) * k + (1.0 - np.cos(angle_rad)) * (k @ k)


def rotation_angle_deg(rot_a: np.ndarray, rot_b: np.ndarray | None = None) -> float:
    """Geodesic angle (degrees) of ``rot_a`` relative to ``rot_b`` (or identity)."""
    rot_a = _check_rotation(rot_a)
    rel = rot_a if rot_b is None else rot_a @ _check_rotation(rot_b).T
    c = (np.trace(rel) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
