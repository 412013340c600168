"""Typed errors raised by the calibration pipeline.

Every failure mode callers are expected to handle gets its own class so the
CLI can map pipeline stages to exit codes and tests can assert on the exact
failure. ``CalibError`` is the common base; anything else escaping the
library is a bug.
"""

from __future__ import annotations


class CalibError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(CalibError):
    """A value violates a documented invariant (bad rotation, NaN input, ...)."""


class MalformedInput(CalibError):
    """A file or buffer could not be parsed to its documented format."""


class EmptyInput(CalibError):
    """A parsed input contains no usable data (e.g. zero-point cloud)."""


class ConfigError(CalibError):
    """The configuration file is malformed or holds out-of-range values."""


class DegenerateGeometry(CalibError):
    """Geometry is rank-deficient for the requested operation (collinear
    points for a plane fit, rank <= 1 correspondences for registration)."""


class NoTargetDetected(CalibError):
    """Circle detection or filtering left fewer candidates than required.

    Carries per-candidate rejection diagnostics in ``diagnostics`` when the
    filter stage produced them.
    """

    def __init__(self, message: str, diagnostics: list[str] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class InsufficientData(CalibError):
    """Too few valid measurements to attempt a fit (e.g. < 30 depth pixels
    inside a circle)."""


class FitFailed(CalibError):
    """A robust fit terminated without reaching the minimum inlier ratio."""


class AmbiguousOrdering(CalibError):
    """Center ordering could not split top/bottom or left/right decisively."""


class InsufficientClusters(CalibError):
    """Radar clustering produced fewer clusters than the target needs."""


class LocalizationFailed(CalibError):
    """No candidate subset scored below the energy rejection threshold."""


class InsufficientCorrespondences(CalibError):
    """Projective pairing found too few pairs for refinement."""


class SceneError(CalibError):
    """A synthetic scene request is unrealizable (target outside the camera
    frustum, returns beyond the radar range gate)."""
