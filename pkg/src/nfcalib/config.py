"""Target geometry and pipeline configuration.

All tunable parameters live in one flat, human-editable TOML file so a run
is fully described by (input captures, config, seeds). Defaults reproduce
the reference target: four 5 cm styrofoam spheres with embedded 2.5 mm
steel balls on a 6 cm square, plus a fifth ball on the board behind them.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .errors import ConfigError, ValidationError

ENV_CONFIG_VAR = "CALIB_CONFIG"

# Canonical corner order used everywhere: top-left, top-right,
# bottom-left, bottom-right.
CORNER_NAMES = ("top_left", "top_right", "bottom_left", "bottom_right")


@dataclass(frozen=True)
class TargetGeometry:
    """Physical dimensions of the calibration target.

    The four corner balls sit on a square of side ``edge_length`` whose
    plane is ``board_offset`` in front of the board; the anchor ball sits
    on the board behind the square center.
    """

    edge_length: float = 0.06
    board_offset: float = 0.025
    styrofoam_radius: float = 0.025
    metal_ball_diameter: float = 0.0025

    def __post_init__(self):
        for name in ("edge_length", "board_offset", "styrofoam_radius", "metal_ball_diameter"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v <= 0:
                raise ValidationError(f"TargetGeometry.{name} must be > 0, got {v}")
            object.__setattr__(self, name, v)

    @property
    def pairwise_distances(self) -> np.ndarray:
        """4x4 matrix of expected corner distances in canonical order.

        Adjacent corners are one edge apart, diagonal corners edge*sqrt(2);
        consistent with a planar square by construction.
        """
        e = self.edge_length
        g = e * math.sqrt(2.0)
        return np.array([
            [0.0, e, e, g],
            [e, 0.0, g, e],
            [e, g, 0.0, e],
            [g, e, e, 0.0],
        ])

    def corner_local_coords(self) -> np.ndarray:
        """Corner ball centers in the target frame (z = 0 plane), canonical order.

        The target frame has x to the right, y up, z out of the board toward
        the sensors; the anchor ball sits at (0, 0, -board_offset).
        """
        h = self.edge_length / 2.0
        return np.array([
            [-h, h, 0.0],   # top-left
            [h, h, 0.0],    # top-right
            [-h, -h, 0.0],  # bottom-left
            [h, -h, 0.0],   # bottom-right
        ])


# Defaults below mirror the reference processing parameters: 15 dB amplitude
# cut, 2 cm / 30 cm cluster spacing bounds, 20 clusters of up to 7 samples,
# energy weights 2/2/4, 1000 optical and 100 refinement RANSAC iterations,
# inlier-ratio tolerance 0.05.
@dataclass
class PipelineConfig:
    """Every tunable of the calibration pipeline, with documented defaults."""

    # Target geometry
    edge_length: float = 0.06
    board_offset: float = 0.025
    styrofoam_radius: float = 0.025
    metal_ball_diameter: float = 0.0025

    # Optical circle detection (two-stage Hough on clamped depth). The
    # radius bounds bracket the silhouette of a 0.025 m sphere over the
    # 0.2..0.65 m working range at fx ~ 300; anything larger is board
    # outline or merged blobs, not a sphere.
    max_range: float = 1.0
    hough_edge_percentile: float = 90.0
    hough_radius_min_px: int = 10
    hough_radius_max_px: int = 34
    hough_max_candidates: int = 12

    # Circle filtering
    color_palette: tuple = (
        (205, 60, 50),
        (60, 160, 70),
        (50, 90, 205),
        (225, 200, 60),
    )
    color_tol: float = 60.0
    size_tol: float = 0.3

    # Sphere localization
    min_depth_pixels: int = 30
    ransac_iters_optical: int = 1000
    t_inl: float = 0.05
    inlier_eps: float = 0.003
    min_inlier_ratio: float = 0.3
    sample_size: int = 4
    seed_optical: int = 0

    # Radar clustering
    t_db: float = 15.0
    t_min: float = 0.02
    t_max: float = 0.30
    n_clusters: int = 20
    m_samples: int = 7

    # Radar target localization (energy search)
    alpha: float = 2.0
    beta: float = 2.0
    gamma: float = 4.0
    plane_eps: float = 0.003
    energy_reject: float = 0.05
    anchor_in_inliers: bool = True

    # Registration / refinement
    scale: float = 1.0
    corr_gate: float = 0.010
    min_correspondences: int = 20
    ransac_iters_refine: int = 100
    seed_refine: int = 0

    # Center ordering conventions (both sensor frames share them; the
    # assumption is the extrinsic rotation keeps them within 90 degrees)
    optical_up: tuple = (0.0, 1.0, 0.0)
    optical_right: tuple = (1.0, 0.0, 0.0)
    radar_up: tuple = (0.0, 1.0, 0.0)
    radar_right: tuple = (1.0, 0.0, 0.0)

    # Scene generation
    seed_scene: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Raise ConfigError if any value is out of its documented range."""
        pos = (
            "edge_length", "board_offset", "styrofoam_radius", "metal_ball_diameter",
            "max_range", "color_tol", "size_tol", "inlier_eps", "t_db", "t_min",
            "t_max", "plane_eps", "energy_reject", "scale", "corr_gate",
        )
        for name in pos:
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v) or v <= 0:
                raise ConfigError(f"{name} must be a finite number > 0, got {v!r}")
            setattr(self, name, float(v))
        ints = {
            "hough_radius_min_px": 1, "hough_radius_max_px": 2, "hough_max_candidates": 4,
            "min_depth_pixels": 4, "ransac_iters_optical": 1, "sample_size": 4,
            "n_clusters": 5, "m_samples": 1, "min_correspondences": 4,
            "ransac_iters_refine": 1,
        }
        for name, lo in ints.items():
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < lo:
                raise ConfigError(f"{name} must be an integer >= {lo}, got {v!r}")
        for name in ("seed_optical", "seed_refine", "seed_scene"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
        if not 0 < self.hough_edge_percentile <= 100:
            raise ConfigError(f"hough_edge_percentile must be in (0, 100], got {self.hough_edge_percentile}")
        if self.hough_radius_max_px <= self.hough_radius_min_px:
            raise ConfigError("hough_radius_max_px must exceed hough_radius_min_px")
        if not 0 <= self.t_inl < 1:
            raise ConfigError(f"t_inl must be in [0, 1), got {self.t_inl}")
        if not 0 < self.min_inlier_ratio <= 1:
            raise ConfigError(f"min_inlier_ratio must be in (0, 1], got {self.min_inlier_ratio}")
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be a finite number >= 0, got {v!r}")
            setattr(self, name, float(v))
        if self.t_max <= self.t_min:
            raise ConfigError("t_max must exceed t_min")
        if not isinstance(self.anchor_in_inliers, bool):
            raise ConfigError("anchor_in_inliers must be a boolean")
        palette = []
        try:
            for entry in self.color_palette:
                rgb = tuple(int(c) for c in entry)
                if len(rgb) != 3 or any(not 0 <= c <= 255 for c in rgb):
                    raise ValueError
                palette.append(rgb)
        except (TypeError, ValueError):
            raise ConfigError(f"color_palette must be a list of RGB triples in 0..255, got {self.color_palette!r}")
        self.color_palette = tuple(palette)
        for name in ("optical_up", "optical_right", "radar_up", "radar_right"):
            v = getattr(self, name)
            try:
                vec = tuple(float(c) for c in v)
            except (TypeError, ValueError):
                raise ConfigError(f"{name} must be a 3-vector, got {v!r}")
            if len(vec) != 3 or not all(math.isfinite(c) for c in vec) or not any(vec):
                raise ConfigError(f"{name} must be a finite nonzero 3-vector, got {v!r}")
            setattr(self, name, vec)

    @property
    def target(self) -> TargetGeometry:
        return TargetGeometry(
            edge_length=self.edge_length,
            board_offset=self.board_offset,
            styrofoam_radius=self.styrofoam_radius,
            metal_ball_diameter=self.metal_ball_diameter,
        )

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = [list(e) if isinstance(e, tuple) else e for e in v]
            out[f.name] = v
        return out


_FIELD_NAMES = {f.name for f in dataclasses.fields(PipelineConfig)}
_TUPLE_FIELDS = {"color_palette", "optical_up", "optical_right", "radar_up", "radar_right"}


def config_from_dict(data: dict) -> PipelineConfig:
    """Build a PipelineConfig from a mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a table, got {type(data).__name__}")
    unknown = sorted(set(data) - _FIELD_NAMES)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(tuple(e) if isinstance(e, list) else e for e in value)
        kwargs[key] = value
    try:
        return PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc


def load_config(path) -> PipelineConfig:
    """Load a TOML config file; unknown keys and bad values raise ConfigError."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return config_from_dict(data)


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize config value {value!r}")


def save_config(config: PipelineConfig, path) -> None:
    """Write a config as flat TOML (round-trips through load_config)."""
    lines = ["# nfcalib pipeline configuration"]
    for key, value in config.to_dict().items():
        lines.append(f"{key} = {_toml_value(value)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def resolve_config(explicit_path=None) -> PipelineConfig:
    """Resolve the active config: explicit path, else $CALIB_CONFIG, else defaults."""
    if explicit_path is not None:
        return load_config(explicit_path)
    env = os.environ.get(ENV_CONFIG_VAR)
    if env:
        return load_config(env)
    return PipelineConfig()
