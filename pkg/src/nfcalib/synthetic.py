"""Synthetic scene generation with exact ground truth.

Every stage of the pipeline can be validated without hardware: the
generator ray-casts an RGB-D view of the sphere target and samples a radar
cloud of the same scene under a known extrinsic, so detected circles,
fitted centers, selected subsets and solved calibrations all have exact
reference values.

The radar clutter profile is an explicit modeling choice and every knob is
a ``SceneSpec`` field:

* each steel ball returns a bright, tight blob;
* each styrofoam sphere adds front-surface scatter including one "glint"
  point brighter than the dimmest ball returns (stressing the assumption
  that the target balls are the brightest scatterers);
* each corner ball casts board-bounce replica blobs displaced along the
  board normal away from the sensor - translated copies of the corner
  square that only the board-offset/anchor energy terms can reject;
* uniform background clutter fills a box around the target.

All randomness derives from ``SceneSpec.seed`` through independent
per-artifact streams, so repeated calls are bit-identical and the depth
and radar renders can be regenerated independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import TargetGeometry
from .errors import SceneError, ValidationError
from .geometry import RigidTransform, rotation_from_axis_angle
from .io_formats import CameraIntrinsics, DepthCapture, RadarCloud

DEFAULT_PALETTE = (
    (205, 60, 50),
    (60, 160, 70),
    (50, 90, 205),
    (225, 200, 60),
)

_BOARD_COLOR = (208, 205, 200)
_BACKGROUND_COLOR = (16, 16, 18)

EVAL_OBJECTS = ("disk", "symbol", "hand")


@dataclass(frozen=True)
class SceneSpec:
    """Full description of one synthetic scene (target + sensors + clutter)."""

    seed: int = 0

    # Optical sensor
    width: int = 320
    height: int = 240
    fx: float = 300.0
    fy: float = 300.0
    cx: float = 159.5
    cy: float = 119.5

    # Ground-truth extrinsic (optical -> radar)
    extrinsic_axis: tuple = (0.3, 1.0, 0.2)
    extrinsic_angle_deg: float = 4.0
    extrinsic_translation: tuple = (0.05, -0.02, 0.01)
    scale: float = 1.0

    # Target placement in the radar frame
    target_distance: float = 0.35
    target_offset: tuple = (0.0, 0.0)
    target_yaw_deg: float = 0.0
    target_pitch_deg: float = 0.0
    target_roll_deg: float = 0.0
    board_half_extent: float = 0.085

    # Optical noise model: sigma grows linearly with depth and is inflated
    # at grazing incidence by 1 / max(0.2, cos(angle to surface normal)).
    depth_noise: float = 0.0
    depth_noise_ref: float = 0.3
    speckle: float = 0.18

    # Radar returns
    radar_jitter: float = 0.0
    ball_points: int = 12
    ball_db: tuple = (-3.0, 0.0)
    styro_points: int = 18
    styro_db: tuple = (-12.0, -5.0)
    glint_db: tuple = (-1.5, -0.5)
    ghost_offsets: tuple = (0.032, 0.055)
    ghost_points: int = 8
    ghost_db: tuple = (-8.0, -5.0)
    clutter_points: int = 60
    clutter_db: tuple = (-20.0, -8.0)
    clutter_extent: tuple = (0.30, 0.30, 0.25)
    range_gate: tuple = (0.20, 0.65)

    # Evaluation / refinement object
    object_distance: float = 0.35
    object_offset: tuple = (0.01, -0.005)
    object_tilt_deg: float = 0.0
    disk_radius: float = 0.06
    object_spacing: float = 0.0011
    object_db: tuple = (-3.0, 0.0)

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.width < 16 or self.height < 16:
            raise ValidationError("image must be at least 16x16 pixels")
        for name in ("fx", "fy", "target_distance", "object_distance",
                     "board_half_extent", "disk_radius", "object_spacing",
                     "depth_noise_ref"):
            if not math.isfinite(getattr(self, name)) or getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0, got {getattr(self, name)!r}")
        for name in ("depth_noise", "radar_jitter", "speckle"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be >= 0, got {v!r}")
        for name in ("ball_points", "styro_points"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.ghost_points < 0 or self.clutter_points < 0:
            raise ValidationError("point counts must be >= 0")
        ext = self.clutter_extent
        if len(ext) != 3 or any(not math.isfinite(e) or e <= 0 for e in ext):
            raise ValidationError(f"clutter_extent must be 3 positive spans, got {ext!r}")
        lo, hi = self.range_gate
        if not 0 < lo < hi:
            raise ValidationError(f"range_gate must satisfy 0 < lo < hi, got {self.range_gate!r}")

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy)

    def extrinsic(self) -> RigidTransform:
        """Ground-truth optical -> radar transform."""
        rot = rotation_from_axis_angle(self.extrinsic_axis, math.radians(self.extrinsic_angle_deg))
        return RigidTransform(rot, np.asarray(self.extrinsic_translation, dtype=np.float64),
                              self.scale)

    def target_to_radar(self) -> RigidTransform:
        """Target frame (x right, y up, z out of the board) -> radar frame."""
        face = rotation_from_axis_angle((0.0, 1.0, 0.0), math.pi)
        tilt = (
            rotation_from_axis_angle((0.0, 0.0, 1.0), math.radians(self.target_roll_deg))
            @ rotation_from_axis_angle((1.0, 0.0, 0.0), math.radians(self.target_pitch_deg))
            @ rotation_from_axis_angle((0.0, 1.0, 0.0), math.radians(self.target_yaw_deg))
        )
        t = np.array([self.target_offset[0], self.target_offset[1], self.target_distance])
        return RigidTransform(tilt @ face, t, 1.0)

    def object_to_radar(self) -> RigidTransform:
        face = rotation_from_axis_angle((0.0, 1.0, 0.0), math.pi)
        tilt = rotation_from_axis_angle((1.0, 0.0, 0.0), math.radians(self.object_tilt_deg))
        t = np.array([self.object_offset[0], self.object_offset[1], self.object_distance])
        return RigidTransform(tilt @ face, t, 1.0)


@dataclass(frozen=True)
class SyntheticScene:
    """One generated calibration scene plus its ground truth."""

    spec: SceneSpec
    extrinsic: RigidTransform
    corners_radar: np.ndarray  # (4, 3), canonical top-left/top-right/bottom-left/bottom-right
    anchor_radar: np.ndarray   # (3,)
    capture: DepthCapture
    cloud: RadarCloud


def _streams(spec: SceneSpec) -> list[np.random.Generator]:
    seq = np.random.SeedSequence(int(spec.seed))
    return [np.random.Generator(np.random.PCG64(c)) for c in seq.spawn(3)]


def _order_canonical(corners: np.ndarray) -> np.ndarray:
    """Order 4 corners top-left/top-right/bottom-left/bottom-right using the
    default up (0,1,0) / right (1,0,0) convention."""
    up_proj = corners[:, 1]
    order = np.argsort(-up_proj, kind="stable")
    top, bottom = sorted(order[:2], key=lambda i: corners[i, 0]), \
        sorted(order[2:], key=lambda i: corners[i, 0])
    return corners[[top[0], top[1], bottom[0], bottom[1]]]


def ball_positions_radar(spec: SceneSpec, geom: TargetGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth metal ball centers in the radar frame.

    Returns (corners (4,3) in canonical order, anchor (3,)).
    """
    pose = spec.target_to_radar()
    corners = pose.apply(geom.corner_local_coords())
    anchor = pose.apply(np.array([0.0, 0.0, -geom.board_offset]))
    return _order_canonical(corners), anchor


# ---------------------------------------------------------------------------
# Scene feasibility


def _require_in_frustum(spec: SceneSpec, points_optical: np.ndarray, what: str) -> None:
    """Reject scenes whose key points fall outside the camera frustum."""
    pts = np.atleast_2d(points_optical)
    z = pts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = spec.cx + spec.fx * pts[:, 0] / z
        v = spec.cy + spec.fy * pts[:, 1] / z
    ok = (z > 0) & (u >= 0) & (u <= spec.width - 1) & (v >= 0) & (v <= spec.height - 1)
    if not np.all(ok):
        raise SceneError(f"{what} outside the camera frustum "
                         f"({int(np.count_nonzero(~ok))} of {len(pts)} key points)")


def _require_in_gate(spec: SceneSpec, points_radar: np.ndarray, what: str) -> None:
    """Reject scenes whose key points violate the radar range gate."""
    pts = np.atleast_2d(points_radar)
    lo, hi = spec.range_gate
    ok = (pts[:, 2] >= lo) & (pts[:, 2] <= hi)
    if not np.all(ok):
        raise SceneError(f"{what} outside the radar range gate [{lo:g}, {hi:g}] m "
                         f"({int(np.count_nonzero(~ok))} of {len(pts)} key points)")


# ---------------------------------------------------------------------------
# Depth rendering


def _ray_grid(spec: SceneSpec) -> np.ndarray:
    u = np.arange(spec.width, dtype=np.float64)
    v = np.arange(spec.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    dirs = np.stack([(uu - spec.cx) / spec.fx, (vv - spec.cy) / spec.fy,
                     np.ones_like(uu)], axis=-1)
    return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)


def _intersect_sphere(dirs: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Smallest positive ray parameter per pixel; +inf where the ray misses."""
    b = dirs @ center
    disc = b * b - (center @ center - radius * radius)
    with np.errstate(invalid="ignore"):
        t = b - np.sqrt(disc)
    t = np.where((disc > 0) & (t > 1e-9), t, np.inf)
    return t


def _intersect_plane(dirs: np.ndarray, pose_optical: RigidTransform,
                     bounds_fn) -> tuple[np.ndarray, np.ndarray]:
    """Ray/plane intersection for the z=0 plane of a posed local frame.

    Returns (t, normal) where ``bounds_fn`` decides membership from local
    (x, y) coordinates of the hit.
    """
    normal = pose_optical.rotation[:, 2]
    origin = pose_optical.translation
    denom = dirs @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (origin @ normal) / denom
    t = np.where((np.abs(denom) > 1e-12) & (t > 1e-9), t, np.inf)
    hit = t[..., None] * dirs
    finite = np.isfinite(t)
    local_x = np.where(finite, (hit - origin) @ pose_optical.rotation[:, 0], 0.0)
    local_y = np.where(finite, (hit - origin) @ pose_optical.rotation[:, 1], 0.0)
    inside = finite & bounds_fn(local_x, local_y)
    return np.where(inside, t, np.inf), normal


def _apply_depth_noise(depth: np.ndarray, cos_incidence: np.ndarray, spec: SceneSpec,
                       rng: np.random.Generator) -> np.ndarray:
    if spec.depth_noise <= 0:
        return depth
    valid = depth > 0
    sigma = spec.depth_noise * (depth / spec.depth_noise_ref)
    sigma = sigma / np.maximum(0.2, cos_incidence)
    noisy = depth + rng.standard_normal(depth.shape) * sigma
    return np.where(valid, np.maximum(noisy, 1e-6), 0.0)


def _speckle_rgb(base: np.ndarray, spec: SceneSpec, rng: np.random.Generator,
                 textured: np.ndarray) -> np.ndarray:
    factor = 1.0 + spec.speckle * (rng.random(base.shape[:2]) * 2.0 - 1.0)
    out = base.astype(np.float64)
    out[textured] *= factor[textured, None]
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def render_depth_capture(spec: SceneSpec, geom: TargetGeometry = TargetGeometry(),
                         palette: tuple = DEFAULT_PALETTE) -> DepthCapture:
    """Ray-cast the RGB-D view of the calibration target.

    Four colored styrofoam spheres in front of a gray board; background
    pixels carry the invalid-depth sentinel 0. Depth values are z along the
    optical axis in meters.
    """
    if len(palette) < 4:
        raise ValidationError("palette needs at least 4 colors for the target spheres")
    rng = _streams(spec)[0]
    extrinsic_inv = spec.extrinsic().inverse()
    target_opt = extrinsic_inv.compose(spec.target_to_radar())
    corners_opt = target_opt.apply(geom.corner_local_coords())
    _require_in_frustum(spec, corners_opt, "target sphere centers")

    dirs = _ray_grid(spec)
    half = spec.board_half_extent
    board_t, board_normal = _intersect_plane(
        dirs,
        # Board plane sits board_offset behind the sphere centers.
        target_opt.compose(RigidTransform(np.eye(3), np.array([0.0, 0.0, -geom.board_offset]))),
        lambda x, y: (np.abs(x) <= half) & (np.abs(y) <= half),
    )

    t_best = board_t
    obj_id = np.where(np.isfinite(board_t), 4, -1)
    for i, center in enumerate(corners_opt):
        t_s = _intersect_sphere(dirs, center, geom.styrofoam_radius)
        closer = t_s < t_best
        t_best = np.where(closer, t_s, t_best)
        obj_id = np.where(closer, i, obj_id)

    hit = np.isfinite(t_best)
    points = np.where(hit, t_best, 0.0)[..., None] * dirs
    depth = np.where(hit, points[..., 2], 0.0)

    # Per-pixel cosine of incidence for the grazing-noise inflation.
    cosi = np.ones_like(depth)
    for i, center in enumerate(corners_opt):
        mask = obj_id == i
        normals = (points - center) / geom.styrofoam_radius
        cosi = np.where(mask, np.abs(np.sum(normals * dirs, axis=-1)), cosi)
    cosi = np.where(obj_id == 4, np.abs(dirs @ board_normal), cosi)

    depth = _apply_depth_noise(depth, np.clip(cosi, 1e-3, 1.0), spec, rng)

    rgb = np.zeros((spec.height, spec.width, 3), dtype=np.float64)
    rgb[...] = _BACKGROUND_COLOR
    rgb[obj_id == 4] = _BOARD_COLOR
    for i in range(4):
        rgb[obj_id == i] = palette[i]
    rgb = _speckle_rgb(rgb, spec, rng, obj_id >= 0)
    return DepthCapture(depth, rgb, spec.intrinsics())


# ---------------------------------------------------------------------------
# Radar rendering


def _uniform_db(rng: np.random.Generator, db_range: tuple, n: int) -> np.ndarray:
    lo, hi = float(db_range[0]), float(db_range[1])
    return rng.uniform(lo, hi, size=n)


def _front_directions(rng: np.random.Generator, toward_sensor: np.ndarray, n: int,
                      max_angle_deg: float = 90.0) -> np.ndarray:
    """Random unit vectors within ``max_angle_deg`` of ``toward_sensor``."""
    out = np.empty((n, 3))
    cos_lim = math.cos(math.radians(max_angle_deg))
    count = 0
    while count < n:
        v = rng.standard_normal((2 * (n - count) + 8, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        keep = v @ toward_sensor >= cos_lim
        sel = v[keep][: n - count]
        out[count:count + len(sel)] = sel
        count += len(sel)
    return out


def render_radar_cloud(spec: SceneSpec, geom: TargetGeometry = TargetGeometry()) -> RadarCloud:
    """Sample the radar return of the calibration target scene (radar frame).

    Emits ball blobs, styrofoam front-surface scatter with one bright glint
    per sphere, board-bounce replicas of the corner blobs, and uniform
    background clutter, then applies the range gate and peak-normalizes.
    """
    rng = _streams(spec)[1]
    corners, anchor = ball_positions_radar(spec, geom)
    _require_in_gate(spec, np.vstack([corners, anchor[None, :]]), "target ball centers")
    center = corners.mean(axis=0)
    # Board normal pointing away from the sensor (from corners toward anchor).
    n_away = anchor - center
    n_away = n_away / np.linalg.norm(n_away)

    pts, dbs = [], []

    def blob(base: np.ndarray, count: int, db_range: tuple):
        jitter = rng.standard_normal((count, 3)) * spec.radar_jitter
        pts.append(base[None, :] + jitter)
        dbs.append(_uniform_db(rng, db_range, count))

    for c in corners:
        blob(c, spec.ball_points, spec.ball_db)
    blob(anchor, spec.ball_points, spec.ball_db)

    for c in corners:
        toward = -c / np.linalg.norm(c)
        dirs = _front_directions(rng, toward, spec.styro_points, 90.0)
        scatter = c[None, :] + geom.styrofoam_radius * dirs \
            + rng.standard_normal((spec.styro_points, 3)) * spec.radar_jitter
        pts.append(scatter)
        dbs.append(_uniform_db(rng, spec.styro_db, spec.styro_points))
        glint_dir = _front_directions(rng, toward, 1, 12.0)[0]
        glint = c + geom.styrofoam_radius * glint_dir \
            + rng.standard_normal(3) * spec.radar_jitter
        pts.append(glint[None, :])
        dbs.append(_uniform_db(rng, spec.glint_db, 1))

    for offset in spec.ghost_offsets:
        for c in corners:
            blob(c + float(offset) * n_away, spec.ghost_points, spec.ghost_db)

    if spec.clutter_points > 0:
        ext = np.asarray(spec.clutter_extent, dtype=np.float64)
        clutter = center[None, :] + (rng.random((spec.clutter_points, 3)) - 0.5) * ext
        pts.append(clutter)
        dbs.append(_uniform_db(rng, spec.clutter_db, spec.clutter_points))

    points = np.vstack(pts)
    db = np.concatenate(dbs)
    lo, hi = spec.range_gate
    keep = (points[:, 2] >= lo) & (points[:, 2] <= hi)
    points, db = points[keep], db[keep]
    return RadarCloud.from_confidence(points, 10.0 ** (db / 20.0))


def generate_scene(spec: SceneSpec, geom: TargetGeometry = TargetGeometry(),
                   palette: tuple = DEFAULT_PALETTE) -> SyntheticScene:
    """Render both sensor views of one scene along with its ground truth."""
    corners, anchor = ball_positions_radar(spec, geom)
    return SyntheticScene(
        spec=spec,
        extrinsic=spec.extrinsic(),
        corners_radar=corners,
        anchor_radar=anchor,
        capture=render_depth_capture(spec, geom, palette),
        cloud=render_radar_cloud(spec, geom),
    )


# ---------------------------------------------------------------------------
# Evaluation objects


def _symbol_bounds(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Plus-sign cutout: two crossed bars."""
    return ((np.abs(x) <= 0.06) & (np.abs(y) <= 0.02)) | \
        ((np.abs(y) <= 0.06) & (np.abs(x) <= 0.02))


def _hand_spheres(pose: RigidTransform) -> list[tuple[np.ndarray, float]]:
    """Union-of-spheres hand proxy: one palm plus five three-segment fingers."""
    spheres = [(pose.apply(np.zeros(3)), 0.038)]
    for angle_deg in (-44.0, -22.0, 0.0, 22.0, 44.0):
        a = math.radians(angle_deg)
        direction = np.array([math.sin(a), math.cos(a), 0.0])
        for k in range(1, 4):
            local = direction * (0.038 + 0.019 * k)
            spheres.append((pose.apply(local), 0.011))
    return spheres


def _sample_symbol_grid(rng: np.random.Generator, spacing: float, bounds_fn,
                        half_extent: float) -> np.ndarray:
    ax = np.arange(-half_extent, half_extent + spacing / 2, spacing)
    xx, yy = np.meshgrid(ax, ax)
    xx = xx + (rng.random(xx.shape) - 0.5) * spacing * 0.5
    yy = yy + (rng.random(yy.shape) - 0.5) * spacing * 0.5
    mask = bounds_fn(xx, yy)
    return np.stack([xx[mask], yy[mask], np.zeros(mask.sum())], axis=1)


def render_eval_object(spec: SceneSpec, kind: str = "disk",
                       geom: TargetGeometry = TargetGeometry()) -> tuple[DepthCapture, RadarCloud]:
    """Render one evaluation object in both modalities under the shared extrinsic.

    ``disk``: a flat metal disk (also the refinement plate); ``symbol``: a
    flat plus-shaped cutout; ``hand``: a union-of-spheres hand proxy whose
    radar samples keep only surface points within 60 degrees of facing the
    sensor. The optical background is invalid (no board), so every valid
    depth pixel belongs to the object.
    """
    if kind not in EVAL_OBJECTS:
        raise ValidationError(f"unknown evaluation object {kind!r} (choose from {EVAL_OBJECTS})")
    rng = _streams(spec)[2]
    pose_radar = spec.object_to_radar()
    extrinsic = spec.extrinsic()
    pose_opt = extrinsic.inverse().compose(pose_radar)
    _require_in_frustum(spec, pose_opt.translation, "evaluation object center")
    _require_in_gate(spec, pose_radar.translation, "evaluation object center")
    dirs = _ray_grid(spec)

    if kind in ("disk", "symbol"):
        if kind == "disk":
            radius = spec.disk_radius
            bounds = lambda x, y: x * x + y * y <= radius * radius
            half = radius
        else:
            bounds = _symbol_bounds
            half = 0.06
        t, normal = _intersect_plane(dirs, pose_opt, bounds)
        hit = np.isfinite(t)
        depth = np.where(hit, t * dirs[..., 2], 0.0)
        cosi = np.where(hit, np.abs(dirs @ normal), 1.0)
        obj_mask = hit

        local = _sample_symbol_grid(rng, spec.object_spacing, bounds, half)
        radar_pts = pose_radar.apply(local)
    else:
        spheres_opt = _hand_spheres(pose_opt)
        spheres_radar = _hand_spheres(pose_radar)
        t_best = np.full(dirs.shape[:2], np.inf)
        idx = np.full(dirs.shape[:2], -1)
        for i, (c, r) in enumerate(spheres_opt):
            t_s = _intersect_sphere(dirs, c, r)
            closer = t_s < t_best
            t_best = np.where(closer, t_s, t_best)
            idx = np.where(closer, i, idx)
        hit = np.isfinite(t_best)
        t_fill = np.where(hit, t_best, 0.0)
        depth = t_fill * dirs[..., 2]
        pts3 = t_fill[..., None] * dirs
        cosi = np.ones_like(depth)
        for i, (c, r) in enumerate(spheres_opt):
            mask = idx == i
            normals = (pts3 - c) / r
            cosi = np.where(mask, np.abs(np.sum(normals * dirs, axis=-1)), cosi)
        obj_mask = hit

        samples = []
        density = 1.0 / (spec.object_spacing ** 2) * 0.22
        for c, r in spheres_radar:
            toward = -c / np.linalg.norm(c)
            count = max(8, int(4 * math.pi * r * r * density))
            dirs_s = _front_directions(rng, toward, count, 60.0)
            p = c[None, :] + r * dirs_s
            inside_other = np.zeros(len(p), dtype=bool)
            for c2, r2 in spheres_radar:
                if c2 is c:
                    continue
                inside_other |= np.linalg.norm(p - c2, axis=1) < r2 - 1e-9
            samples.append(p[~inside_other])
        radar_pts = np.vstack(samples)

    depth = _apply_depth_noise(depth, np.clip(cosi, 1e-3, 1.0), spec, rng)
    rgb = np.zeros((spec.height, spec.width, 3), dtype=np.float64)
    rgb[...] = _BACKGROUND_COLOR
    rgb[obj_mask] = (180, 180, 185)
    rgb = _speckle_rgb(rgb, spec, rng, obj_mask)
    capture = DepthCapture(depth, rgb, spec.intrinsics())

    if spec.radar_jitter > 0:
        radar_pts = radar_pts + rng.standard_normal(radar_pts.shape) * spec.radar_jitter
    db = _uniform_db(rng, spec.object_db, len(radar_pts))
    lo, hi = spec.range_gate
    keep = (radar_pts[:, 2] >= lo) & (radar_pts[:, 2] <= hi)
    cloud = RadarCloud.from_confidence(radar_pts[keep], 10.0 ** (db[keep] / 20.0))
    return capture, cloud
