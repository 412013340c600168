"""On-disk formats and their loaders/savers.

Formats are deliberately small and diffable:

* Capture bundle: a directory with ``depth.f32`` (4-line text header +
  row-major little-endian float32 payload), ``rgb.ppm`` (binary P6) and
  ``intrinsics.txt`` (fx, fy, cx, cy, one per line).
* Radar cloud: PLY (ascii or binary little-endian) with float ``x y z
  confidence`` per vertex. The header must declare its length unit in a
  comment; values are converted to meters on load and amplitudes are
  peak-normalized to dB (maximum = 0 dB).
* Calibration: a text file with the rotation (row-major), translation,
  scale and residuals, plus a JSON mirror written next to it.

Every loader raises only ``CalibError`` subclasses on bad bytes; parsing
surprises are wrapped, never propagated raw.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyInput, MalformedInput, ValidationError
from .geometry import RigidTransform, as_points

DEPTH_MAGIC = "NFDEPTH1"
DEPTH_NAME = "depth.f32"
RGB_NAME = "rgb.ppm"
INTRINSICS_NAME = "intrinsics.txt"

_UNIT_SCALES = {"meters": 1.0, "millimeters": 1e-3, "centimeters": 1e-2}
_MAX_PIXELS = 50_000_000  # parser guard against absurd mutated headers

# Exceptions a parser may hit on arbitrary bytes; anything else is a bug.
_PARSE_ERRORS = (ValueError, KeyError, IndexError, OverflowError, UnicodeDecodeError, EOFError)


def _fmt(x: float) -> str:
    """Shortest exact decimal representation (round-trips bit-identically)."""
    return repr(float(x))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValidationError(f"intrinsics {name} must be finite, got {v}")
            object.__setattr__(self, name, v)
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be > 0")

    def backproject(self, u, v, z) -> np.ndarray:
        """Pixel coordinates + depth (z along the optical axis) -> 3D points."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        x = (u - self.cx) * z / self.fx
        y = (v - self.cy) * z / self.fy
        return np.stack([x, y, np.broadcast_to(z, x.shape)], axis=-1)

    def project(self, points) -> np.ndarray:
        """3D points -> (u, v) pixel coordinates. Columns with z <= 0 are NaN."""
        pts = as_points(points)
        z = pts[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(z > 0, self.fx * pts[:, 0] / z + self.cx, np.nan)
            v = np.where(z > 0, self.fy * pts[:, 1] / z + self.cy, np.nan)
        return np.stack([u, v], axis=-1)


@dataclass(frozen=True)
class DepthCapture:
    """A single RGB-D frame: depth in meters (0 = invalid), color, intrinsics."""

    depth: np.ndarray
    rgb: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        if depth.ndim != 2 or depth.size == 0:
            raise ValidationError(f"depth must be a non-empty 2D array, got shape {depth.shape}")
        if not np.all(np.isfinite(depth)) or np.any(depth < 0):
            raise ValidationError("depth must be finite and >= 0 (0 marks invalid pixels)")
        rgb = np.asarray(self.rgb, dtype=np.uint8)
        if rgb.shape != depth.shape + (3,):
            raise ValidationError(
                f"rgb shape {rgb.shape} does not match depth shape {depth.shape} + (3,)")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "rgb", rgb)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True)
class RadarCloud:
    """Radar point cloud in meters with peak-normalized amplitudes.

    ``amplitude_db`` has maximum exactly 0 (the strongest return) and
    ``confidence`` is its linear counterpart ``10^(dB/20)`` in (0, 1].
    """

    points: np.ndarray
    amplitude_db: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        pts = as_points(self.points, "radar points")
        if pts.shape[0] == 0:
            raise EmptyInput("radar cloud has no points")
        db = np.asarray(self.amplitude_db, dtype=np.float64).reshape(-1)
        conf = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        if len(db) != len(pts) or len(conf) != len(pts):
            raise ValidationError("points, amplitude_db and confidence lengths differ")
        if not np.all(np.isfinite(db)) or not np.all(np.isfinite(conf)):
            raise ValidationError("amplitudes must be finite")
        if abs(db.max()) > 1e-9:
            raise ValidationError(f"amplitude_db must be peak-normalized (max 0), got max {db.max()}")
        if conf.min() <= 0 or conf.max() > 1 + 1e-9:
            raise ValidationError("confidence must lie in (0, 1]")
        if np.max(np.abs(conf - 10.0 ** (db / 20.0))) > 1e-6:
            raise ValidationError("confidence is inconsistent with amplitude_db")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "amplitude_db", db)
        object.__setattr__(self, "confidence", conf)

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def from_confidence(cls, points, confidence) -> "RadarCloud":
        """Build a cloud from raw (unnormalized) positive confidences."""
        conf = np.asarray(confidence, dtype=np.float64).reshape(-1)
        if conf.size == 0:
            raise EmptyInput("radar cloud has no points")
        if not np.all(np.isfinite(conf)) or conf.min() <= 0:
            raise MalformedInput("confidence values must be finite and > 0")
        norm = conf / conf.max()
        db = 20.0 * np.log10(norm)
        db[np.argmax(conf)] = 0.0  # exact peak, no log round-off
        return cls(points, db, norm)


@dataclass(frozen=True)
class RigidCalibration:
    """A solved extrinsic (optical -> radar) plus its fit residuals."""

    transform: RigidTransform
    residual_rmse: float
    per_point_residuals: np.ndarray

    def __post_init__(self):
        if not isinstance(self.transform, RigidTransform):
            raise ValidationError("transform must be a RigidTransform")
        res = np.asarray(self.per_point_residuals, dtype=np.float64).reshape(-1)
        if res.size == 0 or not np.all(np.isfinite(res)) or np.any(res < 0):
            raise ValidationError("per-point residuals must be finite and >= 0")
        rmse = float(self.residual_rmse)
        expect = math.sqrt(float(np.mean(res ** 2)))
        if not math.isfinite(rmse) or abs(rmse - expect) > 1e-12 + 1e-9 * expect:
            raise ValidationError(
                f"residual_rmse {rmse} inconsistent with per-point residuals (expect {expect})")
        object.__setattr__(self, "residual_rmse", rmse)
        object.__setattr__(self, "per_point_residuals", res)


# ---------------------------------------------------------------------------
# Capture bundle


def save_depth(depth: np.ndarray, path, scale: float = 1.0) -> None:
    """Write a depth map as text header + row-major little-endian float32."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValidationError(f"depth must be 2D, got shape {depth.shape}")
    h, w = depth.shape
    header = f"{DEPTH_MAGIC}\nwidth {w}\nheight {h}\nscale {_fmt(scale)}\n"
    payload = (depth / float(scale)).astype("<f4").tobytes()
    Path(path).write_bytes(header.encode("ascii") + payload)


def load_depth(path) -> np.ndarray:
    """Read a ``depth.f32`` file back to a float64 depth map in meters.

    Non-finite stored values are mapped to 0 (the invalid-pixel sentinel).
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise MalformedInput(f"cannot read depth file {path}: {exc}") from exc
    try:
        # Header is exactly 4 newline-terminated ASCII lines.
        idx = 0
        fields = {}
        for lineno in range(4):
            end = raw.index(b"\n", idx)
            line = raw[idx:end].decode("ascii")
            idx = end + 1
            if lineno == 0:
                if line != DEPTH_MAGIC:
                    raise MalformedInput(f"bad depth magic {line!r}")
            else:
                key, _, value = line.partition(" ")
                fields[key] = value
        width = int(fields["width"])
        height = int(fields["height"])
        scale = float(fields["scale"])
    except MalformedInput:
        raise
    except _PARSE_ERRORS as exc:
        raise MalformedInput(f"malformed depth header in {path}: {exc}") from exc
    if width <= 0 or height <= 0 or width * height > _MAX_PIXELS:
        raise MalformedInput(f"implausible depth dimensions {width}x{height}")
    if not math.isfinite(scale) or scale <= 0:
        raise MalformedInput(f"depth scale must be finite and > 0, got {scale}")
    payload = raw[idx:]
    expected = width * height * 4
    if len(payload) != expected:
        raise MalformedInput(
            f"depth payload has {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(height, width)
    values = np.where(np.isfinite(values), values, 0.0)
    if np.any(values < 0):
        raise MalformedInput("depth payload contains negative values")
    return values * scale


def _save_ppm(rgb: np.ndarray, path) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValidationError(f"rgb must have shape (H, W, 3), got {rgb.shape}")
    h, w = rgb.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())


def _load_ppm(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise MalformedInput(f"cannot read image {path}: {exc}") from exc
    try:
        if not raw.startswith(b"P6"):
            raise MalformedInput(f"unsupported image format in {path} (want binary P6)")
        # Header tokens: magic, width, height, maxval; comments start with '#'.
        tokens = []
        idx = 0
        while len(tokens) < 4:
            end_candidates = [raw.index(d, idx) for d in (b" ", b"\n", b"\t", b"\r") if d in raw[idx:]]
            if not end_candidates:
                raise MalformedInput(f"truncated image header in {path}")
            end = min(end_candidates)
            token = raw[idx:end]
            idx = end + 1
            if token.startswith(b"#"):
                idx = raw.index(b"\n", end) + 1
                continue
            if token:
                tokens.append(token)
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except MalformedInput:
        raise
    except _PARSE_ERRORS as exc:
        raise MalformedInput(f"malformed image header in {path}: {exc}") from exc
    if maxval != 255:
        raise MalformedInput(f"unsupported maxval {maxval} in {path}")
    if w <= 0 or h <= 0 or w * h > _MAX_PIXELS:
        raise MalformedInput(f"implausible image dimensions {w}x{h}")
    payload = raw[idx:]
    if len(payload) != w * h * 3:
        raise MalformedInput(f"image payload has {len(payload)} bytes, expected {w * h * 3}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()


def save_capture_bundle(capture: DepthCapture, dir_path) -> None:
    """Write a capture bundle directory (created if missing)."""
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    save_depth(capture.depth, d / DEPTH_NAME)
    _save_ppm(capture.rgb, d / RGB_NAME)
    intr = capture.intrinsics
    lines = [_fmt(v) for v in (intr.fx, intr.fy, intr.cx, intr.cy)]
    (d / INTRINSICS_NAME).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_capture_bundle(dir_path) -> DepthCapture:
    """Read a capture bundle directory back to a DepthCapture."""
    d = Path(dir_path)
    if not d.is_dir():
        raise MalformedInput(f"capture bundle {d} is not a directory")
    depth = load_depth(d / DEPTH_NAME)
    rgb = _load_ppm(d / RGB_NAME)
    try:
        text = (d / INTRINSICS_NAME).read_text(encoding="ascii")
    except OSError as exc:
        raise MalformedInput(f"cannot read intrinsics in {d}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise MalformedInput(f"intrinsics in {d} are not ASCII: {exc}") from exc
    try:
        values = [float(line) for line in text.split()]
    except ValueError as exc:
        raise MalformedInput(f"malformed intrinsics in {d}: {exc}") from exc
    if len(values) != 4:
        raise MalformedInput(f"intrinsics need 4 values (fx fy cx cy), got {len(values)}")
    try:
        intr = CameraIntrinsics(*values)
        return DepthCapture(depth, rgb, intr)
    except ValidationError:
        raise
    except _PARSE_ERRORS as exc:  # pragma: no cover - defensive
        raise MalformedInput(f"invalid capture bundle {d}: {exc}") from exc


# ---------------------------------------------------------------------------
# PLY


def write_ply(path, properties: dict, binary: bool = False, comments: tuple = ()) -> None:
    """Write one vertex element with float64 properties (insertion order kept)."""
    names = list(properties)
    if not names:
        raise ValidationError("PLY needs at least one property")
    cols = [np.asarray(properties[n], dtype=np.float64).reshape(-1) for n in names]
    n = len(cols[0])
    if any(len(c) != n for c in cols):
        raise ValidationError("PLY property columns differ in length")
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0"]
    header += [f"comment {c}" for c in comments]
    header.append(f"element vertex {n}")
    header += [f"property double {name}" for name in names]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    if binary:
        table = np.stack(cols, axis=1).astype("<f8")
        Path(path).write_bytes(head + table.tobytes())
    else:
        rows = "\n".join(" ".join(_fmt(c[i]) for c in cols) for i in range(n))
        Path(path).write_bytes(head + rows.encode("ascii") + (b"\n" if n else b""))


def read_ply(path) -> tuple[dict, list[str]]:
    """Read a single-element PLY with float/double vertex properties.

    Returns (properties dict of float64 arrays, list of comment strings).
    Anything beyond that subset (lists, extra elements, big-endian data)
    raises MalformedInput.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise MalformedInput(f"cannot read PLY {path}: {exc}") from exc
    marker = b"end_header\n"
    pos = raw.find(marker)
    if not raw.startswith(b"ply") or pos < 0:
        raise MalformedInput(f"{path} is not a PLY file")
    try:
        header_lines = raw[:pos].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise MalformedInput(f"PLY header in {path} is not ASCII: {exc}") from exc
    body = raw[pos + len(marker):]

    fmt = None
    comments: list[str] = []
    count = None
    names: list[str] = []
    dtypes: list[str] = []
    try:
        for line in header_lines[1:]:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "format":
                if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                    raise MalformedInput(f"unsupported PLY format line {line!r}")
                fmt = parts[1]
            elif parts[0] == "comment":
                comments.append(line.partition(" ")[2])
            elif parts[0] == "element":
                if count is not None or len(parts) != 3 or parts[1] != "vertex":
                    raise MalformedInput(f"unsupported PLY element line {line!r}")
                count = int(parts[2])
            elif parts[0] == "property":
                if count is None or len(parts) != 3:
                    raise MalformedInput(f"unsupported PLY property line {line!r}")
                kind, name = parts[1], parts[2]
                if kind in ("float", "float32"):
                    dtypes.append("<f4")
                elif kind in ("double", "float64"):
                    dtypes.append("<f8")
                else:
                    raise MalformedInput(f"unsupported PLY property type {kind!r}")
                names.append(name)
            elif parts[0] in ("ply", "end_header"):
                pass
            else:
                raise MalformedInput(f"unsupported PLY header line {line!r}")
    except MalformedInput:
        raise
    except _PARSE_ERRORS as exc:
        raise MalformedInput(f"malformed PLY header in {path}: {exc}") from exc
    if fmt is None or count is None or not names:
        raise MalformedInput(f"incomplete PLY header in {path}")
    if count < 0 or count > _MAX_PIXELS:
        raise MalformedInput(f"implausible PLY vertex count {count}")
    if len(set(names)) != len(names):
        raise MalformedInput("duplicate PLY property names")

    if fmt == "binary_little_endian":
        dtype = np.dtype([(n, d) for n, d in zip(names, dtypes)])
        expected = count * dtype.itemsize
        if len(body) != expected:
            raise MalformedInput(
                f"PLY payload has {len(body)} bytes, expected {expected}")
        table = np.frombuffer(body, dtype=dtype)
        props = {n: table[n].astype(np.float64) for n in names}
    else:
        try:
            text = body.decode("ascii")
        except UnicodeDecodeError as exc:
            raise MalformedInput(f"PLY ascii payload is not ASCII: {exc}") from exc
        rows = text.split()
        if len(rows) != count * len(names):
            raise MalformedInput(
                f"PLY ascii payload has {len(rows)} values, expected {count * len(names)}")
        try:
            flat = np.array([float(v) for v in rows], dtype=np.float64)
        except _PARSE_ERRORS as exc:
            raise MalformedInput(f"malformed PLY ascii value: {exc}") from exc
        table = flat.reshape(count, len(names)) if count else flat.reshape(0, len(names))
        props = {n: table[:, i].copy() for i, n in enumerate(names)}
        for n, d in zip(names, dtypes):
            if d == "<f4":
                props[n] = props[n].astype(np.float32).astype(np.float64)
    if any(not np.all(np.isfinite(props[n])) for n in names):
        raise MalformedInput("PLY payload contains non-finite values")
    return props, comments


def save_radar_cloud(cloud: RadarCloud, path, binary: bool = False) -> None:
    """Write a radar cloud as PLY in meters (units declared in the header)."""
    write_ply(
        path,
        {
            "x": cloud.points[:, 0],
            "y": cloud.points[:, 1],
            "z": cloud.points[:, 2],
            "confidence": cloud.confidence,
        },
        binary=binary,
        comments=("units meters",),
    )


def load_radar_cloud(path) -> RadarCloud:
    """Read a radar PLY; requires x/y/z/confidence and a units declaration."""
    props, comments = read_ply(path)
    units = None
    for c in comments:
        parts = c.split()
        if len(parts) == 2 and parts[0] == "units":
            units = parts[1]
    if units is None:
        raise MalformedInput(f"radar PLY {path} lacks a 'comment units <unit>' declaration")
    if units not in _UNIT_SCALES:
        raise MalformedInput(f"unsupported radar PLY units {units!r}")
    missing = [n for n in ("x", "y", "z", "confidence") if n not in props]
    if missing:
        raise MalformedInput(f"radar PLY {path} lacks properties: {', '.join(missing)}")
    n = len(props["x"])
    if n == 0:
        raise EmptyInput(f"radar PLY {path} has no points")
    scale = _UNIT_SCALES[units]
    points = np.stack([props["x"], props["y"], props["z"]], axis=1) * scale
    try:
        return RadarCloud.from_confidence(points, props["confidence"])
    except ValidationError as exc:
        raise MalformedInput(f"invalid radar cloud in {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Calibration files

_CALIB_KEYS = ("rotation", "translation", "scale", "residual_rmse", "per_point_residuals")


def save_calibration(calib: RigidCalibration, path) -> None:
    """Write the calibration text file plus a JSON mirror at ``<path>.json``."""
    t = calib.transform
    lines = [
        "# nfcalib extrinsic calibration (optical -> radar): p_r = R @ (s * p_o) + t",
        "rotation: " + " ".join(_fmt(v) for v in t.rotation.reshape(-1)),
        "translation: " + " ".join(_fmt(v) for v in t.translation),
        "scale: " + _fmt(t.scale),
        "residual_rmse: " + _fmt(calib.residual_rmse),
        "per_point_residuals: " + " ".join(_fmt(v) for v in calib.per_point_residuals),
    ]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    mirror = {
        "rotation": [[float(v) for v in row] for row in t.rotation],
        "translation": [float(v) for v in t.translation],
        "scale": t.scale,
        "residual_rmse": calib.residual_rmse,
        "per_point_residuals": [float(v) for v in calib.per_point_residuals],
    }
    Path(str(path) + ".json").write_text(
        json.dumps(mirror, indent=2, sort_keys=True) + "\n", encoding="ascii")


def _calibration_from_fields(fields: dict) -> RigidCalibration:
    rot = np.asarray(fields["rotation"], dtype=np.float64).reshape(3, 3)
    trans = np.asarray(fields["translation"], dtype=np.float64).reshape(3)
    transform = RigidTransform(rot, trans, float(fields["scale"]))
    return RigidCalibration(
        transform,
        float(fields["residual_rmse"]),
        np.asarray(fields["per_point_residuals"], dtype=np.float64),
    )


def load_calibration(path) -> RigidCalibration:
    """Read a calibration file (text, or the JSON mirror if given a .json path)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except OSError as exc:
        raise MalformedInput(f"cannot read calibration {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise MalformedInput(f"calibration {path} is not ASCII: {exc}") from exc
    try:
        if path.suffix == ".json":
            data = json.loads(text)
            if not isinstance(data, dict):
                raise MalformedInput("calibration JSON root must be an object")
            missing = [k for k in _CALIB_KEYS if k not in data]
            if missing:
                raise MalformedInput(f"calibration JSON lacks keys: {', '.join(missing)}")
            return _calibration_from_fields(data)
        fields: dict = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition(":")
            key = key.strip()
            if not sep or key not in _CALIB_KEYS:
                raise MalformedInput(f"unexpected calibration line {line!r}")
            if key in fields:
                raise MalformedInput(f"duplicate calibration key {key!r}")
            fields[key] = [float(v) for v in value.split()]
        missing = [k for k in _CALIB_KEYS if k not in fields]
        if missing:
            raise MalformedInput(f"calibration lacks keys: {', '.join(missing)}")
        if len(fields["rotation"]) != 9 or len(fields["translation"]) != 3:
            raise MalformedInput("calibration rotation/translation have wrong arity")
        if len(fields["scale"]) != 1 or len(fields["residual_rmse"]) != 1:
            raise MalformedInput("calibration scale/residual_rmse must be single values")
        fields["scale"] = fields["scale"][0]
        fields["residual_rmse"] = fields["residual_rmse"][0]
        return _calibration_from_fields(fields)
    except (MalformedInput, ValidationError):
        raise
    except (json.JSONDecodeError, *_PARSE_ERRORS) as exc:
        raise MalformedInput(f"malformed calibration {path}: {exc}") from exc
