"""Pinhole-camera scene simulator with an analytically known perspective gradient.

Objects move at piecewise-uniform world velocity either in the ground plane
viewed by a tilted camera ("ground" mode) or in a plane parallel to the image
plane ("frontal" mode, zero gradient). The emitted sparse flow streams come
with the closed-form per-pixel relative depth rate, which acceptance tests use
as ground truth in place of hand-labelled scenes.

World frame: x right, y down, z horizontal away from the camera; the camera
sits at the origin, pitched down by ``tilt``. The ground plane is y = height.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, HorizonError, SceneScriptError
from .flow import MILLI, FlowSequence


@dataclass(frozen=True)
class CameraModel:
    """Non-skew pinhole camera: folded focal/scaling factors, height and pitch."""

    f_u: float
    f_v: float
    height: float
    tilt: float
    image_width: int
    image_height: int
    principal_u: float | None = None
    principal_v: float | None = None

    def __post_init__(self) -> None:
        if self.f_u <= 0 or self.f_v <= 0:
            raise ValueError(f"focal scales must be positive, got ({self.f_u}, {self.f_v})")
        if self.height <= 0:
            raise ValueError(f"camera height must be positive, got {self.height}")
        if not 0.0 <= self.tilt < math.pi / 2:
            raise ValueError(f"tilt must be in [0, pi/2), got {self.tilt}")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")
        if self.principal_u is None:
            object.__setattr__(self, "principal_u", self.image_width / 2.0)
        if self.principal_v is None:
            object.__setattr__(self, "principal_v", self.image_height / 2.0)
        if not (0 <= self.principal_u < self.image_width and 0 <= self.principal_v < self.image_height):
            raise ValueError("principal point must lie inside the image")

    @property
    def centre_row(self) -> float:
        return self.image_height / 2.0


def project_point(cam: CameraModel, point) -> tuple[float, float]:
    """Project a world point (camera at origin, axes as in the module docstring).

    The point is rotated by the camera pitch into the camera frame first; the
    depth after rotation must be positive.
    """
    x, y, z = (float(c) for c in point)
    ct, st = math.cos(cam.tilt), math.sin(cam.tilt)
    y_c = y * ct - z * st
    z_c = y * st + z * ct
    if z_c <= 0:
        raise BehindCameraError(f"point {point!r} has non-positive camera depth {z_c:.6g}")
    u = cam.principal_u + cam.f_u * x / z_c
    v = cam.principal_v + cam.f_v * y_c / z_c
    return u, v


def ground_depth(cam: CameraModel, v: float) -> float:
    """Camera-frame depth of the ground-plane point imaged at row ``v``."""
    denom = cam.f_v * math.sin(cam.tilt) + (float(v) - cam.principal_v) * math.cos(cam.tilt)
    if denom <= 0:
        raise HorizonError(f"row {v} is at or above the ground-plane horizon")
    return cam.height * cam.f_v / denom


def oracle_zeta(cam: CameraModel, v: float) -> float:
    """Relative depth decrease of the visible ground plane per pixel moved down.

    With z(v) the ground depth imaged at row v this is -(dz/dv)/z, evaluated
    from the closed-form back-projection. Positive below the horizon: moving
    down the image brings the ground closer (equivalently, perceived scale
    grows).
    """
    denom = cam.f_v * math.sin(cam.tilt) + (float(v) - cam.principal_v) * math.cos(cam.tilt)
    if denom <= 0:
        raise HorizonError(f"row {v} is at or above the ground-plane horizon")
    return math.cos(cam.tilt) / denom


@dataclass(frozen=True)
class GroundObject:
    """Point object in the ground plane: lateral position x, distance w along ground."""

    x: float
    w: float
    vx: float
    vw: float
    t_start: float = 0.0
    lifetime: float = math.inf
    respawn: float | None = None
    t_until: float = math.inf

    def __post_init__(self) -> None:
        if self.lifetime <= 0:
            raise ValueError("object lifetime must be positive")
        if self.respawn is not None and self.respawn <= 0:
            raise ValueError("respawn period must be positive")


@dataclass(frozen=True)
class FrontalObject:
    """Point object in a constant-depth plane parallel to the image plane."""

    x: float
    y: float
    depth: float
    vx: float
    vy: float
    t_start: float = 0.0
    lifetime: float = math.inf
    respawn: float | None = None
    t_until: float = math.inf

    def __post_init__(self) -> None:
        if self.depth <= 0:
            raise ValueError("frontal-plane depth must be positive")
        if self.lifetime <= 0:
            raise ValueError("object lifetime must be positive")
        if self.respawn is not None and self.respawn <= 0:
            raise ValueError("respawn period must be positive")


@dataclass(frozen=True)
class OutlierRegion:
    """Image rectangle inside which world velocities are scaled by ``factor``.

    Models scene structure that consistently breaks the uniform-motion
    assumption, e.g. a bend in the road where everything slows down.
    """

    u_min: float
    v_min: float
    u_max: float
    v_max: float
    factor: float

    def __post_init__(self) -> None:
        if not (self.u_min < self.u_max and self.v_min < self.v_max):
            raise ValueError("outlier region must have positive extent")
        if self.factor <= 0:
            raise ValueError("deceleration factor must be positive")

    def contains(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return (u >= self.u_min) & (u < self.u_max) & (v >= self.v_min) & (v < self.v_max)


@dataclass(frozen=True)
class SceneScript:
    camera: CameraModel
    duration: float
    frame_rate: float
    objects: tuple = ()
    mode: str = "ground"
    noise_std: float = 0.05
    threshold: float = 1.5
    outlier: OutlierRegion | None = None

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.frame_rate <= 0:
            raise ValueError("frame rate must be positive")
        if self.noise_std < 0:
            raise ValueError("noise std must be non-negative")
        if self.mode not in ("ground", "frontal"):
            raise ValueError(f"unknown scene mode {self.mode!r}")
        if self.mode == "frontal" and self.camera.tilt != 0.0:
            raise ValueError("frontal mode requires zero camera tilt")
        expected = GroundObject if self.mode == "ground" else FrontalObject
        for obj in self.objects:
            if not isinstance(obj, expected):
                raise ValueError(f"{self.mode} scene cannot contain {type(obj).__name__}")
        if self.outlier is not None:
            cam = self.camera
            if not (
                0 <= self.outlier.u_min
                and self.outlier.u_max <= cam.image_width
                and 0 <= self.outlier.v_min
                and self.outlier.v_max <= cam.image_height
            ):
                raise ValueError("outlier region must lie inside the image")


@dataclass(frozen=True)
class SimulationResult:
    sequence: FlowSequence
    zeta_center: float


def simulate(script: SceneScript, seed: int) -> SimulationResult:
    """Run a scene script and return the sparse flow stream plus the reference
    depth rate at the image centre row.

    Deterministic in (script, seed). Per frame, every active object is
    projected at t and t + dt; the displacement between the two projections
    becomes one motion vector anchored at the earlier projection. Vectors
    starting outside the frame or with either projection behind the camera are
    dropped, and displacement magnitudes at or below the sparsification
    threshold are discarded. Positions and displacements are quantized to
    milli-pixels, matching FLOWLOG precision, before thresholding.
    """
    cam = script.camera
    dt = 1.0 / script.frame_rate
    n_frames = int(round(script.duration * script.frame_rate))
    objs = script.objects
    n_obj = len(objs)
    rng = np.random.default_rng(seed)

    ground = script.mode == "ground"
    ct, st = math.cos(cam.tilt), math.sin(cam.tilt)
    f_u, f_v = cam.f_u, cam.f_v
    cu, cv = cam.principal_u, cam.principal_v
    H = cam.height

    # state arrays; position component p2 is w (ground) or y (frontal)
    p1 = np.zeros(n_obj)
    p2 = np.zeros(n_obj)
    win = np.full(n_obj, -1, dtype=np.int64)  # activation window ordinal, -1 = inactive
    v1 = np.array([o.vx for o in objs]) if n_obj else np.zeros(0)
    v2 = np.array([(o.vw if ground else o.vy) for o in objs]) if n_obj else np.zeros(0)
    s1 = np.array([o.x for o in objs]) if n_obj else np.zeros(0)
    s2 = np.array([(o.w if ground else o.y) for o in objs]) if n_obj else np.zeros(0)
    depth0 = None if ground else (np.array([o.depth for o in objs]) if n_obj else np.zeros(0))
    t_start = np.array([o.t_start for o in objs]) if n_obj else np.zeros(0)
    lifetime = np.array([o.lifetime for o in objs]) if n_obj else np.zeros(0)
    period = np.array([(o.respawn if o.respawn is not None else math.inf) for o in objs]) if n_obj else np.zeros(0)
    period_mul = np.where(np.isfinite(period), period, 0.0)  # one-shot objects keep window 0
    t_until = np.array([o.t_until for o in objs]) if n_obj else np.zeros(0)

    def project(a1: np.ndarray, a2: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Image coordinates and validity for positions (a1, a2) of all slots."""
        if ground:
            y_c = H * ct - a2 * st
            z_c = H * st + a2 * ct
        else:
            y_c = a2
            z_c = depth0
        with np.errstate(divide="ignore", invalid="ignore"):
            u = cu + f_u * a1 / z_c
            v = cv + f_v * y_c / z_c
        return u, v, z_c > 0

    rows_t: list[np.ndarray] = []
    rows_u: list[np.ndarray] = []
    rows_v: list[np.ndarray] = []
    rows_du: list[np.ndarray] = []
    rows_dv: list[np.ndarray] = []

    for k in range(n_frames):
        tau = k * dt
        rel = tau - t_start
        started = rel >= 0
        ordinal = np.floor(np.maximum(rel, 0.0) / period)  # 0 for one-shot objects
        w_start = t_start + ordinal * period_mul
        age = tau - w_start
        active = started & (w_start < t_until) & (age < lifetime)
        if not active.any():
            win[:] = -1
            continue
        ordinal_i = ordinal.astype(np.int64)
        fresh = active & (win != ordinal_i)
        if fresh.any():
            # fresh spawn: place on the nominal trajectory at the current age
            p1[fresh] = s1[fresh] + v1[fresh] * age[fresh]
            p2[fresh] = s2[fresh] + v2[fresh] * age[fresh]
        win[:] = np.where(active, ordinal_i, -1)

        u0, v0, ok0 = project(p1, p2)
        factor = np.ones(n_obj)
        if script.outlier is not None:
            inside = ok0 & script.outlier.contains(u0, v0)
            factor[inside] = script.outlier.factor
        n1 = p1 + v1 * factor * dt
        n2 = p2 + v2 * factor * dt
        u1, v1n, ok1 = project(n1, n2)

        emit = active & ok0 & ok1
        if emit.any():
            rows_t.append(np.full(int(emit.sum()), k, dtype=np.int64))
            rows_u.append(u0[emit])
            rows_v.append(v0[emit])
            rows_du.append(u1[emit] - u0[emit])
            rows_dv.append(v1n[emit] - v0[emit])

        p1[active] = n1[active]
        p2[active] = n2[active]

    if rows_t:
        t = np.concatenate(rows_t)
        u0 = np.concatenate(rows_u)
        v0 = np.concatenate(rows_v)
        du = np.concatenate(rows_du)
        dv = np.concatenate(rows_dv)
        if script.noise_std > 0:
            noise = rng.normal(0.0, script.noise_std, size=(t.size, 2))
            du = du + noise[:, 0]
            dv = dv + noise[:, 1]

        u_m = np.rint(u0 * MILLI).astype(np.int64)
        v_m = np.rint(v0 * MILLI).astype(np.int64)
        du_m = np.rint(du * MILLI).astype(np.int64)
        dv_m = np.rint(dv * MILLI).astype(np.int64)

        in_frame = (u_m >= 0) & (u_m < cam.image_width * MILLI) & (v_m >= 0) & (v_m < cam.image_height * MILLI)
        mag = np.hypot(du_m / MILLI, dv_m / MILLI)
        keep = in_frame & (mag > script.threshold)

        seq = FlowSequence(
            cam.image_width,
            cam.image_height,
            script.frame_rate,
            t[keep],
            u_m[keep],
            v_m[keep],
            du_m[keep],
            dv_m[keep],
        )
    else:
        seq = FlowSequence.empty(cam.image_width, cam.image_height, script.frame_rate)

    if ground:
        zeta_ref = oracle_zeta(cam, cam.centre_row)
    else:
        zeta_ref = 0.0
    return SimulationResult(seq, zeta_ref)


# -- scene script files ----------------------------------------------------
#
# Plain-text key = value, one per line; '#' starts a comment. Dotted keys
# group camera parameters, numbered objects, and the optional outlier region:
#
#   mode = ground            # or frontal
#   duration = 7200          # seconds
#   frame_rate = 15
#   noise_std = 0.05         # isotropic pixel noise on displacements
#   threshold = 1.5          # sparsification threshold in pixels
#   camera.f_u = 420         camera.f_v = 420
#   camera.height = 9.0      camera.tilt_deg = 65.0
#   camera.image_width = 352 camera.image_height = 288
#   object.0.x = -2.5        object.0.w = 7.6      (ground: x, w, vx, vw)
#   object.0.vx = 0.0        object.0.vw = -1.3    (frontal: x, y, depth, vx, vy)
#   object.0.t_start = 0     object.0.lifetime = 4.7
#   object.0.respawn = 4.7   object.0.t_until = 7200
#   outlier.v_min = 115.2    outlier.v_max = 172.8
#   outlier.u_min = 0        outlier.u_max = 352
#   outlier.factor = 0.5

_SCALAR_KEYS = {"mode", "duration", "frame_rate", "noise_std", "threshold"}
_CAMERA_KEYS = {"f_u", "f_v", "height", "tilt_deg", "image_width", "image_height", "principal_u", "principal_v"}
_OBJECT_KEYS = {"x", "w", "y", "depth", "vx", "vw", "vy", "t_start", "lifetime", "respawn", "t_until"}
_OUTLIER_KEYS = {"u_min", "v_min", "u_max", "v_max", "factor"}


def _to_number(key: str, value: str, line_no: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise SceneScriptError(f"line {line_no}: value for {key!r} is not a number: {value!r}") from None


def parse_scene_script(text: str) -> SceneScript:
    scalars: dict[str, str] = {}
    camera: dict[str, float] = {}
    objects: dict[int, dict[str, float]] = {}
    outlier: dict[str, float] = {}

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SceneScriptError(f"line {line_no}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        parts = key.split(".")
        if len(parts) == 1:
            if key not in _SCALAR_KEYS:
                raise SceneScriptError(f"line {line_no}: unknown key {key!r}")
            scalars[key] = value
        elif parts[0] == "camera" and len(parts) == 2:
            if parts[1] not in _CAMERA_KEYS:
                raise SceneScriptError(f"line {line_no}: unknown camera key {parts[1]!r}")
            camera[parts[1]] = _to_number(key, value, line_no)
        elif parts[0] == "object" and len(parts) == 3:
            if not parts[1].isdigit():
                raise SceneScriptError(f"line {line_no}: object index must be an integer, got {parts[1]!r}")
            if parts[2] not in _OBJECT_KEYS:
                raise SceneScriptError(f"line {line_no}: unknown object key {parts[2]!r}")
            objects.setdefault(int(parts[1]), {})[parts[2]] = _to_number(key, value, line_no)
        elif parts[0] == "outlier" and len(parts) == 2:
            if parts[1] not in _OUTLIER_KEYS:
                raise SceneScriptError(f"line {line_no}: unknown outlier key {parts[1]!r}")
            outlier[parts[1]] = _to_number(key, value, line_no)
        else:
            raise SceneScriptError(f"line {line_no}: unknown key {key!r}")

    for required in ("duration", "frame_rate"):
        if required not in scalars:
            raise SceneScriptError(f"missing required key {required!r}")
    for required in ("f_u", "f_v", "height", "image_width", "image_height"):
        if required not in camera:
            raise SceneScriptError(f"missing required key 'camera.{required}'")

    mode = scalars.get("mode", "ground")
    duration = float(scalars["duration"])
    frame_rate = float(scalars["frame_rate"])
    noise_std = float(scalars.get("noise_std", 0.05))
    threshold = float(scalars.get("threshold", 1.5))

    try:
        cam = CameraModel(
            f_u=camera["f_u"],
            f_v=camera["f_v"],
            height=camera["height"],
            tilt=math.radians(camera.get("tilt_deg", 0.0)),
            image_width=int(camera["image_width"]),
            image_height=int(camera["image_height"]),
            principal_u=camera.get("principal_u"),
            principal_v=camera.get("principal_v"),
        )
    except ValueError as exc:
        raise SceneScriptError(f"invalid camera: {exc}") from None

    objs = []
    for idx in sorted(objects):
        spec = objects[idx]
        common = {
            "t_start": spec.get("t_start", 0.0),
            "lifetime": spec.get("lifetime", duration),
            "respawn": spec.get("respawn"),
            "t_until": spec.get("t_until", duration),
        }
        try:
            if mode == "ground":
                for required in ("x", "w"):
                    if required not in spec:
                        raise SceneScriptError(f"object.{idx} missing key {required!r}")
                objs.append(
                    GroundObject(x=spec["x"], w=spec["w"], vx=spec.get("vx", 0.0), vw=spec.get("vw", 0.0), **common)
                )
            else:
                for required in ("x", "y", "depth"):
                    if required not in spec:
                        raise SceneScriptError(f"object.{idx} missing key {required!r}")
                objs.append(
                    FrontalObject(
                        x=spec["x"], y=spec["y"], depth=spec["depth"],
                        vx=spec.get("vx", 0.0), vy=spec.get("vy", 0.0), **common,
                    )
                )
        except ValueError as exc:
            raise SceneScriptError(f"object.{idx}: {exc}") from None

    region = None
    if outlier:
        for required in _OUTLIER_KEYS:
            if required not in outlier:
                raise SceneScriptError(f"missing required key 'outlier.{required}'")
        try:
            region = OutlierRegion(**outlier)
        except ValueError as exc:
            raise SceneScriptError(f"invalid outlier region: {exc}") from None

    try:
        return SceneScript(
            camera=cam,
            duration=duration,
            frame_rate=frame_rate,
            objects=tuple(objs),
            mode=mode,
            noise_std=noise_std,
            threshold=threshold,
            outlier=region,
        )
    except ValueError as exc:
        raise SceneScriptError(str(exc)) from None


def load_scene_script(path: str | os.PathLike) -> SceneScript:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scene_script(fh.read())
