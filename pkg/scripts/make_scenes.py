#!/usr/bin/env python3
"""Regenerate the scene scripts under scenes/.

The checked-in .scene files are the single source of truth for tests and for
the CLI walkthrough in the README; this script documents how they were derived
and rewrites them deterministically.
"""

from __future__ import annotations

import math
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
SCENES = ROOT / "scenes"

# camera shared by the ground scenes: steep pole-mounted view over a walkway
F = 420.0
HEIGHT = 9.0
TILT_DEG = 65.0
IMG_W, IMG_H = 352, 288
FPS = 15.0

# traffic layout: lanes spaced finely across the full view, each lane active
# one quarter of the time so concurrency stays CCTV-realistic while the cell
# grid still gets crossed at many lateral offsets
N_LANES = 201
LANE_SPAN = 8.2
DUTY = 4
BASE_SPEED = 1.3
SPEED_SPREAD = 0.06
PHI = 0.381966  # 2 - golden ratio; spreads phases without resonances


def w_of_v(v: float) -> float:
    """Ground distance whose projection lands on image row v (may be off-frame)."""
    tilt = math.radians(TILT_DEG)
    denom = F * math.sin(tilt) + (v - IMG_H / 2.0) * math.cos(tilt)
    z = HEIGHT * F / denom
    return (z - HEIGHT * math.sin(tilt)) / math.cos(tilt)


def camera_lines() -> list[str]:
    return [
        f"camera.f_u = {F:g}",
        f"camera.f_v = {F:g}",
        f"camera.height = {HEIGHT:g}",
        f"camera.tilt_deg = {TILT_DEG:g}",
        f"camera.image_width = {IMG_W}",
        f"camera.image_height = {IMG_H}",
    ]


def lane_objects(index0: int, w_from: float, w_to: float, t_base: float, t_until: float) -> list[str]:
    lines = []
    for k in range(N_LANES):
        x = -LANE_SPAN + 2 * LANE_SPAN * k / (N_LANES - 1)
        speed = BASE_SPEED * (1 + SPEED_SPREAD * (((k * PHI) % 1.0) - 0.5))
        lifetime = (w_from - w_to) / speed
        respawn = DUTY * lifetime
        t_start = t_base + (k * respawn * PHI) % respawn
        i = index0 + k
        lines += [
            f"object.{i}.x = {x:.9g}",
            f"object.{i}.w = {w_from:.9g}",
            f"object.{i}.vw = {-speed:.9g}",
            f"object.{i}.t_start = {t_start:.9g}",
            f"object.{i}.lifetime = {lifetime:.9g}",
            f"object.{i}.respawn = {respawn:.9g}",
            f"object.{i}.t_until = {t_until:.9g}",
        ]
    return lines


def approach_road(duration: float, warm_until: float, slowzone: bool) -> str:
    # regular traffic enters above the frame and leaves below it, so the image
    # never sees a spawn edge; during the warm-up phase only a lower band
    # (rows 180+) is travelled, which the convergence experiment relies on
    w_hi = w_of_v(-10.0)
    w_warm = w_of_v(180.0)
    w_lo = w_of_v(300.0)
    lines = [
        "# Ground-plane walkway approached head-on by a steep camera.",
        "mode = ground",
        f"duration = {duration:g}",
        f"frame_rate = {FPS:g}",
        "noise_std = 0.05",
        "threshold = 1.5",
        *camera_lines(),
    ]
    lines += lane_objects(0, w_warm, w_lo, 0.0, warm_until)
    lines += lane_objects(N_LANES, w_hi, w_lo, warm_until, duration)
    if slowzone:
        lines += [
            "# band where everything slows down, covering 20% of the image",
            "outlier.u_min = 0",
            "outlier.u_max = 352",
            "outlier.v_min = 115.2",
            "outlier.v_max = 172.8",
            "outlier.factor = 0.5",
        ]
    return "\n".join(lines) + "\n"


def frontal_wall() -> str:
    # constant-depth plane parallel to the image: every displacement is the
    # same, so both estimators must report a zero gradient
    lines = [
        "# Fronto-parallel plane: uniform image motion, zero scale gradient.",
        "mode = frontal",
        "duration = 90",
        f"frame_rate = {FPS:g}",
        "noise_std = 0",
        "threshold = 1.5",
        "camera.f_u = 420",
        "camera.f_v = 420",
        "camera.height = 9",
        "camera.tilt_deg = 0",
        f"camera.image_width = {IMG_W}",
        f"camera.image_height = {IMG_H}",
    ]
    depth = 12.0
    vy = 0.8
    y0 = -3.9
    travel = 7.8 / vy
    for k in range(12):
        x = -4.2 + 8.4 * k / 11
        vx = 0.15 if k % 2 == 0 else -0.15
        lines += [
            f"object.{k}.x = {x:.9g}",
            f"object.{k}.y = {y0:g}",
            f"object.{k}.depth = {depth:g}",
            f"object.{k}.vx = {vx:g}",
            f"object.{k}.vy = {vy:g}",
            f"object.{k}.t_start = {k * travel / 12:.9g}",
            f"object.{k}.lifetime = {travel:.9g}",
            f"object.{k}.respawn = {travel:.9g}",
            f"object.{k}.t_until = 90",
        ]
    return "\n".join(lines) + "\n"


def demo_crossing() -> str:
    # small hand-sized scene for the README walkthrough and golden-file tests
    w_hi = w_of_v(20.0)
    w_lo = w_of_v(285.0)
    lines = [
        "# Three objects approaching a steep camera for half a minute.",
        "mode = ground",
        "duration = 30",
        f"frame_rate = {FPS:g}",
        "noise_std = 0.05",
        "threshold = 1.5",
        *camera_lines(),
    ]
    for k, (x, speed) in enumerate([(-1.5, 1.2), (0.0, 1.4), (1.8, 1.3)]):
        lifetime = (w_hi - w_lo) / speed
        lines += [
            f"object.{k}.x = {x:g}",
            f"object.{k}.w = {w_hi:.9g}",
            f"object.{k}.vw = {-speed:g}",
            f"object.{k}.t_start = {k * 1.7:g}",
            f"object.{k}.lifetime = {lifetime:.9g}",
            f"object.{k}.respawn = {lifetime + 2.0:.9g}",
            "object.{}.t_until = 30".format(k),
        ]
    return "\n".join(lines) + "\n"


def main() -> None:
    SCENES.mkdir(exist_ok=True)
    (SCENES / "approach_road.scene").write_text(approach_road(7200.0, 1200.0, False))
    (SCENES / "approach_road_slowzone.scene").write_text(approach_road(7200.0, 1200.0, True))
    (SCENES / "frontal_wall.scene").write_text(frontal_wall())
    (SCENES / "demo_crossing.scene").write_text(demo_crossing())
    for name in ("approach_road", "approach_road_slowzone", "frontal_wall", "demo_crossing"):
        print(f"wrote scenes/{name}.scene")


if __name__ == "__main__":
    main()
