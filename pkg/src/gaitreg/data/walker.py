"""Articulated 2-D walker.

The figure is seen from the side, walking towards +x. Lengths are in units of
body height; a camera maps them to pixels. Joint angles are measured from the
downward vertical, positive towards the walking direction, and are sinusoidal
in the gait phase, so phase and phase + 2*pi render identically.

Left and right limbs hang from points offset by +/- ``depth`` around the body
axis (a slight three-quarter view) so the two sides do not fully overlap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.rng import rng
from .kernels import rasterize

# part labels; paint order is far limbs, torso, head, near limbs
HEAD, TORSO = 1, 2
FAR_UPPER_ARM, FAR_FOREARM, FAR_THIGH, FAR_SHIN = 3, 4, 5, 6
NEAR_UPPER_ARM, NEAR_FOREARM, NEAR_THIGH, NEAR_SHIN = 7, 8, 9, 10
N_LABELS = 11


@dataclass(frozen=True)
class WalkerParams:
    height: float        # overall scale, ~1
    torso_len: float
    torso_r: float
    head_r: float
    thigh: float
    shin: float
    leg_r: float
    upper_arm: float
    forearm: float
    arm_r: float
    stride: float        # hip swing amplitude (rad)
    knee_amp: float
    arm_amp: float       # shoulder swing amplitude (rad)
    elbow_ratio: float   # elbow flexion as a fraction of arm swing
    cadence: float       # phase advance per frame (rad)
    lean: float
    depth: float
    bob: float
    skin: tuple[float, float, float]


@dataclass(frozen=True)
class Camera:
    flip: bool = False
    scale: float = 1.0
    shift: float = 0.0   # horizontal offset as a fraction of image width


@dataclass(frozen=True)
class Palette:
    top: tuple[float, float, float]
    sleeve: tuple[float, float, float]
    pants: tuple[float, float, float]


def identity_params(seed: int, identity: int) -> WalkerParams:
    g = rng(seed, f"walker:{identity}")
    u = g.uniform
    return WalkerParams(
        height=u(0.88, 1.0),
        torso_len=u(0.26, 0.34),
        torso_r=u(0.055, 0.085),
        head_r=u(0.055, 0.072),
        thigh=u(0.20, 0.26),
        shin=u(0.20, 0.26),
        leg_r=u(0.028, 0.045),
        upper_arm=u(0.14, 0.19),
        forearm=u(0.13, 0.18),
        arm_r=u(0.020, 0.032),
        stride=u(0.22, 0.55),
        knee_amp=u(0.15, 0.75),
        arm_amp=u(0.10, 0.65),
        elbow_ratio=u(0.0, 0.8),
        cadence=2 * np.pi / u(10.0, 16.0),
        lean=u(-0.08, 0.14),
        depth=u(0.015, 0.035),
        bob=u(0.0, 0.015),
        skin=tuple(float(c) for c in np.array([0.85, 0.65, 0.5]) * u(0.55, 1.0)),
    )


def outfit_palette(seed: int, identity: int, outfit: int) -> Palette:
    g = rng(seed, f"outfit:{identity}:{outfit}")
    top = tuple(float(c) for c in g.uniform(0.05, 1.0, 3))
    pants = tuple(float(c) for c in g.uniform(0.05, 1.0, 3))
    long_sleeves = g.random() < 0.5
    sleeve = top if long_sleeves else identity_params(seed, identity).skin
    return Palette(top=top, sleeve=sleeve, pants=pants)


def camera_transform(cam: int) -> Camera:
    """Fixed per camera id so that "same camera" is a meaningful relation."""
    return Camera(flip=cam % 2 == 1, scale=1.0 - 0.06 * (cam % 3), shift=0.04 * ((cam * 3) % 5 - 2))


def _limb(px, py, a1, l1, a2, l2):
    kx, ky = px + l1 * np.sin(a1), py + l1 * np.cos(a1)
    ex, ey = kx + l2 * np.sin(a2), ky + l2 * np.cos(a2)
    return (px, py, kx, ky), (kx, ky, ex, ey)


def walker_primitives(p: WalkerParams, phase: float, camera: Camera, height: int, width: int) -> np.ndarray:
    """Primitive rows (see ``kernels``) in paint order, in pixel coordinates."""
    s = 0.86 * height * p.height * camera.scale
    leg_len = p.thigh + p.shin
    # body-frame: x right, y down, origin at hip centre
    bob = p.bob * np.cos(2 * phase)
    hip = np.array([0.0, 0.0])
    neck = hip + p.torso_len * np.array([np.sin(p.lean), -np.cos(p.lean)])
    head = neck + (p.head_r * 1.15) * np.array([np.sin(p.lean), -np.cos(p.lean)])
    shoulder = neck + 0.15 * p.torso_len * np.array([-np.sin(p.lean), np.cos(p.lean)])

    rows = []
    for side, sign in (("far", -1.0), ("near", 1.0)):
        ph = phase if side == "near" else phase + np.pi
        hip_a = p.stride * np.sin(ph)
        knee = p.knee_amp * 0.5 * (1.0 + np.sin(ph + 0.5 * np.pi))
        thigh, shin = _limb(hip[0] + sign * p.depth, hip[1], hip_a, p.thigh, hip_a - knee, p.shin)
        sh_a = -p.arm_amp * np.sin(ph)
        elbow = p.elbow_ratio * p.arm_amp * (1.0 + np.sin(ph))
        upper, fore = _limb(shoulder[0] + sign * p.depth, shoulder[1], sh_a, p.upper_arm,
                            sh_a + elbow, p.forearm)
        if side == "far":
            far = [(upper, p.arm_r, FAR_UPPER_ARM), (fore, p.arm_r, FAR_FOREARM),
                   (thigh, p.leg_r, FAR_THIGH), (shin, p.leg_r * 0.9, FAR_SHIN)]
        else:
            near = [(thigh, p.leg_r, NEAR_THIGH), (shin, p.leg_r * 0.9, NEAR_SHIN),
                    (upper, p.arm_r, NEAR_UPPER_ARM), (fore, p.arm_r, NEAR_FOREARM)]
    rows += far
    rows.append(((hip[0], hip[1], neck[0], neck[1]), p.torso_r, TORSO))
    rows.append(((head[0], head[1], head[0], head[1]), p.head_r, HEAD))
    rows += near

    # feet sit near the bottom of the frame
    foot_y = leg_len * 0.97 + bob
    cx = width * (0.5 + camera.shift)
    cy = height * 0.95 - foot_y * s
    prims = np.empty((len(rows), 6))
    for k, (seg, r, lab) in enumerate(rows):
        x0, y0, x1, y1 = seg
        if camera.flip:
            x0, x1 = -x0, -x1
        prims[k] = (cx + s * x0, cy + s * y0, cx + s * x1, cy + s * y1, s * r, lab)
    return prims


def part_colors(palette: Palette, skin) -> np.ndarray:
    colors = np.zeros((N_LABELS, 3))
    shade = 0.8
    colors[HEAD] = skin
    colors[TORSO] = palette.top
    colors[NEAR_UPPER_ARM] = palette.top
    colors[NEAR_FOREARM] = palette.sleeve
    colors[NEAR_THIGH] = colors[NEAR_SHIN] = palette.pants
    colors[FAR_UPPER_ARM] = np.array(palette.top) * shade
    colors[FAR_FOREARM] = np.array(palette.sleeve) * shade
    colors[FAR_THIGH] = colors[FAR_SHIN] = np.array(palette.pants) * shade
    return colors


def render_walker_frame(params: WalkerParams, palette: Palette, phase: float, camera: Camera,
                        height: int = 128, width: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Render one frame.

    Returns ``(rgb, silhouette)``: rgb is float32 (3, H, W) in [0, 1] with a
    zero background, silhouette is float32 (H, W) with values in {0, 1}.
    """
    if not np.isfinite(phase):
        raise ValueError("phase must be finite")
    labels = rasterize(height, width, walker_primitives(params, float(phase), camera, height, width))
    colors = part_colors(palette, params.skin).astype(np.float32)
    rgb = np.ascontiguousarray(colors[labels].transpose(2, 0, 1))
    return rgb, (labels > 0).astype(np.float32)
