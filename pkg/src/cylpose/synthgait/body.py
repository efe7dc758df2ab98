"""Capsule-limb body model and gait pose sampling.

The body is a pair of articulated legs hanging from a fixed pelvis. Each
leg is three rigid segments (thigh, shank, foot) whose surface is a
capsule. Joint trajectories over the gait cycle are sinusoidal in the
sagittal plane, legs half a cycle apart; gait conditions perturb only the
foot segment direction.

Canonical frame: z up, walking direction +y, left leg on +x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geom import PointCloud
from ..pose import Pose

GAIT_CONDITIONS = ("normal", "supination", "pronation", "toe_in", "toe_out")

# Foot-direction perturbations per condition, radians. Toe-in/out yaw the
# foot about z; supination/pronation combine a smaller yaw with a pitch
# change (inversion carries adduction and plantarflexion components, so
# the toe joint actually moves).
_TOE_YAW = 0.30
_COND_YAW = 0.15
_COND_PITCH = 0.20
_BASE_FOOT_PITCH = 0.30
_ANKLE_HEIGHT = 0.08


@dataclass(frozen=True)
class LimbSkeleton:
    """Segment lengths and capsule radii, meters."""

    pelvis_width: float = 0.28
    thigh_len: float = 0.44
    shank_len: float = 0.42
    foot_len: float = 0.24
    thigh_radius: float = 0.07
    shank_radius: float = 0.05
    foot_radius: float = 0.035

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")

    def hip_height(self) -> float:
        return self.thigh_len + self.shank_len + _ANKLE_HEIGHT

    def bone_radii(self) -> tuple:
        """Capsule radius for each bone in Pose BONES order."""
        per_leg = (self.thigh_radius, self.shank_radius, self.foot_radius)
        return per_leg + per_leg


def sample_skeleton(rng: np.random.Generator) -> LimbSkeleton:
    """Draw segment dimensions uniformly from adult-stature ranges."""
    return LimbSkeleton(
        pelvis_width=rng.uniform(0.22, 0.34),
        thigh_len=rng.uniform(0.38, 0.50),
        shank_len=rng.uniform(0.36, 0.46),
        foot_len=rng.uniform(0.20, 0.28),
        thigh_radius=rng.uniform(0.060, 0.085),
        shank_radius=rng.uniform(0.042, 0.060),
        foot_radius=rng.uniform(0.028, 0.040),
    )


@dataclass(frozen=True)
class GaitParams:
    """One instant of a gait cycle.

    phase is the cycle fraction in [0, 1); amplitudes are peak joint
    excursions in radians, all within [0, pi/2].
    """

    condition: str = "normal"
    phase: float = 0.0
    hip_amp: float = 0.35
    knee_amp: float = 0.50
    ankle_amp: float = 0.18

    def __post_init__(self):
        if self.condition not in GAIT_CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")
        if not 0.0 <= self.phase < 1.0:
            raise ValueError(f"phase must be in [0, 1), got {self.phase}")
        for name in ("hip_amp", "knee_amp", "ankle_amp"):
            amp = getattr(self, name)
            if not 0.0 <= amp <= math.pi / 2:
                raise ValueError(f"{name} must be in [0, pi/2], got {amp}")


def sample_gait_params(rng: np.random.Generator, condition: str | None = None) -> GaitParams:
    """Random phase and amplitudes; condition drawn uniformly if not given."""
    if condition is None:
        condition = GAIT_CONDITIONS[int(rng.integers(len(GAIT_CONDITIONS)))]
    return GaitParams(
        condition=condition,
        phase=float(rng.uniform(0.0, 1.0)),
        hip_amp=float(rng.uniform(0.25, 0.45)),
        knee_amp=float(rng.uniform(0.35, 0.60)),
        ankle_amp=float(rng.uniform(0.10, 0.25)),
    )


def _sagittal_dir(angle_from_down: float) -> np.ndarray:
    """Unit vector in the y-z plane, measured from straight down."""
    return np.array([0.0, math.sin(angle_from_down), -math.cos(angle_from_down)])


def _foot_dir(pitch: float, yaw: float) -> np.ndarray:
    """Forward-pointing unit vector pitched down then yawed about z."""
    c, s = math.cos(yaw), math.sin(yaw)
    fwd = np.array([0.0, math.cos(pitch), -math.sin(pitch)])
    return np.array([c * fwd[0] - s * fwd[1], s * fwd[0] + c * fwd[1], fwd[2]])


def sample_gait_pose(skel: LimbSkeleton, gait: GaitParams) -> Pose:
    """Deterministic forward kinematics for one gait instant.

    Legs are half a cycle out of phase; knees flex only backward; the
    condition modifies the foot direction and nothing above the ankle.
    """
    omega = 2.0 * math.pi * gait.phase
    h = skel.hip_height()
    joints = np.zeros((8, 3))
    for leg, (x_side, phase_off) in enumerate(
        [(+skel.pelvis_width / 2.0, 0.0), (-skel.pelvis_width / 2.0, math.pi)]
    ):
        hip_flex = gait.hip_amp * math.sin(omega + phase_off)
        knee_flex = gait.knee_amp * 0.5 * (1.0 + math.sin(omega + phase_off))
        ankle_pitch = _BASE_FOOT_PITCH + gait.ankle_amp * math.sin(
            omega + phase_off + math.pi / 2
        )

        # medial = toward the body midline for this leg
        medial = -1.0 if x_side > 0 else 1.0
        yaw, pitch = 0.0, ankle_pitch
        if gait.condition == "toe_in":
            yaw = -medial * _TOE_YAW  # rotates +y toward the midline
        elif gait.condition == "toe_out":
            yaw = medial * _TOE_YAW
        elif gait.condition == "supination":
            yaw = -medial * _COND_YAW
            pitch += _COND_PITCH
        elif gait.condition == "pronation":
            yaw = medial * _COND_YAW
            pitch -= _COND_PITCH

        hip = np.array([x_side, 0.0, h])
        knee = hip + skel.thigh_len * _sagittal_dir(hip_flex)
        ankle = knee + skel.shank_len * _sagittal_dir(hip_flex - knee_flex)
        toe = ankle + skel.foot_len * _foot_dir(pitch, yaw)
        joints[4 * leg : 4 * leg + 4] = [hip, knee, ankle, toe]
    return Pose(joints)


def _segment_frame(axis: np.ndarray):
    """Orthonormal (u, v) spanning the plane normal to a unit axis."""
    ref = np.array([0.0, 0.0, 1.0])
    if abs(float(axis @ ref)) > 0.99:
        ref = np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    return u, np.cross(axis, u)


def _capsule_surface(a, b, radius, n, rng):
    """n points uniform on the capsule around segment [a, b]."""
    axis = b - a
    length = float(np.linalg.norm(axis))
    axis = axis / length
    area_cyl = 2.0 * math.pi * radius * length
    area_sph = 4.0 * math.pi * radius * radius
    n_cyl = int(round(n * area_cyl / (area_cyl + area_sph)))
    n_sph = n - n_cyl

    u, v = _segment_frame(axis)
    t = rng.uniform(0.0, 1.0, size=n_cyl)
    ang = rng.uniform(0.0, 2.0 * math.pi, size=n_cyl)
    side = (
        a[None, :]
        + t[:, None] * (length * axis)[None, :]
        + radius * (np.cos(ang)[:, None] * u[None, :] + np.sin(ang)[:, None] * v[None, :])
    )

    dirs = rng.normal(size=(n_sph, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    towards_b = dirs @ axis > 0
    centers = np.where(towards_b[:, None], b[None, :], a[None, :])
    caps = centers + radius * dirs
    return np.concatenate([side, caps], axis=0)


def generate_surface_cloud(
    skel: LimbSkeleton,
    pose: Pose,
    density: float,
    rng: np.random.Generator,
    radius_bias: float = 0.0,
) -> PointCloud:
    """Sample the body surface at ``density`` points per square meter.

    Points are drawn uniformly on the capsule around each bone segment;
    per-bone counts are proportional to capsule area. ``radius_bias``
    inflates every capsule radius (a crude clothing layer).

    Returns a canonical-frame PointCloud.
    """
    if density <= 0.0:
        raise ValueError("density must be positive")
    parts = []
    for (i_a, i_b), radius in zip(
        ((0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7)), skel.bone_radii()
    ):
        r = radius + radius_bias
        a, b = pose.joints[i_a], pose.joints[i_b]
        length = float(np.linalg.norm(b - a))
        area = 2.0 * math.pi * r * length + 4.0 * math.pi * r * r
        n = max(1, int(round(density * area)))
        parts.append(_capsule_surface(a, b, r, n, rng))
    return PointCloud(np.concatenate(parts, axis=0))
