"""Heatmap containers and the periodic-aware keypoint decoders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geom import GridConfig, cyl_to_cart, wrap_angle
from ..pose import N_JOINTS, Pose

# Sharpness applied to raw plane scores before the planar soft-argmax.
# With a flat background a plain softmax pulls the expectation toward the
# grid centre; this factor concentrates the mass enough that a unit-peak
# target decodes to its own bin (system-level half-bin check).
AXIS_SHARPNESS = 25.0


class DegenerateThetaError(ValueError):
    """Raised when the angular distribution has no usable direction."""


@dataclass(frozen=True)
class HeatmapPair:
    """Per-joint score planes: hm_theta_r over (θ, ρ), hm_theta_z over (θ, z)."""

    hm_theta_r: np.ndarray
    hm_theta_z: np.ndarray

    def __post_init__(self):
        a, b = np.asarray(self.hm_theta_r), np.asarray(self.hm_theta_z)
        if a.ndim != 3 or a.shape[1] != a.shape[2] or a.shape != b.shape:
            raise ValueError(f"expected matching [J, C, C] planes, got {a.shape} and {b.shape}")
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise ValueError("heatmap scores must be finite")
        object.__setattr__(self, "hm_theta_r", a)
        object.__setattr__(self, "hm_theta_z", b)

    @property
    def n_joints(self):
        return self.hm_theta_r.shape[0]

    @property
    def cube_len(self):
        return self.hm_theta_r.shape[1]

    def shifted_theta(self, s: int) -> "HeatmapPair":
        return HeatmapPair(np.roll(self.hm_theta_r, s, axis=1),
                           np.roll(self.hm_theta_z, s, axis=1))


@dataclass(frozen=True)
class KeypointEstimate:
    theta: float
    rho: float
    z: float

    def __post_init__(self):
        if not -np.pi <= self.theta < np.pi:
            raise ValueError(f"theta {self.theta} outside [-pi, pi)")

    @property
    def xyz(self):
        return cyl_to_cart(np.array([[self.theta, self.rho, self.z]]))[0]


def _logsumexp(a, axis):
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def fuse_theta(pair: HeatmapPair) -> np.ndarray:
    """Per-joint angular logit p(θ): mean of the two branch θ-marginals.

    Marginals are logsumexp over the non-θ axis; adding a constant to
    either plane only shifts p(θ), which the downstream atan2 ratio
    cancels.
    """
    lr = _logsumexp(np.asarray(pair.hm_theta_r, dtype=np.float64), axis=2)
    lz = _logsumexp(np.asarray(pair.hm_theta_z, dtype=np.float64), axis=2)
    return 0.5 * (lr + lz)


def sinusoidal_soft_argmax(p_theta: np.ndarray, cfg: GridConfig) -> float:
    """θ* = atan2(Σ e^p sinθᵢ, Σ e^p cosθᵢ) over bin centers, in [-π, π).

    Wrap-aware by construction: mass near the ±π seam contributes
    consistently through the sinusoids instead of splitting. A
    distribution with no angular direction (uniform, or antipodally
    balanced) leaves both sums near zero and raises
    DegenerateThetaError.
    """
    p = np.asarray(p_theta, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] != cfg.cube_len:
        raise ValueError(f"expected ({cfg.cube_len},) scores, got {p.shape}")
    if not np.isfinite(p).all():
        raise ValueError("scores must be finite")
    w = np.exp(p - p.max())
    w = w / w.sum()
    centers = cfg.theta_bin_centers()
    u = float((w * np.sin(centers)).sum())
    v = float((w * np.cos(centers)).sum())
    if abs(u) < 1e-12 and abs(v) < 1e-12:
        raise DegenerateThetaError(
            "angular distribution is directionless (uniform or antipodally balanced)"
        )
    return float(wrap_angle(np.arctan2(u, v)))


def axis_soft_argmax(hm: np.ndarray, axis: int, bound: float,
                     sharpness: float = AXIS_SHARPNESS) -> float:
    """Expectation of bin centers along one plane axis, in [0, bound).

    The whole plane is softmaxed jointly (sharpened by ``sharpness``),
    marginalized onto ``axis``, and reduced to the expected bin-center
    coordinate.
    """
    h = np.asarray(hm, dtype=np.float64)
    if h.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {h.shape}")
    if axis not in (0, 1):
        raise ValueError("axis must be 0 or 1")
    e = np.exp(sharpness * (h - h.max()))
    w = e / e.sum()
    marg = w.sum(axis=1 - axis)
    c = h.shape[axis]
    centers = (np.arange(c) + 0.5) * (bound / c)
    return float((marg * centers).sum())


def decode_pair(pair: HeatmapPair, cfg: GridConfig) -> list[KeypointEstimate]:
    """Keypoints from one sample's heatmaps, in the normalized frame."""
    if pair.cube_len != cfg.cube_len:
        raise ValueError(f"heatmaps are {pair.cube_len} bins, grid wants {cfg.cube_len}")
    p_theta = fuse_theta(pair)
    out = []
    for j in range(pair.n_joints):
        theta = sinusoidal_soft_argmax(p_theta[j], cfg)
        rho = axis_soft_argmax(pair.hm_theta_r[j], axis=1, bound=cfg.rho_max)
        z = axis_soft_argmax(pair.hm_theta_z[j], axis=1, bound=cfg.z_max)
        out.append(KeypointEstimate(theta=theta, rho=rho, z=z))
    return out


def estimates_to_pose(estimates: list[KeypointEstimate]) -> Pose:
    if len(estimates) != N_JOINTS:
        raise ValueError(f"need {N_JOINTS} estimates, got {len(estimates)}")
    return Pose(np.stack([e.xyz for e in estimates]))
