"""Ground-truth heatmap construction for supervised training."""

from __future__ import annotations

import numpy as np

from ..geom import GridConfig, cart_to_cyl
from ..pose import Pose
from .decode import HeatmapPair

DEFAULT_SIGMA_BINS = 1.5


def _wrapped_sq_dist(i, t, c):
    # distance on the θ ring: candidate offsets one period either side
    d = np.abs(i - t)
    d = np.minimum(d, np.abs(i - t + c))
    d = np.minimum(d, np.abs(i - t - c))
    return d * d


def gt_heatmaps(pose: Pose, cfg: GridConfig, sigma_bins: float = DEFAULT_SIGMA_BINS) -> HeatmapPair:
    """Unit-peak separable Gaussians at each joint's bin-space position.

    θ distances wrap modulo C; ρ and z tails are truncated at the plane
    edge. A joint whose ρ or z falls outside the grid is an error, since
    its bump would have no well-defined center.
    """
    if sigma_bins <= 0:
        raise ValueError("sigma_bins must be positive")
    c = cfg.cube_len
    cyl = cart_to_cyl(pose.joints)
    if np.any(cyl[:, 1] >= cfg.rho_max) or np.any(cyl[:, 2] < 0) or np.any(cyl[:, 2] >= cfg.z_max):
        raise ValueError("joint outside the grid's rho/z bounds")
    # continuous bin coordinates: bin i spans [i, i+1) in this scale
    t_theta = (cyl[:, 0] + np.pi) * (c / (2.0 * np.pi)) - 0.5
    t_rho = cyl[:, 1] * (c / cfg.rho_max) - 0.5
    t_z = cyl[:, 2] * (c / cfg.z_max) - 0.5

    idx = np.arange(c, dtype=np.float64)
    inv2s2 = 1.0 / (2.0 * sigma_bins * sigma_bins)
    n = pose.joints.shape[0]
    hm_tr = np.empty((n, c, c), dtype=np.float32)
    hm_tz = np.empty((n, c, c), dtype=np.float32)
    for j in range(n):
        g_theta = np.exp(-_wrapped_sq_dist(idx, t_theta[j], c) * inv2s2)
        g_rho = np.exp(-((idx - t_rho[j]) ** 2) * inv2s2)
        g_z = np.exp(-((idx - t_z[j]) ** 2) * inv2s2)
        hm_tr[j] = np.outer(g_theta, g_rho)
        hm_tz[j] = np.outer(g_theta, g_z)
    return HeatmapPair(hm_tr, hm_tz)
