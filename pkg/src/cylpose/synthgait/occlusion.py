"""View-dependent self-occlusion and sensor noise.

Visibility is computed with an orthographic depth buffer: points project
along the view direction onto a pixel grid, each point occludes a 3x3
pixel footprint, and a point survives only if nothing sits meaningfully
in front of it within that footprint. The operator selects a subset of
its input; coordinates are never modified. Because depths and pixel
coordinates are inner products with a frame built from the view
direction and the z axis, the selection commutes exactly with
co-rotating body and camera about z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geom import PointCloud

VIEW_IDS = ("A", "X1", "X2", "X3", "X4")
VIEW_AZIMUTHS_DEG = (0.0, 72.0, 144.0, 216.0, 288.0)
MAX_ELEVATION = math.radians(5.0)


@dataclass(frozen=True)
class CameraViewpoint:
    """A depth camera placed at ``azimuth`` around the body.

    elevation is a small per-capture jitter in [-5 deg, +5 deg]. standoff
    is the nominal camera distance; it is metadata only under the
    orthographic projection used here.
    """

    view_id: str
    azimuth: float
    elevation: float = 0.0
    standoff: float = 3.0

    def __post_init__(self):
        if abs(self.elevation) > MAX_ELEVATION + 1e-12:
            raise ValueError(
                f"elevation jitter {self.elevation} exceeds +-{MAX_ELEVATION} rad"
            )
        if self.standoff <= 0.0:
            raise ValueError("standoff must be positive")

    def direction(self) -> np.ndarray:
        """Unit vector pointing from the camera toward the body."""
        ce = math.cos(self.elevation)
        return -np.array(
            [math.cos(self.azimuth) * ce, math.sin(self.azimuth) * ce, math.sin(self.elevation)]
        )


def make_viewpoints(
    rng: np.random.Generator | None = None,
    azimuths_deg=VIEW_AZIMUTHS_DEG,
    view_ids=VIEW_IDS,
    jitter: bool = True,
) -> list[CameraViewpoint]:
    """The five standard viewpoints, optionally with elevation jitter."""
    views = []
    for vid, az in zip(view_ids, azimuths_deg):
        elev = 0.0
        if jitter:
            if rng is None:
                raise ValueError("jitter requires an rng")
            elev = float(rng.uniform(-MAX_ELEVATION, MAX_ELEVATION))
        views.append(CameraViewpoint(view_id=vid, azimuth=math.radians(az), elevation=elev))
    return views


def simulate_occlusion(
    cloud: PointCloud, view: CameraViewpoint, pixels: int = 128
) -> PointCloud:
    """Keep the points a depth camera at ``view`` would actually see.

    The pixel pitch is 1/``pixels`` of the cloud's largest bounding-box
    extent. A point survives if its depth is within two pixel pitches of
    the nearest depth recorded anywhere in its 3x3 pixel neighborhood,
    so a sparsely sampled back surface cannot leak through gaps between
    front-surface samples. Output points are a subset of the input, in
    input order.
    """
    pts = cloud.points
    d = view.direction()
    u = np.cross(d, [0.0, 0.0, 1.0])
    u /= np.linalg.norm(u)
    v = np.cross(d, u)

    extent = float((pts.max(axis=0) - pts.min(axis=0)).max())
    if extent <= 0.0:
        # Degenerate single-location cloud: everything shares one pixel.
        return PointCloud(pts[:1].copy(), frame=cloud.frame)
    pitch = extent / pixels

    iu = np.floor(pts @ u / pitch).astype(np.int64)
    iv = np.floor(pts @ v / pitch).astype(np.int64)
    depth = pts @ d
    iu -= iu.min()
    iv -= iv.min()

    # Per-pixel nearest depth, padded by one pixel for the 3x3 window.
    buf = np.full((iu.max() + 3, iv.max() + 3), np.inf)
    np.minimum.at(buf, (iu + 1, iv + 1), depth)
    near = np.full((iu.max() + 1, iv.max() + 1), np.inf)
    for du in range(3):
        for dv in range(3):
            np.minimum(near, buf[du : du + near.shape[0], dv : dv + near.shape[1]], out=near)

    keep = depth <= near[iu, iv] + 2.0 * pitch
    return PointCloud(pts[keep].copy(), frame=cloud.frame)


def add_noise(cloud: PointCloud, sigma: float, rng: np.random.Generator) -> PointCloud:
    """Add zero-mean isotropic Gaussian noise, sigma in meters."""
    if sigma < 0.0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0.0:
        return PointCloud(cloud.points.copy(), frame=cloud.frame)
    return PointCloud(
        cloud.points + rng.normal(0.0, sigma, size=cloud.points.shape), frame=cloud.frame
    )
