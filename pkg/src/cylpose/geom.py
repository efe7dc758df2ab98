"""Point-cloud geometry: frames, cylindrical coordinates, voxelization.

Coordinate conventions used throughout the package:

  * Cartesian points are (x, y, z) with z the vertical (body) axis.
  * Cylindrical coordinates are (theta, rho, z) with
    theta = atan2(y, x) in [-pi, pi) and rho = sqrt(x^2 + y^2) >= 0.
  * The voxel grid is cube_len bins per axis; theta bins tile [-pi, pi)
    left-inclusive, rho bins tile [0, rho_max), z bins tile [0, z_max).
    Bin i along theta covers [-pi + i*w, -pi + (i+1)*w), w = 2*pi/C.
  * Rotation about z by 2*pi*s/C corresponds exactly to a cyclic shift of
    the occupancy grid by s bins along the theta axis.

All geometry is float64; voxel grids are float32 with values in {0, 1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import warnings

import numpy as np

from .pose import Pose

CANONICAL_FRAME = "canonical"


def camera_frame(view_id: str) -> str:
    """Frame tag for a cloud expressed in the camera frame of a view."""
    return f"camera:{view_id}"


class OutOfBoundsWarning(UserWarning):
    """Raised-as-warning when voxelization drops out-of-bounds points."""


@dataclass(frozen=True)
class PointCloud:
    """An unordered set of 3D points with a frame tag.

    ``points`` is an (N, 3) float64 array, N >= 1, all values finite.
    """

    points: np.ndarray = field()
    frame: str = CANONICAL_FRAME

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if pts.shape[0] == 0:
            raise ValueError("point cloud is empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite values")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class ViewRotation:
    """A rotation about the z axis by ``angle`` radians."""

    angle: float

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def compose(self, other: "ViewRotation") -> "ViewRotation":
        return ViewRotation(wrap_angle(self.angle + other.angle))

    def inverse(self) -> "ViewRotation":
        return ViewRotation(wrap_angle(-self.angle))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return rotate_points_z(points, self.angle)


def wrap_angle(theta):
    """Wrap angle(s) to [-pi, pi); +pi maps to -pi."""
    return np.mod(np.asarray(theta, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi


def rotate_points_z(points: np.ndarray, angle: float) -> np.ndarray:
    """Rotate (N, 3) points about the z axis by ``angle`` radians."""
    c, s = math.cos(angle), math.sin(angle)
    pts = np.asarray(points, dtype=np.float64)
    out = np.empty_like(pts)
    out[:, 0] = c * pts[:, 0] - s * pts[:, 1]
    out[:, 1] = s * pts[:, 0] + c * pts[:, 1]
    out[:, 2] = pts[:, 2]
    return out


def rotate_z(cloud: PointCloud, angle: float) -> PointCloud:
    """Rotate a cloud about the z axis, preserving its frame tag."""
    return PointCloud(rotate_points_z(cloud.points, angle), frame=cloud.frame)


def rotate_pose_z(pose: Pose, angle: float) -> Pose:
    return Pose(rotate_points_z(pose.joints, angle))


def cart_to_cyl(points: np.ndarray) -> np.ndarray:
    """(x, y, z) -> (theta, rho, z) with theta in [-pi, pi).

    The z axis itself (rho == 0) gets theta = 0 by the atan2 convention.
    """
    pts = np.asarray(points, dtype=np.float64)
    out = np.empty_like(pts)
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    # atan2 returns (-pi, pi]; fold the +pi seam onto -pi.
    out[:, 0] = np.where(theta >= np.pi, -np.pi, theta)
    out[:, 1] = np.hypot(pts[:, 0], pts[:, 1])
    out[:, 2] = pts[:, 2]
    return out


def cyl_to_cart(cyl: np.ndarray) -> np.ndarray:
    """(theta, rho, z) -> (rho*cos(theta), rho*sin(theta), z)."""
    c = np.asarray(cyl, dtype=np.float64)
    out = np.empty_like(c)
    out[:, 0] = c[:, 1] * np.cos(c[:, 0])
    out[:, 1] = c[:, 1] * np.sin(c[:, 0])
    out[:, 2] = c[:, 2]
    return out


@dataclass(frozen=True)
class NormalizationTransform:
    """Per-cloud min-max normalization parameters.

    Forward map (z_max is the height of the normalized z range):

        x' = (x - cx) / scale
        y' = (y - cy) / scale
        z' = ((z - cz) / scale + 1) * z_max / 2

    which centers x and y on the rotation axis and squeezes z into
    [0, z_max]. The map is affine and exactly invertible.
    """

    center: np.ndarray
    scale: float
    z_max: float = 1.0

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        out = (pts - self.center[None, :]) / self.scale
        out[:, 2] = (out[:, 2] + 1.0) * (self.z_max / 2.0)
        return out

    def invert(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        out = pts.copy()
        out[:, 2] = out[:, 2] / (self.z_max / 2.0) - 1.0
        return out * self.scale + self.center[None, :]

    def apply_pose(self, pose: Pose) -> Pose:
        return Pose(self.apply(pose.joints))

    def invert_pose(self, pose: Pose) -> Pose:
        return Pose(self.invert(pose.joints))


def minmax_normalize(cloud: PointCloud, z_max: float = 1.0):
    """Center a cloud on the rotation axis and scale it to the unit box.

    center is the midpoint of the per-axis bounding box; scale is the
    largest per-axis half-extent. Output x, y lie in [-1, 1] and z in
    [0, z_max].

    Returns:
        (normalized PointCloud, NormalizationTransform)

    Raises:
        ValueError: if the cloud has zero extent on every axis.
    """
    pts = cloud.points
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    half = (hi - lo) / 2.0
    scale = float(half.max())
    if scale <= 0.0:
        raise ValueError("cloud has zero spatial extent; cannot normalize")
    transform = NormalizationTransform(center=(lo + hi) / 2.0, scale=scale, z_max=z_max)
    return PointCloud(transform.apply(pts), frame=cloud.frame), transform


def mirror_chirality(cloud: PointCloud, pose: Pose | None = None):
    """Mirror across the x = 0 plane, exchanging left and right legs.

    Applying twice is the identity. If a pose is given, its joint labels
    are re-ordered so left-leg indices keep naming the anatomical left.
    """
    mirrored_pts = cloud.points.copy()
    mirrored_pts[:, 0] = -mirrored_pts[:, 0]
    mirrored = PointCloud(mirrored_pts, frame=cloud.frame)
    if pose is None:
        return mirrored
    joints = pose.joints.copy()
    joints[:, 0] = -joints[:, 0]
    return mirrored, Pose(joints).swapped_left_right()


@dataclass(frozen=True)
class GridConfig:
    """Cylindrical voxel grid shape: cube_len bins per axis."""

    cube_len: int = 32
    rho_max: float = 1.0
    z_max: float = 1.0

    def __post_init__(self):
        if self.cube_len < 4:
            raise ValueError(f"cube_len must be >= 4, got {self.cube_len}")
        if self.rho_max <= 0.0 or self.z_max <= 0.0:
            raise ValueError("rho_max and z_max must be positive")

    def theta_bin_centers(self) -> np.ndarray:
        c = self.cube_len
        return -np.pi + (np.arange(c) + 0.5) * (2.0 * np.pi / c)

    def rho_bin_centers(self) -> np.ndarray:
        c = self.cube_len
        return (np.arange(c) + 0.5) * (self.rho_max / c)

    def z_bin_centers(self) -> np.ndarray:
        c = self.cube_len
        return (np.arange(c) + 0.5) * (self.z_max / c)


@dataclass(frozen=True)
class CylindricalGrid:
    """Binary occupancy over (theta-bin, rho-bin, z-bin), float32 {0, 1}."""

    occupancy: np.ndarray
    config: GridConfig
    dropped: int = 0

    def __post_init__(self):
        occ = np.ascontiguousarray(np.asarray(self.occupancy, dtype=np.float32))
        c = self.config.cube_len
        if occ.shape != (c, c, c):
            raise ValueError(f"occupancy must be ({c}, {c}, {c}), got {occ.shape}")
        object.__setattr__(self, "occupancy", occ)


def voxelize_cylindrical(cloud: PointCloud, config: GridConfig) -> CylindricalGrid:
    """Bin a cloud into a binary cylindrical occupancy grid.

    Points with rho >= rho_max or z outside [0, z_max) are dropped; the
    drop count is recorded on the grid and reported once per call as an
    OutOfBoundsWarning. Theta is periodic, so no point is ever dropped
    for its angle.

    Raises:
        ValueError: if every point is out of bounds.
    """
    c = config.cube_len
    cyl = cart_to_cyl(cloud.points)
    # Left-inclusive bins: floor(value / width). The theta axis is cyclic,
    # so fp rounding at the seam folds back with a modulo rather than a drop.
    tb = np.floor((cyl[:, 0] + np.pi) * (c / (2.0 * np.pi))).astype(np.int64) % c
    rb = np.floor(cyl[:, 1] * (c / config.rho_max)).astype(np.int64)
    zb = np.floor(cyl[:, 2] * (c / config.z_max)).astype(np.int64)
    keep = (rb >= 0) & (rb < c) & (zb >= 0) & (zb < c)
    dropped = int(np.count_nonzero(~keep))
    if dropped == len(cloud):
        raise ValueError("all points fall outside the cylindrical grid")
    if dropped:
        warnings.warn(
            f"voxelize dropped {dropped} of {len(cloud)} out-of-bounds points",
            OutOfBoundsWarning,
            stacklevel=2,
        )
    occ = np.zeros((c, c, c), dtype=np.float32)
    occ[tb[keep], rb[keep], zb[keep]] = 1.0
    return CylindricalGrid(occ, config, dropped=dropped)


def cyclic_shift_grid(grid: CylindricalGrid, shift: int) -> CylindricalGrid:
    """Cyclically shift occupancy by ``shift`` bins along the theta axis.

    A shift of +s matches a rotation of the source cloud by +2*pi*s/C.
    """
    return CylindricalGrid(
        np.roll(grid.occupancy, shift, axis=0), grid.config, dropped=grid.dropped
    )


def read_xyz_bin(path) -> np.ndarray:
    """Read little-endian float32 xyz triples into an (N, 3) float64 array."""
    raw = np.fromfile(path, dtype="<f4")
    if raw.size == 0 or raw.size % 3 != 0:
        raise IOError(f"{path}: byte length is not a positive multiple of 12")
    return raw.reshape(-1, 3).astype(np.float64)


def write_xyz_bin(path, points: np.ndarray) -> None:
    """Write (N, 3) points as little-endian float32 triples, no header."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must be (N, 3), got {pts.shape}")
    pts.astype("<f4").tofile(path)
