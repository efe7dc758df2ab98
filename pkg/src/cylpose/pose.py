"""Lower-limb pose representation.

A pose is an ordered set of 8 joints, left leg first:

    0 hip_l   1 knee_l   2 ankle_l   3 toe_l
    4 hip_r   5 knee_r   6 ankle_r   7 toe_r

Joint positions are metric (meters) unless a caller has normalized them.
Bones connect hip->knee, knee->ankle, ankle->toe on each side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

JOINT_NAMES = (
    "hip_l", "knee_l", "ankle_l", "toe_l",
    "hip_r", "knee_r", "ankle_r", "toe_r",
)
N_JOINTS = len(JOINT_NAMES)

# (proximal, distal) joint index pairs, left leg then right leg.
BONES = ((0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7))

# Joint categories pool the left and right instance of each landmark.
CATEGORIES = {
    "hip": (0, 4),
    "knee": (1, 5),
    "ankle": (2, 6),
    "toe": (3, 7),
}

# Index permutation that swaps the left and right leg blocks.
_LR_SWAP = np.array([4, 5, 6, 7, 0, 1, 2, 3])


@dataclass(frozen=True)
class Pose:
    """An 8-joint lower-limb pose. ``joints`` is an (8, 3) float64 array."""

    joints: np.ndarray = field()

    def __post_init__(self):
        joints = np.ascontiguousarray(np.asarray(self.joints, dtype=np.float64))
        if joints.shape != (N_JOINTS, 3):
            raise ValueError(f"pose must have shape ({N_JOINTS}, 3), got {joints.shape}")
        if not np.all(np.isfinite(joints)):
            raise ValueError("pose contains non-finite joint coordinates")
        object.__setattr__(self, "joints", joints)

    def bone_lengths(self) -> np.ndarray:
        """Euclidean length of each bone, in BONES order."""
        a = self.joints[[b[0] for b in BONES]]
        b = self.joints[[b[1] for b in BONES]]
        return np.linalg.norm(b - a, axis=1)

    def hip_separation(self) -> float:
        return float(np.linalg.norm(self.joints[0] - self.joints[4]))

    def validate_skeleton(self) -> None:
        """Assert the structural invariants of a generator-produced pose."""
        lengths = self.bone_lengths()
        if not np.all(lengths > 0.0):
            raise ValueError(f"degenerate bone lengths: {lengths}")
        if not self.hip_separation() > 0.0:
            raise ValueError("left and right hips coincide")

    def swapped_left_right(self) -> "Pose":
        """Pose with the left and right leg joint blocks exchanged."""
        return Pose(self.joints[_LR_SWAP])


def read_pose_bin(path) -> Pose:
    """Read an 8x3 little-endian float32 pose file."""
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != N_JOINTS * 3:
        raise IOError(f"{path}: expected {N_JOINTS * 3} floats, found {raw.size}")
    return Pose(raw.reshape(N_JOINTS, 3).astype(np.float64))


def write_pose_bin(path, pose: Pose) -> None:
    """Write a pose as 8x3 little-endian float32, no header."""
    pose.joints.astype("<f4").tofile(path)
