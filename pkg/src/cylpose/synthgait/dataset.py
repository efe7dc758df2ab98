"""Dataset assembly: labeled real-like captures and unlabeled canonical
multi-view groups, with an on-disk manifest format.

Two domains:

  * ``labeled_real_like``: single-view captures expressed in the camera
    frame (body rotated by -azimuth), with sensor noise, an inflated
    surface (clothing proxy), and labels shifted by a fixed
    keypoint-convention offset along each joint's distal bone.
  * ``unlabeled_synth``: clean canonical-frame clouds occluded from each
    of the five viewpoints; all members of a group share one body pose,
    which is kept as generator metadata (never used as supervision).

Per-sample RNG streams derive from (master seed, stream tag, index), so
regeneration with one seed is byte-identical and order-independent.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..geom import PointCloud, camera_frame, rotate_pose_z, rotate_z, write_xyz_bin, read_xyz_bin
from ..pose import Pose, read_pose_bin, write_pose_bin
from .body import (
    GAIT_CONDITIONS,
    LimbSkeleton,
    generate_surface_cloud,
    sample_gait_params,
    sample_gait_pose,
    sample_skeleton,
)
from .occlusion import (
    MAX_ELEVATION,
    VIEW_AZIMUTHS_DEG,
    VIEW_IDS,
    CameraViewpoint,
    add_noise,
    simulate_occlusion,
)

LABELED_DOMAIN = "labeled_real_like"
UNLABELED_DOMAIN = "unlabeled_synth"

# RNG stream tags: (seed, tag, *index) -> independent per-sample streams.
_STREAM_LABELED_TRAIN = 0
_STREAM_LABELED_TEST = 1
_STREAM_GROUP_TRAIN = 2
_STREAM_GROUP_TEST = 3
_STREAM_IDENTITY = 10


@dataclass(frozen=True)
class DomainShiftConfig:
    """Synthetic-to-real-like domain gap, all lengths in meters."""

    noise_sigma: float = 0.003
    radial_bias: float = 0.005
    label_offset: float = 0.010

    def __post_init__(self):
        if self.noise_sigma < 0 or self.radial_bias < 0 or self.label_offset < 0:
            raise ValueError("domain shift magnitudes must be non-negative")


@dataclass(frozen=True)
class Sample:
    """One capture: a cloud, its viewpoint, and optional supervision."""

    sample_id: str
    cloud: PointCloud
    view: CameraViewpoint
    domain: str
    split: str = "train"
    identity: int = 0
    condition: str = "normal"
    pose: Pose | None = None
    canonical_group_id: int | None = None
    ref_pose: Pose | None = None  # generator metadata, never supervision


@dataclass(frozen=True)
class MultiviewGroup:
    """Occluded views of one frozen body, canonical frame, anchor first."""

    group_id: int
    samples: tuple
    pose: Pose

    def __post_init__(self):
        if self.samples[0].view.azimuth != 0.0:
            raise ValueError("group anchor must be the azimuth-0 view")


def convention_offset_pose(pose: Pose, offset: float) -> Pose:
    """Shift each joint by ``offset`` along its distal bone direction.

    Mimics a keypoint-convention mismatch between the generator and a
    real annotation protocol.
    """
    joints = pose.joints.copy()
    # joint index -> (proximal, distal) of the bone it shifts along
    along = {0: (0, 1), 1: (1, 2), 2: (2, 3), 3: (2, 3), 4: (4, 5), 5: (5, 6), 6: (6, 7), 7: (6, 7)}
    for j, (a, b) in along.items():
        d = pose.joints[b] - pose.joints[a]
        joints[j] += offset * d / np.linalg.norm(d)
    return Pose(joints)


def make_labeled_sample(
    skel: LimbSkeleton,
    view_id: str,
    azimuth: float,
    shift: DomainShiftConfig,
    density: float,
    rng: np.random.Generator,
    sample_id: str = "labeled",
    split: str = "train",
    identity: int = 0,
    condition: str | None = None,
    pixels: int = 128,
) -> Sample:
    """One real-like capture from ``azimuth``, in the camera frame."""
    gait = sample_gait_params(rng, condition)
    pose = sample_gait_pose(skel, gait)
    cloud = generate_surface_cloud(skel, pose, density, rng, radius_bias=shift.radial_bias)
    view = CameraViewpoint(
        view_id=view_id,
        azimuth=azimuth,
        elevation=float(rng.uniform(-MAX_ELEVATION, MAX_ELEVATION)),
    )
    visible = simulate_occlusion(cloud, view, pixels=pixels)
    in_camera = rotate_z(visible, -azimuth)
    noisy = add_noise(in_camera, shift.noise_sigma, rng)
    label = rotate_pose_z(convention_offset_pose(pose, shift.label_offset), -azimuth)
    return Sample(
        sample_id=sample_id,
        cloud=PointCloud(noisy.points, frame=camera_frame(view_id)),
        view=view,
        domain=LABELED_DOMAIN,
        split=split,
        identity=identity,
        condition=gait.condition,
        pose=label,
    )


def make_multiview_group(
    skel: LimbSkeleton,
    views: list[CameraViewpoint],
    density: float,
    rng: np.random.Generator,
    group_id: int = 0,
    split: str = "train",
    identity: int = 0,
    condition: str | None = None,
    pixels: int = 128,
) -> MultiviewGroup:
    """Freeze one pose, occlude it from every view, keep the canonical frame."""
    gait = sample_gait_params(rng, condition)
    pose = sample_gait_pose(skel, gait)
    cloud = generate_surface_cloud(skel, pose, density, rng)
    samples = []
    for view in views:
        visible = simulate_occlusion(cloud, view, pixels=pixels)
        samples.append(
            Sample(
                sample_id=f"G_{split}_{group_id:05d}_{view.view_id}",
                cloud=visible,
                view=view,
                domain=UNLABELED_DOMAIN,
                split=split,
                identity=identity,
                condition=gait.condition,
                canonical_group_id=group_id,
                ref_pose=pose,
            )
        )
    return MultiviewGroup(group_id=group_id, samples=tuple(samples), pose=pose)


def synthetic_member_as_labeled(sample: Sample) -> Sample:
    """Re-express an unlabeled group member as a labeled camera-frame sample.

    Rotates the canonical cloud into the member's camera frame and
    attaches the generator pose as the label (no convention offset).
    Used only by mixed-supervision training.
    """
    if sample.ref_pose is None:
        raise ValueError("sample carries no generator pose")
    azimuth = sample.view.azimuth
    return Sample(
        sample_id=sample.sample_id + "_as_labeled",
        cloud=PointCloud(
            rotate_z(sample.cloud, -azimuth).points, frame=camera_frame(sample.view.view_id)
        ),
        view=sample.view,
        domain=LABELED_DOMAIN,
        split=sample.split,
        identity=sample.identity,
        condition=sample.condition,
        pose=rotate_pose_z(sample.ref_pose, -azimuth),
        canonical_group_id=sample.canonical_group_id,
    )


@dataclass(frozen=True)
class DatasetSpec:
    """Counts and knobs for one generated dataset."""

    seed: int = 0
    n_identities: int = 8
    labeled_train: int = 100
    labeled_test_per_view: int = 25
    groups_train: int = 100
    groups_test: int = 10
    density: float = 4000.0
    pixels: int = 128
    shift: DomainShiftConfig = field(default_factory=DomainShiftConfig)
    azimuths_deg: tuple = VIEW_AZIMUTHS_DEG

    def __post_init__(self):
        if self.n_identities < 1:
            raise ValueError("need at least one identity")
        if self.azimuths_deg[0] != 0.0:
            raise ValueError("first view must sit at azimuth 0 (the anchor view)")


class Dataset:
    """In-memory dataset: flat sample list plus group structure."""

    def __init__(self, samples: list[Sample], spec: DatasetSpec | None = None):
        self.samples = list(samples)
        self.spec = spec

    def labeled(self, split: str | None = None, view_id: str | None = None) -> list[Sample]:
        out = [s for s in self.samples if s.domain == LABELED_DOMAIN]
        if split is not None:
            out = [s for s in out if s.split == split]
        if view_id is not None:
            out = [s for s in out if s.view.view_id == view_id]
        return out

    def groups(self, split: str | None = None) -> list[list[Sample]]:
        by_id: dict[tuple, list[Sample]] = {}
        for s in self.samples:
            if s.domain != UNLABELED_DOMAIN:
                continue
            if split is not None and s.split != split:
                continue
            by_id.setdefault((s.split, s.canonical_group_id), []).append(s)
        groups = []
        for key in sorted(by_id, key=str):
            members = sorted(by_id[key], key=lambda s: s.view.azimuth)
            groups.append(members)
        return groups


def _identity_skeleton(seed: int, identity: int) -> LimbSkeleton:
    return sample_skeleton(np.random.default_rng([seed, _STREAM_IDENTITY, identity]))


def generate_dataset(spec: DatasetSpec) -> Dataset:
    """Generate the full dataset in memory, deterministically from the seed."""
    azimuths = [math.radians(a) for a in spec.azimuths_deg]
    samples: list[Sample] = []

    for i in range(spec.labeled_train):
        identity = i % spec.n_identities
        samples.append(
            make_labeled_sample(
                _identity_skeleton(spec.seed, identity),
                view_id=VIEW_IDS[0],
                azimuth=azimuths[0],
                shift=spec.shift,
                density=spec.density,
                rng=np.random.default_rng([spec.seed, _STREAM_LABELED_TRAIN, i]),
                sample_id=f"Lt{i:05d}",
                split="train",
                identity=identity,
                condition=GAIT_CONDITIONS[i % len(GAIT_CONDITIONS)],
                pixels=spec.pixels,
            )
        )

    for v in range(1, len(azimuths)):
        for j in range(spec.labeled_test_per_view):
            identity = j % spec.n_identities
            samples.append(
                make_labeled_sample(
                    _identity_skeleton(spec.seed, identity),
                    view_id=VIEW_IDS[v],
                    azimuth=azimuths[v],
                    shift=spec.shift,
                    density=spec.density,
                    rng=np.random.default_rng([spec.seed, _STREAM_LABELED_TEST, v, j]),
                    sample_id=f"Le{VIEW_IDS[v]}{j:05d}",
                    split="test",
                    identity=identity,
                    condition=GAIT_CONDITIONS[j % len(GAIT_CONDITIONS)],
                    pixels=spec.pixels,
                )
            )

    for split, count, tag in (
        ("train", spec.groups_train, _STREAM_GROUP_TRAIN),
        ("test", spec.groups_test, _STREAM_GROUP_TEST),
    ):
        for g in range(count):
            identity = g % spec.n_identities
            rng = np.random.default_rng([spec.seed, tag, g])
            from .occlusion import make_viewpoints

            views = make_viewpoints(rng, azimuths_deg=spec.azimuths_deg)
            group = make_multiview_group(
                _identity_skeleton(spec.seed, identity),
                views,
                spec.density,
                rng,
                group_id=g,
                split=split,
                identity=identity,
                condition=GAIT_CONDITIONS[g % len(GAIT_CONDITIONS)],
                pixels=spec.pixels,
            )
            samples.extend(group.samples)

    return Dataset(samples, spec=spec)


def build_dataset(spec: DatasetSpec, out_dir) -> Dataset:
    """Generate and write a dataset; same seed gives identical bytes.

    Layout: manifest.json, clouds/<id>.xyz.bin, poses/<id>.pose.bin.
    Unlabeled records point at a shared per-group pose file via
    ref_pose_file (generator metadata, not supervision).
    """
    out = Path(out_dir)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    (out / "poses").mkdir(parents=True, exist_ok=True)
    dataset = generate_dataset(spec)

    records = []
    written_group_poses = set()
    for s in dataset.samples:
        cloud_file = f"clouds/{s.sample_id}.xyz.bin"
        write_xyz_bin(out / cloud_file, s.cloud.points)
        pose_file = None
        ref_pose_file = None
        if s.pose is not None:
            pose_file = f"poses/{s.sample_id}.pose.bin"
            write_pose_bin(out / pose_file, s.pose)
        if s.ref_pose is not None:
            key = (s.split, s.canonical_group_id)
            ref_pose_file = f"poses/G_{s.split}_{s.canonical_group_id:05d}.pose.bin"
            if key not in written_group_poses:
                write_pose_bin(out / ref_pose_file, s.ref_pose)
                written_group_poses.add(key)
        records.append(
            {
                "id": s.sample_id,
                "domain": s.domain,
                "view_id": s.view.view_id,
                "azimuth": s.view.azimuth,
                "elevation": s.view.elevation,
                "split": s.split,
                "identity": s.identity,
                "condition": s.condition,
                "canonical_group_id": s.canonical_group_id,
                "cloud_file": cloud_file,
                "pose_file": pose_file,
                "ref_pose_file": ref_pose_file,
            }
        )

    manifest = {
        "format_version": 1,
        "seed": spec.seed,
        "spec": asdict(spec),
        "samples": records,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return dataset


def load_dataset(root) -> Dataset:
    """Load a dataset written by build_dataset."""
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise IOError(f"no manifest.json under {root}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != 1:
        raise IOError(f"unsupported manifest format_version {manifest.get('format_version')}")

    ref_cache: dict[str, Pose] = {}
    samples = []
    for rec in manifest["samples"]:
        points = read_xyz_bin(root / rec["cloud_file"])
        frame = camera_frame(rec["view_id"]) if rec["domain"] == LABELED_DOMAIN else "canonical"
        pose = read_pose_bin(root / rec["pose_file"]) if rec["pose_file"] else None
        ref_pose = None
        if rec["ref_pose_file"]:
            path = rec["ref_pose_file"]
            if path not in ref_cache:
                ref_cache[path] = read_pose_bin(root / path)
            ref_pose = ref_cache[path]
        samples.append(
            Sample(
                sample_id=rec["id"],
                cloud=PointCloud(points, frame=frame),
                view=CameraViewpoint(
                    view_id=rec["view_id"],
                    azimuth=rec["azimuth"],
                    elevation=rec["elevation"],
                ),
                domain=rec["domain"],
                split=rec["split"],
                identity=rec["identity"],
                condition=rec["condition"],
                pose=pose,
                canonical_group_id=rec["canonical_group_id"],
                ref_pose=ref_pose,
            )
        )
    spec_dict = dict(manifest["spec"])
    spec_dict["shift"] = DomainShiftConfig(**spec_dict["shift"])
    spec_dict["azimuths_deg"] = tuple(spec_dict["azimuths_deg"])
    return Dataset(samples, spec=DatasetSpec(**spec_dict))
