"""Metrics, evaluation protocols, and the equivariance/invariance harnesses."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .backbone import Backbone, BackboneConfig, estimates_to_pose
from .geom import (
    GridConfig,
    OutOfBoundsWarning,
    PointCloud,
    minmax_normalize,
    rotate_points_z,
    wrap_angle,
)
from .pose import CATEGORIES, Pose
from .semitrain import TrainConfig, run_schedule
from .synthgait import Dataset

DEFAULT_MAP_THRESHOLD = 0.05  # length units (meters for the generator's bodies)

PROTOCOL_KINDS = ("CS", "CV", "CV_CS")


@dataclass(frozen=True)
class MetricReport:
    """Per-category localization quality over one evaluation set."""

    dist_mean: dict
    dist_std: dict
    map_at_threshold: dict
    threshold: float
    n_samples: int

    def __post_init__(self):
        for cat, v in self.map_at_threshold.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"mAP[{cat}] = {v} outside [0, 1]")
        for cat, v in self.dist_mean.items():
            if v < 0:
                raise ValueError(f"negative distance for {cat}")

    def pooled_dist(self) -> float:
        return float(np.mean(list(self.dist_mean.values())))

    def as_dict(self) -> dict:
        return {
            "dist_mean": dict(self.dist_mean),
            "dist_std": dict(self.dist_std),
            "map_at_threshold": dict(self.map_at_threshold),
            "threshold": self.threshold,
            "n_samples": self.n_samples,
        }


@dataclass(frozen=True)
class ProtocolSpec:
    kind: str
    test_views: tuple = ("X1", "X2", "X3", "X4")
    n_folds: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PROTOCOL_KINDS:
            raise ValueError(f"kind must be one of {PROTOCOL_KINDS}")
        if self.kind != "CS" and not self.test_views:
            raise ValueError("view-based protocols need test views")
        if self.kind != "CV" and self.n_folds < 2:
            raise ValueError("identity splits need at least 2 folds")


def _joint_errors(preds: list[Pose], gts: list[Pose]) -> np.ndarray:
    if len(preds) != len(gts):
        raise ValueError(f"got {len(preds)} predictions for {len(gts)} ground truths")
    if not preds:
        raise ValueError("empty evaluation set")
    p = np.stack([x.joints for x in preds])
    g = np.stack([x.joints for x in gts])
    return np.linalg.norm(p - g, axis=2)  # [n, J]


def dist_metric(preds: list[Pose], gts: list[Pose]):
    """Euclidean error aggregated per joint category, left+right pooled."""
    err = _joint_errors(preds, gts)
    mean, std = {}, {}
    for cat, idxs in CATEGORIES.items():
        pool = err[:, list(idxs)].ravel()
        mean[cat] = float(pool.mean())
        std[cat] = float(pool.std())
    return mean, std


def map_metric(preds: list[Pose], gts: list[Pose], threshold: float = DEFAULT_MAP_THRESHOLD):
    """Fraction of joints with error strictly under the threshold, per category."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    err = _joint_errors(preds, gts)
    return {cat: float((err[:, list(idxs)].ravel() < threshold).mean())
            for cat, idxs in CATEGORIES.items()}


def metric_report(preds: list[Pose], gts: list[Pose],
                  threshold: float = DEFAULT_MAP_THRESHOLD) -> MetricReport:
    mean, std = dist_metric(preds, gts)
    return MetricReport(dist_mean=mean, dist_std=std,
                        map_at_threshold=map_metric(preds, gts, threshold),
                        threshold=threshold, n_samples=len(preds))


def predict_pose(backbone: Backbone, cloud: PointCloud) -> Pose:
    """Normalize, run the network, decode, and map back to the input frame."""
    ncloud, tf = minmax_normalize(cloud, z_max=backbone.config.grid_config().z_max)
    with warnings.catch_warnings():
        # normalization maps the xy extent to the unit disc's bounding box,
        # so corner points can exceed rho_max; dropping them is routine here
        warnings.simplefilter("ignore", OutOfBoundsWarning)
        _, estimates = backbone.forward(ncloud, mode="infer")
    return tf.invert_pose(estimates_to_pose(estimates))


def evaluate_samples(backbone: Backbone, samples,
                     threshold: float = DEFAULT_MAP_THRESHOLD) -> MetricReport:
    preds, gts = [], []
    for s in samples:
        if s.pose is None:
            raise ValueError(f"sample {s.sample_id} has no ground truth")
        preds.append(predict_pose(backbone, s.cloud))
        gts.append(s.pose)
    return metric_report(preds, gts, threshold)


# ---- protocols ----


def run_protocol(spec: ProtocolSpec, dataset, cfg: TrainConfig,
                 backbone_config: BackboneConfig | None = None,
                 threshold: float = DEFAULT_MAP_THRESHOLD) -> dict:
    """Train and evaluate per the protocol; returns reports keyed by fold/view.

    CV trains on the single labeled view plus the unlabeled groups and
    reports one MetricReport per held-out view. CS splits generator
    identities into folds (train on the rest, test on the fold, within
    the labeled view). CV_CS combines both splits.
    """
    out = {}
    if spec.kind == "CV":
        result = run_schedule(dataset, cfg, backbone_config)
        for view in spec.test_views:
            samples = dataset.labeled("test", view)
            if not samples:
                raise ValueError(f"dataset has no test samples for view {view}")
            out[view] = evaluate_samples(result.backbone, samples, threshold)
        return out

    identities = sorted({s.identity for s in dataset.labeled()})
    if len(identities) < spec.n_folds:
        raise ValueError(f"{len(identities)} identities cannot make {spec.n_folds} folds")
    folds = [identities[i :: spec.n_folds] for i in range(spec.n_folds)]
    for k, held_out in enumerate(folds):
        held = set(held_out)
        train_subset = Dataset([s for s in dataset.samples if s.identity not in held])
        result = run_schedule(train_subset, cfg, backbone_config)
        if spec.kind == "CS":
            test = [s for s in dataset.labeled() if s.identity in held]
            out[f"fold{k}"] = evaluate_samples(result.backbone, test, threshold)
        else:  # CV_CS: held-out identities at held-out views
            for view in spec.test_views:
                test = [s for s in dataset.labeled(None, view) if s.identity in held]
                if test:
                    out[f"fold{k}:{view}"] = evaluate_samples(result.backbone, test, threshold)
    return out


# ---- verification harnesses ----


def _strip_boundary_points(cloud: PointCloud, cfg: GridConfig, eps: float = 1e-3) -> PointCloud:
    """Drop points so close to a bin edge that rotation could flip their bin."""
    pts = cloud.points
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    coords = np.column_stack([
        (theta + np.pi) / (2 * np.pi / cfg.cube_len),
        np.hypot(pts[:, 0], pts[:, 1]) / (cfg.rho_max / cfg.cube_len),
        pts[:, 2] / (cfg.z_max / cfg.cube_len),
    ])
    frac = coords - np.floor(coords)
    keep = ((frac > eps) & (frac < 1.0 - eps)).all(axis=1)
    if not keep.any():
        raise ValueError("no points clear of bin boundaries")
    return PointCloud(pts[keep], frame=cloud.frame)


def equivariance_check(backbone: Backbone, cloud: PointCloud, shifts) -> dict:
    """Worst heatmap and θ* deviation between rotating the input and
    cyclically shifting the output, over the given stride-multiple shifts.

    The cloud must already be normalized; points near bin boundaries are
    stripped first so voxelization commutes exactly with the rotation.
    """
    cfg = backbone.config.grid_config()
    stride = backbone.config.theta_stride
    shifts = [int(s) for s in shifts]
    for s in shifts:
        if s % stride != 0:
            raise ValueError(f"shift {s} is not a multiple of the θ stride {stride}")
    clean = _strip_boundary_points(cloud, cfg)
    base_pair, base_est = backbone.forward(clean)
    worst_hm, worst_angle = 0.0, 0.0
    per_shift = []
    for s in shifts:
        angle = 2 * np.pi * s / cfg.cube_len
        rot_cloud = PointCloud(rotate_points_z(clean.points, angle), frame=clean.frame)
        pair, est = backbone.forward(rot_cloud)
        want = base_pair.shifted_theta(s)
        hm_dev = max(
            float(np.abs(pair.hm_theta_r - want.hm_theta_r).max()),
            float(np.abs(pair.hm_theta_z - want.hm_theta_z).max()),
        )
        ang_dev = max(
            abs(float(wrap_angle(e1.theta - e0.theta - angle)))
            for e0, e1 in zip(base_est, est)
        )
        per_shift.append({"shift": s, "heatmap_dev": hm_dev, "theta_dev_rad": ang_dev})
        worst_hm = max(worst_hm, hm_dev)
        worst_angle = max(worst_angle, ang_dev)
    return {"max_heatmap_dev": worst_hm, "max_theta_dev_rad": worst_angle,
            "per_shift": per_shift}


def invariance_check(backbone: Backbone, group_members) -> np.ndarray:
    """Pairwise mean joint distance between member predictions.

    Members live in one canonical frame, so a perfectly
    occlusion-invariant estimator would produce a zero matrix.
    """
    if len(group_members) < 2:
        raise ValueError("invariance needs at least 2 group members")
    poses = [predict_pose(backbone, m.cloud) for m in group_members]
    g = len(poses)
    out = np.zeros((g, g))
    for i in range(g):
        for j in range(g):
            out[i, j] = float(np.linalg.norm(poses[i].joints - poses[j].joints, axis=1).mean())
    return out


def mean_group_invariance(backbone: Backbone, groups) -> float:
    """Mean off-diagonal pairwise Dist across canonical groups."""
    vals = []
    for members in groups:
        m = invariance_check(backbone, members)
        g = m.shape[0]
        vals.append(m[~np.eye(g, dtype=bool)].mean())
    return float(np.mean(vals))


# ---- ablations ----

ABLATION_ARMS = ("full", "no_reg", "no_periodic")


def ablation_suite(dataset, cfg: TrainConfig,
                   backbone_config: BackboneConfig | None = None,
                   test_views=("X1", "X2", "X3", "X4"),
                   threshold: float = DEFAULT_MAP_THRESHOLD) -> dict:
    """Three seeded runs differing in exactly one switch each."""
    base_bc = backbone_config or BackboneConfig()
    arms = {
        "full": (cfg, base_bc),
        "no_reg": (replace(cfg, w_r=0.0), base_bc),
        "no_periodic": (cfg, replace(base_bc, periodic_theta=False)),
    }
    out = {}
    for name, (arm_cfg, arm_bc) in arms.items():
        result = run_schedule(dataset, arm_cfg, arm_bc)
        test = [s for v in test_views for s in dataset.labeled("test", v)]
        out[name] = {
            "report": evaluate_samples(result.backbone, test, threshold),
            "backbone": result.backbone,
        }
    return out
