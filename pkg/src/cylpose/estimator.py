"""Scikit-learn adapters around the backbone and training schedule.

CylindricalPoseEstimator wraps the full training loop behind fit/predict;
CylindricalVoxelizer exposes the cylindrical occupancy transform for
pipelines. Both follow the estimator contract: constructor arguments are
stored verbatim, get_params/set_params work via introspection, and all
fitted state lives in trailing-underscore attributes.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .backbone import Backbone, BackboneConfig
from .evalkit import dist_metric, predict_pose
from .geom import (
    GridConfig,
    OutOfBoundsWarning,
    PointCloud,
    minmax_normalize,
    voxelize_cylindrical,
)
from .pose import N_JOINTS, Pose
from .semitrain import TrainConfig, run_schedule
from .synthgait import (
    LABELED_DOMAIN,
    UNLABELED_DOMAIN,
    CameraViewpoint,
    Dataset,
    MultiviewGroup,
    Sample,
)


def _as_cloud(x) -> PointCloud:
    return x if isinstance(x, PointCloud) else PointCloud(np.asarray(x, dtype=np.float64))


def _as_pose(y) -> Pose:
    if isinstance(y, Pose):
        return y
    arr = np.asarray(y, dtype=np.float64)
    if arr.shape != (N_JOINTS, 3):
        raise ValueError(f"each label must be ({N_JOINTS}, 3) joints, got {arr.shape}")
    return Pose(arr)


class CylindricalVoxelizer(TransformerMixin, BaseEstimator):
    """Point clouds -> cylindrical occupancy volumes [n, C, C, C].

    With normalize=True each cloud is min-max normalized into the grid
    first, which is how the pose estimator consumes data. normalize=False
    expects clouds already expressed in grid coordinates.
    """

    def __init__(self, cube_len: int = 32, normalize: bool = True):
        self.cube_len = cube_len
        self.normalize = normalize

    def fit(self, X, y=None):
        GridConfig(cube_len=self.cube_len)  # validates the grid shape
        self.n_features_in_ = 3
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "n_features_in_"):
            raise NotFittedError("CylindricalVoxelizer is not fitted; call fit first")
        grid = GridConfig(cube_len=self.cube_len)
        out = np.empty((len(X), self.cube_len, self.cube_len, self.cube_len),
                       dtype=np.float32)
        for i, x in enumerate(X):
            cloud = _as_cloud(x)
            if self.normalize:
                cloud, _ = minmax_normalize(cloud, z_max=grid.z_max)
                with warnings.catch_warnings():
                    # the xy bounding-box corner normalizes onto the rim, so a
                    # dropped corner point is routine, not a data problem
                    warnings.simplefilter("ignore", OutOfBoundsWarning)
                    out[i] = voxelize_cylindrical(cloud, grid).occupancy
            else:
                out[i] = voxelize_cylindrical(cloud, grid).occupancy
        return out


class CylindricalPoseEstimator(BaseEstimator):
    """Rotation-equivariant lower-limb keypoint estimator.

    fit(X, y) trains supervised on labeled clouds; mode="semi" adds a
    consistency phase over ``multiview_groups`` (same body captured from
    several viewpoints), and mode="mixed" instead folds those groups into
    the labeled batches using their generator poses. predict returns an
    [n, 8, 3] joint array in the input frame.
    """

    def __init__(self, cube_len: int = 32, epochs: int = 20, epoch_semi: int = 10,
                 batch_labeled: int = 8, lr: float = 1e-4, lr_decay: float = 0.5,
                 lr_period: int = 20, w_s: float = 1.0, w_m: float = 1.0, w_r: float = 1.0,
                 mode: str = "supervised", stop_grad_anchor: bool = False,
                 aug_mirror: bool = True, aug_rot_deg: float = 5.0,
                 aug_translate_cells: float = 5.0, sigma_bins: float = 1.5,
                 seed: int = 0):
        self.cube_len = cube_len
        self.epochs = epochs
        self.epoch_semi = epoch_semi
        self.batch_labeled = batch_labeled
        self.lr = lr
        self.lr_decay = lr_decay
        self.lr_period = lr_period
        self.w_s = w_s
        self.w_m = w_m
        self.w_r = w_r
        self.mode = mode
        self.stop_grad_anchor = stop_grad_anchor
        self.aug_mirror = aug_mirror
        self.aug_rot_deg = aug_rot_deg
        self.aug_translate_cells = aug_translate_cells
        self.sigma_bins = sigma_bins
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, lr_decay=self.lr_decay, lr_period=self.lr_period,
            epochs=self.epochs, epoch_semi=self.epoch_semi,
            batch_labeled=self.batch_labeled, w_s=self.w_s, w_m=self.w_m,
            w_r=self.w_r, seed=self.seed, mode=self.mode,
            stop_grad_anchor=self.stop_grad_anchor, aug_mirror=self.aug_mirror,
            aug_rot_deg=self.aug_rot_deg, aug_translate_cells=self.aug_translate_cells,
            sigma_bins=self.sigma_bins,
        )

    def _group_samples(self, multiview_groups) -> list[Sample]:
        samples: list[Sample] = []
        for gi, grp in enumerate(multiview_groups):
            if isinstance(grp, MultiviewGroup):
                # group ids are renumbered so mixed provenance cannot collide
                for m in grp.samples:
                    samples.append(Sample(m.sample_id, m.cloud, m.view, m.domain, "train",
                                          m.identity, m.condition, m.pose, gi, m.ref_pose))
                continue
            clouds = [_as_cloud(c) for c in grp]
            if len(clouds) < 2:
                raise ValueError(f"group {gi} has {len(clouds)} member(s); need at least 2")
            if self.mode == "mixed":
                raise ValueError(
                    "mixed mode needs MultiviewGroup entries carrying generator poses"
                )
            for k, cloud in enumerate(clouds):
                # azimuth orders members; index 0 stays the anchor view
                view = CameraViewpoint(view_id=f"m{k}", azimuth=k * 1e-3)
                samples.append(Sample(f"fitg{gi:05d}m{k}", cloud, view, UNLABELED_DOMAIN,
                                      split="train", identity=gi,
                                      canonical_group_id=gi))
        return samples

    def fit(self, X, y, multiview_groups=None):
        if y is None or len(X) != len(y):
            raise ValueError("need one pose label per training cloud")
        samples = [
            Sample(f"fit{i:05d}", _as_cloud(x), CameraViewpoint("A", 0.0),
                   LABELED_DOMAIN, split="train", identity=i, pose=_as_pose(t))
            for i, (x, t) in enumerate(zip(X, y))
        ]
        if multiview_groups is not None:
            samples.extend(self._group_samples(multiview_groups))
        result = run_schedule(Dataset(samples), self._train_config(),
                              backbone_config=BackboneConfig(cube_len=self.cube_len))
        self.backbone_ = result.backbone
        self.reports_ = result.reports
        self.n_features_in_ = 3
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "backbone_"):
            raise NotFittedError("CylindricalPoseEstimator is not fitted; call fit first")
        return np.stack([predict_pose(self.backbone_, _as_cloud(x)).joints for x in X])

    def score(self, X, y) -> float:
        """Negative mean joint distance (higher is better)."""
        preds = [Pose(j) for j in self.predict(X)]
        mean, _ = dist_metric(preds, [_as_pose(t) for t in y])
        return -float(np.mean(list(mean.values())))
