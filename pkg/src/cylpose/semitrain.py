"""Three-loss training: supervised warmup, then multi-view consistency
with a frozen-snapshot regularizer.

The schedule trains on labeled camera-frame samples only until
``epoch_semi``, snapshots the network there, and afterwards adds two
unsupervised terms per step: agreement between the occluded members of
one canonical group, and agreement of the anchor member with the frozen
snapshot's prediction (which stops the group consensus from drifting).
Every random draw comes from a generator seeded by (seed, stream,
epoch, step), so runs are reproducible and resumable at epoch
boundaries.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .backbone import Backbone, BackboneConfig, gt_heatmaps
from .diffcore import (
    AdamState,
    Tensor,
    adam_step,
    add,
    backward,
    mse_loss,
    mul,
    stop_gradient,
    zero_grads,
)
from .geom import (
    GridConfig,
    OutOfBoundsWarning,
    PointCloud,
    minmax_normalize,
    mirror_chirality,
    voxelize_cylindrical,
)
from .pose import Pose
from .synthgait import Sample, synthetic_member_as_labeled

MODES = ("supervised", "semi", "mixed")

# rng stream tags
_STREAM_EPOCH = 7001
_STREAM_STEP = 7002

# translation augmentation is quoted in grid cells at this reference
# resolution, independent of the actual cube_len
_REFERENCE_CUBE = 128


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    lr_decay: float = 0.5
    lr_period: int = 20
    epochs: int = 20
    epoch_semi: int = 10
    batch_labeled: int = 8
    w_s: float = 1.0
    w_m: float = 1.0
    w_r: float = 1.0
    seed: int = 0
    mode: str = "semi"
    stop_grad_anchor: bool = False
    aug_mirror: bool = True
    aug_rot_deg: float = 5.0
    aug_translate_cells: float = 5.0
    sigma_bins: float = 1.5

    def __post_init__(self):
        if self.lr < 0 or not 0 < self.lr_decay <= 1 or self.lr_period < 1:
            raise ValueError("need lr >= 0, decay in (0, 1], period >= 1")
        if self.epochs < 1 or not 0 <= self.epoch_semi <= self.epochs:
            raise ValueError("need 1 <= epochs and 0 <= epoch_semi <= epochs")
        if min(self.w_s, self.w_m, self.w_r) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.batch_labeled < 1:
            raise ValueError("batch_labeled must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.aug_rot_deg < 0 or self.aug_translate_cells < 0 or self.sigma_bins <= 0:
            raise ValueError("augmentation magnitudes must be non-negative, sigma positive")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.lr_period)


@dataclass(frozen=True)
class LossReport:
    l_s: float
    l_m: float
    l_reg: float
    total: float
    weights: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        vals = (self.l_s, self.l_m, self.l_reg, self.total)
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise ValueError(f"losses must be finite and non-negative, got {vals}")
        w_s, w_m, w_r = self.weights
        expect = w_s * self.l_s + w_m * self.l_m + w_r * self.l_reg
        if abs(self.total - expect) > 1e-6 * max(1.0, abs(expect)):
            raise ValueError(f"total {self.total} != weighted sum {expect}")


class FrozenSnapshot:
    """Immutable copy of a backbone at epoch_semi; used only in infer mode."""

    def __init__(self, config: BackboneConfig, seed: int, params: dict, stats: dict, epoch: int):
        self._net = Backbone(config, seed=seed)
        self._net.load_state_arrays(params, stats)
        self.epoch = int(epoch)

    @classmethod
    def from_backbone(cls, backbone: Backbone, epoch: int) -> "FrozenSnapshot":
        params, stats = backbone.state_arrays()
        return cls(backbone.config, backbone.seed, params, stats, epoch)

    def state_arrays(self):
        return self._net.state_arrays()

    @property
    def config(self) -> BackboneConfig:
        return self._net.config

    def predict_volumes(self, vols):
        hm_tr, hm_tz = self._net.forward_volumes(vols, training=False)
        return hm_tr.data, hm_tz.data


# ---- losses ----


def loss_supervised(pred_tr: Tensor, pred_tz: Tensor,
                    target_tr: np.ndarray, target_tz: np.ndarray) -> Tensor:
    """MSE over both planes jointly (they have equal element counts)."""
    return mul(add(mse_loss(pred_tr, Tensor(target_tr)),
                   mse_loss(pred_tz, Tensor(target_tz))), 0.5)


def loss_multiview(pred_tr: Tensor, pred_tz: Tensor, anchor_index: int = 0,
                   stop_grad_anchor: bool = False) -> Tensor:
    """Σ over non-anchor members of the pairwise MSE against the anchor."""
    g = pred_tr.data.shape[0]
    if g < 2:
        raise ValueError("multiview consistency needs at least 2 group members")
    if not 0 <= anchor_index < g:
        raise ValueError(f"anchor index {anchor_index} outside group of {g}")
    a_tr = pred_tr[anchor_index : anchor_index + 1]
    a_tz = pred_tz[anchor_index : anchor_index + 1]
    if stop_grad_anchor:
        a_tr, a_tz = stop_gradient(a_tr), stop_gradient(a_tz)
    total = None
    for i in range(g):
        if i == anchor_index:
            continue
        term = add(mse_loss(pred_tr[i : i + 1], a_tr), mse_loss(pred_tz[i : i + 1], a_tz))
        total = term if total is None else add(total, term)
    return mul(total, 0.5)


def loss_reg(pred_anchor_tr: Tensor, pred_anchor_tz: Tensor,
             frozen_tr: np.ndarray, frozen_tz: np.ndarray) -> Tensor:
    """MSE of the anchor prediction against the frozen snapshot's (constant)."""
    return mul(add(mse_loss(pred_anchor_tr, Tensor(frozen_tr)),
                   mse_loss(pred_anchor_tz, Tensor(frozen_tz))), 0.5)


# ---- augmentation ----


def _rot_xy(ax: float, ay: float) -> np.ndarray:
    ca, sa, cb, sb = np.cos(ax), np.sin(ax), np.cos(ay), np.sin(ay)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    return rx @ ry


def _draw_geometry(cfg: TrainConfig, rng) -> tuple:
    """One shared set of augmentation draws (mirror, tilt, shift)."""
    do_mirror = bool(cfg.aug_mirror and rng.random() < 0.5)
    amp = math.radians(cfg.aug_rot_deg)
    rot = _rot_xy(rng.uniform(-amp, amp), rng.uniform(-amp, amp)) if amp > 0 else None
    if cfg.aug_translate_cells > 0:
        unit = cfg.aug_translate_cells / _REFERENCE_CUBE
        delta = rng.uniform(-1.0, 1.0, 3)
        delta[:2] *= 2.0 * unit  # x, y span [-1, 1] after normalization
        delta[2] *= unit
    else:
        delta = np.zeros(3)
    return do_mirror, rot, delta


def _feasible_shift(delta: np.ndarray, joints: np.ndarray, grid: GridConfig) -> np.ndarray:
    """Largest halving of delta that keeps every joint inside the grid."""
    for lam in (1.0, 0.5, 0.25, 0.125, 0.0):
        moved = joints + lam * delta
        rho = np.hypot(moved[:, 0], moved[:, 1])
        if (rho < 0.995 * grid.rho_max).all() and (moved[:, 2] > 0.005 * grid.z_max).all() \
                and (moved[:, 2] < 0.995 * grid.z_max).all():
            return lam * delta
    return np.zeros(3)


def _quiet_voxelize(cloud: PointCloud, grid: GridConfig) -> np.ndarray:
    # augmentation legitimately pushes a few surface points over the rim
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutOfBoundsWarning)
        return voxelize_cylindrical(cloud, grid).occupancy


def _apply_geometry(cloud: PointCloud, pose: Pose | None, geometry, grid: GridConfig):
    """Mirror/tilt in metric space, normalize, then shift in grid space."""
    do_mirror, rot, delta = geometry
    if do_mirror:
        if pose is None:
            cloud = mirror_chirality(cloud)
        else:
            cloud, pose = mirror_chirality(cloud, pose)
    if rot is not None:
        cloud = PointCloud(cloud.points @ rot.T, frame=cloud.frame)
        if pose is not None:
            pose = Pose(pose.joints @ rot.T)
    ncloud, tf = minmax_normalize(cloud, z_max=grid.z_max)
    npose = tf.apply_pose(pose) if pose is not None else None
    if np.any(delta):
        if npose is not None:
            delta = _feasible_shift(delta, npose.joints, grid)
            npose = Pose(npose.joints + delta)
        ncloud = PointCloud(ncloud.points + delta, frame=ncloud.frame)
    return ncloud, npose


def _clamp_pose_to_grid(pose: Pose, grid: GridConfig) -> Pose:
    """Clip joints into the heatmap support with a small margin.

    Normalization uses the cloud's extent, so a label can land just
    outside it when the visible surface truncates the body (an occluded
    foot, a convention offset past the lowest point). Targets must live
    on the grid; the clip biases such labels by at most the overshoot.
    """
    joints = pose.joints.copy()
    joints[:, 2] = np.clip(joints[:, 2], 0.005 * grid.z_max, 0.995 * grid.z_max)
    rho = np.hypot(joints[:, 0], joints[:, 1])
    over = rho > 0.995 * grid.rho_max
    if over.any():
        scale = 0.995 * grid.rho_max / rho[over]
        joints[over, 0] *= scale
        joints[over, 1] *= scale
    return Pose(joints)


def augment_labeled(sample: Sample, grid: GridConfig, cfg: TrainConfig, rng):
    """One labeled sample → (occupancy volume, target planes)."""
    if sample.pose is None:
        raise ValueError(f"sample {sample.sample_id} has no label")
    ncloud, npose = _apply_geometry(sample.cloud, sample.pose, _draw_geometry(cfg, rng), grid)
    targets = gt_heatmaps(_clamp_pose_to_grid(npose, grid), grid, cfg.sigma_bins)
    return _quiet_voxelize(ncloud, grid), targets


def augment_group(members: list, grid: GridConfig, cfg: TrainConfig, rng) -> np.ndarray:
    """Group members share one geometric draw so they stay comparable."""
    geometry = _draw_geometry(cfg, rng)
    vols = [
        _quiet_voxelize(_apply_geometry(m.cloud, None, geometry, grid)[0], grid)
        for m in members
    ]
    return np.stack(vols)


# ---- steps ----


def _labeled_batch_arrays(samples, grid: GridConfig, cfg: TrainConfig, rng):
    vols, t_tr, t_tz = [], [], []
    for s in samples:
        vol, targets = augment_labeled(s, grid, cfg, rng)
        vols.append(vol)
        t_tr.append(targets.hm_theta_r)
        t_tz.append(targets.hm_theta_z)
    return np.stack(vols)[:, np.newaxis], np.stack(t_tr), np.stack(t_tz)


def train_step_supervised(backbone: Backbone, samples, cfg: TrainConfig,
                          adam: AdamState, lr: float, rng) -> LossReport:
    grid = backbone.config.grid_config()
    vols, t_tr, t_tz = _labeled_batch_arrays(samples, grid, cfg, rng)
    pred_tr, pred_tz = backbone.forward_volumes(vols, training=True)
    l_s = loss_supervised(pred_tr, pred_tz, t_tr, t_tz)
    zero_grads(backbone.params)
    backward(mul(l_s, cfg.w_s))
    adam_step(backbone.params, adam, lr)
    l_s_val = float(l_s.data)
    return LossReport(l_s=l_s_val, l_m=0.0, l_reg=0.0, total=cfg.w_s * l_s_val,
                      weights=(cfg.w_s, cfg.w_m, cfg.w_r))


def train_step_semi(backbone: Backbone, samples, group_members, snapshot: FrozenSnapshot,
                    cfg: TrainConfig, adam: AdamState, lr: float, rng) -> LossReport:
    if snapshot is None:
        raise ValueError("semi-supervised step requires the frozen snapshot")
    grid = backbone.config.grid_config()
    vols, t_tr, t_tz = _labeled_batch_arrays(samples, grid, cfg, rng)
    group_vols = augment_group(group_members, grid, cfg, rng)[:, np.newaxis]

    pred_tr, pred_tz = backbone.forward_volumes(vols, training=True)
    l_s = loss_supervised(pred_tr, pred_tz, t_tr, t_tz)

    # consistency runs in the same normalization regime as the supervised
    # loss; update_stats=False keeps the unlabeled group from steering the
    # running statistics the evaluator depends on
    g_tr, g_tz = backbone.forward_volumes(group_vols, training=True, update_stats=False)
    l_m = loss_multiview(g_tr, g_tz, anchor_index=0, stop_grad_anchor=cfg.stop_grad_anchor)

    # the drift term compares inference-mode predictions: that is the regime
    # the snapshot was captured in and the one deployment sees
    a_tr, a_tz = backbone.forward_volumes(group_vols[0:1], training=False)
    frozen_tr, frozen_tz = snapshot.predict_volumes(group_vols[0:1])
    l_r = loss_reg(a_tr, a_tz, frozen_tr, frozen_tz)

    total = add(add(mul(l_s, cfg.w_s), mul(l_m, cfg.w_m)), mul(l_r, cfg.w_r))
    zero_grads(backbone.params)
    backward(total)
    adam_step(backbone.params, adam, lr)
    l_s_val, l_m_val, l_r_val = float(l_s.data), float(l_m.data), float(l_r.data)
    return LossReport(l_s=l_s_val, l_m=l_m_val, l_reg=l_r_val,
                      total=cfg.w_s * l_s_val + cfg.w_m * l_m_val + cfg.w_r * l_r_val,
                      weights=(cfg.w_s, cfg.w_m, cfg.w_r))


# ---- schedule ----


@dataclass
class TrainResult:
    backbone: Backbone
    snapshot: FrozenSnapshot | None
    reports: list = field(default_factory=list)
    adam: AdamState = field(default_factory=AdamState)


def run_schedule(dataset, cfg: TrainConfig, backbone_config: BackboneConfig | None = None,
                 log_fn=None, backbone: Backbone | None = None,
                 adam: AdamState | None = None, snapshot: FrozenSnapshot | None = None,
                 start_epoch: int = 0) -> TrainResult:
    """Run the full schedule; resumable at epoch boundaries.

    Supervised and mixed modes never enter the semi phase; mixed fills
    half of each batch with generator-labeled synthetic members at the
    same total batch size and step count. Passing
    backbone/adam/snapshot/start_epoch continues an interrupted run and
    reproduces the uninterrupted result exactly.
    """
    labeled = dataset.labeled("train")
    if not labeled:
        raise ValueError("dataset has no labeled training samples")
    groups = dataset.groups("train")
    if cfg.mode == "semi" and cfg.epoch_semi < cfg.epochs and not groups:
        raise ValueError("semi mode needs unlabeled canonical groups")
    synth_pool = []
    if cfg.mode == "mixed":
        synth_pool = [synthetic_member_as_labeled(m) for grp in groups for m in grp]
        if not synth_pool:
            raise ValueError("mixed mode needs synthetic groups to relabel")

    bb = backbone if backbone is not None else Backbone(backbone_config or BackboneConfig(),
                                                        seed=cfg.seed)
    adam = adam if adam is not None else AdamState()
    reports = list()
    n_steps = math.ceil(len(labeled) / cfg.batch_labeled)
    # mixed mode holds the total batch size fixed and splits it evenly, so
    # all three modes see the same step count and per-step sample budget
    n_real = (cfg.batch_labeled + 1) // 2 if cfg.mode == "mixed" else cfg.batch_labeled

    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.perf_counter()
        lr = cfg.lr_at(epoch)
        ep_rng = np.random.default_rng([cfg.seed, _STREAM_EPOCH, epoch])
        order = ep_rng.permutation(len(labeled))
        synth_order = ep_rng.permutation(len(synth_pool)) if synth_pool else None
        semi_phase = cfg.mode == "semi" and epoch >= cfg.epoch_semi
        if cfg.mode == "semi" and epoch == cfg.epoch_semi and snapshot is None:
            snapshot = FrozenSnapshot.from_backbone(bb, epoch)
        group_order = ep_rng.permutation(len(groups)) if semi_phase else None

        sums = np.zeros(4)
        for step in range(n_steps):
            idx = order[step * n_real : step * n_real + n_real]
            batch = [labeled[i] for i in idx]
            if synth_pool:
                n_synth = cfg.batch_labeled - len(batch)
                take = [synth_pool[synth_order[(step * n_synth + k) % len(synth_pool)]]
                        for k in range(n_synth)]
                batch = batch + take
            rng = np.random.default_rng([cfg.seed, _STREAM_STEP, epoch, step])
            if semi_phase:
                members = groups[group_order[step % len(groups)]]
                rep = train_step_semi(bb, batch, members, snapshot, cfg, adam, lr, rng)
            else:
                rep = train_step_supervised(bb, batch, cfg, adam, lr, rng)
            sums += (rep.l_s, rep.l_m, rep.l_reg, rep.total)

        mean = sums / n_steps
        record = {
            "epoch": epoch,
            "lr": lr,
            "l_s": float(mean[0]),
            "l_m": float(mean[1]),
            "l_reg": float(mean[2]),
            "total": float(mean[3]),
            "wall_time_s": time.perf_counter() - t0,
        }
        reports.append(record)
        if log_fn is not None:
            log_fn(record)

    return TrainResult(backbone=bb, snapshot=snapshot, reports=reports, adam=adam)
