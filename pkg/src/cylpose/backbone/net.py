"""The rotation-equivariant backbone: volume → dual planar heatmaps.

Axis layout: volumes are [N, 1, θ, ρ, z]; planes are [N, ch, θ, other]
with θ always the first spatial axis. Every convolution that touches θ
pads it periodically (configurable off for the ablation), so a cyclic
θ-shift of the input commutes exactly with the network in infer mode
for shifts divisible by the total θ stride.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..diffcore import Tensor, add, relu, reshape
from ..geom import CylindricalGrid, GridConfig, PointCloud, voxelize_cylindrical
from ..pose import N_JOINTS
from .decode import HeatmapPair, KeypointEstimate, decode_pair
from .layers import AnisoConv3dLayer, BatchNormLayer, Conv2dLayer, Deconv2dLayer

# volume spatial axes
_AXIS_THETA, _AXIS_RHO, _AXIS_Z = 2, 3, 4


@dataclass(frozen=True)
class BackboneConfig:
    """Desk-scale channel plan; cube_len and joint count bind the shapes.

    The head downsamples θ by 4 (stem stride 2, one residual stage
    stride 2) before two stride-2 transposed convolutions restore full
    resolution, so exact shift equivariance holds for θ-shifts in
    multiples of 4 bins.
    """

    cube_len: int = 32
    n_joints: int = N_JOINTS
    aniso_k: int = 5
    aniso_channels: tuple = (1, 8, 3)
    head_stem: int = 12
    head_res: int = 24
    head_up: tuple = (12, 12)
    periodic_theta: bool = True
    final_w_std: float = 1e-3

    @property
    def theta_stride(self) -> int:
        return 4

    def __post_init__(self):
        if self.cube_len < 2 * self.theta_stride or self.cube_len % self.theta_stride != 0:
            raise ValueError(
                f"cube_len {self.cube_len} must be a multiple of the θ stride "
                f"{self.theta_stride}, at least {2 * self.theta_stride}"
            )
        if len(self.aniso_channels) != 3 or self.aniso_channels[0] != 1:
            raise ValueError("aniso_channels must be (1, mid, out)")
        if min(self.aniso_channels) < 1 or self.aniso_k < 1 or self.aniso_k % 2 == 0:
            raise ValueError("aniso channels must be positive and the kernel odd")
        if min(self.head_stem, self.head_res, *self.head_up) < 1 or len(self.head_up) != 2:
            raise ValueError("head plan needs positive stem/res widths and two upsampling widths")
        if self.n_joints < 1 or self.final_w_std <= 0:
            raise ValueError("need at least one joint and a positive final init std")

    def grid_config(self) -> GridConfig:
        return GridConfig(cube_len=self.cube_len)


class _Branch:
    """One θ-plane pipeline: aniso projection stage plus heatmap head."""

    def __init__(self, rng, name, cfg: BackboneConfig, probe_axis: int):
        c0, c1, c2 = cfg.aniso_channels
        per = cfg.periodic_theta
        self.probe_axis = probe_axis
        self.aniso1 = AnisoConv3dLayer(rng, f"{name}.aniso1", c0, c1, cfg.aniso_k, probe_axis)
        self.bn1 = BatchNormLayer(f"{name}.bn1", c1)
        # valid conv spanning the whole probed axis: collapses it to one slice
        self.aniso2 = AnisoConv3dLayer(rng, f"{name}.aniso2", c1, c2, cfg.cube_len,
                                       probe_axis, pad_amount=0)
        self.bn2 = BatchNormLayer(f"{name}.bn2", c2)

        self.stem = Conv2dLayer(rng, f"{name}.stem", c2, cfg.head_stem, 3, 2, per)
        self.stem_bn = BatchNormLayer(f"{name}.stem_bn", cfg.head_stem)
        self.res_a = Conv2dLayer(rng, f"{name}.res_a", cfg.head_stem, cfg.head_res, 3, 2, per)
        self.res_a_bn = BatchNormLayer(f"{name}.res_a_bn", cfg.head_res)
        self.res_b = Conv2dLayer(rng, f"{name}.res_b", cfg.head_res, cfg.head_res, 3, 1, per)
        self.res_b_bn = BatchNormLayer(f"{name}.res_b_bn", cfg.head_res)
        self.res_skip = Conv2dLayer(rng, f"{name}.res_skip", cfg.head_stem, cfg.head_res, 1, 2)
        self.res_skip_bn = BatchNormLayer(f"{name}.res_skip_bn", cfg.head_res)
        u1, u2 = cfg.head_up
        self.up1 = Deconv2dLayer(rng, f"{name}.up1", cfg.head_res, u1, 3, 2, per)
        self.up1_bn = BatchNormLayer(f"{name}.up1_bn", u1)
        self.up2 = Deconv2dLayer(rng, f"{name}.up2", u1, u2, 3, 2, per)
        self.up2_bn = BatchNormLayer(f"{name}.up2_bn", u2)
        self.final = Conv2dLayer(rng, f"{name}.final", u2, cfg.n_joints, 1, 1,
                                 w_std=cfg.final_w_std)

    def layers(self):
        return (self.aniso1, self.bn1, self.aniso2, self.bn2,
                self.stem, self.stem_bn, self.res_a, self.res_a_bn,
                self.res_b, self.res_b_bn, self.res_skip, self.res_skip_bn,
                self.up1, self.up1_bn, self.up2, self.up2_bn, self.final)

    def project(self, vols: Tensor, training: bool, update_stats: bool = True) -> Tensor:
        x = relu(self.bn1(self.aniso1(vols), training, update_stats))
        x = relu(self.bn2(self.aniso2(x), training, update_stats))
        n, ch = x.data.shape[0], x.data.shape[1]
        keep = [x.data.shape[i] for i in (2, 3, 4) if i != self.probe_axis]
        return reshape(x, (n, ch, keep[0], keep[1]))

    def head(self, plane: Tensor, training: bool, update_stats: bool = True) -> Tensor:
        x = relu(self.stem_bn(self.stem(plane), training, update_stats))
        main = relu(self.res_a_bn(self.res_a(x), training, update_stats))
        main = self.res_b_bn(self.res_b(main), training, update_stats)
        skip = self.res_skip_bn(self.res_skip(x), training, update_stats)
        x = relu(add(main, skip))
        x = relu(self.up1_bn(self.up1(x), training, update_stats))
        x = relu(self.up2_bn(self.up2(x), training, update_stats))
        return self.final(x)


class Backbone:
    """Holds parameters for both branches; all forwards run through it."""

    def __init__(self, config: BackboneConfig = BackboneConfig(), seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.branch_tr = _Branch(rng, "tr", config, _AXIS_Z)
        self.branch_tz = _Branch(rng, "tz", config, _AXIS_RHO)
        self.params: dict[str, Tensor] = {}
        self.stats: dict[str, np.ndarray] = {}
        for branch in (self.branch_tr, self.branch_tz):
            for layer in branch.layers():
                layer.register(self.params)
                if isinstance(layer, BatchNormLayer):
                    layer.register_stats(self.stats)

    def _as_volumes(self, vols) -> Tensor:
        t = vols if isinstance(vols, Tensor) else Tensor(np.asarray(vols, dtype=np.float32))
        c = self.config.cube_len
        if t.data.ndim != 5 or t.data.shape[1] != 1 or t.data.shape[2:] != (c, c, c):
            raise ValueError(f"expected volumes [N, 1, {c}, {c}, {c}], got {t.data.shape}")
        return t

    def project_planes(self, vols, training: bool = False):
        """Volume batch → (θ-ρ plane, θ-z plane), each [N, 3, C, C]."""
        t = self._as_volumes(vols)
        return (self.branch_tr.project(t, training), self.branch_tz.project(t, training))

    def heatmap_head(self, plane: Tensor, branch: str, training: bool = False) -> Tensor:
        br = {"tr": self.branch_tr, "tz": self.branch_tz}.get(branch)
        if br is None:
            raise ValueError("branch must be 'tr' or 'tz'")
        return br.head(plane, training)

    def forward_volumes(self, vols, training: bool = False, update_stats: bool = True):
        """Full network on a volume batch → heatmap Tensors [N, J, C, C] ×2.

        update_stats=False trains with batch statistics while leaving
        the running estimates untouched, for auxiliary passes whose
        input distribution differs from the primary training data.
        """
        t = self._as_volumes(vols)
        hm_tr = self.branch_tr.head(
            self.branch_tr.project(t, training, update_stats), training, update_stats)
        hm_tz = self.branch_tz.head(
            self.branch_tz.project(t, training, update_stats), training, update_stats)
        return hm_tr, hm_tz

    def forward_grid(self, grid: CylindricalGrid, training: bool = False) -> HeatmapPair:
        if grid.config.cube_len != self.config.cube_len:
            raise ValueError(
                f"grid is {grid.config.cube_len} bins, backbone wants {self.config.cube_len}"
            )
        vol = grid.occupancy[np.newaxis, np.newaxis]
        hm_tr, hm_tz = self.forward_volumes(vol, training)
        return HeatmapPair(hm_tr.data[0], hm_tz.data[0])

    def forward(self, cloud_normalized: PointCloud, mode: str = "infer"):
        """Normalized cloud → (HeatmapPair, keypoint estimates).

        Deterministic in infer mode; train mode updates batch-norm
        running statistics and is not for concurrent use.
        """
        if mode not in ("infer", "train"):
            raise ValueError("mode must be 'infer' or 'train'")
        grid = voxelize_cylindrical(cloud_normalized, self.config.grid_config())
        pair = self.forward_grid(grid, training=(mode == "train"))
        return pair, decode_pair(pair, self.config.grid_config())

    # ---- state for snapshots and checkpoints ----

    def state_arrays(self):
        """Deep copies of (parameters, running statistics), keyed by name."""
        return ({k: v.data.copy() for k, v in self.params.items()},
                {k: v.copy() for k, v in self.stats.items()})

    def load_state_arrays(self, params: dict, stats: dict) -> None:
        if set(params) != set(self.params) or set(stats) != set(self.stats):
            raise ValueError("state names do not match this backbone's layout")
        for k, v in params.items():
            if self.params[k].data.shape != v.shape:
                raise ValueError(f"shape mismatch for {k}")
            self.params[k].data[...] = v
        for k, v in stats.items():
            self.stats[k][...] = v  # in place: batchnorm layers alias these


def predictions_to_estimates(hm_tr: np.ndarray, hm_tz: np.ndarray,
                             cfg: GridConfig) -> list[list[KeypointEstimate]]:
    """Decode a batch of heatmap arrays [N, J, C, C] to per-sample keypoints."""
    return [decode_pair(HeatmapPair(a, b), cfg) for a, b in zip(hm_tr, hm_tz)]
