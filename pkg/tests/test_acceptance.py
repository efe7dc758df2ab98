"""End-to-end acceptance gate.

Each criterion prints one verdict line (visible on the terminal even under
output capture) and then asserts. Criteria 7-10 share one session-scoped
experiment: five seeded worlds, each training the supervised-only,
mixed-supervised, semi-supervised, and consistency-without-drift-guard
arms on the same 100-labeled / 100-group dataset at C = 32.
"""

import hashlib
import math
import time

import numpy as np
import pytest

from cylpose.backbone import Backbone, BackboneConfig
from cylpose.backbone.decode import DegenerateThetaError, sinusoidal_soft_argmax
from cylpose.diffcore import run_all_gradchecks
from cylpose.evalkit import (
    dist_metric,
    equivariance_check,
    map_metric,
    mean_group_invariance,
    predict_pose,
)
from cylpose.geom import (
    GridConfig,
    PointCloud,
    cart_to_cyl,
    cyclic_shift_grid,
    cyl_to_cart,
    minmax_normalize,
    rotate_z,
    voxelize_cylindrical,
    wrap_angle,
)
from cylpose.pose import CATEGORIES, N_JOINTS, Pose
from cylpose.semitrain import TrainConfig, run_schedule
from cylpose.synthgait import DatasetSpec, DomainShiftConfig, generate_dataset

# ---- experiment configuration (criteria 7-10) ----
# Azimuths are whole multiples of the backbone's exact-shift stride so the
# consistency loss acts along the architecture's symmetry; magnitudes of the
# real-vs-synthetic gap are fixed here for the seeded comparison.
ACCEPT_AZIMUTHS = (0.0, 45.0, 135.0, 225.0, 315.0)
ACCEPT_SHIFT = DomainShiftConfig(noise_sigma=0.004, radial_bias=0.012, label_offset=0.05)
SEEDS = (0, 1, 2, 3, 4)
ARM_BASE = dict(epochs=30, epoch_semi=22, batch_labeled=4, lr=3e-3, lr_decay=0.5,
                lr_period=12)
SEMI_EXTRA = dict(stop_grad_anchor=False, w_m=1.0, w_r=1.0)
BC = BackboneConfig(cube_len=32)


def _verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance] criterion {n:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {n}: {detail}"


# ---- criterion 1: voxelizer vs brute force ----


def _voxelize_oracle(points, config):
    c = config.cube_len
    occ = np.zeros((c, c, c), dtype=np.float32)
    for x, y, z in points:
        theta = math.atan2(y, x)
        if theta >= math.pi:
            theta = -math.pi
        rho = math.hypot(x, y)
        tb = math.floor((theta + math.pi) / (2.0 * math.pi / c)) % c
        rb = math.floor(rho / (config.rho_max / c))
        zb = math.floor(z / (config.z_max / c))
        if 0 <= rb < c and 0 <= zb < c:
            occ[tb, rb, zb] = 1.0
    return occ


def _random_inbounds(rng, n, config, margin=1e-3):
    theta = rng.uniform(-math.pi, math.pi, size=n)
    rho = rng.uniform(0.0, config.rho_max - margin, size=n)
    z = rng.uniform(0.0, config.z_max - margin, size=n)
    return cyl_to_cart(np.stack([theta, rho, z], axis=1))


def test_criterion_1_voxelizer_oracle(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    ok = True
    for c in (8, 32, 128):
        config = GridConfig(cube_len=c)
        pts = _random_inbounds(rng, 10_000, config)
        got = voxelize_cylindrical(PointCloud(pts), config).occupancy
        ok = ok and np.array_equal(got, _voxelize_oracle(pts, config))
    dt = time.perf_counter() - t0
    ok = ok and dt < 5.0
    _verdict(capsys, 1, ok, f"10k points, C in (8,32,128), exact match, {dt:.2f}s (< 5s)")


# ---- criterion 2: rotation/shift commutation ----


def test_criterion_2_rotation_shift_commutation(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(12)
    config = GridConfig(cube_len=32)
    c = config.cube_len
    width = 2.0 * math.pi / c
    stride = BC.theta_stride
    checked = 0
    ok = True
    for _ in range(100):
        pts = _random_inbounds(rng, 1000, config)
        # points within eps of a theta bin edge could flip bins under
        # rotation fp noise; the commutation claim excludes them
        frac = (cart_to_cyl(pts)[:, 0] + math.pi) / width
        pts = pts[np.abs(frac - np.round(frac)) > 1e-3]
        cloud = PointCloud(pts)
        base = voxelize_cylindrical(cloud, config)
        for s in range(0, c, stride):
            direct = voxelize_cylindrical(rotate_z(cloud, width * s), config)
            ok = ok and np.array_equal(direct.occupancy,
                                       cyclic_shift_grid(base, s).occupancy)
            checked += 1
    dt = time.perf_counter() - t0
    ok = ok and dt < 10.0
    _verdict(capsys, 2, ok,
             f"100 clouds x {checked // 100} shifts, exact commutation, {dt:.2f}s (< 10s)")


# ---- criterion 3: architectural equivariance, untrained ----


def _normalized_test_cloud(seed):
    from cylpose.synthgait import (
        generate_surface_cloud,
        sample_gait_params,
        sample_gait_pose,
        sample_skeleton,
    )

    rng = np.random.default_rng(seed)
    skel = sample_skeleton(rng)
    pose = sample_gait_pose(skel, sample_gait_params(rng))
    cloud = generate_surface_cloud(skel, pose, 4000.0, rng)
    ncloud, _ = minmax_normalize(cloud, z_max=GridConfig(cube_len=32).z_max)
    return ncloud


def test_criterion_3_untrained_equivariance(capsys):
    t0 = time.perf_counter()
    cloud = _normalized_test_cloud(424242)
    shifts = range(0, BC.cube_len, BC.theta_stride)
    res = equivariance_check(Backbone(BC, seed=3), cloud, shifts)
    ok = res["max_heatmap_dev"] <= 1e-5 and res["max_theta_dev_rad"] <= 1e-3
    zp = equivariance_check(
        Backbone(BackboneConfig(cube_len=32, periodic_theta=False), seed=3), cloud, shifts)
    control_fails = zp["max_heatmap_dev"] > 1e-5 or zp["max_theta_dev_rad"] > 1e-3
    dt = time.perf_counter() - t0
    ok = ok and control_fails and dt < 60.0
    _verdict(capsys, 3, ok,
             f"heatmap dev {res['max_heatmap_dev']:.2e} (<= 1e-5), theta dev "
             f"{res['max_theta_dev_rad']:.2e} rad (<= 1e-3), zero-pad control dev "
             f"{zp['max_heatmap_dev']:.2e} (must exceed), {dt:.1f}s (< 60s)")


# ---- criterion 4: gradient checks ----


def test_criterion_4_gradchecks(capsys):
    t0 = time.perf_counter()
    results = run_all_gradchecks(seed=0, tol=1e-4, repeats=20)
    worst = max(r.max_rel_err for r in results)
    ok = all(r.passed for r in results)
    dt = time.perf_counter() - t0
    ok = ok and dt < 120.0
    _verdict(capsys, 4, ok,
             f"{len(results)} checks, worst rel err {worst:.2e} (<= 1e-4), "
             f"{dt:.1f}s (< 120s)")


# ---- criterion 5: sinusoidal soft-argmax ----


def test_criterion_5_soft_argmax(capsys):
    cfg = GridConfig(cube_len=32)
    width = 2.0 * math.pi / cfg.cube_len
    centers = cfg.theta_bin_centers()
    ok = True
    for k in (0, 7, 16, 31):
        p = np.full(cfg.cube_len, -30.0)
        p[k] = 30.0
        ok = ok and abs(wrap_angle(sinusoidal_soft_argmax(p, cfg) - centers[k])) <= 1e-6
    rng = np.random.default_rng(5)
    p = rng.normal(size=cfg.cube_len)
    base = sinusoidal_soft_argmax(p, cfg)
    for s in (1, 5, 13, 28):
        got = sinusoidal_soft_argmax(np.roll(p, s), cfg)
        ok = ok and abs(wrap_angle(got - base - s * width)) <= 1e-6
    try:
        sinusoidal_soft_argmax(np.zeros(cfg.cube_len), cfg)
        degenerate_raises = False
    except DegenerateThetaError:
        degenerate_raises = True
    ok = ok and degenerate_raises
    _verdict(capsys, 5, ok,
             "delta recovery and shift identity within 1e-6 rad; uniform input raises")


# ---- criterion 6: metric oracles ----


def _dist_oracle(preds, gts):
    mean, std = {}, {}
    for cat, idxs in CATEGORIES.items():
        vals = []
        for p, g in zip(preds, gts):
            for j in idxs:
                d = p.joints[j] - g.joints[j]
                vals.append(math.sqrt(float(np.dot(d, d))))
        arr = np.array(vals)
        mean[cat], std[cat] = float(arr.mean()), float(arr.std())
    return mean, std


def _map_oracle(preds, gts, threshold):
    out = {}
    for cat, idxs in CATEGORIES.items():
        hits = total = 0
        for p, g in zip(preds, gts):
            for j in idxs:
                d = p.joints[j] - g.joints[j]
                hits += math.sqrt(float(np.dot(d, d))) < threshold
                total += 1
        out[cat] = hits / total
    return out


def test_criterion_6_metric_oracles(capsys):
    rng = np.random.default_rng(6)
    preds = [Pose(rng.normal(size=(N_JOINTS, 3))) for _ in range(40)]
    gts = [Pose(p.joints + 0.05 * rng.normal(size=(N_JOINTS, 3))) for p in preds]
    mean, std = dist_metric(preds, gts)
    omean, ostd = _dist_oracle(preds, gts)
    ok = mean == omean and std == ostd
    ok = ok and map_metric(preds, gts, 0.08) == _map_oracle(preds, gts, 0.08)

    # 3-4-5 right triangle: every joint off by exactly (0.03, 0.04, 0)
    gt = Pose(np.zeros((N_JOINTS, 3)))
    pred = Pose(np.tile([0.03, 0.04, 0.0], (N_JOINTS, 1)))
    m345, s345 = dist_metric([pred], [gt])
    ok = ok and all(m345[c] == 0.05 and s345[c] == 0.0 for c in CATEGORIES)

    # half detected: left joints exact, right joints a meter off
    half = gt.joints.copy()
    half[4:] += 1.0
    mhalf = map_metric([Pose(half)], [gt], 0.05)
    ok = ok and all(mhalf[c] == 0.5 for c in CATEGORIES)
    _verdict(capsys, 6, ok, "dist/map equal brute force; 3-4-5 and half-detected bit-exact")


# ---- criteria 7-10: the seeded cross-view experiment ----


def _dataset(seed):
    return generate_dataset(
        DatasetSpec(seed=seed, n_identities=8, labeled_train=100,
                    labeled_test_per_view=15, groups_train=100, groups_test=10,
                    shift=ACCEPT_SHIFT, azimuths_deg=ACCEPT_AZIMUTHS))


def _arm_config(mode, seed, **extra):
    return TrainConfig(mode=mode, seed=seed, **ARM_BASE, **extra)


def _run_arm(ds, cfg):
    t0 = time.perf_counter()
    result = run_schedule(ds, cfg, backbone_config=BC)
    test_x = [s for s in ds.labeled("test") if s.view.view_id != "A"]
    preds = [predict_pose(result.backbone, s.cloud) for s in test_x]
    mean, _ = dist_metric(preds, [s.pose for s in test_x])
    return {
        "backbone": result.backbone,
        "dist": mean,
        "pooled": float(np.mean(list(mean.values()))),
        "preds": np.stack([p.joints for p in preds]),
        "wall": time.perf_counter() - t0,
    }


def _param_digest(backbone):
    h = hashlib.sha256()
    params, stats = backbone.state_arrays()
    for name in sorted(params):
        h.update(name.encode() + params[name].tobytes())
    for name in sorted(stats):
        h.update(name.encode() + stats[name].tobytes())
    return h.hexdigest()


@pytest.fixture(scope="session")
def experiment():
    worlds = {}
    for seed in SEEDS:
        ds = _dataset(seed)
        groups_test = ds.groups("test")
        sup = _run_arm(ds, _arm_config("supervised", seed))
        mix = _run_arm(ds, _arm_config("mixed", seed))
        semi = _run_arm(ds, _arm_config("semi", seed, **SEMI_EXTRA))
        noreg_extra = dict(SEMI_EXTRA, w_r=0.0)
        noreg = _run_arm(ds, _arm_config("semi", seed, **noreg_extra))
        for arm in (sup, semi):
            arm["inv"] = mean_group_invariance(arm["backbone"], groups_test)
        semi["digest"] = _param_digest(semi["backbone"])
        for arm in (sup, mix, semi, noreg):
            del arm["backbone"]  # keep the fixture light across the session
        worlds[seed] = {"sup": sup, "mixed": mix, "semi": semi, "noreg": noreg}
    return worlds


def test_criterion_7_cross_view_direction(capsys, experiment):
    wins = 0
    for seed in SEEDS:
        w = experiment[seed]
        beats_sup = sum(w["semi"]["dist"][c] < w["sup"]["dist"][c] for c in CATEGORIES)
        beats_mix = sum(w["semi"]["dist"][c] < w["mixed"]["dist"][c] for c in CATEGORIES)
        wins += beats_sup >= 3 and beats_mix >= 3
    wall = sum(experiment[s][a]["wall"] for s in SEEDS for a in ("sup", "mixed", "semi"))
    pooled = {a: np.mean([experiment[s][a]["pooled"] for s in SEEDS])
              for a in ("sup", "mixed", "semi")}
    ok = wins >= 4 and wall <= 1800.0
    _verdict(capsys, 7, ok,
             f"semi beats both arms on >=3/4 categories for {wins}/5 seeds (need >=4); "
             f"mean pooled semi {pooled['semi']:.4f} sup {pooled['sup']:.4f} "
             f"mixed {pooled['mixed']:.4f}; {wall / 60:.1f} min (<= 30)")


def test_criterion_8_ablation_directions(capsys, experiment):
    noreg = np.mean([experiment[s]["noreg"]["pooled"] for s in SEEDS])
    full = np.mean([experiment[s]["semi"]["pooled"] for s in SEEDS])
    wall = sum(experiment[s]["noreg"]["wall"] for s in SEEDS)

    cloud = _normalized_test_cloud(424242)
    shifts = range(0, BC.cube_len, BC.theta_stride)
    zp = equivariance_check(
        Backbone(BackboneConfig(cube_len=32, periodic_theta=False), seed=3), cloud, shifts)
    no_periodic_fails = zp["max_heatmap_dev"] > 1e-5 or zp["max_theta_dev_rad"] > 1e-3

    ok = noreg > full and no_periodic_fails and wall <= 1800.0
    _verdict(capsys, 8, ok,
             f"drift-guard ablation pooled {noreg:.4f} > full {full:.4f}; "
             f"zero-pad ablation breaks shift equivariance "
             f"(dev {zp['max_heatmap_dev']:.2e}); {wall / 60:.1f} min (<= 30)")


def test_criterion_9_invariance_trend(capsys, experiment):
    wins = sum(experiment[s]["semi"]["inv"] < experiment[s]["sup"]["inv"] for s in SEEDS)
    mean_semi = np.mean([experiment[s]["semi"]["inv"] for s in SEEDS])
    mean_sup = np.mean([experiment[s]["sup"]["inv"] for s in SEEDS])
    ok = wins >= 4
    _verdict(capsys, 9, ok,
             f"group invariance semi < supervised for {wins}/5 seeds (need >=4); "
             f"means {mean_semi:.4f} vs {mean_sup:.4f}")


def test_criterion_10_determinism(capsys, experiment):
    seed = SEEDS[0]
    ds = _dataset(seed)
    again = _run_arm(ds, _arm_config("semi", seed, **SEMI_EXTRA))
    same_preds = np.array_equal(again["preds"], experiment[seed]["semi"]["preds"])
    same_params = _param_digest(again["backbone"]) == experiment[seed]["semi"]["digest"]
    ok = same_preds and same_params
    _verdict(capsys, 10, ok,
             f"rerun of seed {seed} semi arm: predictions bit-identical {same_preds}, "
             f"parameters bit-identical {same_params}")
