"""Command-line entry points and persistence formats.

Subcommands: gen (dataset directory), train (checkpoints + JSONL log),
eval (metric JSON/CSV), equiv and gradcheck (verification, exit code 2
on tolerance failure), plot (portable pixmaps + skeleton CSV).
Exit codes: 0 success, 1 usage/config, 2 tolerance failure, 3 I/O.
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .backbone import Backbone, BackboneConfig
from .diffcore import AdamState
from .evalkit import (
    DEFAULT_MAP_THRESHOLD,
    equivariance_check,
    evaluate_samples,
    predict_pose,
)
from .geom import minmax_normalize, voxelize_cylindrical
from .semitrain import FrozenSnapshot, TrainConfig, run_schedule
from .synthgait import (
    DatasetSpec,
    DomainShiftConfig,
    build_dataset,
    load_dataset,
    sample_gait_params,
    sample_gait_pose,
    sample_skeleton,
    generate_surface_cloud,
)

CHECKPOINT_MAGIC = b"CYLP"
CHECKPOINT_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_TOLERANCE = 2
EXIT_IO = 3


class CheckpointError(IOError):
    """Malformed, truncated, or wrong-version checkpoint file."""


class _UsageError(Exception):
    pass


# ---- checkpoint format ----
#
# magic "CYLP" | u32 LE version | u32 LE manifest length | UTF-8 JSON
# manifest | raw little-endian float32 arrays in manifest order. The
# manifest lists every array's name/shape/dtype plus the backbone
# config, epoch, seed, optimizer step count, and snapshot epoch.


def _checkpoint_arrays(backbone, adam, snapshot):
    params, stats = backbone.state_arrays()
    arrays = [(f"param:{k}", v) for k, v in params.items()]
    arrays += [(f"stat:{k}", v) for k, v in stats.items()]
    if adam is not None:
        arrays += [(f"adam_m:{k}", adam.m[k]) for k in params if k in adam.m]
        arrays += [(f"adam_v:{k}", adam.v[k]) for k in params if k in adam.v]
    if snapshot is not None:
        sp, ss = snapshot.state_arrays()
        arrays += [(f"snap_param:{k}", v) for k, v in sp.items()]
        arrays += [(f"snap_stat:{k}", v) for k, v in ss.items()]
    return arrays


def save_checkpoint(path, backbone: Backbone, epoch: int, seed: int,
                    adam: AdamState | None = None,
                    snapshot: FrozenSnapshot | None = None) -> None:
    arrays = _checkpoint_arrays(backbone, adam, snapshot)
    manifest = {
        "backbone_config": asdict(backbone.config),
        "epoch": int(epoch),
        "seed": int(seed),
        "adam_t": int(adam.t) if adam is not None else 0,
        "snapshot_epoch": int(snapshot.epoch) if snapshot is not None else None,
        "arrays": [
            {"name": n, "shape": list(a.shape), "dtype": "float32"} for n, a in arrays
        ],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def _config_from_manifest(d: dict) -> BackboneConfig:
    d = dict(d)
    for key in ("aniso_channels", "head_up"):
        d[key] = tuple(d[key])
    return BackboneConfig(**d)


def load_checkpoint(path) -> dict:
    """Returns backbone/epoch/seed/adam/snapshot reconstructed from disk."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    version, blob_len = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version}, this build reads {CHECKPOINT_VERSION}"
        )
    if len(raw) < 12 + blob_len:
        raise CheckpointError(f"{path}: truncated manifest")
    manifest = json.loads(raw[12 : 12 + blob_len].decode("utf-8"))

    body = raw[12 + blob_len :]
    want = sum(int(np.prod(e["shape"])) for e in manifest["arrays"]) * 4
    if len(body) != want:
        raise CheckpointError(
            f"{path}: array payload is {len(body)} bytes, manifest says {want}"
        )
    offset = 0
    loaded = {}
    for entry in manifest["arrays"]:
        if entry["dtype"] != "float32":
            raise CheckpointError(f"{path}: unsupported dtype {entry['dtype']}")
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) * 4
        loaded[entry["name"]] = np.frombuffer(
            body, dtype="<f4", count=n // 4, offset=offset
        ).reshape(shape).copy()
        offset += n

    def by_prefix(prefix):
        cut = len(prefix)
        return {k[cut:]: v for k, v in loaded.items() if k.startswith(prefix)}

    config = _config_from_manifest(manifest["backbone_config"])
    backbone = Backbone(config, seed=manifest["seed"])
    backbone.load_state_arrays(by_prefix("param:"), by_prefix("stat:"))
    adam = AdamState(m=by_prefix("adam_m:"), v=by_prefix("adam_v:"), t=manifest["adam_t"])
    snapshot = None
    if manifest["snapshot_epoch"] is not None:
        snapshot = FrozenSnapshot(config, manifest["seed"], by_prefix("snap_param:"),
                                  by_prefix("snap_stat:"), manifest["snapshot_epoch"])
    return {
        "backbone": backbone,
        "epoch": manifest["epoch"],
        "seed": manifest["seed"],
        "adam": adam,
        "snapshot": snapshot,
        "manifest": manifest,
    }


# ---- portable pixmaps ----


def quantize_heatmap(hm: np.ndarray) -> np.ndarray:
    """Min-max scale one heatmap to u8; constant maps go to zero."""
    lo, hi = float(hm.min()), float(hm.max())
    if hi - lo < 1e-12:
        return np.zeros(hm.shape, dtype=np.uint8)
    return np.round((hm - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("PGM writer expects a 2-D uint8 image")
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def write_ppm(path, img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("PPM writer expects an H x W x 3 uint8 image")
    with open(path, "wb") as f:
        f.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())


# ---- config plumbing ----


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise CheckpointError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise _UsageError(f"config {path} is not valid JSON: {e}") from e


def _resolve_configs(args) -> dict:
    """Merge config file sections with flag overrides; flags win."""
    raw = _read_json(args.config) if getattr(args, "config", None) else {}
    train_kw = dict(raw.get("train", {}))
    backbone_kw = dict(raw.get("backbone", {}))
    dataset_kw = dict(raw.get("dataset", {}))

    if getattr(args, "seed", None) is not None:
        train_kw["seed"] = args.seed
        dataset_kw["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        train_kw["mode"] = args.mode
    if getattr(args, "cube", None) is not None:
        backbone_kw["cube_len"] = args.cube

    if "shift" in dataset_kw:
        dataset_kw["shift"] = DomainShiftConfig(**dataset_kw["shift"])
    if "azimuths_deg" in dataset_kw:
        dataset_kw["azimuths_deg"] = tuple(dataset_kw["azimuths_deg"])
    for key in ("aniso_channels", "head_up"):
        if key in backbone_kw:
            backbone_kw[key] = tuple(backbone_kw[key])

    try:
        resolved = {
            "train": TrainConfig(**train_kw),
            "backbone": BackboneConfig(**backbone_kw),
            "dataset": DatasetSpec(**dataset_kw),
        }
    except (TypeError, ValueError) as e:
        raise _UsageError(f"invalid configuration: {e}") from e
    resolved["data_dir"] = getattr(args, "data", None) or raw.get("data_dir")
    resolved["out_dir"] = getattr(args, "out", None) or raw.get("out_dir")
    return resolved


def _echo_config(resolved: dict, out_dir: Path | None) -> None:
    doc = {
        "train": asdict(resolved["train"]),
        "backbone": asdict(resolved["backbone"]),
        "dataset": asdict(resolved["dataset"]),
        "data_dir": str(resolved["data_dir"]) if resolved["data_dir"] else None,
        "out_dir": str(resolved["out_dir"]) if resolved["out_dir"] else None,
        "threads": os.environ.get("CYLPOSE_THREADS"),
    }
    text = json.dumps(doc, sort_keys=True, indent=2)
    print(f"resolved config:\n{text}")
    if out_dir is not None:
        (out_dir / "config.resolved.json").write_text(text + "\n", encoding="utf-8")


def _make_out_dir(path_str) -> Path:
    if not path_str:
        raise _UsageError("an output directory is required (--out)")
    out = Path(path_str)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CheckpointError(f"cannot create output dir {out}: {e}") from e
    if not out.is_dir():
        raise CheckpointError(f"output path {out} exists and is not a directory")
    return out


# ---- subcommands ----


def cmd_gen(args) -> int:
    resolved = _resolve_configs(args)
    out = _make_out_dir(resolved["out_dir"])
    _echo_config(resolved, out)
    dataset = build_dataset(resolved["dataset"], out)
    labeled = dataset.labeled()
    groups = {split: len(dataset.groups(split)) for split in ("train", "test")}
    print(f"wrote {len(dataset.samples)} samples to {out}")
    print(f"labeled: {len(labeled)} "
          f"(train {len(dataset.labeled('train'))}, test {len(dataset.labeled('test'))})")
    print(f"groups: train {groups['train']}, test {groups['test']}")
    return EXIT_OK


def _load_data_dir(resolved):
    data_dir = resolved["data_dir"]
    if not data_dir:
        raise _UsageError("a dataset directory is required (--data)")
    return load_dataset(data_dir)


def cmd_train(args) -> int:
    resolved = _resolve_configs(args)
    out = _make_out_dir(resolved["out_dir"])
    _echo_config(resolved, out)
    dataset = _load_data_dir(resolved)
    cfg: TrainConfig = resolved["train"]
    bc: BackboneConfig = resolved["backbone"]

    backbone = adam = snapshot = None
    start_epoch = 0
    if args.resume:
        state = load_checkpoint(args.resume)
        if state["backbone"].config != bc:
            raise _UsageError("checkpoint backbone config does not match the run config")
        backbone, adam = state["backbone"], state["adam"]
        snapshot, start_epoch = state["snapshot"], state["epoch"]
        if start_epoch > cfg.epoch_semi and cfg.mode == "semi" and snapshot is None:
            raise _UsageError(
                f"resuming a semi run at epoch {start_epoch} needs the snapshot; "
                "resume from the epoch-boundary checkpoint instead"
            )
        print(f"resuming at epoch {start_epoch} from {args.resume}")

    log_path = out / "train_log.jsonl"
    log_f = open(log_path, "a" if args.resume else "w", encoding="utf-8")

    def log_fn(record):
        line = json.dumps(record, sort_keys=True)
        log_f.write(line + "\n")
        log_f.flush()
        print(line)

    try:
        reports = []
        # in semi mode, pause at the phase boundary to persist the state
        # the frozen regularizer is built from
        boundary = cfg.epoch_semi if cfg.mode == "semi" and cfg.epoch_semi < cfg.epochs else None
        if boundary is not None and start_epoch < boundary:
            import dataclasses

            head_cfg = dataclasses.replace(cfg, epochs=boundary)
            head = run_schedule(dataset, head_cfg, bc, log_fn=log_fn, backbone=backbone,
                                adam=adam, snapshot=snapshot, start_epoch=start_epoch)
            backbone, adam, snapshot = head.backbone, head.adam, head.snapshot
            reports += head.reports
            start_epoch = boundary
            save_checkpoint(out / "snapshot.ckpt", backbone, boundary, cfg.seed, adam)
            print(f"wrote {out / 'snapshot.ckpt'} at epoch {boundary}")
        result = run_schedule(dataset, cfg, bc, log_fn=log_fn, backbone=backbone,
                              adam=adam, snapshot=snapshot, start_epoch=start_epoch)
        reports += result.reports
    finally:
        log_f.close()

    save_checkpoint(out / "final.ckpt", result.backbone, cfg.epochs, cfg.seed,
                    result.adam, result.snapshot)
    print(f"wrote {out / 'final.ckpt'} after {len(reports)} epochs")
    return EXIT_OK


def cmd_eval(args) -> int:
    resolved = _resolve_configs(args)
    out = _make_out_dir(resolved["out_dir"])
    _echo_config(resolved, out)
    dataset = _load_data_dir(resolved)
    state = load_checkpoint(args.ckpt)
    backbone: Backbone = state["backbone"]

    some = dataset.labeled()
    if some and some[0].pose.joints.shape[0] != backbone.config.n_joints:
        raise _UsageError(
            f"checkpoint predicts {backbone.config.n_joints} joints, "
            f"dataset poses have {some[0].pose.joints.shape[0]}"
        )

    views = [v.strip() for v in args.views.split(",") if v.strip()]
    if not views:
        raise _UsageError("--views must name at least one view")
    per_view = {}
    for view in views:
        samples = dataset.labeled(None, view)
        if not samples:
            raise _UsageError(f"dataset has no labeled samples for view {view}")
        per_view[view] = evaluate_samples(backbone, samples, args.threshold)

    doc = {view: rep.as_dict() for view, rep in per_view.items()}
    doc["pooled_dist"] = {view: rep.pooled_dist() for view, rep in per_view.items()}
    (out / "eval.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                                   encoding="utf-8")
    with open(out / "eval.csv", "w", encoding="utf-8") as f:
        f.write("view,category,dist_mean,dist_std,map\n")
        for view, rep in per_view.items():
            for cat in rep.dist_mean:
                f.write(f"{view},{cat},{rep.dist_mean[cat]:.6f},"
                        f"{rep.dist_std[cat]:.6f},{rep.map_at_threshold[cat]:.6f}\n")
    for view, rep in per_view.items():
        print(f"{view}: pooled Dist {rep.pooled_dist():.4f}  "
              f"mAP@{args.threshold} {dict((k, round(v, 3)) for k, v in rep.map_at_threshold.items())}")
    print(f"wrote {out / 'eval.json'} and {out / 'eval.csv'}")
    return EXIT_OK


def _equiv_test_cloud(seed: int, z_max: float):
    rng = np.random.default_rng([seed, 424242])
    skel = sample_skeleton(rng)
    pose = sample_gait_pose(skel, sample_gait_params(rng))
    cloud = generate_surface_cloud(skel, pose, density=4000.0, rng=rng)
    ncloud, _ = minmax_normalize(cloud, z_max=z_max)
    return ncloud


def cmd_equiv(args) -> int:
    resolved = _resolve_configs(args)
    out = _make_out_dir(resolved["out_dir"]) if resolved["out_dir"] else None
    _echo_config(resolved, out)
    if args.ckpt:
        backbone = load_checkpoint(args.ckpt)["backbone"]
    else:
        bc: BackboneConfig = resolved["backbone"]
        if args.zero_pad:  # negative control: breaks the shift structure
            import dataclasses

            bc = dataclasses.replace(bc, periodic_theta=False)
        backbone = Backbone(bc, seed=resolved["train"].seed)

    stride = backbone.config.theta_stride
    cube = backbone.config.cube_len
    if args.shifts:
        shifts = [int(s) for s in args.shifts.split(",")]
    else:
        shifts = list(range(stride, cube, stride))
    cloud = _equiv_test_cloud(resolved["train"].seed, backbone.config.grid_config().z_max)
    report = equivariance_check(backbone, cloud, shifts)

    doc = dict(report, heatmap_tol=args.heatmap_tol, theta_tol=args.theta_tol)
    print(json.dumps(doc, sort_keys=True, indent=2))
    if out is not None:
        (out / "equiv.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                                        encoding="utf-8")
    ok = (report["max_heatmap_dev"] <= args.heatmap_tol
          and report["max_theta_dev_rad"] <= args.theta_tol)
    if not ok:
        worst = max(report["per_shift"], key=lambda r: r["heatmap_dev"])
        print(f"FAIL: worst shift {worst['shift']} heatmap dev {worst['heatmap_dev']:.3e} "
              f"(tol {args.heatmap_tol:.1e}), theta dev {report['max_theta_dev_rad']:.3e} "
              f"(tol {args.theta_tol:.1e})")
        return EXIT_TOLERANCE
    print(f"PASS: heatmap dev {report['max_heatmap_dev']:.3e}, "
          f"theta dev {report['max_theta_dev_rad']:.3e} over {len(shifts)} shifts")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .diffcore import run_all_gradchecks

    resolved = _resolve_configs(args)
    out = _make_out_dir(resolved["out_dir"]) if resolved["out_dir"] else None
    _echo_config(resolved, out)
    # finite differences are only meaningful in 64-bit mode; the flag
    # exists to make that contract explicit in scripts
    if not args.f64:
        print("note: gradcheck always runs in 64-bit mode; --f64 makes it explicit")
    results = run_all_gradchecks(seed=resolved["train"].seed, tol=args.tol,
                                 repeats=args.repeats)
    worst = {}
    for r in results:
        op = r.name.split("#")[0]
        if op not in worst or r.max_rel_err > worst[op].max_rel_err:
            worst[op] = r
    failed = [r for r in results if not r.passed]
    for op in sorted(worst):
        r = worst[op]
        print(f"{'PASS' if r.passed else 'FAIL'} {op:24s} worst rel err {r.max_rel_err:.3e}")
    if out is not None:
        doc = [{"name": r.name, "max_rel_err": r.max_rel_err, "passed": r.passed}
               for r in results]
        (out / "gradcheck.json").write_text(json.dumps(doc, indent=2) + "\n",
                                            encoding="utf-8")
    if failed:
        bad = max(failed, key=lambda r: r.max_rel_err)
        print(f"FAIL: {len(failed)} of {len(results)} checks exceed tol {args.tol:.1e}; "
              f"worst {bad.name} at {bad.max_rel_err:.3e}")
        return EXIT_TOLERANCE
    print(f"PASS: {len(results)} checks within tol {args.tol:.1e}")
    return EXIT_OK


def cmd_plot(args) -> int:
    resolved = _resolve_configs(args)
    out = _make_out_dir(resolved["out_dir"])
    _echo_config(resolved, out)
    dataset = _load_data_dir(resolved)
    backbone = load_checkpoint(args.ckpt)["backbone"]

    labeled = dataset.labeled()
    if args.sample:
        matches = [s for s in dataset.samples if s.sample_id == args.sample]
        if not matches:
            raise _UsageError(f"no sample with id {args.sample}")
        sample = matches[0]
    elif labeled:
        sample = labeled[0]
    else:
        sample = dataset.samples[0]

    grid_cfg = backbone.config.grid_config()
    ncloud, tf = minmax_normalize(sample.cloud, z_max=grid_cfg.z_max)
    if args.rotate:
        # whole-bin rotation applied after normalization, so the emitted
        # heatmaps are cyclic shifts of an unrotated run's (exact for
        # multiples of the θ stride)
        from .geom import PointCloud, rotate_points_z

        angle = 2 * np.pi * args.rotate / grid_cfg.cube_len
        ncloud = PointCloud(rotate_points_z(ncloud.points, angle), frame=ncloud.frame)
    import warnings as _warnings

    from .geom import OutOfBoundsWarning

    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore", OutOfBoundsWarning)
        pair, estimates = backbone.forward(ncloud, mode="infer")
        occupancy = voxelize_cylindrical(ncloud, grid_cfg).occupancy

    from .pose import JOINT_NAMES

    for j, name in enumerate(JOINT_NAMES):
        write_pgm(out / f"hm_{name}_theta_rho.pgm", quantize_heatmap(pair.hm_theta_r[j]))
        write_pgm(out / f"hm_{name}_theta_z.pgm", quantize_heatmap(pair.hm_theta_z[j]))

    from .backbone import estimates_to_pose

    pose = tf.invert_pose(estimates_to_pose(estimates))
    with open(out / "skeleton.csv", "w", encoding="utf-8") as f:
        for row in pose.joints:
            f.write(f"{row[0]:.6f},{row[1]:.6f},{row[2]:.6f}\n")

    # overlay: θ-ρ occupancy silhouette with decoded joints in red
    proj = quantize_heatmap(occupancy.max(axis=2))
    overlay = np.stack([proj, proj, proj], axis=2)
    c = grid_cfg.cube_len
    for est in estimates:
        tb = int((est.theta + np.pi) / (2 * np.pi / c)) % c
        rb = min(int(est.rho / (grid_cfg.rho_max / c)), c - 1)
        t0, t1 = max(tb - 1, 0), min(tb + 2, c)
        r0, r1 = max(rb - 1, 0), min(rb + 2, c)
        overlay[t0:t1, r0:r1] = (255, 32, 32)
    write_ppm(out / "overlay.ppm", overlay)

    print(f"wrote {2 * len(JOINT_NAMES)} heatmaps, skeleton.csv, overlay.ppm to {out}")
    return EXIT_OK


# ---- parser ----


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with 2; usage is 1 here
        raise _UsageError(message)


def _add_common(p):
    p.add_argument("--config", help="JSON config file (train/backbone/dataset sections)")
    p.add_argument("--seed", type=int, help="override every seed in the config")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cylpose", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset directory")
    _add_common(p)

    p = sub.add_parser("train", help="train a model, writing checkpoints and a JSONL log")
    _add_common(p)
    p.add_argument("--data", help="dataset directory from gen")
    p.add_argument("--mode", choices=["supervised", "semi", "mixed"])
    p.add_argument("--cube", type=int, help="cylindrical grid resolution")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate a checkpoint per view")
    _add_common(p)
    p.add_argument("--data", help="dataset directory from gen")
    p.add_argument("--ckpt", required=True, help="checkpoint to evaluate")
    p.add_argument("--views", default="X1,X2,X3,X4", help="comma-separated view ids")
    p.add_argument("--threshold", type=float, default=DEFAULT_MAP_THRESHOLD,
                   help="mAP distance threshold")

    p = sub.add_parser("equiv", help="verify rotation equivariance of the network")
    _add_common(p)
    p.add_argument("--ckpt", help="checkpoint to verify (default: fresh random weights)")
    p.add_argument("--cube", type=int, help="cylindrical grid resolution")
    p.add_argument("--shifts", help="comma-separated shift list (default: all stride multiples)")
    p.add_argument("--zero-pad", action="store_true",
                   help="replace periodic padding with zeros (negative control)")
    p.add_argument("--heatmap-tol", type=float, default=1e-5)
    p.add_argument("--theta-tol", type=float, default=1e-3)

    p = sub.add_parser("gradcheck", help="finite-difference checks for every operator")
    _add_common(p)
    p.add_argument("--f64", action="store_true",
                   help="64-bit mode (always on; accepted for explicitness)")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--repeats", type=int, default=1,
                   help="random shapes per operator")

    p = sub.add_parser("plot", help="emit heatmap pixmaps and the decoded skeleton")
    _add_common(p)
    p.add_argument("--data", help="dataset directory from gen")
    p.add_argument("--ckpt", required=True, help="checkpoint to visualize")
    p.add_argument("--sample", help="sample id (default: first labeled sample)")
    p.add_argument("--rotate", type=int, default=0,
                   help="rotate the normalized cloud by whole θ bins before inference")

    return parser


_COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "equiv": cmd_equiv,
    "gradcheck": cmd_gradcheck,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
