"""``lidarfeat`` command line: simulate, pairgen, train, extract, register, slam, bench.

Exit codes: 0 success, 2 bad config or usage, 3 file I/O or format error,
4 pipeline failure. Errors are reported on stderr as one JSON object.
Timing goes to separate ``*.timing.json`` files so every other artifact is
bit-identical across reruns with the same inputs, config and seed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bench import REFERENCE_TIMING_MS, evaluate_pairs, trajectory_errors
from .config import ConfigError, dump, resolve
from .errors import FormatError, LidarFeatError
from .extract import extract, fuse_scores, read_features, write_features
from .featnet import network
from .featnet.data import DatasetStats, TrainSample, normalize
from .featnet.train import TrainConfig, train
from .geom import Pose, RigidTransform, read_poses, write_poses
from .mapping import write_g2o
from .pairgen import (
    PairSelectionConfig,
    SyntheticTransformParams,
    pixel_flow,
    read_flow,
    read_manifest,
    select_real_pairs,
    synth_pair,
    write_flow,
    write_manifest,
)
from .pipeline import FeatureModel, SlamConfig, scan_features, slam
from .projection import SphericalModel, lift_image, read_scan, to_scan_image, write_scan
from .register import estimate_rigid, match
from .simlidar import (
    ScannerSpec,
    demo_scene,
    interpolate_poses,
    load_scene,
    load_waypoints,
    raycast,
    scan_seed,
    scene_to_json,
    square_loop,
)

log = logging.getLogger("lidarfeat")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_PIPELINE = 0, 2, 3, 4


# --- config checks -------------------------------------------------------------


def _scanner_spec(cfg) -> ScannerSpec:
    s = cfg["scanner"]
    return ScannerSpec.preset(s["preset"], max_range=s["max_range"], range_noise_sigma=s["range_noise_sigma"],
                              dropout_rate=s["dropout_rate"], falloff=s["falloff"])


def _pair_cfg(cfg) -> PairSelectionConfig:
    p = cfg["pairgen"]
    return PairSelectionConfig(p["inner_radius"], p["outer_radius"], p["overlap_threshold"],
                               p["correspondence_distance"], p["occlusion_margin"])


def _train_cfg(cfg) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(tuple(int(e) for e in t["epochs"]), float(t["lr"]), float(t["momentum"]),
                       None if t["max_steps"] is None else int(t["max_steps"]), int(cfg["seed"]),
                       tuple(int(c) for c in t["crop"]), float(t["noise_var"]), float(t["offset"]),
                       float(t["scale"]))


def _slam_cfg(cfg) -> SlamConfig:
    r, m = cfg["register"], cfg["mapping"]
    return SlamConfig(float(r["inlier_dist"]), int(r["iterations"]), int(m["words"]), float(m["hist_threshold"]),
                      int(m["min_gap"]), int(m["min_inliers"]), int(m["lm_max_iter"]), float(m["lm_lambda"]),
                      int(r["icp_iterations"]), float(r["icp_corr_dist"]), seed=int(cfg["seed"]))


def validate(cfg) -> None:
    """Build every typed config once so bad values fail before any output is written."""
    try:
        if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
            raise ValueError("seed must be a non-negative integer")
        _scanner_spec(cfg)
        _pair_cfg(cfg)
        network.NetworkConfig.from_dict(cfg["network"])
        tc = _train_cfg(cfg)
        if any(e < 0 for e in tc.epochs) or tc.lr <= 0 or len(tc.crop) != 2:
            raise ValueError("train: epochs >= 0, lr > 0 and a two-value crop are required")
        _slam_cfg(cfg)
        if cfg["extract"]["nms_radius"] < 0:
            raise ValueError("extract.nms_radius must be >= 0")
        if cfg["pairgen"]["mode"] not in ("real", "synthetic", "both"):
            raise ValueError("pairgen.mode must be real, synthetic or both")
        if cfg["scene"]["room_texture"] not in ("gradient", "checker", "plain"):
            raise ValueError("scene.room_texture must be gradient, checker or plain")
        if cfg["trajectory"]["kind"] != "square":
            raise ValueError("trajectory.kind must be square (or pass --waypoints)")
        if int(cfg["trajectory"]["steps"]) < 2:
            raise ValueError("trajectory.steps must be >= 2")
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


# --- small file helpers -------------------------------------------------------------


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_timing(path, stages) -> None:
    _write_json(path, {"stages_ms": stages, "reference_ms": REFERENCE_TIMING_MS})


def _write_pgm(path, img) -> None:
    """8-bit binary PGM; ``img`` values in [0, 1]."""
    a = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    H, W = a.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{W} {H}\n255\n".encode())
        f.write(a.tobytes())


def _matrix_text(T: RigidTransform) -> str:
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in T.matrix3x4())


class Dataset:
    """A ``simulate`` output directory: scanner.json, poses.txt and scans/*.scn."""

    def __init__(self, root):
        self.root = Path(root)
        meta = json.loads((self.root / "scanner.json").read_text())
        self.model = SphericalModel(2 * np.pi / int(meta["width"]), np.asarray(meta["elevation"], dtype=np.float64),
                                    float(meta.get("azimuth_offset", 0.0)))
        self.paths = sorted((self.root / "scans").glob("*.scn"))
        if not self.paths:
            raise FileNotFoundError(f"{self.root / 'scans'}: no scans")
        pose_file = self.root / "poses.txt"
        self.poses = read_poses(pose_file) if pose_file.exists() else None
        if self.poses is not None and len(self.poses) != len(self.paths):
            raise FormatError(f"{pose_file}: {len(self.poses)} poses for {len(self.paths)} scans")
        self._images = {}
        self._clouds = {}

    def __len__(self):
        return len(self.paths)

    def image(self, k):
        if k not in self._images:
            self._images[k] = read_scan(self.paths[k])[0]
        return self._images[k]

    def cloud(self, k):
        if k not in self._clouds:
            self._clouds[k] = lift_image(self.image(k), self.model)
        return self._clouds[k]


class _Clouds:
    def __init__(self, ds):
        self.ds = ds

    def __getitem__(self, k):
        return self.ds.cloud(int(k))

    def __len__(self):
        return len(self.ds)


def _model(cfg, weights_path) -> FeatureModel:
    if weights_path is None:
        return FeatureModel("handcrafted")
    ncfg, weights, meta = network.load_weights(weights_path)
    if "stats" not in meta:
        raise FormatError(f"{weights_path}: no dataset statistics in the metadata block")
    return FeatureModel("network", ncfg, weights, DatasetStats.from_dict(meta["stats"]))


def _features(cloud, model, cfg):
    e = cfg["extract"]
    return scan_features(cloud, model, float(e["score_threshold"]), int(e["nms_radius"]))


# --- subcommands ---------------------------------------------------------------------


def cmd_simulate(args, cfg, out):
    spec = _scanner_spec(cfg)
    seed = int(cfg["seed"])
    tr = cfg["trajectory"]
    if args.waypoints:
        wps, steps, dt = load_waypoints(args.waypoints)
        poses = interpolate_poses(wps, steps or int(tr["steps"]), dt)
    else:
        poses = square_loop(float(tr["side"]), int(tr["steps"]), dt=float(tr["dt"]))
    if args.scene:
        scene = load_scene(args.scene)
    else:
        sc = cfg["scene"]
        path_xy = np.array([p.position[:2] for p in poses])
        scene = demo_scene(int(sc["seed"]), tuple(sc["size"]), int(sc["n_objects"]), keep_clear=path_xy,
                           room_texture=sc["room_texture"])
    (out / "scans").mkdir(parents=True, exist_ok=True)
    (out / "scene.json").write_text(scene_to_json(scene) + "\n")
    _write_json(out / "scanner.json", {
        "height": spec.height, "width": spec.width, "elevation": [float(e) for e in spec.elevation],
        "azimuth_offset": spec.azimuth_offset, "max_range": spec.max_range,
        "range_noise_sigma": spec.range_noise_sigma, "dropout_rate": spec.dropout_rate, "falloff": spec.falloff,
    })
    write_poses(out / "poses.txt", poses)
    t0 = time.perf_counter()
    for k, pose in enumerate(poses):
        cloud = raycast(scene, pose, spec, scan_seed(seed, k))
        write_scan(out / "scans" / f"{k:06d}.scn", to_scan_image(cloud), spec.elevation)
        log.info("scan %d/%d", k + 1, len(poses))
    _write_timing(out / "simulate.timing.json", {"raycast_total": 1e3 * (time.perf_counter() - t0)})
    print(f"wrote {len(poses)} scans to {out}")


def cmd_pairgen(args, cfg, out):
    ds = Dataset(args.data)
    p = cfg["pairgen"]
    mode = args.mode or p["mode"]
    seed = int(cfg["seed"])
    out.mkdir(parents=True, exist_ok=True)
    if mode in ("real", "both"):
        if ds.poses is None:
            raise FormatError(f"{args.data}: real pairs need poses.txt")
        pairs = select_real_pairs(ds.poses, _Clouds(ds), _pair_cfg(cfg), int(p["anchor_stride"]), seed)
        write_manifest(out / "manifest.txt", pairs)
        (out / "flows").mkdir(exist_ok=True)
        for i, j, T in pairs:
            flow = pixel_flow(ds.cloud(i), ds.image(j), T, ds.model, float(p["occlusion_margin"]))
            write_flow(out / "flows" / f"{i:06d}_{j:06d}.flo", flow)
        print(f"{len(pairs)} real pairs, {pairs.skipped} anchors skipped")
    if mode in ("synthetic", "both"):
        rng = np.random.default_rng([seed, 1])
        (out / "synthetic").mkdir(exist_ok=True)
        entries = []
        for k in range(int(p["synthetic_count"])):
            src = int(rng.integers(len(ds)))
            params = SyntheticTransformParams.sample(rng, tuple(p["scale"]), int(p["max_u_shift"]),
                                                     int(p["max_v_shift"]), float(p["max_tilt"]))
            warped, flow = synth_pair(ds.image(src), params)
            write_scan(out / "synthetic" / f"{k:06d}.scn", warped)
            write_flow(out / "synthetic" / f"{k:06d}.flo", flow)
            entries.append({"index": k, "source": src, "scale": params.scale, "u_shift": params.u_shift,
                            "v_shift": params.v_shift, "tilt": params.tilt})
        _write_json(out / "synthetic.json", entries)
        print(f"{len(entries)} synthetic pairs")


def _training_samples(ds, pairs_dir, stats):
    pairs_dir = Path(pairs_dir)
    synth, real = [], []
    sj = pairs_dir / "synthetic.json"
    if sj.exists():
        for e in json.loads(sj.read_text()):
            k = int(e["index"])
            warped, _ = read_scan(pairs_dir / "synthetic" / f"{k:06d}.scn")
            flow = read_flow(pairs_dir / "synthetic" / f"{k:06d}.flo")
            synth.append(TrainSample(normalize(ds.image(int(e["source"])), stats), normalize(warped, stats), flow))
    mf = pairs_dir / "manifest.txt"
    if mf.exists():
        for i, j, _ in read_manifest(mf):
            flow = read_flow(pairs_dir / "flows" / f"{i:06d}_{j:06d}.flo")
            real.append(TrainSample(normalize(ds.image(i), stats), normalize(ds.image(j), stats), flow))
    if not synth and not real:
        raise FormatError(f"{pairs_dir}: neither synthetic.json nor manifest.txt found")
    return synth, real


def cmd_train(args, cfg, out):
    ds = Dataset(args.data)
    stats = DatasetStats.from_images([ds.image(k) for k in range(len(ds))])
    synth, real = _training_samples(ds, args.pairs, stats)
    ncfg = network.NetworkConfig.from_dict(cfg["network"])
    tcfg = _train_cfg(cfg)
    if args.init:
        ncfg0, weights, _ = network.load_weights(args.init)
        if ncfg0 != ncfg:
            raise ConfigError(f"{args.init}: network layout differs from the config")
    else:
        weights = network.init_weights(ncfg, int(cfg["seed"]))
    first, later = (synth, real) if synth else (real, [])
    t0 = time.perf_counter()
    result = train(first, ncfg, weights, tcfg, later_samples=later)
    elapsed = 1e3 * (time.perf_counter() - t0)
    out.parent.mkdir(parents=True, exist_ok=True)
    meta = {"stats": stats.to_dict(), "train": cfg["train"], "seed": cfg["seed"],
            "samples": {"synthetic": len(synth), "real": len(real)}, "steps": len(result.curve)}
    network.save_weights(out, ncfg, result.weights, meta)
    curve = Path(args.curve) if args.curve else out.with_suffix(".loss.csv")
    result.write_curve(curve)
    _write_timing(out.with_suffix(".timing.json"), {"train_total": elapsed})
    last = result.curve[-1][1].total if result.curve else float("nan")
    print(f"{len(result.curve)} steps, final loss {last:.6f}; weights in {out}")


def _scan_model(scan_path, scanner_path):
    image, elev = read_scan(scan_path)
    offset = 0.0
    cand = [Path(scanner_path)] if scanner_path else [Path(scan_path).parent / "scanner.json",
                                                      Path(scan_path).parent.parent / "scanner.json"]
    for c in cand:
        if c.exists():
            meta = json.loads(c.read_text())
            offset = float(meta.get("azimuth_offset", 0.0))
            if elev is None:
                elev = np.asarray(meta["elevation"], dtype=np.float64)
            break
        if scanner_path:
            raise FileNotFoundError(str(c))
    if elev is None:
        raise FormatError(f"{scan_path}: no elevation table in the scan or a scanner.json")
    return image, SphericalModel(2 * np.pi / image.shape[1], elev, offset)


def cmd_extract(args, cfg, out):
    image, model = _scan_model(args.scan, args.scanner)
    cloud = lift_image(image, model)
    fm = _model(cfg, args.weights)
    t0 = time.perf_counter()
    maps = fm.maps(cloud)
    e = cfg["extract"]
    fs = extract(maps, cloud, float(e["score_threshold"]), int(e["nms_radius"]))
    elapsed = 1e3 * (time.perf_counter() - t0)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_features(out, fs)
    _write_timing(out.with_suffix(".timing.json"), {"extract": elapsed})
    if args.emit_plots:
        S = fuse_scores(maps)
        _write_pgm(out.with_suffix(".score.pgm"), S)
        overlay = 0.6 * S
        u, v = fs.pixels[:, 0], fs.pixels[:, 1]
        overlay[v, u] = 1.0
        _write_pgm(out.with_suffix(".keypoints.pgm"), overlay)
    print(f"{len(fs)} keypoints -> {out} ({elapsed:.1f} ms; reference {REFERENCE_TIMING_MS['extract']} ms on GPU)")


def cmd_register(args, cfg, out):
    a, b = read_features(args.source), read_features(args.target)
    r = cfg["register"]
    t0 = time.perf_counter()
    m = match(a, b)
    t1 = time.perf_counter()
    res = estimate_rigid(m, a, b, float(r["inlier_dist"]), int(r["iterations"]), int(cfg["seed"]))
    t2 = time.perf_counter()
    idx = res.inlier_indices
    resid = np.linalg.norm(res.transform.apply(a.points[m.idx_a[idx]]) - b.points[m.idx_b[idx]], axis=1)
    print(_matrix_text(res.transform))
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_json(out, {
            "transform": res.transform.matrix3x4().tolist(),
            "n_matches": len(m),
            "inliers": int(res.inlier_count),
            "inlier_matches": [[int(m.idx_a[k]), int(m.idx_b[k])] for k in idx],
            "residuals": {"mean": float(resid.mean()) if resid.size else 0.0,
                          "max": float(resid.max()) if resid.size else 0.0,
                          "per_inlier": [float(x) for x in resid]},
            "config": {"iterations": r["iterations"], "inlier_dist": r["inlier_dist"], "seed": cfg["seed"]},
        })
        _write_timing(out.with_suffix(".timing.json"), {"match": 1e3 * (t1 - t0), "ransac": 1e3 * (t2 - t1)})


def cmd_slam(args, cfg, out):
    ds = Dataset(args.data)
    fm = _model(cfg, args.weights)
    scfg = _slam_cfg(cfg)
    t0 = time.perf_counter()
    feats = [_features(ds.cloud(k), fm, cfg) for k in range(len(ds))]
    t1 = time.perf_counter()
    clouds = _Clouds(ds) if scfg.icp_iterations > 0 else None
    res = slam(feats, scfg, loop_closure=args.loop_closure, clouds=clouds)
    t2 = time.perf_counter()
    tag = "loop" if args.loop_closure else "odometry"
    out.mkdir(parents=True, exist_ok=True)
    stamps = [p.timestamp for p in ds.poses] if ds.poses else [k * cfg["trajectory"]["dt"] for k in range(len(ds))]
    write_poses(out / f"trajectory_{tag}.txt", [Pose(T, s) for T, s in zip(res.nodes, stamps)])
    write_g2o(out / f"graph_{tag}.g2o", res.graph)
    summary = {"scans": len(ds), "keypoints": [len(f) for f in feats], "loop_closure": bool(args.loop_closure),
               "proposals": [list(p) for p in res.proposals],
               "loops": [[e.i, e.j] for e in res.loops], "dropped_loops": res.graph.dropped_loops}
    if res.lm_log is not None:
        summary["optimizer"] = {"costs": res.lm_log.costs, "iterations": res.lm_log.iterations,
                                "accepted": res.lm_log.accepted, "reason": res.lm_log.reason}
    if ds.poses:
        t_err, r_err = trajectory_errors(res.nodes, ds.poses)
        summary["mean_translation_error"], summary["mean_rotation_error_deg"] = t_err, r_err
        gap = res.odometry_nodes[-1].translation - res.odometry_nodes[0].translation
        summary["odometry_closing_gap"] = float(np.linalg.norm(gap))
    _write_json(out / f"slam_{tag}.json", summary)
    _write_timing(out / f"slam_{tag}.timing.json", {"features": 1e3 * (t1 - t0), "slam": 1e3 * (t2 - t1)})
    if args.emit_plots:
        with open(out / f"topview_{tag}.csv", "w") as f:
            f.write("index,x_est,y_est,x_gt,y_gt\n")
            for k, T in enumerate(res.nodes):
                g = ds.poses[k].position if ds.poses else (np.nan, np.nan)
                f.write(f"{k},{T.translation[0]!r},{T.translation[1]!r},{float(g[0])!r},{float(g[1])!r}\n")
    msg = f"{len(res.loops)} loop edges; trajectory_{tag}.txt in {out}"
    if "mean_translation_error" in summary:
        msg += f"; mean translation error {summary['mean_translation_error']:.3f} m"
    print(msg)


def cmd_bench(args, cfg, out):
    manifest = read_manifest(args.manifest)
    if args.features:
        fdir = Path(args.features)
        get = lambda k: read_features(fdir / f"{k:06d}.f3dl")
    else:
        ds = Dataset(args.data)
        fm = _model(cfg, args.weights)
        get = lambda k: _features(ds.cloud(k), fm, cfg)
    b, r = cfg["bench"], cfg["register"]
    report = evaluate_pairs(manifest, get, float(b["tau1"]), float(b["tau2"]), float(b["tau3"]),
                            int(r["iterations"]), float(r["inlier_dist"]), int(cfg["seed"]))
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "report.json", out / "pairs.csv", out / "report.timing.json")
    if args.emit_plots:
        report.write_sweeps(str(out / "sweep"))
    s = report.summary()
    print(f"RS {s['RS']:.1f}%  MR {s['MR']:.1f}%  RR {s['RR']:.1f}%  ({s['pairs']} pairs, {s['failed']} failed)")


# --- entry point ---------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="lidarfeat", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config layered over the defaults")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config value, e.g. extract.nms_radius=4 (repeatable)")
    common.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="ray-cast a scene along a trajectory")
    p.add_argument("--out", required=True)
    p.add_argument("--scene", help="scene JSON (default: generated room)")
    p.add_argument("--waypoints", help="waypoint JSON (default: square loop from the config)")

    p = sub.add_parser("pairgen", parents=[common], help="real and/or synthetic training pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["real", "synthetic", "both"])

    p = sub.add_parser("train", parents=[common], help="two-stage network training")
    p.add_argument("--data", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True, help="weights file")
    p.add_argument("--init", help="start from these weights")
    p.add_argument("--curve", help="loss curve CSV (default: next to the weights)")

    p = sub.add_parser("extract", parents=[common], help="keypoints of one scan")
    p.add_argument("scan")
    p.add_argument("--out", required=True)
    p.add_argument("--weights", help="trained weights (default: handcrafted features)")
    p.add_argument("--scanner", help="scanner.json (default: searched next to the scan)")
    p.add_argument("--emit-plots", action="store_true")

    p = sub.add_parser("register", parents=[common], help="rigid transform between two feature files")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--out", help="JSON report")
    p.add_argument("--iterations", type=int)
    p.add_argument("--inlier-dist", type=float)

    p = sub.add_parser("slam", parents=[common], help="odometry with optional loop closure")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights")
    p.add_argument("--loop-closure", action="store_true")
    p.add_argument("--emit-plots", action="store_true")

    p = sub.add_parser("bench", parents=[common], help="RS/MR/RR over a pair manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--data", help="simulate output holding the scans")
    p.add_argument("--features", help="directory of NNNNNN.f3dl files instead of --data")
    p.add_argument("--weights")
    p.add_argument("--out", required=True)
    p.add_argument("--emit-plots", action="store_true")
    return ap


COMMANDS = {"simulate": cmd_simulate, "pairgen": cmd_pairgen, "train": cmd_train, "extract": cmd_extract,
            "register": cmd_register, "slam": cmd_slam, "bench": cmd_bench}


def _fail(code, exc):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def _config_dir(args, out):
    if out is None:
        return None
    return out if args.command in ("simulate", "pairgen", "slam", "bench") else out.parent


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.command == "register":
            if args.iterations is not None:
                overrides.append(f"register.iterations={args.iterations}")
            if args.inlier_dist is not None:
                overrides.append(f"register.inlier_dist={args.inlier_dist!r}")
        cfg = resolve(args.config, overrides)
        validate(cfg)
        if args.command == "bench" and not (args.data or args.features):
            raise ConfigError("bench needs --data or --features")
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    log.info("resolved config:\n%s", dump(cfg))
    out = Path(args.out) if getattr(args, "out", None) else None
    try:
        COMMANDS[args.command](args, cfg, out)
        cdir = _config_dir(args, out)
        if cdir is not None:
            (cdir / f"{args.command}.config.json").write_text(dump(cfg))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (OSError, FormatError, json.JSONDecodeError) as exc:
        return _fail(EXIT_IO, exc)
    except (LidarFeatError, ValueError) as exc:
        return _fail(EXIT_PIPELINE, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
