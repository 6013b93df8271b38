"""Command-line front end: phantom, simulate, pose, reconstruct, mtf, batch.

Each subcommand reads one JSON config document (optionally layered on a
preset), validates it, runs the experiment and writes CSV/JSON/PNG
artifacts into the output directory.  All randomness flows from the
--seed flag, so identical invocations produce identical CSV bytes.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import errors, io, mtf
from .experiments import (BatchConfig, DeviceSpec, MtfSetup, aliasing_experiment,
                          batch_experiment, desk_batch_geometry, full_turn_angles,
                          mtf_experiment, pose_precision_study, simulate_scan)
from .geometry import Pose, ScanGeometry, make_circular_trajectory
from .grid import CartGrid, CylGrid, CylVolume, resample_cyl_to_cart
from .phantom import (ComponentSpec, LinePhantomSpec, frequency_sweep,
                      make_assembly_phantom, make_line_phantom, make_weight_map)
from .posefit import LmConfig, PoseFitParams, fit_pose
from .projector import RaySamplingConfig
from .recon import SartConfig, sart_run

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DOMAIN = 4


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def configure_threads(n: int | None) -> None:
    """Cap numba worker threads; CYLTOMO_THREADS is the fallback."""
    if n is None:
        env = os.environ.get("CYLTOMO_THREADS")
        n = int(env) if env else None
    if n is None:
        return
    import numba
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(args, defaults: dict, schema: dict) -> dict:
    cfg = dict(defaults)
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise errors.IoFailure(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise errors.ConfigError(f"config is not valid JSON: {exc}") from exc
        cfg = deep_merge(cfg, user)
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        raise errors.ConfigError(f"config invalid: {exc.message}") from exc
    return cfg


def geometry_from_config(d: dict) -> ScanGeometry:
    if "stage_angles_rad" in d:
        return ScanGeometry.from_dict(d)
    n_views = int(d.get("n_views", 21))
    if d.get("full_turn", False):
        angles = full_turn_angles(n_views)
    else:
        angles = make_circular_trajectory(n_views, math.radians(d.get("last_angle_deg", 200.0)))
    pp = d.get("principal_point_px")
    return ScanGeometry(
        sdd=float(d.get("sdd_mm", 791.0)),
        sod=float(d.get("sod_mm", 679.0)),
        det_cols=int(d.get("det_cols", 96)),
        det_rows=int(d.get("det_rows", 192)),
        pixel_pitch=float(d.get("pixel_pitch_mm", 0.66)),
        principal_point=tuple(pp) if pp else ((int(d.get("det_cols", 96)) - 1) / 2.0,
                                              (int(d.get("det_rows", 192)) - 1) / 2.0),
        stage_angles=angles,
    )


GEOMETRY_SCHEMA = {
    "type": "object",
    "properties": {
        "sdd_mm": {"type": "number"},
        "sod_mm": {"type": "number"},
        "det_cols": {"type": "integer", "minimum": 1},
        "det_rows": {"type": "integer", "minimum": 1},
        "pixel_pitch_mm": {"type": "number", "exclusiveMinimum": 0},
        "principal_point_px": {"type": "array", "minItems": 2, "maxItems": 2},
        "stage_angles_rad": {"type": "array"},
        "n_views": {"type": "integer", "minimum": 1},
        "last_angle_deg": {"type": "number"},
        "full_turn": {"type": "boolean"},
    },
}

COMPONENT_SCHEMA = {
    "type": "object",
    "properties": {
        "label": {"type": "string"},
        "mu": {"type": "number", "minimum": 0},
        "r_range": {"type": ["array", "null"]},
        "theta_range": {"type": ["array", "null"]},
        "h_range": {"type": ["array", "null"]},
        "present": {"type": "boolean"},
    },
    "required": ["label", "mu"],
}


def component_from_config(d: dict) -> ComponentSpec:
    rng_of = lambda v: tuple(v) if v is not None else None
    return ComponentSpec(label=d["label"], mu=float(d["mu"]),
                         r_range=rng_of(d.get("r_range")),
                         theta_range=rng_of(d.get("theta_range")),
                         h_range=rng_of(d.get("h_range")),
                         present=bool(d.get("present", True)))


def pose_params_from_config(d: dict) -> PoseFitParams:
    lm = LmConfig(**d.get("lm", {})) if d.get("lm") else LmConfig()
    return PoseFitParams(
        threshold_level=d.get("threshold_level", "auto"),
        threshold_levels=int(d.get("threshold_levels", 1)),
        threshold_span=float(d.get("threshold_span", 0.0)),
        dilation_radius=int(d.get("dilation_radius", 0)),
        band=int(d.get("band", 1)),
        nuisance_level=d.get("nuisance_level"),
        nuisance_dilation=int(d.get("nuisance_dilation", 2)),
        exclude_rects=tuple(tuple(r) for r in d.get("exclude_rects", [])),
        estimate_gamma=bool(d.get("estimate_gamma", False)),
        strip_offset=float(d.get("strip_offset", 0.0)),
        strip_width=float(d.get("strip_width", 1.0)),
        lm=lm,
    )


def write_csv_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def fmt(x: float) -> str:
    return f"{x:.9g}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

PHANTOM_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["line", "assembly"]},
        "direction": {"enum": ["azimuthal", "radial"]},
        "n_lines": {"type": "integer", "minimum": 1},
        "shape": {"type": "array", "minItems": 3, "maxItems": 3},
        "amplitude": {"type": "number", "exclusiveMinimum": 0},
        "radius_mm": {"type": "number", "exclusiveMinimum": 0},
        "height_mm": {"type": "number", "exclusiveMinimum": 0},
        "components": {"type": "array", "items": COMPONENT_SCHEMA},
        "weights": {
            "type": "object",
            "properties": {
                "default": {"type": "number", "minimum": 0, "maximum": 1},
                "regions": {"type": "array"},
            },
        },
    },
    "required": ["kind"],
}


def cmd_phantom(args) -> int:
    defaults = {"kind": "line", "direction": "azimuthal", "n_lines": 4,
                "shape": [16, 402, 64], "amplitude": 0.1,
                "radius_mm": 8.0, "height_mm": 1.0}
    if args.preset == "paper":
        defaults["shape"] = [32, 1608, 256]
    cfg = load_config(args, defaults, PHANTOM_SCHEMA)
    if args.direction:
        cfg["direction"] = args.direction
    if args.n_lines is not None:
        cfg["n_lines"] = args.n_lines
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if cfg["kind"] == "line":
        spec = LinePhantomSpec(cfg["direction"], n_lines=int(cfg["n_lines"]),
                               shape=tuple(cfg["shape"]), amplitude=cfg["amplitude"],
                               radius=cfg["radius_mm"], height=cfg["height_mm"])
        vol = make_line_phantom(spec)
    else:
        grid = CylGrid(*(int(v) for v in cfg["shape"]), cfg["radius_mm"], cfg["height_mm"])
        comps = [component_from_config(c) for c in cfg.get("components", [])]
        vol = make_assembly_phantom(comps, grid)
    path = io.write_volume(vol, out / "phantom")
    print(f"wrote {path}")

    if cfg.get("weights"):
        wcfg = cfg["weights"]
        regions = [(component_from_config(r["region"]), float(r["weight"]))
                   for r in wcfg.get("regions", [])]
        wmap = make_weight_map(regions, vol.grid, wcfg.get("default", 1.0))
        wpath = io.write_volume(CylVolume(vol.grid, wmap), out / "weights")
        print(f"wrote {wpath}")
    return EXIT_OK


SIMULATE_SCHEMA = {
    "type": "object",
    "properties": {
        "volume": {"type": "string"},
        "geometry": GEOMETRY_SCHEMA,
        "step_mm": {"type": ["number", "null"]},
        "supersample": {"type": "integer", "minimum": 1},
        "noise_sigma": {"type": "number", "minimum": 0},
    },
    "required": ["volume"],
}


def cmd_simulate(args) -> int:
    defaults = {"geometry": {}, "step_mm": None, "supersample": 1, "noise_sigma": 0.0}
    if args.preset == "paper":
        defaults["geometry"] = {"n_views": 4096, "det_cols": 2048, "det_rows": 128,
                                "pixel_pitch_mm": 0.0096, "full_turn": True}
    cfg = load_config(args, defaults, SIMULATE_SCHEMA)
    if args.views is not None:
        cfg["geometry"]["n_views"] = args.views
    vol = io.read_volume(cfg["volume"])
    geom = geometry_from_config(cfg["geometry"])
    sampling = RaySamplingConfig(step=cfg["step_mm"], supersample=cfg["supersample"])
    rng = np.random.default_rng(args.seed)
    ps = simulate_scan(vol, geom, sampling, cfg["noise_sigma"], rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = io.write_projections(ps, out / "projections")
    print(f"wrote {path} ({geom.n_proj} views)")
    return EXIT_OK


POSE_SCHEMA = {
    "type": "object",
    "properties": {
        "projections": {"type": "string"},
        "params": {"type": "object"},
        "study": {
            "type": "object",
            "properties": {
                "centers_px": {"type": "array", "minItems": 2},
                "noise_sigma": {"type": "number", "minimum": 0},
                "geometry": GEOMETRY_SCHEMA,
                "sim_shape": {"type": "array"},
            },
            "required": ["centers_px"],
        },
    },
}


def cmd_pose(args) -> int:
    defaults = {"params": {}}
    cfg = load_config(args, defaults, POSE_SCHEMA)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if cfg.get("study"):
        study = cfg["study"]
        geom = geometry_from_config(study.get("geometry", {}))
        result = pose_precision_study(
            DeviceSpec(), study["centers_px"], geom,
            sim_shape=tuple(study.get("sim_shape", (60, 16, 32))),
            noise_sigma=study.get("noise_sigma", 0.01), seed=args.seed)
        rows = [(k, *[fmt(v) for v in vals], fmt(result["sigma"][k]))
                for k, vals in result["components"].items()]
        n = len(study["centers_px"])
        write_csv_rows(out / "pose_precision.csv",
                       ["component", *[f"scan_{i}" for i in range(n)], "sigma"], rows)
        print(f"wrote {out / 'pose_precision.csv'}")
        return EXIT_OK

    ps = io.read_projections(cfg["projections"])
    result = fit_pose(ps, pose_params_from_config(cfg["params"]))
    io.write_pose(result.to_dict(), out / "pose.json")
    print(f"wrote {out / 'pose.json'}")
    return EXIT_OK


RECON_SCHEMA = {
    "type": "object",
    "properties": {
        "projections": {"type": "string"},
        "grid": {
            "type": "object",
            "properties": {
                "shape": {"type": "array", "minItems": 3, "maxItems": 3},
                "radius_mm": {"type": "number"},
                "height_mm": {"type": "number"},
            },
            "required": ["shape", "radius_mm", "height_mm"],
        },
        "cartesian": {"type": ["object", "null"]},
        "pose": {"type": ["string", "object"]},
        "pose_params": {"type": "object"},
        "sart": {"type": "object"},
        "initial": {"type": ["string", "null"]},
        "weights": {"type": ["string", "null"]},
        "resample_initial": {"type": "boolean"},
        "step_mm": {"type": ["number", "null"]},
    },
    "required": ["projections", "grid"],
}


def cmd_reconstruct(args) -> int:
    defaults = {"pose": "estimate", "pose_params": {}, "sart": {}, "initial": None,
                "weights": None, "resample_initial": False, "step_mm": None,
                "cartesian": None}
    cfg = load_config(args, defaults, RECON_SCHEMA)
    if args.init is not None:
        cfg["initial"] = None if args.init == "none" else args.init
    if args.weights is not None:
        cfg["weights"] = None if args.weights == "none" else args.weights
    ps = io.read_projections(cfg["projections"])

    if isinstance(cfg["pose"], dict):
        pose = Pose.from_dict(cfg["pose"])
    elif cfg["pose"] == "estimate":
        pose = fit_pose(ps, pose_params_from_config(cfg["pose_params"])).pose
    else:
        pose = io.read_pose(cfg["pose"])

    g = cfg["grid"]
    if cfg["cartesian"]:
        c = cfg["cartesian"]
        grid = CartGrid.centered(*(int(v) for v in c["shape"]),
                                 float(c["voxel_size_mm"]),
                                 center=c.get("center_mm", (0.0, 0.0, 0.0)))
    else:
        nh, nt, nr = (int(v) for v in g["shape"])
        grid = CylGrid(nh, nt, nr, g["radius_mm"], g["height_mm"], pose=pose)

    sart = dict(cfg["sart"])
    run_cfg = SartConfig(
        relaxation=float(sart.get("relaxation", 1.0)),
        n_iterations=int(sart.get("passes", 1)),
        projection_order=sart.get("order", "acquisition"),
        order_seed=int(sart.get("order_seed", args.seed)),
        nonnegativity=bool(sart.get("nonnegativity", True)),
        resample_initial=bool(cfg["resample_initial"]),
        sampling=RaySamplingConfig(step=cfg["step_mm"]),
    )
    if cfg["initial"]:
        run_cfg.initial = io.read_volume(cfg["initial"])
    if cfg["weights"]:
        run_cfg.weights = io.read_volume(cfg["weights"]).mu

    vol, report = sart_run(ps, grid, run_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = io.write_volume(vol, out / "volume")
    (out / "report.json").write_text(json.dumps({
        "residuals": report.residuals,
        "wall_time_s": report.wall_time,
        "config": report.config,
        "pose": pose.to_dict(),
    }, indent=2) + "\n")
    write_csv_rows(out / "residuals.csv", ["pass", "residual_l2"],
                   [(k + 1, fmt(r)) for k, r in enumerate(report.residuals)])
    print(f"wrote {path}; residual after last pass: {report.residuals[-1]:.6g}")
    return EXIT_OK


MTF_SCHEMA = {
    "type": "object",
    "properties": {
        "directions": {"type": "array", "items": {"enum": ["azimuthal", "radial"]}},
        "frequencies": {"type": ["array", "null"]},
        "setup": {"type": "object"},
        "aliasing": {"type": ["object", "null"]},
    },
}


def mtf_setup_from_config(d: dict, preset: str) -> MtfSetup:
    setup = MtfSetup()
    if preset == "paper":
        setup = MtfSetup(phantom_shape=(32, 1608, 256), recon_shape=(32, 512, 256),
                         n_views=4096, det_cols=2048, det_rows=128,
                         pixel_pitch=0.0096, step=0.03)
    known = {f.name for f in MtfSetup.__dataclass_fields__.values()}
    for key, value in d.items():
        if key not in known:
            raise errors.ConfigError(f"unknown mtf setup key {key!r}")
        if key in ("phantom_shape", "recon_shape"):
            value = tuple(int(v) for v in value)
        setattr(setup, key, value)
    return setup


def cmd_mtf(args) -> int:
    defaults = {"directions": ["azimuthal", "radial"], "frequencies": None,
                "setup": {}, "aliasing": None}
    cfg = load_config(args, defaults, MTF_SCHEMA)
    setup = mtf_setup_from_config(cfg["setup"], args.preset)
    freqs = cfg["frequencies"] or frequency_sweep(setup.phantom_shape[2])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    for direction in cfg["directions"]:
        curve = mtf_experiment(setup, direction, freqs)
        mtf.write_csv(curve, out / f"mtf_{direction}.csv")
        mtf.save_heatmap(curve, out / f"mtf_{direction}.png", setup.recon_shape[2])
        print(f"wrote {out / f'mtf_{direction}.csv'}: "
              + ", ".join(f"n_l={f}: {m:.3f}" for f, m in
                          zip(curve.frequencies, curve.modulation)))

    if cfg["aliasing"]:
        al = cfg["aliasing"]
        result = aliasing_experiment(setup, int(al.get("n_lines", 8)),
                                     al.get("theta_counts", [67, 128]))
        rows = []
        for n_theta, res in result.items():
            for w, (m, flag) in enumerate(zip(res["modulation"], res["aliased"])):
                rows.append((n_theta, w, fmt(m), int(flag), fmt(res["rmse_outer"])))
        write_csv_rows(out / "aliasing.csv",
                       ["n_theta", "window", "modulation", "aliased", "rmse_outer"],
                       rows)
        print(f"wrote {out / 'aliasing.csv'}")
    return EXIT_OK


BATCH_SCHEMA = {
    "type": "object",
    "properties": {
        "n_samples": {"type": "integer", "minimum": 2},
        "missing_fraction": {"type": "number", "exclusiveMinimum": 0,
                             "exclusiveMaximum": 1},
        "strategies": {"type": "array", "items": {"enum": ["a", "b", "c", "d"]}},
        "recon_shape": {"type": "array", "minItems": 3, "maxItems": 3},
        "sim_shape": {"type": "array", "minItems": 3, "maxItems": 3},
        "passes": {"type": "integer", "minimum": 1},
        "noise_sigma": {"type": "number", "minimum": 0},
        "pose_source": {"enum": ["estimated", "true"]},
        "geometry": GEOMETRY_SCHEMA,
    },
}


def cmd_batch(args) -> int:
    defaults = {"n_samples": 50, "missing_fraction": 0.4, "strategies": ["a", "c"],
                "recon_shape": [240, 40, 60], "sim_shape": [240, 16, 60],
                "passes": 1, "noise_sigma": 0.02, "pose_source": "estimated",
                "geometry": {}}
    cfg = load_config(args, defaults, BATCH_SCHEMA)
    if args.strategies:
        cfg["strategies"] = sorted(set(args.strategies))
    bc = BatchConfig(
        n_samples=int(cfg["n_samples"]),
        missing_fraction=float(cfg["missing_fraction"]),
        strategies=tuple(cfg["strategies"]),
        recon_shape=tuple(int(v) for v in cfg["recon_shape"]),
        sim_shape=tuple(int(v) for v in cfg["sim_shape"]),
        passes=int(cfg["passes"]),
        noise_sigma=float(cfg["noise_sigma"]),
        pose_source=cfg["pose_source"],
        seed=args.seed,
    )
    geom = geometry_from_config(cfg["geometry"])
    result = batch_experiment(bc, geom)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    strategies = list(bc.strategies)
    rows = [(r["sample"], int(r["present"]), *[fmt(r[s]) for s in strategies])
            for r in result["rows"]]
    write_csv_rows(out / "batch_results.csv",
                   ["sample", "present", *[f"presence_{s}" for s in strategies]], rows)
    srows = [(s, *[fmt(result["summary"][s][k]) for k in
                   ("mean_present", "mean_missing", "std_present", "std_missing", "gap")])
             for s in strategies]
    write_csv_rows(out / "batch_summary.csv",
                   ["strategy", "mean_present", "mean_missing",
                    "std_present", "std_missing", "standardized_gap"], srows)
    _plot_batch(result, strategies, out / "batch_presence.png")
    for s in strategies:
        print(f"strategy {s}: gap = {result['summary'][s]['gap']:.3f}")
    print(f"wrote {out / 'batch_summary.csv'}")
    return EXIT_OK


def _plot_batch(result, strategies, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(strategies), figsize=(4 * len(strategies), 3),
                             sharey=True, squeeze=False)
    for ax, s in zip(axes[0], strategies):
        pres = [r[s] for r in result["rows"] if r["present"]]
        miss = [r[s] for r in result["rows"] if not r["present"]]
        bins = np.histogram_bin_edges(pres + miss, bins=15)
        ax.hist(pres, bins=bins, alpha=0.6, label="present")
        ax.hist(miss, bins=bins, alpha=0.6, label="missing")
        ax.set_title(f"strategy ({s}), gap {result['summary'][s]['gap']:.2f}")
        ax.set_xlabel("presence metric (1/mm)")
    axes[0][0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cyltomo",
        description="cone-beam CT simulation, pose estimation and cylindrical "
                    "SART reconstruction for cylindrical objects",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config document")
    common.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker thread cap (env CYLTOMO_THREADS)")
    common.add_argument("--preset", choices=["paper", "desk"], default="desk",
                        help="scale preset (default desk)")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[common], help="generate a phantom volume")
    p.add_argument("--direction", choices=["azimuthal", "radial"])
    p.add_argument("--n-lines", type=int, dest="n_lines")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", parents=[common], help="forward-project a volume")
    p.add_argument("--views", type=int, help="override projection count")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pose", parents=[common], help="estimate the object pose")
    p.set_defaults(func=cmd_pose)

    p = sub.add_parser("reconstruct", parents=[common], help="SART reconstruction")
    p.add_argument("--init", metavar="none|PATH", help="initial volume")
    p.add_argument("--weights", metavar="none|PATH", help="back-projection weight map")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("mtf", parents=[common], help="directional MTF sweep")
    p.set_defaults(func=cmd_mtf)

    p = sub.add_parser("batch", parents=[common], help="batch inspection study")
    p.add_argument("--strategies", nargs="+", choices=["a", "b", "c", "d"])
    p.set_defaults(func=cmd_batch)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_threads(args.threads)
        return args.func(args)
    except errors.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (errors.IoFailure, errors.SchemaMismatch, errors.SizeMismatch) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except errors.CylTomoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
