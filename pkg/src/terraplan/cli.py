"""Command line front end.

Thin dispatch over the library; no planning logic lives here. Human
readable messages go to stderr, machine readable artifacts to files
under --out. Exit codes: 0 success, 1 planning failure (error.json
written), 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .bench import SCENE_KINDS, SceneSpec, run_benchmark
from .cloud import PointCloud, load_cloud, median_spacing, save_cloud
from .errors import TerraplanError
from .gridmap import load_field, save_field, save_layer_csv
from .planner import PlannerConfig, assess_terrain, plan
from .search import SearchSpace, astar, save_path_csv
from .vgf import VgfParams, vgf_mask


def _say(*parts) -> None:
    print(*parts, file=sys.stderr)


def _config_from(args) -> PlannerConfig:
    cfg = (PlannerConfig.from_json_file(args.config)
           if args.config else PlannerConfig())
    if args.set:
        cfg = cfg.with_overrides(args.set)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg.validate()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _vgf_params(cloud, cfg: PlannerConfig) -> VgfParams:
    eps = cfg.vgf.eps_z
    if eps is None:
        eps = min(2.0 * median_spacing(cloud), 0.5 * cfg.vgf.radius)
    return VgfParams(r=cfg.vgf.radius, theta=cfg.vgf.max_tilt, eps_z=eps)


def _write_json(path: Path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _dump_fields(model, out: Path) -> None:
    save_field(out / "esdf.bin", model.esdf.dist, model.spec)
    save_field(out / "penalty.bin", model.penalty_field.values, model.spec)
    save_field(out / "standable.bin",
               model.search_space.standable.astype(np.float64), model.spec)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _cmd_filter(args) -> int:
    cfg = _config_from(args)
    out = _out_dir(args)
    cloud = load_cloud(args.cloud)
    keep, stats = vgf_mask(cloud.points, cloud.tree, _vgf_params(cloud, cfg))
    save_cloud(PointCloud(cloud.points[keep]), out / "valid.xyz")
    _write_json(out / "filter_stats.json", {
        "n_input": stats.n_input, "n_kept": stats.n_kept,
        "n_rejected_overhead": stats.n_rejected_overhead,
        "n_rejected_steep": stats.n_rejected_steep,
        "n_isolated": stats.n_isolated,
    })
    _say(f"kept {stats.n_kept}/{stats.n_input} points "
         f"(overhead {stats.n_rejected_overhead}, steep {stats.n_rejected_steep})")
    _say(f"wrote {out / 'valid.xyz'}")
    return 0


def _cmd_field(args) -> int:
    cfg = _config_from(args)
    out = _out_dir(args)
    model = assess_terrain(load_cloud(args.cloud), cfg)
    _dump_fields(model, out)
    _say(f"assessed terrain in {model.t_assess:.2f} s; "
         f"grid {model.spec.dims}, standable cells {model.search_space.n_standable}")
    _say(f"wrote esdf.bin, penalty.bin, standable.bin under {out}")
    return 0


def _cmd_search(args) -> int:
    cfg = _config_from(args)
    out = _out_dir(args)
    if args.standable:
        values, spec = load_field(args.standable)
        step_max = cfg.search.step_max or 2.0 * spec.resolution
        space = SearchSpace(spec, values > 0.5, step_max)
    else:
        if not args.cloud:
            _say("search needs a cloud argument or --standable FIELD")
            return 2
        space = assess_terrain(load_cloud(args.cloud), cfg).search_space
    path = astar(space, args.start, args.goal)
    save_path_csv(out / "path.csv", path)
    _say(f"path with {len(path.points)} cells, cost {path.cost:.2f} m, "
         f"{path.n_explored} cells explored")
    _say(f"wrote {out / 'path.csv'}")
    return 0


def _cmd_plan(args) -> int:
    cfg = _config_from(args)
    out = _out_dir(args)
    model = assess_terrain(load_cloud(args.cloud), cfg)
    if args.dump_fields:
        _dump_fields(model, out)
    result = plan(model, args.start, args.goal, cfg)
    _write_json(out / "result.json",
                {"status": result.status, "metrics": result.metrics})
    if result.trajectory is not None:
        result.trajectory.save_csv(out / "traj.csv")
        with open(out / "traj.json", "w") as fh:
            fh.write(result.trajectory.to_json())
    if args.debug_costs and result.costs is not None:
        _write_json(out / "costs.json", result.costs.to_dict())
        if result.trace is not None:
            result.trace.save_csv(out / "trace.csv")
    if not result.success:
        _write_json(out / "error.json",
                    {"status": result.status, "metrics": result.metrics})
        _say(f"planning failed: {result.status}")
        return 1
    m = result.metrics
    _say(f"planned {m['length']:.2f} m in {m['duration']:.2f} s of motion; "
         f"cost {m['j_final']:.3g} after {m['iterations']} iterations")
    _say(f"wrote traj.csv, traj.json, result.json under {out}")
    return 0


def _cmd_bench(args) -> int:
    cfg = _config_from(args)
    out = _out_dir(args)
    specs = [SceneSpec(kind=k, extent=args.extent, seed=args.scene_seed)
             for k in args.scene]
    report = run_benchmark(specs, args.trials, cfg,
                           master_seed=args.seed or 0)
    report.save_csv(out / "report.csv")
    _write_json(out / "summary.json", report.aggregates)
    agg = report.aggregates
    _say(f"{agg['n_success']}/{agg['n_trials']} trials succeeded")
    for key in ("t_assess_median", "t_plan_median", "length_mean", "kappa_m_mean"):
        if key in agg:
            _say(f"  {key} = {agg[key]:.4g}")
    _say(f"wrote report.csv and summary.json under {out}")
    return 0


def _cmd_inspect(args) -> int:
    values, spec = load_field(args.field)
    _say(f"grid dims {spec.dims}, resolution {spec.resolution} m, "
         f"origin {tuple(round(v, 6) for v in spec.origin)}")
    _say(f"values: min {values.min():.6g}, max {values.max():.6g}, "
         f"mean {values.mean():.6g}")
    if args.layer is not None:
        out = _out_dir(args)
        dest = out / f"layer_{args.layer}.csv"
        save_layer_csv(dest, values, spec, args.layer)
        _say(f"wrote {dest}")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_common(p, seed=True):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, e.g. weights.lambda_s=500")
    p.add_argument("--out", default=".", help="output directory")
    if seed:
        p.add_argument("--seed", type=int, default=None)


def _xyz(p, name):
    p.add_argument(name, nargs=3, type=float, metavar=("X", "Y", "Z"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="terraplan",
        description="Ground-robot motion planning over point-cloud terrain.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", help="run the valid-ground filter on a cloud")
    p.add_argument("cloud")
    _add_common(p)
    p.set_defaults(fn=_cmd_filter)

    p = sub.add_parser("field", help="build and dump terrain fields")
    p.add_argument("cloud")
    _add_common(p)
    p.set_defaults(fn=_cmd_field)

    p = sub.add_parser("search", help="grid search between two points")
    p.add_argument("cloud", nargs="?")
    p.add_argument("--standable", help="reuse a dumped standable.bin field")
    _xyz(p, "--start")
    _xyz(p, "--goal")
    _add_common(p)
    p.set_defaults(fn=_cmd_search)

    p = sub.add_parser("plan", help="full pipeline: filter, fields, search, optimize")
    p.add_argument("cloud")
    _xyz(p, "--start")
    _xyz(p, "--goal")
    p.add_argument("--debug-costs", action="store_true",
                   help="also write costs.json and trace.csv")
    p.add_argument("--dump-fields", action="store_true",
                   help="also write esdf/penalty/standable field dumps")
    _add_common(p)
    p.set_defaults(fn=_cmd_plan)

    p = sub.add_parser("bench", help="randomized trials on synthetic scenes")
    p.add_argument("--scene", action="append", choices=SCENE_KINDS,
                   help="scene kind (repeatable); default uneven_terrain")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--extent", type=float, default=40.0)
    p.add_argument("--scene-seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("inspect", help="print statistics of a dumped field")
    p.add_argument("field")
    p.add_argument("--layer", type=int, default=None,
                   help="also export this z layer as CSV")
    _add_common(p, seed=False)
    p.set_defaults(fn=_cmd_inspect)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command in ("search", "plan") and (args.start is None or args.goal is None):
        _say(f"{args.command} requires --start and --goal")
        return 2
    if args.command == "bench" and not args.scene:
        args.scene = ["uneven_terrain"]
    try:
        return args.fn(args)
    except (TerraplanError, ValueError, KeyError, OSError) as exc:
        out = Path(getattr(args, "out", "."))
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "error.json",
                    {"status": "error", "error": type(exc).__name__,
                     "message": str(exc)})
        _say(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
