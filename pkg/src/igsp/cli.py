"""Command line front end: ``igsp generate | register | evaluate | bench``.

All paths are explicit flags. The only environment variable consulted is
IGSP_LOG_LEVEL (overridden by --log-level).

Exit codes: 0 success, 1 runtime error or crashed benchmark trial,
2 usage error, 3 registration finished without converging.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import METHODS, RunConfig, run_benchmark
from .cloud_io import FORMATS, load_cloud, save_cloud
from .config import ConfigError, build_configs, load_config
from .engine import RegistrationError, prepare, register
from .evaluation import evaluate
from .geometry import apply
from .icp import run_icp_baseline
from .keypoints import load_sidecar, save_sidecar
from .report import (
    CONVENTION,
    ground_truth_from_dict,
    ground_truth_to_dict,
    matrix_from_list,
    read_json,
    report_to_dict,
    validate_report,
    write_json,
)
from .scenes import SceneSpec, generate_scene

logger = logging.getLogger("igsp")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2, 3


def _add_scene_args(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=SceneSpec.n_points, help="approximate source point budget")
    p.add_argument("--noise", type=float, default=SceneSpec.noise, help="noise stdev as a fraction of the diagonal")
    p.add_argument("--column-shape", choices=("square", "round"), default=SceneSpec.column_shape)
    p.add_argument("--min-angle", type=float, default=SceneSpec.min_angle_deg, help="degrees")
    p.add_argument("--max-angle", type=float, default=SceneSpec.max_angle_deg, help="degrees")


def _scene_spec(args, **extra) -> SceneSpec:
    return SceneSpec(n_points=args.points, noise=args.noise, seed=args.seed, column_shape=args.column_shape,
                     min_angle_deg=args.min_angle, max_angle_deg=args.max_angle, **extra)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="igsp", description="Pairwise point cloud registration (IGSP and ICP).")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default: $IGSP_LOG_LEVEL or WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a seeded synthetic source/target pair and its ground truth")
    g.add_argument("--output-dir", type=Path, required=True)
    _add_scene_args(g)
    g.add_argument("--overlap", type=float, default=SceneSpec.overlap)
    g.add_argument("--format", choices=FORMATS, default="ply-binary-le")

    r = sub.add_parser("register", help="register --target onto --source")
    r.add_argument("--source", type=Path, required=True)
    r.add_argument("--target", type=Path, required=True)
    r.add_argument("--output", type=Path, required=True, help="JSON report path")
    r.add_argument("--method", choices=METHODS, default="igsp")
    r.add_argument("--config", type=Path, help="key = value parameter file")
    r.add_argument("--keypoint-cache", type=Path, help="directory of keypoint/descriptor sidecar files")
    r.add_argument("--aligned", type=Path, help="write the transformed target cloud here")
    r.add_argument("--dump-cost-dir", type=Path, help="write each iteration's cost matrix as CSV")
    r.add_argument("--ground-truth", type=Path, help="evaluate against this ground-truth JSON")
    r.add_argument("--figure", type=Path, help="write a convergence plot (PNG/PDF/SVG)")
    r.add_argument("--icp-max-iter", type=int, default=50)
    r.add_argument("--icp-eps", type=float, default=1e-8)

    e = sub.add_parser("evaluate", help="score a report against ground truth")
    e.add_argument("--report", type=Path, required=True)
    e.add_argument("--ground-truth", type=Path, required=True)
    e.add_argument("--output", type=Path, help="report copy with the evaluation block (default: print only)")

    b = sub.add_parser("bench", help="seeded multi-trial benchmark")
    b.add_argument("--output-dir", type=Path, required=True)
    b.add_argument("--trials", type=int, default=20)
    b.add_argument("--methods", default=",".join(METHODS), help="comma separated subset of igsp,icp")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--config", type=Path)
    _add_scene_args(b)
    b.add_argument("--min-overlap", type=float, default=0.6)
    b.add_argument("--max-overlap", type=float, default=0.9)
    b.add_argument("--source", type=Path, help="use files instead of synthetic scenes")
    b.add_argument("--target", type=Path)
    b.add_argument("--ground-truth", type=Path)
    b.add_argument("--no-figures", action="store_true")
    return parser


def cmd_generate(args) -> int:
    spec = _scene_spec(args, overlap=args.overlap)
    source, target, gt = generate_scene(spec)
    ext = "xyz" if args.format == "xyz" else "ply"
    out = args.output_dir
    out.mkdir(parents=True, exist_ok=True)
    save_cloud(source, out / f"source.{ext}", args.format)
    save_cloud(target, out / f"target.{ext}", args.format)
    doc = ground_truth_to_dict(gt)
    doc["scene"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(spec).items()}
    write_json(out / "ground_truth.json", doc)
    print(f"source: {len(source)} points, target: {len(target)} points, diagonal {source.diagonal():.4g}")
    print(f"ground truth written to {out / 'ground_truth.json'} ({CONVENTION})")
    return EXIT_OK


def _cache_path(cache_dir: Path, cloud_path: Path, detector) -> Path:
    h = hashlib.sha256(Path(cloud_path).read_bytes())
    h.update(repr(dataclasses.astuple(detector)).encode())
    return cache_dir / f"{Path(cloud_path).stem}-{h.hexdigest()[:16]}.igspkd"


def _prepared(cache_dir: Path, paths, clouds, detector):
    out = []
    cache_dir.mkdir(parents=True, exist_ok=True)
    for path, cloud in zip(paths, clouds):
        side = _cache_path(cache_dir, path, detector)
        if side.exists():
            logger.info("loading keypoints from %s", side)
            kps, descs = load_sidecar(side)
        else:
            kps, descs = prepare(cloud, detector)
            save_sidecar(side, kps, descs)
        out += [kps, descs]
    return tuple(out)


def _print_matrix(M) -> None:
    for row in np.asarray(M).reshape(4, 4):
        print("  " + " ".join(f"{v: .9f}" for v in row))


def cmd_register(args) -> int:
    source, target = load_cloud(args.source), load_cloud(args.target)
    igsp_over, det_over = load_config(args.config) if args.config else ({}, {})
    if args.method == "igsp":
        cfg, det = build_configs(igsp_over, det_over, source)
        prepared = None
        if args.keypoint_cache:
            prepared = _prepared(args.keypoint_cache, (args.source, args.target), (source, target), det)
        if args.dump_cost_dir:
            args.dump_cost_dir.mkdir(parents=True, exist_ok=True)
        report = register(source, target, cfg, det, prepared=prepared, dump_dir=args.dump_cost_dir)
    else:
        report = run_icp_baseline(source, target, max_iter=args.icp_max_iter, eps=args.icp_eps)
    ev = None
    if args.ground_truth:
        gt = ground_truth_from_dict(read_json(args.ground_truth))
        ev = evaluate(report.transform, report.match.pairs if report.match else (),
                      report.source_keypoints, report.target_keypoints, gt)
    doc = report_to_dict(report, ev, include_keypoints=args.method == "igsp",
                         include_pairs=args.method == "igsp",
                         inputs={"source": str(args.source), "target": str(args.target)})
    validate_report(doc)
    write_json(args.output, doc)
    if args.aligned:
        save_cloud(apply(report.transform, target), args.aligned)
    if args.figure:
        from .plotting import plot_convergence

        plot_convergence(doc, args.figure)
    print(f"method {report.method}: {report.iterations} iterations, converged={report.converged}")
    print(f"transform ({CONVENTION}):")
    _print_matrix(doc["transform"])
    if ev is not None:
        _print_evaluation(ev)
    if not report.converged:
        print("warning: registration did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _print_evaluation(ev) -> None:
    flag = "" if ev.precision_defined else " (undefined: no pairs)"
    print(f"e_r = {ev.rotation_error_mdeg:.3f} mdeg, e_t = {ev.translation_error:.6g}")
    print(f"TP {ev.tp}  FP {ev.fp}  FN {ev.fn}  precision {ev.precision:.3f}{flag}  recall {ev.recall:.3f}")


def cmd_evaluate(args) -> int:
    doc = read_json(args.report)
    validate_report(doc)
    gt = ground_truth_from_dict(read_json(args.ground_truth))
    T = matrix_from_list(doc["transform"])
    pairs = [tuple(p) for p in (doc.get("match") or {}).get("pairs", [])]
    kp = doc.get("keypoints") or {"source": [], "target": []}
    if pairs and not kp["source"]:
        logger.warning("report carries no keypoints; precision/recall reflect an empty pair set")
        pairs = []
    ev = evaluate(T, pairs, np.asarray(kp["source"], float).reshape(-1, 3),
                  np.asarray(kp["target"], float).reshape(-1, 3), gt)
    _print_evaluation(ev)
    if args.output:
        doc["evaluation"] = ev.as_dict()
        validate_report(doc)
        write_json(args.output, doc)
    return EXIT_OK


def cmd_bench(args) -> int:
    igsp_over, det_over = load_config(args.config) if args.config else ({}, {})
    files = (args.source, args.target, args.ground_truth)
    scene = None if any(files) else _scene_spec(args)
    cfg = RunConfig(
        output_dir=args.output_dir, scene=scene, source_path=args.source, target_path=args.target,
        ground_truth_path=args.ground_truth, igsp_overrides=igsp_over, detector_overrides=det_over,
        methods=tuple(m.strip() for m in args.methods.split(",") if m.strip()), trials=args.trials,
        seed=args.seed, overlap_range=(args.min_overlap, args.max_overlap), workers=args.workers,
        figures=not args.no_figures,
    )
    code, rows = run_benchmark(cfg)
    for m in cfg.methods:
        mine = [r for r in rows if r["method"] == m]
        ok = sum(bool(r["success"]) for r in mine)
        print(f"{m}: {ok}/{len(mine)} successful (e_r < 1 deg, e_t < 1% diagonal)")
    print(f"results: {args.output_dir / 'results.csv'}, summary: {args.output_dir / 'summary.csv'}")
    return code


COMMANDS = {"generate": cmd_generate, "register": cmd_register, "evaluate": cmd_evaluate, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = (args.log_level or os.environ.get("IGSP_LOG_LEVEL") or "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, ConfigError) else EXIT_ERROR
    except (RegistrationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
