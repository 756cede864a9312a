"""Command-line entry point: ``splatrecon <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from ..splatcore import SplatError
from . import stages
from .config import ConfigError, PipelineConfig, load_config
from .pipeline import STAGE_CODES, file_sha256, run_pipeline

log = logging.getLogger("splatrecon.cli")

EXIT_USAGE = 2
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand without clobbering.
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="YAML pipeline config")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output file, or artifact directory for pipeline")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker cap for intra-stage pools")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global seed")
    p.add_argument("--log-level", default=argparse.SUPPRESS)
    return p


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--geo", required=True, help="Fourier stack tensor from `encode --mesh`")
    p.add_argument("--tex", required=True, help="texture feature tensor from `encode --image`")
    p.add_argument("--weights", required=True, help="NSW1 weight manifest")
    p.add_argument("--out-splats", nargs="+", required=True, metavar="PLY",
                   help="two PLY paths, or one pattern containing {c,n}")


def build_parser() -> argparse.ArgumentParser:
    g = _global_flags()
    parser = argparse.ArgumentParser(prog="splatrecon", parents=[g], description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", parents=[g], help="Fourier-encode a body mesh, or texture-encode an image")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mesh")
    src.add_argument("--image")
    p.add_argument("--order", type=int, help="Fourier order q")
    p.add_argument("--points", type=int, help="densified point count m")
    p.add_argument("--size", type=int, help="map resolution")
    p.add_argument("--stack", help="stack tensor whose front camera frames the image (with --image)")
    p.add_argument("--weights", help="NSW1 manifest holding texenc.* (with --image)")

    p = sub.add_parser("render", parents=[g], help="render a splat or mesh from a camera rig to PNGs")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--splat")
    src.add_argument("--mesh")
    p.add_argument("--rig", default=None, choices=["front3", "ring8"])
    p.add_argument("--size", type=int)
    p.add_argument("--mode", default="color", choices=["color", "normal"])

    p = sub.add_parser("run", parents=[g], help="dual U-Net forward pass and Gaussian decoding")
    _add_run_args(p)
    p = sub.add_parser("netshell", parents=[g], help="network skeleton commands")
    nsub = p.add_subparsers(dest="netshell_command", required=True)
    _add_run_args(nsub.add_parser("run", parents=[g], help="same as `run`"))

    p = sub.add_parser("remesh", parents=[g], help="Gaussian-enhanced remeshing of a splat PLY")
    p.add_argument("--splat", required=True)
    p.add_argument("--views", type=int, choices=[3, 8], help="3 = front3 rig, 8 = ring8 rig")
    p.add_argument("--res", type=int, help="render resolution")
    p.add_argument("--iters", type=int, help="optimizer iterations")
    p.add_argument("--report", help="write the loss report JSON here")

    p = sub.add_parser("eval", parents=[g], help="geometry or image metrics")
    esub = p.add_subparsers(dest="eval_kind", required=True)
    e = esub.add_parser("geometry", parents=[g])
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--tau", type=float)
    e.add_argument("--samples", type=int)
    e = esub.add_parser("image", parents=[g])
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)

    p = sub.add_parser("pipeline", parents=[g], help="run every stage with caching")
    p.add_argument("--fixture", choices=["sphere"], help="generate synthetic inputs")
    return parser


def _config(args) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    if hasattr(args, "seed"):
        cfg.seed = args.seed
    if hasattr(args, "threads"):
        cfg.threads = args.threads
    if hasattr(args, "log_level"):
        cfg.log_level = args.log_level
    return cfg.validate()


def _need_out(args, what: str) -> Path:
    out = getattr(args, "out", None)
    if out is None:
        raise ConfigError(f"--out is required for {what}")
    return Path(out)


def _write_manifest(out: Path, command: str, inputs: dict, params: dict, outputs: Sequence[Path], wall_ms: float, seed: int) -> None:
    """Single-command manifest written next to the primary output as ``<name>.manifest.json``."""
    man = {
        "command": command,
        "seed": seed,
        "params": params,
        "inputs": {k: {"path": str(p), "sha256": file_sha256(Path(p))} for k, p in inputs.items() if p},
        "outputs": {str(p): file_sha256(Path(p)) for p in outputs},
        "wall_ms": round(wall_ms, 3),
    }
    target = out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")
    target.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


def _split_splats(values: list) -> tuple[Path, Path]:
    if len(values) == 2:
        return Path(values[0]), Path(values[1])
    if len(values) == 1 and "{c,n}" in values[0]:
        return Path(values[0].replace("{c,n}", "c")), Path(values[0].replace("{c,n}", "n"))
    raise ConfigError("--out-splats takes two paths or one pattern containing {c,n}")


def cmd_encode(args, cfg: PipelineConfig) -> int:
    out = _need_out(args, "encode")
    t0 = time.perf_counter()
    if args.mesh:
        params = {
            "q": args.order if args.order is not None else cfg.fourier.q,
            "m": args.points if args.points is not None else cfg.fourier.m,
            "size": args.size if args.size is not None else cfg.fourier.size,
            "seed": cfg.fourier.seed if cfg.fourier.seed is not None else cfg.seed,
            "centroid_only": cfg.fourier.centroid_only,
        }
        stages.encode_mesh_file(Path(args.mesh), out, **params)
        inputs, outputs = {"mesh": args.mesh}, [out, stages.cameras_path(out)]
    else:
        if not (args.stack and args.weights):
            raise ConfigError("encode --image needs --stack (for the camera) and --weights")
        params = {}
        stages.encode_image_file(Path(args.image), Path(args.stack), Path(args.weights), out)
        inputs = {"image": args.image, "stack": args.stack, "weights": args.weights}
        outputs = [out]
    _write_manifest(out, "encode", inputs, params, outputs, (time.perf_counter() - t0) * 1e3, cfg.seed)
    return 0


def cmd_render(args, cfg: PipelineConfig) -> int:
    out = _need_out(args, "render")
    t0 = time.perf_counter()
    rig = args.rig or cfg.cameras.rig
    size = args.size or cfg.cameras.size
    paths = stages.render_views(out, size, rig, splat=args.splat and Path(args.splat),
                                mesh=args.mesh and Path(args.mesh), mode=args.mode)
    _write_manifest(out, "render", {"splat": args.splat, "mesh": args.mesh},
                    {"rig": rig, "size": size, "mode": args.mode}, paths, (time.perf_counter() - t0) * 1e3, cfg.seed)
    log.info("rendered views=%d out=%s", len(paths), out)
    return 0


def cmd_run(args, cfg: PipelineConfig) -> int:
    out_c, out_n = _split_splats(args.out_splats)
    t0 = time.perf_counter()
    stages.netshell_run(Path(args.geo), Path(args.tex), Path(args.weights), out_c, out_n)
    _write_manifest(out_c, "run", {"geo": args.geo, "tex": args.tex, "weights": args.weights}, {},
                    [out_c, out_n], (time.perf_counter() - t0) * 1e3, cfg.seed)
    return 0


def cmd_remesh(args, cfg: PipelineConfig) -> int:
    out = _need_out(args, "remesh")
    rig = {3: "front3", 8: "ring8"}.get(args.views, cfg.cameras.rig)
    size = args.res or cfg.cameras.size
    if args.iters:
        cfg.remesh.iterations = args.iters

    def make_config(gs):
        views = stages.remesh_views(gs, rig, size, cfg.cameras.views)
        return cfg.remesh.build(size, views=views, threads=cfg.threads)

    t0 = time.perf_counter()
    report_path = Path(args.report) if args.report else None
    rep = stages.remesh_file(Path(args.splat), out, report_path, make_config)
    outputs = [out] + ([report_path] if report_path else [])
    _write_manifest(out, "remesh", {"splat": args.splat}, {"rig": rig, "size": size, **cfg.to_dict()["remesh"]},
                    outputs, (time.perf_counter() - t0) * 1e3, cfg.seed)
    log.info("remesh wrote out=%s accepted=%d total=%.6g", out, rep.n_accepted, rep.final["total"])
    return 0


def cmd_eval(args, cfg: PipelineConfig) -> int:
    out = getattr(args, "out", None)
    if args.eval_kind == "geometry":
        tau = args.tau if args.tau is not None else cfg.metrics.tau
        samples = args.samples or cfg.metrics.samples
        rep = stages.eval_geometry_files(Path(args.pred), Path(args.gt), tau, samples, cfg.seed, cfg.threads)
    else:
        rep = stages.eval_image_files(Path(args.pred), Path(args.gt))
    text = rep.to_json()
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_pipeline(args, cfg: PipelineConfig) -> int:
    if getattr(args, "fixture", None):
        cfg.fixture = args.fixture
    if hasattr(args, "out"):
        cfg.paths.out = args.out
    config_dir = Path(args.config).resolve().parent if getattr(args, "config", None) else Path.cwd()
    code, runner = run_pipeline(cfg, config_dir)
    for r in runner.results:
        print(f"stage {r.name}: {r.status}")
    if code:
        print(f"pipeline failed exit_code={code}", file=sys.stderr)
    return code


COMMANDS = {
    "encode": cmd_encode,
    "render": cmd_render,
    "run": cmd_run,
    "netshell": cmd_run,
    "remesh": cmd_remesh,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=getattr(logging, cfg.log_level.upper(), logging.INFO), format=LOG_FORMAT, force=True)
    try:
        return COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SplatError, OSError) as e:
        stage = {"netshell": "netshell", "run": "netshell"}.get(args.command, args.command)
        code = STAGE_CODES.get(stage, 1)
        log.error("command failed command=%s exit_code=%d error=%s", args.command, code, e)
        print(f"error: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
