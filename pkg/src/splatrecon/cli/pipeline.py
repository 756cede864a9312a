"""Stage runner with content-hash caching and per-stage manifests.

Every stage declares its input files, parameters and output files. The cache
key is the SHA-256 of the stage name, the parameters and the input file
hashes; a stage is skipped when its manifest carries the same key and every
recorded output still hashes to the recorded value.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from ..splatcore import SplatError
from . import stages
from .config import PipelineConfig

log = logging.getLogger("splatrecon.cli")

# Nonzero exit code per stage, in execution order.
STAGE_CODES = {
    "fixture": 10,
    "weights": 11,
    "encode": 12,
    "render": 13,
    "texture": 14,
    "netshell": 15,
    "remesh": 16,
    "eval": 17,
    "report": 18,
}


class StageError(SplatError):
    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"stage {stage} failed: {message}")
        self.stage = stage
        self.exit_code = STAGE_CODES.get(stage, 1)


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Stage:
    name: str
    inputs: dict  # role -> Path
    params: dict
    outputs: list  # Paths
    run: Callable[[], Optional[dict]]

    def key(self) -> str:
        blob = json.dumps(
            {"stage": self.name, "params": self.params, "inputs": {k: file_sha256(p) for k, p in self.inputs.items()}},
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class StageResult:
    name: str
    status: str  # "ran" or "skipped (cached)"
    wall_ms: float = 0.0
    info: dict = field(default_factory=dict)


class Runner:
    def __init__(self, out_dir: Path, seed: int) -> None:
        self.out_dir = Path(out_dir)
        self.manifest_dir = self.out_dir / "manifests"
        self.seed = seed
        self.results: list[StageResult] = []

    def _manifest_path(self, name: str) -> Path:
        return self.manifest_dir / f"{name}.json"

    def _cached(self, stage: Stage, key: str) -> Optional[dict]:
        path = self._manifest_path(stage.name)
        if not path.exists():
            return None
        try:
            man = json.loads(path.read_text())
        except json.JSONDecodeError:
            return None
        if man.get("key") != key:
            return None
        for name, digest in man.get("outputs", {}).items():
            p = self.out_dir / name
            if not p.exists() or file_sha256(p) != digest:
                return None
        return man

    def run(self, stage: Stage) -> StageResult:
        try:
            for role, p in stage.inputs.items():
                if not Path(p).exists():
                    raise StageError(stage.name, f"missing input {role}={p}")
            key = stage.key()
            man = self._cached(stage, key)
            if man is not None:
                log.info("stage skipped (cached) stage=%s key=%s", stage.name, key[:12])
                res = StageResult(stage.name, "skipped (cached)", 0.0, man.get("info", {}))
                self.results.append(res)
                return res
            log.info("stage start stage=%s", stage.name)
            t0 = time.perf_counter()
            info = stage.run() or {}
            wall = (time.perf_counter() - t0) * 1e3
        except StageError:
            raise
        except (SplatError, OSError, ValueError) as e:
            raise StageError(stage.name, str(e)) from e
        manifest = {
            "stage": stage.name,
            "key": key,
            "seed": self.seed,
            "params": stage.params,
            "inputs": {k: {"path": str(p), "sha256": file_sha256(p)} for k, p in stage.inputs.items()},
            "outputs": {str(Path(p).relative_to(self.out_dir)): file_sha256(p) for p in stage.outputs},
            "wall_ms": round(wall, 3),
            "info": info,
        }
        self.manifest_dir.mkdir(parents=True, exist_ok=True)
        self._manifest_path(stage.name).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        log.info("stage done stage=%s wall_ms=%.0f", stage.name, wall)
        res = StageResult(stage.name, "ran", wall, info)
        self.results.append(res)
        return res


def _abs(p: Optional[str], base: Path) -> Optional[Path]:
    if p is None:
        return None
    q = Path(p)
    return q if q.is_absolute() else (base / q)


def run_pipeline(cfg: PipelineConfig, config_dir: Path = Path(".")) -> tuple[int, Runner]:
    """Run every stage in dependency order. Returns (exit code, runner with per-stage results)."""
    out = _abs(cfg.paths.out, Path.cwd())
    out.mkdir(parents=True, exist_ok=True)
    runner = Runner(out, cfg.seed)
    fseed = cfg.fourier.seed if cfg.fourier.seed is not None else cfg.seed
    try:
        _run_all(cfg, config_dir, out, runner, fseed)
    except StageError as e:
        log.error("pipeline aborted stage=%s exit_code=%d error=%s", e.stage, e.exit_code, e)
        return e.exit_code, runner
    return 0, runner


def _run_all(cfg: PipelineConfig, config_dir: Path, out: Path, runner: Runner, fseed: int) -> None:
    paths = {k: _abs(getattr(cfg.paths, k), config_dir) for k in ("mesh", "splat", "image", "weights", "gt")}

    if cfg.fixture == "sphere":
        inputs = out / "inputs"
        targets = {"mesh": inputs / "body.obj", "splat": inputs / "avatar.ply", "gt": inputs / "gt.obj"}

        def do_fixture():
            stages.write_sphere_fixture(inputs)
            return {"files": sorted(p.name for p in targets.values())}

        runner.run(Stage("fixture", {}, {"fixture": "sphere"}, list(targets.values()), do_fixture))
        for k, p in targets.items():
            paths[k] = paths[k] or p
    for k in ("mesh", "splat"):
        if paths[k] is None:
            raise StageError("encode" if k == "mesh" else "remesh", f"paths.{k} is required unless a fixture is set")

    ns = cfg.netshell
    if paths["weights"] is None:
        wpath = out / "weights.nsw"
        wparams = {"q": cfg.fourier.q, "geo": ns.geo_channels, "tex": ns.tex_channels, "base": ns.base,
                   "attn": ns.attn_width, "seed": cfg.seed}
        runner.run(Stage("weights", {}, wparams, [wpath], lambda: stages.write_weights(wpath, **wparams)))
        paths["weights"] = wpath

    stack = out / "stack.bin"
    fparams = {"q": cfg.fourier.q, "m": cfg.fourier.m, "size": cfg.fourier.size, "seed": fseed,
               "centroid_only": cfg.fourier.centroid_only}
    runner.run(Stage("encode", {"mesh": paths["mesh"]}, fparams, [stack, stages.cameras_path(stack)],
                     lambda: stages.encode_mesh_file(paths["mesh"], stack, **fparams)))

    image = paths["image"]
    if image is None:
        image = out / "front.png"
        runner.run(Stage("render", {"splat": paths["splat"], "cameras": stages.cameras_path(stack)}, {"view": 0},
                         [image], lambda: stages.render_front_image(paths["splat"], stack, image)))

    texfeat = out / "texfeat.bin"
    runner.run(Stage("texture", {"image": image, "cameras": stages.cameras_path(stack), "weights": paths["weights"]},
                     {}, [texfeat], lambda: stages.encode_image_file(image, stack, paths["weights"], texfeat)))

    pred_c, pred_n = out / "pred_c.ply", out / "pred_n.ply"
    runner.run(Stage("netshell", {"geo": stack, "cameras": stages.cameras_path(stack), "tex": texfeat,
                                  "weights": paths["weights"]}, {}, [pred_c, pred_n],
                     lambda: stages.netshell_run(stack, texfeat, paths["weights"], pred_c, pred_n)))

    refined, rreport = out / "refined.obj", out / "remesh_report.json"
    rparams = {"remesh": cfg.to_dict()["remesh"], "cameras": cfg.to_dict()["cameras"]}

    def make_remesh_config(gs):
        views = stages.remesh_views(gs, cfg.cameras.rig, cfg.cameras.size, cfg.cameras.views)
        return cfg.remesh.build(cfg.cameras.size, views=views, threads=cfg.threads)

    def do_remesh():
        rep = stages.remesh_file(paths["splat"], refined, rreport, make_remesh_config)
        return {"n_iterations": rep.n_iterations, "final_total": rep.final["total"]}

    runner.run(Stage("remesh", {"splat": paths["splat"]}, rparams, [refined, rreport], do_remesh))

    metrics_path = out / "metrics.json"
    if paths["gt"] is not None:
        mparams = {"tau": cfg.metrics.tau, "samples": cfg.metrics.samples, "seed": cfg.seed}

        def do_eval():
            rep = stages.eval_geometry_files(refined, paths["gt"], workers=cfg.threads, **mparams)
            metrics_path.write_text(rep.to_json() + "\n")

        runner.run(Stage("eval", {"pred": refined, "gt": paths["gt"]}, mparams, [metrics_path], do_eval))

    report = out / "report.json"
    artifacts = [stack, texfeat, pred_c, pred_n, refined] + ([metrics_path] if paths["gt"] is not None else [])
    runner.run(Stage("report", {a.name: a for a in artifacts + [rreport]}, {"seed": cfg.seed}, [report],
                     lambda: write_report(report, artifacts, rreport, metrics_path if paths["gt"] else None, cfg.seed)))


def write_report(path: Path, artifacts: list, remesh_report: Path, metrics_path: Optional[Path], seed: int) -> None:
    """Deterministic summary: artifact hashes, remesh losses without wall time, metrics."""
    rem = json.loads(remesh_report.read_text())
    rem["wall_ms"] = None
    doc = {
        "seed": seed,
        "artifacts": {Path(a).name: file_sha256(a) for a in artifacts},
        "remesh": rem,
        "metrics": json.loads(metrics_path.read_text()) if metrics_path else None,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
