"""``elemstruct`` command line: gen, train, eval, export, match, params.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure. Set ``ELEMSTRUCT_THREADS`` to cap the BLAS thread pool
(results are reproducible at a fixed thread count).

Configuration precedence, lowest first: dataclass defaults, the ``--config``
file (a path or a bundled recipe name), ``--set section.key=value`` flags,
then ``--seed``.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as _dt
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout
from threadpoolctl import threadpool_limits

from . import __version__
from .config import ExperimentConfig, apply_overrides, dump_config, load_config, recipe_path
from .data import SyntheticSpec, generate_synthetic, load_dataset, normalize_points, save_dataset
from .errors import ConfigError, DataError, ElemStructError, NumericalError, UnsupportedOperationError
from .evaluation import (
    eval_chamfer,
    match,
    reconstruct_mesh,
    write_correspondences,
    write_metrics_csv,
)
from .geometry.io import read_geometry, write_obj, write_ply
from .geometry.losses import correspondence_error
from .geometry.types import TriangleMesh
from .model import ReconstructionModel, build_model, count_parameters
from .structures import write_structure_files
from .tensor import default_dtype
from .tensor.checkpoint import load_into, read_checkpoint, save_checkpoint
from .training import train, write_history

log = logging.getLogger("elemstruct")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
KIND_ALIASES = {"articulated": "articulated-chain", "mix": "box-ellipsoid-mix", "affine": "affine-family"}
DATASET_FILES = ("shapes", "manifest.tsv", "normalization.csv", "template.xyz", "dataset.json", "manifest.json")


class UsageError(ElemStructError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers ------------------------------------------------------------------

def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _write_manifest(out: Path, command: str, args, outputs, config: dict | None = None, seed=None, started=None):
    manifest = {
        "command": command,
        "argv": args.argv,
        "arguments": {k: str(v) for k, v in vars(args).items() if k not in ("func", "argv")},
        "config": config,
        "seed": seed,
        "code_version": __version__,
        "started": started,
        "finished": _now(),
        "outputs": sorted(str(p) for p in outputs),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


@contextlib.contextmanager
def _locked(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(out / ".lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise UsageError(f"{out} is in use by another elemstruct process") from None
    try:
        yield
    finally:
        lock.release()


def _load_experiment(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        cfg = load_config(path if path.exists() or path.suffix else recipe_path(args.config))
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed={args.seed}")
    return apply_overrides(cfg, overrides) if overrides else cfg


def _template_from(cfg: ExperimentConfig, dataset=None):
    m = cfg.model
    if m.initial_structure != "template":
        return None
    if m.template == "dataset":
        if dataset is None or dataset.template is None:
            raise DataError("config asks for the dataset template, but the dataset has no template.xyz")
        return dataset.template
    pts, faces = read_geometry(m.template)
    pts = normalize_points(pts)[0]
    return TriangleMesh(pts, faces) if faces is not None and len(faces) else pts


def _template_meta(template) -> dict | None:
    if template is None:
        return None
    if isinstance(template, TriangleMesh):
        return {"vertices": template.vertices.tolist(), "faces": template.faces.tolist()}
    return {"vertices": np.asarray(template).tolist()}


def _template_from_meta(meta: dict | None):
    if not meta:
        return None
    verts = np.array(meta["vertices"], dtype=float)
    return TriangleMesh(verts, np.array(meta["faces"])) if "faces" in meta else verts


def load_model(path) -> tuple[ReconstructionModel, dict]:
    header, arrays = read_checkpoint(path)
    meta = header.get("metadata", {})
    if "config" not in meta:
        raise DataError(f"{path}: checkpoint carries no model configuration")
    cfg = ExperimentConfig.from_dict(meta["config"])
    with default_dtype(np.dtype(meta.get("dtype", "float32"))):
        model = build_model(cfg.model, seed=int(meta.get("model_seed", 0)), template=_template_from_meta(meta.get("template")))
    load_into(model, arrays)
    model.eval()
    return model, meta


def _read_shape(path, normalize: bool = True):
    pts, _ = read_geometry(path)
    if pts.shape[1] != 3:
        raise DataError(f"{path}: expected 3D points, found {pts.shape[1]} columns")
    if not normalize:
        return pts, (lambda p: p)
    normed, center, scale = normalize_points(pts)
    return normed, (lambda p: np.asarray(p) / scale + center)


def _colors(k_index: np.ndarray) -> np.ndarray:
    rng = np.random.default_rng(12345)
    palette = rng.integers(40, 256, size=(int(k_index.max()) + 1, 3))
    return palette[k_index]


# -- commands -----------------------------------------------------------------

def cmd_gen(args) -> int:
    kind = KIND_ALIASES.get(args.kind, args.kind)
    if args.count < 1 or args.points < 1:
        raise UsageError("--count and --points must be positive")
    out = Path(args.out)
    existing = out.exists() and any(p.name != ".lock" for p in out.iterdir())
    if existing and not args.force:
        raise UsageError(f"{out} already exists and is not empty; pass --force to overwrite")
    started = _now()
    try:
        spec = SyntheticSpec(kind, args.count, args.points, args.seed, max_angle=args.max_angle).validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    with _locked(out):
        for name in DATASET_FILES:
            target = out / name
            if target.is_dir():
                shutil.rmtree(target)
            elif target.exists():
                target.unlink()
        dataset = generate_synthetic(spec)
        save_dataset(dataset, out)
        _write_manifest(out, "gen", args, [out / "manifest.tsv"], {"synthetic": dataset.meta["spec"]}, args.seed, started)
    print(f"wrote {len(dataset)} {kind} shapes to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = _now()
    cfg = _load_experiment(args)
    dataset = load_dataset(args.data, points=cfg.train.input_points, seed=cfg.train.seed)
    template = _template_from(cfg, dataset)
    out = Path(args.out)
    with _locked(out):
        dtype = np.dtype(args.dtype)
        with default_dtype(dtype):
            model = build_model(cfg.model, seed=cfg.train.seed, template=template)
        meta = {
            "config": cfg.to_dict(),
            "model_seed": cfg.train.seed,
            "dtype": dtype.name,
            "template": _template_meta(template),
            "code_version": __version__,
        }
        dump_config(cfg, out / "config.ini")
        with default_dtype(dtype):
            result = train(model, dataset, cfg.train, checkpoint_dir=out / "checkpoints", metadata=meta)
        final = out / "final.ckpt"
        save_checkpoint(final, model, result.optimizer, meta)
        write_history(out / "loss_history.csv", result.history)
        outputs = [final, out / "loss_history.csv", out / "config.ini", *result.checkpoints]
        _write_manifest(out, "train", args, outputs, cfg.to_dict(), cfg.train.seed, started)
    last = result.history[-1]
    print(f"trained {len(result.history)} epochs; final mean loss {last.mean_loss:.6g}; checkpoint {final}")
    return EXIT_OK


def _cyclic_correspondence(model, dataset) -> dict[str, float]:
    recs = [r for r in dataset if r.ordered and r.group is not None]
    out = {}
    for j, a in enumerate(recs):
        b = recs[(j + 1) % len(recs)]
        if b is a or b.group != a.group:
            continue
        out[a.id] = correspondence_error(match(model, a.points, b.points).target_points, b.points)
    return out


def cmd_eval(args) -> int:
    model, meta = load_model(args.checkpoint)
    cfg = model.config
    dataset = load_dataset(args.data, points=args.points, seed=args.seed)
    if cfg.supervised:
        bad = [r.id for r in dataset if r.ordered and r.n_points != model.n_points]
        if bad:
            raise DataError(f"{len(bad)} shape(s) have a point count different from the structure's {model.n_points}, e.g. {bad[0]}")
    report = eval_chamfer(model, dataset)
    corr = _cyclic_correspondence(model, dataset) if cfg.supervised and dataset.ordered and len(dataset) > 1 else None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out, report, corr)
    line = f"mean chamfer (x1e3) {report.mean:.4f} over {len(dataset)} shapes"
    if corr:
        line += f"; mean correspondence error {np.mean(list(corr.values())):.4f}"
    print(line)
    return EXIT_OK


def cmd_export(args) -> int:
    model, meta = load_model(args.checkpoint)
    out = Path(args.out)
    started = _now()
    with _locked(out):
        written = []
        if args.what == "structures":
            for k, pts in enumerate(model.export_structures()):
                info = {"kind": model.config.structure_kind, "k": k, "source": model.initial[k].kind}
                written += write_structure_files(out / f"structure_{k:02d}", pts, info)
        else:
            if not args.input:
                raise UsageError(f"export {args.what} needs --input")
            pts, back = _read_shape(args.input, not args.raw)
            if args.what == "reconstruction":
                rec = model.reconstruct(pts)
                path = out / "reconstruction.ply"
                write_ply(path, back(rec.points), colors=_colors(rec.structure_index))
                written.append(path)
            elif args.what == "mesh":
                for k, mesh in enumerate(reconstruct_mesh(model, pts, args.resolution)):
                    path = out / f"mesh_{k:02d}.obj"
                    write_obj(path, back(mesh.vertices), mesh.faces)
                    written.append(path)
            else:
                if not args.input_b:
                    raise UsageError("export correspondences needs --input and --input-b")
                pts_b, back_b = _read_shape(args.input_b, not args.raw)
                cmap = match(model, pts, pts_b, snap=not args.no_snap)
                cmap.target_points = back_b(cmap.target_points)
                path = out / "correspondences.txt"
                write_correspondences(path, cmap)
                written.append(path)
        _write_manifest(out, "export", args, written, meta.get("config"), None, started)
    print(f"wrote {len(written)} file(s) to {out}")
    return EXIT_OK


def cmd_match(args) -> int:
    model, _ = load_model(args.checkpoint)
    a, _ = _read_shape(args.shape_a, not args.raw)
    b, back_b = _read_shape(args.shape_b, not args.raw)
    cmap = match(model, a, b, snap=not args.no_snap)
    cmap.target_points = back_b(cmap.target_points)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_correspondences(out, cmap)
    print(f"wrote {len(cmap)} correspondences to {out}")
    return EXIT_OK


def cmd_params(args) -> int:
    if args.checkpoint:
        model, _ = load_model(args.checkpoint)
    else:
        cfg = _load_experiment(args)
        if cfg.model.initial_structure == "template" and cfg.model.template == "dataset":
            # counts need only the template size, which equals N
            template = np.zeros((cfg.model.points_per_structure, 3))
        else:
            template = _template_from(cfg)
        model = build_model(cfg.model, seed=0, template=template)
    counts = count_parameters(model)
    for key in ("encoder", "structures", "adjustments", "total"):
        print(f"{key:<12} {counts[key]:>12,d}")
    print(f"{'structure share':<12} {100.0 * counts['structures'] / counts['total']:.3f}%")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="elemstruct", description="Learn shared elementary structures from 3D shape collections.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic dataset")
    g.add_argument("--kind", required=True, choices=sorted(set(KIND_ALIASES) | set(KIND_ALIASES.values())))
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--points", type=int, default=2500)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-angle", type=float, default=0.6, help="articulated joint range in radians")
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true", help="overwrite an existing dataset directory")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--config", help="config file, or the name of a bundled recipe")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    t.add_argument("--seed", type=int)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-shape Chamfer (x1e3) and correspondence metrics")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="metrics CSV path")
    e.add_argument("--points", type=int, default=2500, help="samples per mesh target")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="write structures, reconstructions, meshes or correspondences")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--what", required=True, choices=["structures", "reconstruction", "mesh", "correspondences"])
    x.add_argument("--input", help="shape file (OBJ/PLY/XYZ)")
    x.add_argument("--input-b", help="second shape for correspondences")
    x.add_argument("--resolution", type=int, default=10, help="grid resolution for mesh export")
    x.add_argument("--raw", action="store_true", help="inputs are already normalised; skip normalisation")
    x.add_argument("--no-snap", action="store_true", help="keep targets on the reconstruction")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)

    m = sub.add_parser("match", help="dense correspondences from shape A to shape B")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("shape_a")
    m.add_argument("shape_b")
    m.add_argument("--out", required=True)
    m.add_argument("--raw", action="store_true")
    m.add_argument("--no-snap", action="store_true")
    m.set_defaults(func=cmd_match)

    q = sub.add_parser("params", help="parameter counts per component")
    q.add_argument("--config")
    q.add_argument("--set", action="append", metavar="KEY=VALUE")
    q.add_argument("--checkpoint")
    q.set_defaults(func=cmd_params)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    threads = os.environ.get("ELEMSTRUCT_THREADS")
    try:
        limit = int(threads) if threads else None
    except ValueError:
        print(f"elemstruct: ELEMSTRUCT_THREADS must be an integer, got {threads!r}", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=limit):
            return args.func(args)
    except NumericalError as exc:
        print(f"elemstruct: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except UnsupportedOperationError as exc:
        print(f"elemstruct: unsupported operation: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, UsageError) as exc:
        print(f"elemstruct: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ElemStructError, ValueError, OSError) as exc:
        print(f"elemstruct: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
