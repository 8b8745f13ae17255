"""Command-line entry point: optimize, apply, eval-pair, eval-dist."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_to_dict, load_config
from .evolve import ConfigurationError, Engine
from .export import ExportError, write_front, write_generations, write_json
from .genome import GenomeError, parse_pipeline
from .imagecore import ImageFormatError, is_image_file, read_image, read_mask, write_image
from .metrics import (
    DISTS_EPS,
    EMBED_DIM,
    dists,
    embed_all,
    frechet_distance,
    mmd_rbf,
    resolve_bandwidth,
    style_distance,
)
from .operators import (
    BUILTIN,
    NORMALIZE_REFERENCE,
    OperatorError,
    PluginRunner,
    PluginSpec,
    StyleContext,
    apply_pipeline,
    needs_style,
)

log = logging.getLogger("pipevolve")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _image_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.is_file() and is_image_file(p))


def _err(msg: str) -> None:
    print(f"pipevolve: {msg}", file=sys.stderr)


# --------------------------------------------------------------------------
# optimize
# --------------------------------------------------------------------------

def cmd_optimize(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.workers is not None:
            cfg.workers = args.workers
            cfg.validate()
    except (ConfigError, ConfigurationError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_FAIL
    try:
        engine = Engine(cfg)
    except ConfigurationError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (OSError, ImageFormatError) as exc:
        _err(str(exc))
        return EXIT_FAIL
    result = engine.run()
    out = Path(cfg.out_dir)
    meta = {
        "version": __version__,
        "config": config_to_dict(cfg),
        "pairing": cfg.pairing(),
        "metrics": {
            "content": "dists",
            "style": "style_distance",
            "dists_eps": DISTS_EPS,
            "pyramid_levels": cfg.pyramid_levels,
            "level_weights": "uniform",
            "normalize_reference": NORMALIZE_REFERENCE,
        },
        "evaluations": len(result.cache),
        "front_size": len(result.front),
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_front(result.front, out / "front.json")
        write_generations(result.records, out / "generations.csv")
        write_json(meta, out / "run_meta.json")
    except OSError as exc:
        _err(f"cannot write outputs: {exc}")
        return EXIT_FAIL
    except ExportError as exc:
        _err(f"internal consistency check failed: {exc}")
        return EXIT_FAIL
    print(f"front: {len(result.front)} pipelines -> {out / 'front.json'}")
    for ind in result.front:
        print(f"  {ind.key or '(identity)'}: dists={ind.objectives[0]:.4f} style={ind.objectives[1]:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# apply
# --------------------------------------------------------------------------

def _plugins_from_args(items) -> dict[str, PluginSpec]:
    plugins = {}
    for item in items or []:
        name, sep, command = item.partition("=")
        if not sep or not name.strip():
            raise ValueError(f"--plugin expects NAME=COMMAND, got {item!r}")
        plugins[name.strip().lower()] = PluginSpec.parse(name.strip().lower(), command)
    return plugins


def cmd_apply(args) -> int:
    try:
        steps = parse_pipeline(args.pipeline)
        plugins = _plugins_from_args(args.plugin)
    except (GenomeError, ValueError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    unknown = [s for s in steps if s not in BUILTIN and s not in plugins]
    if unknown:
        _err(f"unknown operator(s): {', '.join(unknown)}")
        return EXIT_USAGE
    if needs_style(steps) and args.style is None:
        _err("this pipeline needs --style")
        return EXIT_USAGE
    try:
        files = _image_files(args.content_dir)
        style = read_image(args.style) if args.style else None
        style_mask = read_mask(args.style_mask) if args.style_mask else None
        if style_mask is not None and (style is None or style_mask.shape != style.shape[:2]):
            _err("--style-mask must match the --style image dimensions")
            return EXIT_USAGE
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    except (OSError, ImageFormatError) as exc:
        _err(str(exc))
        return EXIT_FAIL

    runner = PluginRunner(plugins)
    failures = 0
    for path in files:
        target = out_dir / path.name
        try:
            if not steps:
                shutil.copyfile(path, target)
                continue
            image = read_image(path)
            mask = None
            if args.mask_dir:
                mask_path = Path(args.mask_dir) / f"{path.stem}.pgm"
                if mask_path.exists():
                    mask = read_mask(mask_path)
            ctx = None
            if style is not None:
                ctx = StyleContext(style, style_mask=style_mask, content_mask=mask,
                                   condition_name=args.condition)
            write_image(apply_pipeline(steps, image, ctx, runner), target)
        except (OperatorError, OSError, ImageFormatError) as exc:
            failures += 1
            _err(f"{path.name}: {exc}")
    print(f"applied {','.join(steps) or '(identity)'} to {len(files) - failures}/{len(files)} images")
    return EXIT_FAIL if failures else EXIT_OK


# --------------------------------------------------------------------------
# eval-pair / eval-dist
# --------------------------------------------------------------------------

def pair_metrics(dir_a, dir_b=None, style_path=None, levels: int = 4) -> list[dict]:
    """Per-image dists and style distance rows; raises FileNotFoundError on a missing pair."""
    files = _image_files(dir_a)
    style = read_image(style_path) if style_path else None
    rows = []
    for path in files:
        a = read_image(path)
        row = {"image": path.name, "dists": None, "style": None}
        if dir_b is not None:
            counterpart = Path(dir_b) / path.name
            if not counterpart.exists():
                raise FileNotFoundError(f"missing counterpart for {path.name} in {dir_b}")
            b = read_image(counterpart)
            row["dists"] = dists(a, b, levels)
            row["style"] = style_distance(b, style if style is not None else a, levels)
        else:
            row["style"] = style_distance(a, style, levels)
        rows.append(row)
    return rows


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def cmd_eval_pair(args) -> int:
    if args.dir_b is None and args.style is None:
        _err("eval-pair needs a second directory or --style")
        return EXIT_USAGE
    try:
        rows = pair_metrics(args.dir_a, args.dir_b, args.style, args.levels)
    except (OSError, ImageFormatError, ValueError) as exc:
        _err(str(exc))
        return EXIT_FAIL
    if not rows:
        _err(f"no images found in {args.dir_a}")
        return EXIT_FAIL
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image", "dists", "style"])
    for row in rows:
        writer.writerow([row["image"], _fmt(row["dists"]), _fmt(row["style"])])
    means = {}
    for key in ("dists", "style"):
        vals = [r[key] for r in rows if r[key] is not None]
        means[key] = sum(vals) / len(vals) if vals else None
    writer.writerow(["mean", _fmt(means["dists"]), _fmt(means["style"])])
    sys.stdout.write(buf.getvalue())
    if args.out:
        try:
            Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
        except OSError as exc:
            _err(str(exc))
            return EXIT_FAIL
    return EXIT_OK


def cmd_eval_dist(args) -> int:
    try:
        files_a, files_b = _image_files(args.dir_a), _image_files(args.dir_b)
    except OSError as exc:
        _err(str(exc))
        return EXIT_FAIL
    for d, files in ((args.dir_a, files_a), (args.dir_b, files_b)):
        if len(files) < 2:
            _err(f"{d}: need at least 2 images for covariance, found {len(files)}")
            return EXIT_USAGE
    try:
        emb_a = embed_all(read_image(p) for p in files_a)
        emb_b = embed_all(read_image(p) for p in files_b)
    except (OSError, ImageFormatError) as exc:
        _err(str(exc))
        return EXIT_FAIL
    bandwidth = args.bandwidth if args.bandwidth == "median" else float(args.bandwidth)
    h = resolve_bandwidth(emb_a, emb_b, bandwidth)
    report = {
        "n_a": len(files_a),
        "n_b": len(files_b),
        "embedding_dim": EMBED_DIM,
        "frechet_distance": frechet_distance(emb_a, emb_b),
        "mmd_rbf": mmd_rbf(emb_a, emb_b, h),
        "bandwidth": h,
    }
    for key, value in report.items():
        print(f"{key}: {value:.10g}" if isinstance(value, float) else f"{key}: {value}")
    if args.out:
        try:
            write_json(report, args.out)
        except OSError as exc:
            _err(str(exc))
            return EXIT_FAIL
    return EXIT_OK


# --------------------------------------------------------------------------

def _bandwidth(value: str) -> str:
    if value == "median":
        return value
    try:
        if float(value) > 0:
            return value
    except ValueError:
        pass
    raise argparse.ArgumentTypeError("bandwidth must be 'median' or a positive number")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pipevolve", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="evolve pipelines from a config file")
    p.add_argument("config")
    p.add_argument("--workers", type=int, default=None, help="override the config's worker count")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("apply", help="apply a pipeline to every image in a directory")
    p.add_argument("pipeline", help="comma-separated operators, e.g. adain,darken,cacti ('' = identity)")
    p.add_argument("content_dir")
    p.add_argument("out_dir")
    p.add_argument("--style", help="style reference image (P6)")
    p.add_argument("--mask-dir", help="directory of <stem>.pgm content masks")
    p.add_argument("--style-mask", help="class mask for the style image (P5)")
    p.add_argument("--condition", default="default", help="condition label passed to operators")
    p.add_argument("--plugin", action="append", metavar="NAME=COMMAND", help="register an external operator")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("eval-pair", help="paired dists/style metrics")
    p.add_argument("dir_a")
    p.add_argument("dir_b", nargs="?")
    p.add_argument("--style", help="single style reference image")
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--out", help="also write the CSV here")
    p.set_defaults(func=cmd_eval_pair)

    p = sub.add_parser("eval-dist", help="Frechet distance and MMD between two image sets")
    p.add_argument("dir_a")
    p.add_argument("dir_b")
    p.add_argument("--bandwidth", type=_bandwidth, default="median")
    p.add_argument("--out", help="also write a JSON report here")
    p.set_defaults(func=cmd_eval_dist)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
