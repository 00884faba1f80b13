"""
Command-line interface.

Subcommands: run, harmonize, coarse, centerline, refine, eval, folds, phantom.

Exit codes: 0 ok, 2 usage/config, 3 I/O or file format, 4 no proposal
(empty coarse mask), 5 evaluation mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from . import config as config_mod
from .centerline import CenterSet, EmptyMaskError
from .metrics import (FoldSplit, MetricsRow, aggregate_folds, evaluate_case, make_folds, report_lines,
                      round_half_up)
from .nifti import NiftiError, read_header, read_volume, save
from .phantom import PhantomSpec, axis_points, generate
from .pipeline import NoProposalError, center_stage, coarse_stage, prepare, refine_stage, run
from .tiling import resolve_workers
from .volume import Kind, SourceTag, harmonize

log = logging.getLogger("aortaseg")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NO_PROPOSAL = 4
EXIT_EVAL = 5

_FLAG_KEYS = {
    "coarse_patch": "--coarse-patch",
    "coarse_stride": "--coarse-stride",
    "fine_patch": "--fine-patch",
    "coarse_threshold": "--coarse-threshold",
    "fine_threshold": "--fine-threshold",
    "d_min": "--d-min",
    "min_component_size": "--min-component-size",
    "coarse_predictor": "--coarse-predictor",
    "fine_predictor": "--fine-predictor",
    "source_tag": "--tag",
}


class EvalMismatch(Exception):
    pass


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    for key, flag in _FLAG_KEYS.items():
        p.add_argument(flag, dest=key, default=None, help=f"overrides config key {key}")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel patch predictions (default: $AORTASEG_WORKERS or 1)")
    p.add_argument("--manifest", help="where to write the run manifest (JSON)")


def _load_config(args):
    file_values = {}
    if args.config:
        file_values = config_mod.parse_text(Path(args.config).read_text())
    flags = {key: getattr(args, key, None) for key in _FLAG_KEYS}
    return config_mod.build(file_values, flags)


def _manifest(args, command: str, cfg, sources, inputs: dict, outputs: dict,
              timings: dict, stats: dict, status: str) -> dict:
    mapping = config_mod.to_mapping(cfg)
    return {
        "tool": "aortaseg",
        "version": __version__,
        "command": command,
        "status": status,
        "workers": resolve_workers(args.workers),
        "inputs": inputs,
        "outputs": outputs,
        "config": {k: {"value": v, "source": sources.get(k, "default")} for k, v in mapping.items()},
        "config_text": cfg.to_text(),
        "timings_ms": {k: round(v * 1000.0, 3) for k, v in timings.items()},
        "stats": stats,
    }


def _write_manifest(path: Optional[str], manifest: dict) -> None:
    if path:
        Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _default_manifest(args, output: str) -> str:
    return args.manifest or str(output) + ".manifest.json"


def _read_hu(path: str):
    vol, hdr = read_volume(path, kind_hint=Kind.HU)
    if vol.kind is Kind.LABEL:
        vol = vol.with_data(vol.data.astype(np.int16), kind=Kind.HU)
    return vol, hdr


def cmd_run(args) -> int:
    cfg, sources = _load_config(args)
    vol, hdr = _read_hu(args.input)
    manifest_path = _default_manifest(args, args.output)
    inputs = {"input": args.input}
    outputs = {"mask": args.output}
    try:
        result = run(vol, cfg, args.workers)
    except NoProposalError as exc:
        if args.coarse_prob:
            save(args.coarse_prob, exc.coarse_prob)
        _write_manifest(manifest_path, _manifest(args, "run", cfg, sources, inputs, outputs,
                                                 exc.timings, {}, "no-proposal"))
        raise
    save(args.output, result.final_mask, template=hdr)
    extras = {
        "coarse_prob": (args.coarse_prob, lambda p: save(p, result.coarse_prob, template=hdr)),
        "coarse_mask": (args.coarse_mask, lambda p: save(p, result.coarse_mask, template=hdr)),
        "final_prob": (args.final_prob, lambda p: save(p, result.final_prob, template=hdr)),
        "centers": (args.centers, lambda p: result.centers.save(p)),
        "dense_centers": (args.dense_centers, lambda p: result.dense_centers.save(p)),
    }
    for name, (path, writer) in extras.items():
        if path:
            writer(path)
            outputs[name] = path
    _write_manifest(manifest_path, _manifest(args, "run", cfg, sources, inputs, outputs,
                                             result.timings, result.stats, "ok"))
    log.info("final mask: %d voxels, %d centers", result.stats["final_foreground"], result.stats["sparse_centers"])
    return EXIT_OK


def cmd_harmonize(args) -> int:
    vol, hdr = _read_hu(args.input)
    tag = SourceTag.parse(args.tag)
    if vol.harmonized and tag in (SourceTag.K, SourceTag.R):
        raise config_mod.ConfigError(f"{args.input} is already harmonized")
    out = harmonize(vol, tag)
    description = f"harmonized:{tag.value}" if tag in (SourceTag.K, SourceTag.R) else None
    save(args.output, out, datatype=hdr.datatype, template=hdr, description=description)
    return EXIT_OK


def cmd_coarse(args) -> int:
    cfg, sources = _load_config(args)
    vol, hdr = _read_hu(args.input)
    t0 = time.perf_counter()
    hu = prepare(vol, config_mod.resolved(cfg))
    prob, mask, n_tiles = coarse_stage(hu, cfg, args.workers)
    timings = {"coarse": time.perf_counter() - t0}
    save(args.output_prob, prob, template=hdr)
    outputs = {"coarse_prob": args.output_prob}
    if args.output_mask:
        save(args.output_mask, mask, template=hdr)
        outputs["coarse_mask"] = args.output_mask
    stats = {"tiles": n_tiles, "coarse_foreground": int(mask.data.sum())}
    _write_manifest(args.manifest, _manifest(args, "coarse", cfg, sources, {"input": args.input}, outputs,
                                             timings, stats, "ok"))
    return EXIT_OK


def cmd_centerline(args) -> int:
    cfg, sources = _load_config(args)
    mask, _ = read_volume(args.mask)
    if mask.kind is not Kind.LABEL:
        raise NiftiError(f"{args.mask} is not a 0/1 uint8 mask")
    dense, sparse = center_stage(mask, cfg)
    sparse.save(args.output)
    outputs = {"centers": args.output}
    if args.dense_output:
        dense.save(args.dense_output)
        outputs["dense_centers"] = args.dense_output
    stats = {"dense_centers": len(dense), "sparse_centers": len(sparse)}
    _write_manifest(args.manifest, _manifest(args, "centerline", cfg, sources, {"mask": args.mask}, outputs,
                                             {}, stats, "ok"))
    return EXIT_OK


def cmd_refine(args) -> int:
    cfg, sources = _load_config(args)
    vol, hdr = _read_hu(args.input)
    coarse_prob, _ = read_volume(args.coarse_prob, kind_hint=Kind.PROBABILITY)
    if coarse_prob.kind is Kind.LABEL:
        coarse_prob = coarse_prob.with_data(coarse_prob.data.astype(np.float64), kind=Kind.PROBABILITY)
    centers = CenterSet.load(args.centers)
    t0 = time.perf_counter()
    hu = prepare(vol, config_mod.resolved(cfg))
    _, final_prob, final_mask, locs = refine_stage(hu, coarse_prob, centers, cfg, args.workers)
    timings = {"refine": time.perf_counter() - t0}
    save(args.output, final_mask, template=hdr)
    outputs = {"mask": args.output}
    if args.final_prob:
        save(args.final_prob, final_prob, template=hdr)
        outputs["final_prob"] = args.final_prob
    stats = {"fine_patches": len(locs), "final_foreground": int(final_mask.data.sum())}
    _write_manifest(args.manifest, _manifest(args, "refine", cfg, sources,
                                             {"input": args.input, "coarse_prob": args.coarse_prob,
                                              "centers": args.centers}, outputs, timings, stats, "ok"))
    return EXIT_OK


def _read_rows(path: str) -> List[MetricsRow]:
    """Fold rows for aggregate mode: dsc iou recall precision [hd hd95] per line,
    comma or whitespace separated. A non-numeric first line is a header."""
    names = ("dsc", "iou", "recall", "precision", "hd", "hd95")
    rows = []
    seen_data = False
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        try:
            values = [float(p) for p in parts]
        except ValueError:
            if seen_data:
                raise config_mod.ConfigError(f"{path}:{lineno}: non-numeric value") from None
            seen_data = True
            continue
        seen_data = True
        if len(values) not in (4, 6):
            raise config_mod.ConfigError(f"{path}:{lineno}: expected 4 or 6 values")
        rows.append(MetricsRow(f"row{len(rows)}", **dict(zip(names, values))))
    return rows


def cmd_eval(args) -> int:
    if args.aggregate:
        rows = _read_rows(args.aggregate)
        avg = aggregate_folds(rows)
        line = json.dumps({"record": "average", "n": len(rows), **avg.as_dict(),
                           "rounded": {k: (None if v is None else round_half_up(v, 1)) for k, v in avg.as_dict().items()
                                       if k in ("dsc", "iou", "recall", "precision", "hd", "hd95")}},
                          sort_keys=True)
        _emit(args.output, [line])
        return EXIT_OK

    if not args.pred or not args.truth:
        raise config_mod.ConfigError("eval needs --pred and --truth (or --aggregate)")
    if len(args.pred) != len(args.truth):
        raise EvalMismatch(f"{len(args.pred)} predictions vs {len(args.truth)} references")
    ids = args.ids or [_case_id(p) for p in args.truth]
    if len(ids) != len(args.truth):
        raise EvalMismatch("--ids count differs from case count")
    split = FoldSplit.from_text(Path(args.folds).read_text()) if args.folds else None
    rows, errors = [], []
    for cid, pred_path, truth_path in zip(ids, args.pred, args.truth):
        pred, _ = read_volume(pred_path)
        truth, _ = read_volume(truth_path)
        try:
            if pred.kind is not Kind.LABEL or truth.kind is not Kind.LABEL:
                raise ValueError("both files must be 0/1 uint8 masks")
            rows.append(evaluate_case(cid, pred, truth, distances=not args.no_distances))
        except ValueError as exc:
            errors.append((cid, str(exc)))
    _emit(args.output, report_lines(rows, split, errors))
    return EXIT_EVAL if errors else EXIT_OK


def _case_id(path: str) -> str:
    name = Path(path).name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


def _emit(path: Optional[str], lines: List[str]) -> None:
    text = "".join(l + "\n" for l in lines)
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_folds(args) -> int:
    ids = [l.strip() for l in Path(args.ids).read_text().splitlines() if l.strip() and not l.startswith("#")]
    try:
        split = make_folds(ids, args.k, args.seed)
    except ValueError as exc:
        raise config_mod.ConfigError(str(exc)) from exc
    _emit(args.output, [split.to_text().rstrip("\n")])
    return EXIT_OK


_PHANTOM_KEYS = {
    "dims": lambda s: tuple(int(v) for v in s.replace(",", " ").split()),
    "spacing": lambda s: tuple(float(v) for v in s.replace(",", " ").split()),
    "seed": int,
    "trunk_radius": float,
    "branch_count": int,
    "branch_radius_ratio": float,
    "lumen_hu": float,
    "background_hu": float,
    "noise_sd": float,
    "source_style": SourceTag.parse,
    "trunk_tilt": float,
}


def phantom_spec_from_text(text: str, overrides: Dict[str, str] = None) -> PhantomSpec:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in _PHANTOM_KEYS:
            raise config_mod.ConfigError(f"phantom spec line {lineno}: bad entry {line!r}")
        values[key] = value.strip()
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        kwargs = {k: _PHANTOM_KEYS[k](v) for k, v in values.items()}
        if "dims" in kwargs and len(kwargs["dims"]) == 1:
            kwargs["dims"] = kwargs["dims"] * 3
        if "spacing" in kwargs and len(kwargs["spacing"]) == 1:
            kwargs["spacing"] = kwargs["spacing"] * 3
        return PhantomSpec(**kwargs)
    except (TypeError, ValueError) as exc:
        raise config_mod.ConfigError(f"phantom spec: {exc}") from exc


def cmd_phantom(args) -> int:
    text = Path(args.spec).read_text() if args.spec else ""
    overrides = {"seed": args.seed, "source_style": args.style, "noise_sd": args.noise_sd,
                 "branch_count": args.branches, "dims": args.dims}
    spec = phantom_spec_from_text(text, overrides)
    image, truth = generate(spec)
    save(args.image, image)
    save(args.mask, truth)
    if args.axis:
        pts = axis_points(spec)
        Path(args.axis).write_text("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in pts.tolist()))
    return EXIT_OK


def cmd_header(args) -> int:
    for path in args.files:
        hdr = read_header(path)
        sys.stdout.write(json.dumps({"path": path, "dims": hdr.dims, "spacing": hdr.spacing,
                                     "datatype": hdr.datatype}) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aortaseg", description="Two-stage vessel tree segmentation")
    parser.add_argument("--version", action="version", version=f"aortaseg {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full pipeline on one volume")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="final mask (.nii or .nii.gz)")
    p.add_argument("--coarse-prob", dest="coarse_prob")
    p.add_argument("--coarse-mask", dest="coarse_mask")
    p.add_argument("--final-prob", dest="final_prob")
    p.add_argument("--centers")
    p.add_argument("--dense-centers", dest="dense_centers")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("harmonize", help="apply the per-source intensity shift")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--tag", required=True, help="K, R, D or Unknown")
    p.set_defaults(func=cmd_harmonize)

    p = sub.add_parser("coarse", help="sliding-window coarse stage")
    p.add_argument("--input", required=True)
    p.add_argument("--output-prob", dest="output_prob", required=True)
    p.add_argument("--output-mask", dest="output_mask")
    _add_config_flags(p)
    p.set_defaults(func=cmd_coarse)

    p = sub.add_parser("centerline", help="pseudo-centerline and sparse centers from a coarse mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--output", required=True, help="sparse centers text file")
    p.add_argument("--dense-output", dest="dense_output")
    _add_config_flags(p)
    p.set_defaults(func=cmd_centerline)

    p = sub.add_parser("refine", help="fine stage at given centers")
    p.add_argument("--input", required=True)
    p.add_argument("--coarse-prob", dest="coarse_prob", required=True)
    p.add_argument("--centers", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--final-prob", dest="final_prob")
    _add_config_flags(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="metrics report")
    p.add_argument("--pred", nargs="*")
    p.add_argument("--truth", nargs="*")
    p.add_argument("--ids", nargs="*")
    p.add_argument("--folds", help="fold file from the folds subcommand")
    p.add_argument("--aggregate", help="average precomputed fold rows instead of scoring masks")
    p.add_argument("--no-distances", dest="no_distances", action="store_true")
    p.add_argument("--output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("folds", help="seeded k-fold split")
    p.add_argument("--ids", required=True, help="one case id per line")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output")
    p.set_defaults(func=cmd_folds)

    p = sub.add_parser("phantom", help="synthetic vessel-tree volume and mask")
    p.add_argument("--spec", help="flat key = value phantom spec")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--axis", help="write polyline vertices")
    p.add_argument("--seed", default=None)
    p.add_argument("--style", default=None, help="source style K, R, D or Unknown")
    p.add_argument("--noise-sd", dest="noise_sd", default=None)
    p.add_argument("--branches", default=None)
    p.add_argument("--dims", default=None)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("header", help="print NIfTI headers without loading voxel data")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_header)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NoProposalError, EmptyMaskError) as exc:
        log.error("%s", exc)
        return EXIT_NO_PROPOSAL
    except EvalMismatch as exc:
        log.error("%s", exc)
        return EXIT_EVAL
    except (NiftiError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
