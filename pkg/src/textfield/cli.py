"""Command-line entry point: ``textfield <subcommand> ...``.

Exit status is 0 on success, 1 for bad input (unknown flags, missing or
malformed files) and 2 when an internal check fails.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import EvalReport, match_and_score, match_masks
from .field_gen import generate_field
from .geometry import GeometryError, outline_polygon, rasterize
from .inference import PRESETS, InferenceConfig, detect
from .io import (FormatError, read_annotation, read_dff, read_pgm, write_annotation,
                 write_dff, write_pgm, write_polygons)
from .loss import compute_weights, per_pixel_loss, select_hard_negatives, total_loss
from .synth import InfeasibleSpecError, NoiseModel, SynthSpec, generate_scene, perturb_field


class InputError(Exception):
    pass


class InvariantError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def worker_count() -> int:
    raw = os.environ.get("TEXTFIELD_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"TEXTFIELD_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise InputError("TEXTFIELD_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def _map(fn, items):
    """Ordered parallel map over a bounded pool."""
    items = list(items)
    workers = min(worker_count(), max(len(items), 1))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


class _Timer:
    def __init__(self):
        self.stages = {}

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.stages[name] = timer.stages.get(name, 0.0) + 1000 * (time.perf_counter() - self.t0)

        return _Ctx()


def _write_manifest(args, path, config, inputs, outputs, timer):
    manifest = {
        "subcommand": args.command,
        "version": __version__,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "stage_ms": {k: round(v, 3) for k, v in timer.stages.items()},
        "threads": worker_count(),
    }
    Path(str(path) + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _existing_file(path):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {p}")
    return p


def _existing_dir(path):
    p = Path(path)
    if not p.is_dir():
        raise InputError(f"no such directory: {p}")
    return p


# -- subcommands -----------------------------------------------------------

def cmd_genfield(args):
    src = _existing_dir(args.annotations)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = sorted(src.glob("*.txt"))
    if not files:
        raise InputError(f"no annotation files (*.txt) in {src}")
    timer = _Timer()

    def one(path):
        scene = read_annotation(path, args.width, args.height)
        _, labels = rasterize(scene)
        field = generate_field(labels)
        write_dff(out / f"{path.stem}.dff", field)
        if args.labels:
            write_pgm(out / f"{path.stem}.pgm", labels, 65535)
        return path.stem

    with timer.stage("genfield"):
        stems = _map(one, files)
    for s in stems:
        print(out / f"{s}.dff")
    if args.manifest:
        _write_manifest(args, out, {"width": args.width, "height": args.height, "labels": args.labels},
                        files, [out / f"{s}.dff" for s in stems], timer)
    return 0


def _config_from_args(args) -> InferenceConfig:
    overrides = {}
    for key in ("lambda_m", "lambda_r", "lambda_a", "k1", "k2", "pair_tolerance"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    try:
        if args.preset:
            return InferenceConfig.preset(args.preset, **overrides)
        return InferenceConfig(**overrides)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def cmd_detect(args):
    src = _existing_file(args.field)
    config = _config_from_args(args)
    timer = _Timer()
    with timer.stage("read"):
        field = read_dff(src)
    with timer.stage("detect"):
        labels = detect(field, config)
    if labels.max(initial=0) > 65535:
        raise InvariantError("more instances than a 16-bit PGM can hold")
    with timer.stage("write"):
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_pgm(args.out, labels, 65535)
        outputs = [args.out]
        if args.contours:
            Path(args.contours).parent.mkdir(parents=True, exist_ok=True)
            polys = []
            for k in range(1, int(labels.max(initial=0)) + 1):
                poly = outline_polygon(labels == k)
                if poly is not None and len(poly) >= 3:
                    polys.append(poly)
            write_polygons(args.contours, polys)
            outputs.append(args.contours)
    print(f"{int(labels.max(initial=0))} instances -> {args.out}")
    if args.manifest:
        _write_manifest(args, args.out, asdict(config), [src], outputs, timer)
    return 0


def cmd_eval(args):
    det_dir = _existing_dir(args.dets)
    gt_dir = _existing_dir(args.gt)
    gts = sorted(gt_dir.glob("*.txt"))
    if not gts:
        raise InputError(f"no annotation files (*.txt) in {gt_dir}")
    timer = _Timer()

    def one(gt_path):
        det_path = det_dir / f"{gt_path.stem}.pgm"
        if not det_path.is_file():
            raise InputError(f"missing detections for {gt_path.stem}: {det_path}")
        dets = read_pgm(det_path).astype(np.int64)
        h, w = dets.shape
        scene = read_annotation(gt_path, w, h)
        return gt_path.stem, match_and_score(dets, scene, args.iou)

    with timer.stage("eval"):
        results = _map(one, gts)
    total = EvalReport(0, 0, 0, args.iou)
    for _, rep in results:
        total = total + rep
    print(total.summary())
    if args.per_image:
        with open(args.per_image, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["image", "tp", "fp", "fn", "precision", "recall", "f_measure"])
            for stem, r in results:
                writer.writerow([stem, r.tp, r.fp, r.fn, f"{r.precision:.6f}", f"{r.recall:.6f}",
                                 f"{r.f_measure:.6f}"])
    if args.manifest:
        _write_manifest(args, args.per_image or "eval", {"iou": args.iou}, gts,
                        [args.per_image] if args.per_image else [], timer)
    return 0


def cmd_synth(args):
    if args.spec:
        try:
            spec = SynthSpec.from_json(_existing_file(args.spec).read_text())
        except (ValueError, TypeError) as exc:
            raise InputError(f"{args.spec}: {exc}") from None
    else:
        spec = SynthSpec()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    timer = _Timer()

    def one(i):
        scene = generate_scene(replace(spec, seed=spec.seed + i))
        stem = f"scene_{i:03d}"
        write_annotation(out / f"{stem}.txt", scene)
        if args.fields or args.labels:
            _, labels = rasterize(scene)
            if args.fields:
                write_dff(out / f"{stem}.dff", generate_field(labels))
            if args.labels:
                write_pgm(out / f"{stem}.pgm", labels, 65535)
        return stem

    with timer.stage("synth"):
        stems = _map(one, range(args.images))
    for s in stems:
        print(out / f"{s}.txt")
    if args.manifest:
        _write_manifest(args, out, {"spec": json.loads(spec.to_json()), "images": args.images},
                        [args.spec] if args.spec else [], [out / f"{s}.txt" for s in stems], timer)
    return 0


def cmd_loss(args):
    gt = read_dff(_existing_file(args.gt))
    pred = read_dff(_existing_file(args.pred))
    labels = read_pgm(_existing_file(args.labels)).astype(np.int64)
    if gt.shape != pred.shape or labels.shape != gt.shape:
        raise InputError(f"shape mismatch: gt {gt.shape}, pred {pred.shape}, labels {labels.shape}")
    timer = _Timer()
    with timer.stage("loss"):
        weights = compute_weights(labels)
        selection = None
        if args.gamma is not None:
            if args.gamma <= 0:
                raise InputError("--gamma must be positive")
            selection = select_hard_negatives(labels, per_pixel_loss(gt, pred), args.gamma)
        value = total_loss(gt, pred, weights, selection)
    print(f"{value:.9g}")
    if args.manifest:
        _write_manifest(args, "loss", {"gamma": args.gamma}, [args.gt, args.pred, args.labels], [], timer)
    return 0


ROUNDTRIP_SPEC = dict(min_count=2, max_count=6, min_area=400, min_gap=3, margin=2)


def cmd_roundtrip(args):
    config = _config_from_args(args)
    noise = None
    if args.noise:
        noise = dict(angle_sigma=args.angle_sigma, magnitude_sigma=args.magnitude_sigma,
                     dropout_rate=args.dropout)
    timer = _Timer()

    def one(i):
        seed = args.seed + i
        scene = generate_scene(SynthSpec(seed=seed, **ROUNDTRIP_SPEC))
        _, labels = rasterize(scene)
        field = generate_field(labels)
        if noise:
            field = perturb_field(field, NoiseModel(seed=seed, **noise))
        dets = detect(field, config)
        masks = [labels == k for k in range(1, len(scene.instances) + 1)]
        report, pairs = match_masks(dets, masks, 0.5)
        ious = [iou for _, _, iou in pairs] + [0.0] * report.fn
        return seed, len(masks), int(dets.max(initial=0)), float(np.mean(ious))

    with timer.stage("roundtrip"):
        rows = _map(one, range(args.cases))
    print(f"{'case':>4} {'seed':>6} {'gt':>3} {'det':>3} {'mean_iou':>8} ok")
    exact = 0
    for i, (seed, n_gt, n_det, iou) in enumerate(rows):
        ok = n_gt == n_det
        exact += ok
        print(f"{i:>4} {seed:>6} {n_gt:>3} {n_det:>3} {iou:8.4f} {'yes' if ok else 'NO'}")
    mean_iou = float(np.mean([r[3] for r in rows])) if rows else 0.0
    need = math.ceil(args.min_exact * args.cases - 1e-9)
    passed = exact >= need and (noise is not None or mean_iou >= args.min_iou)
    verdict = "PASS" if passed else "FAIL"
    iou_rule = "" if noise else f", mean IOU {mean_iou:.4f} (need >= {args.min_iou})"
    print(f"{verdict}: exact count {exact}/{args.cases} (need >= {need}){iou_rule}")
    if args.manifest:
        _write_manifest(args, "roundtrip", {"seed": args.seed, "cases": args.cases,
                                             "inference": asdict(config), "noise": noise}, [], [], timer)
    return 0 if passed else 2


# -- parser ----------------------------------------------------------------

def _add_inference_flags(p, default_lambda_m=None):
    presets = ", ".join(f"{k}={v}" for k, v in PRESETS.items())
    p.add_argument("--preset", choices=sorted(PRESETS),
                   help=f"per-dataset magnitude threshold ({presets}); default lambda_m is 0.5")
    p.add_argument("--lambda-m", dest="lambda_m", type=float, default=default_lambda_m,
                   help="magnitude threshold for candidate pixels, in (0, 1)")
    p.add_argument("--lambda-r", dest="lambda_r", type=float,
                   help="minimum paired-representative ratio (default 0.6)")
    p.add_argument("--lambda-a", dest="lambda_a", type=float,
                   help="minimum instance area in pixels (default 200)")
    p.add_argument("--k1", type=int, help="dilation square side for grouping (default 3)")
    p.add_argument("--k2", type=int, help="closing square side (default 11)")
    p.add_argument("--pair-tolerance", dest="pair_tolerance", type=int, choices=(0, 1),
                   help="1 also pairs near-opposite direction bins (default 0)")


def build_parser():
    parser = _Parser(prog="textfield", description="Direction-field text detection tools")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("genfield", help="ground-truth direction fields from annotations")
    p.add_argument("--annotations", required=True, help="directory of *.txt annotation files")
    p.add_argument("--out", required=True, help="output directory for .dff files")
    p.add_argument("--width", type=int, help="image width when files lack a '# size' line")
    p.add_argument("--height", type=int, help="image height when files lack a '# size' line")
    p.add_argument("--labels", action="store_true", help="also write 16-bit label PGMs")
    p.add_argument("--manifest", action="store_true", help="write a .manifest.json sidecar")
    p.set_defaults(func=cmd_genfield)

    p = sub.add_parser("detect", help="instance map from a direction field")
    p.add_argument("--field", required=True, help="input .dff file")
    p.add_argument("--out", required=True, help="output 16-bit label PGM")
    p.add_argument("--contours", help="also write one outline polygon per instance")
    _add_inference_flags(p)
    p.add_argument("--manifest", action="store_true", help="write a .manifest.json sidecar")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="precision / recall / f-measure")
    p.add_argument("--dets", required=True, help="directory of label PGMs (<stem>.pgm)")
    p.add_argument("--gt", required=True, help="directory of annotations (<stem>.txt)")
    p.add_argument("--iou", type=float, default=0.5, help="IOU a match must exceed (default 0.5)")
    p.add_argument("--per-image", dest="per_image", help="write per-image results as CSV")
    p.add_argument("--manifest", action="store_true", help="write a .manifest.json sidecar")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="synthetic annotated scenes")
    p.add_argument("--spec", help="JSON scene spec (defaults used when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--images", type=int, default=1, help="number of scenes; scene i uses seed+i")
    p.add_argument("--fields", action="store_true", help="also write ground-truth .dff fields")
    p.add_argument("--labels", action="store_true", help="also write 16-bit label PGMs")
    p.add_argument("--manifest", action="store_true", help="write a .manifest.json sidecar")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("loss", help="instance-balanced loss between two fields")
    p.add_argument("--gt", required=True, help="ground-truth .dff")
    p.add_argument("--pred", required=True, help="predicted .dff")
    p.add_argument("--labels", required=True, help="instance label PGM")
    p.add_argument("--gamma", type=float, help="hard-negative ratio; all pixels when omitted")
    p.add_argument("--manifest", action="store_true", help="write a .manifest.json sidecar")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("roundtrip", help="detect ground-truth fields of synthetic scenes")
    p.add_argument("--seed", type=int, default=0, help="seed of the first case")
    p.add_argument("--cases", type=int, default=50)
    _add_inference_flags(p, default_lambda_m=0.3)
    p.add_argument("--noise", action="store_true", help="perturb fields before detection")
    p.add_argument("--angle-sigma", dest="angle_sigma", type=float, default=10.0, help="degrees")
    p.add_argument("--magnitude-sigma", dest="magnitude_sigma", type=float, default=0.05)
    p.add_argument("--dropout", type=float, default=0.02)
    p.add_argument("--min-exact", dest="min_exact", type=float, default=None,
                   help="fraction of cases needing the exact count (0.96 clean, 0.90 noisy)")
    p.add_argument("--min-iou", dest="min_iou", type=float, default=0.90)
    p.add_argument("--manifest", action="store_true", help="write a .manifest.json sidecar")
    p.set_defaults(func=cmd_roundtrip)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "min_exact", 0) is None:
        args.min_exact = 0.90 if args.noise else 0.96
    try:
        return args.func(args)
    except (InputError, FormatError, GeometryError, InfeasibleSpecError, FileNotFoundError,
            IsADirectoryError, PermissionError) as exc:
        print(f"textfield {args.command}: {exc}", file=sys.stderr)
        return 1
    except (InvariantError, AssertionError, ArithmeticError) as exc:
        print(f"textfield {args.command}: internal check failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
