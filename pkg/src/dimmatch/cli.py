"""Command-line front end.

Commands::

    dimmatch match                 one template against one image
    dimmatch bench-bbs             BBS pair correspondence benchmark
    dimmatch bench-vgg-correspond  VGG sequence correspondence benchmark
    dimmatch bench-vgg-detect      VGG cross-sequence detection benchmark
    dimmatch sweep                 one-parameter sensitivity sweep (BBS protocol)
    dimmatch timing                per-comparison timings on synthetic scenes
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import benchmarks as bm
from .datasets import DatasetError, dataset_root, load_bbs_dataset, load_vgg_dataset, synth_scene
from .dim import DimParams, PatchSpec, match
from .evaluation import BoundingBox, argmax_point, top_k_peaks
from .imaging import load_image, save_image
from .keypoints import SelectionStrategy, extract_patch, select_additional
from .reports import (draw_boxes, plot_pr, plot_success, save_heatmap, write_csv, write_pr_csv,
                      write_success_csv)
from .zncc import zncc_match

log = logging.getLogger("dimmatch")


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _factors(s):
    try:
        vals = [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad factor list {s!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("factors must be positive")
    return vals


def _common(p: argparse.ArgumentParser, dataset=True):
    if dataset:
        p.add_argument("--dataset", help="dataset root (default: $DIM_DATASET_ROOT)")
    p.add_argument("--method", choices=bm.METHODS, default="dim")
    p.add_argument("--additional", default="maxcorr",
                   help="additional-template strategy: maxcorr, keypoint, random, or "
                        "other[-keypoint|-random]:<image> to take them from an unrelated image")
    p.add_argument("--max-additional", type=int, default=4)
    p.add_argument("--iterations", type=_positive_int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--epsilon2", type=float)
    p.add_argument("--conv", choices=("auto", "direct", "fourier"), default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default="results")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dimmatch", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="match one template and write heatmap, annotated image and peaks")
    p.add_argument("image", help="query image")
    p.add_argument("--template-image", required=True, help="image the template is cut from")
    p.add_argument("--box", nargs=4, type=int, required=True, metavar=("X", "Y", "W", "H"))
    p.add_argument("--top-k", type=_positive_int, default=7)
    _common(p, dataset=False)

    p = sub.add_parser("bench-bbs", help="BBS correspondence benchmark")
    _common(p)

    for name in ("bench-vgg-correspond", "bench-vgg-detect"):
        p = sub.add_parser(name, help=f"VGG {name.rsplit('-', 1)[1]} benchmark")
        _common(p)
        p.add_argument("--template-size", type=_positive_int, nargs="+", default=[17, 33, 49])
        p.add_argument("--scale", type=float, default=0.5)

    p = sub.add_parser("sweep", help="vary one DIM parameter on the BBS protocol")
    _common(p)
    p.add_argument("--param", required=True, choices=bm.SWEEP_PARAMS)
    p.add_argument("--factors", type=_factors, default=list(bm.TABLE_FACTORS))

    p = sub.add_parser("timing", help="time DIM (both backends) and ZNCC on synthetic scenes")
    p.add_argument("--scenes", type=_positive_int, default=5)
    p.add_argument("--size", type=_positive_int, default=128)
    p.add_argument("--template-size", type=_positive_int, default=17)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results")
    return ap


def config_from_args(args) -> bm.MethodConfig:
    params = DimParams(
        iterations=args.iterations,
        lam=0.025 if args.lam is None else args.lam,
        epsilon2=1e-2 if args.epsilon2 is None else args.epsilon2,
        conv_mode=args.conv,
    )
    kind, source = args.additional, None
    if kind.startswith("other"):
        # other:<img> (max correlation) or other-<strategy>:<img>
        head, sep, path = kind.partition(":")
        if not sep or not path:
            raise ValueError(f"bad --additional value {kind!r}")
        kind = head.partition("-")[2] or "maxcorr"
        source = load_image(path)
    if args.max_additional < 0:
        raise ValueError("--max-additional must be >= 0")
    strategy = SelectionStrategy(kind, args.max_additional, source, args.seed)
    return bm.MethodConfig(args.method, params, strategy)


def _root(args, sub):
    root = dataset_root(args.dataset, sub)
    if root is None:
        raise DatasetError("no dataset given: pass --dataset or set $DIM_DATASET_ROOT")
    return root


def cmd_match(args) -> int:
    cfg = config_from_args(args)
    img = load_image(args.image)
    src = load_image(args.template_image)
    box = BoundingBox(*args.box)
    if cfg.method == "zncc":
        S = zncc_match(img, extract_patch(src, box), cfg.zncc_colorspace)
        n_add = 0
    else:
        adds = select_additional(src, box, cfg.strategy, cfg.zncc_colorspace)
        other = src if cfg.strategy.source is None else cfg.strategy.source
        S = match(img, PatchSpec(src, box.as_tuple()), [PatchSpec(other, a.as_tuple()) for a in adds],
                  cfg.params, cfg.dim_colorspace)[0]
        n_add = len(adds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_heatmap(out / "heatmap.png", S)
    x, y = argmax_point(S)
    pred = BoundingBox.around(x, y, box.w, box.h)
    save_image(out / "detection.png", draw_boxes(img, [pred], [(0.0, 1.0, 1.0)]))
    peaks = top_k_peaks(S, args.top_k)
    write_csv(out / "peaks.csv", ["rank", "x", "y", "score"],
              ((i + 1, px, py, float(s)) for i, (px, py, s) in enumerate(peaks)))
    print(f"best match centre ({x}, {y}) score {S[y, x]:.6g}; {n_add} additional templates; outputs in {out}")
    return 0


def _summary(out: Path, data: dict):
    (out / "summary.json").write_text(json.dumps(data, indent=2) + "\n")
    for k, v in data.items():
        print(f"{k}: {v}")


def cmd_bench_bbs(args) -> int:
    cfg = config_from_args(args)
    cases = load_bbs_dataset(_root(args, "bbs"))
    rep = bm.run_bbs(cases, cfg, args.threads)
    out = Path(args.out)
    write_csv(out / "bbs_pairs.csv", ["pair", "iou", "iou_top7", "n_additional", "seconds"],
              ((p.name, p.iou, p.iou_top7, p.n_additional, p.seconds) for p in rep.pairs))
    curves = {f"{cfg.method}": rep.curve, f"{cfg.method}-top7": rep.curve_top7}
    write_success_csv(out / "bbs_success.csv", curves)
    plot_success(out / "bbs_success.png", curves, "BBS correspondence")
    _summary(out, {"method": cfg.method, "pairs": len(rep.pairs), "auc": round(rep.auc, 4),
                   "auc_top7": round(rep.curve_top7.auc, 4), "seconds": round(rep.seconds, 2),
                   "seconds_per_pair": round(rep.seconds / len(rep.pairs), 3)})
    return 0


def cmd_bench_vgg_correspond(args) -> int:
    cfg = config_from_args(args)
    seqs = load_vgg_dataset(_root(args, "vgg"), args.scale)
    out = Path(args.out)
    summary = {"method": cfg.method}
    for size in args.template_size:
        rep = bm.run_vgg_correspond(seqs, size, cfg, args.threads)
        curves = {s.name: s.curve for s in rep.sequences}
        curves["pooled"] = rep.curve
        write_success_csv(out / f"vgg_correspond_{size}.csv", curves)
        plot_success(out / f"vgg_correspond_{size}.png", curves, f"{cfg.method} {size}x{size}")
        n = sum(len(s.ious) for s in rep.sequences)
        summary[f"auc_{size}"] = round(rep.auc, 4)
        summary[f"comparisons_{size}"] = n
        summary[f"seconds_{size}"] = round(rep.seconds, 2)
    _summary(out, summary)
    return 0


def cmd_bench_vgg_detect(args) -> int:
    cfg = config_from_args(args)
    seqs = load_vgg_dataset(_root(args, "vgg"), args.scale)
    out = Path(args.out)
    summary = {"method": cfg.method}
    for size in args.template_size:
        rep = bm.run_vgg_detect(seqs, size, cfg, args.threads)
        write_pr_csv(out / f"vgg_detect_{size}.csv", rep.curve)
        plot_pr(out / f"vgg_detect_{size}.png", {cfg.method: rep.curve}, f"{size}x{size}")
        summary[f"fscore_{size}"] = round(rep.best_fscore, 4)
        summary[f"templates_{size}"] = rep.n_templates
        summary[f"images_{size}"] = rep.n_images
        summary[f"seconds_{size}"] = round(rep.seconds, 2)
    _summary(out, summary)
    return 0


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    cases = load_bbs_dataset(_root(args, "bbs"))
    rows = bm.run_sweep(cases, args.param, args.factors, cfg, args.threads)
    out = Path(args.out)
    write_csv(out / f"sweep_{args.param}.csv", ["param", "factor", "auc"],
              ((args.param, f, auc) for f, _, auc in rows))
    for f, _, auc in rows:
        print(f"{args.param} x{f:g}: AUC {auc:.3f}")
    return 0


def cmd_timing(args) -> int:
    s = args.template_size
    rows = []
    for seed in range(args.seed, args.seed + args.scenes):
        img, boxes, patches = synth_scene(seed, 1, (s, s), (args.size, args.size), 0.02)
        spec = PatchSpec(patches[0], (0, 0, s, s))
        for label, fn in (
            ("dim-fourier", lambda: match(img, spec, params=DimParams(conv_mode="fourier"))),
            ("dim-direct", lambda: match(img, spec, params=DimParams(conv_mode="direct"))),
            ("zncc", lambda: zncc_match(img, patches[0])),
        ):
            t0 = time.perf_counter()
            fn()
            rows.append((seed, label, time.perf_counter() - t0))
    out = Path(args.out)
    write_csv(out / "timing.csv", ["scene", "method", "seconds"], rows)
    for label in ("dim-fourier", "dim-direct", "zncc"):
        ts = [r[2] for r in rows if r[1] == label]
        print(f"{label}: mean {np.mean(ts):.4f} s per template-image comparison")
    return 0


COMMANDS = {
    "match": cmd_match,
    "bench-bbs": cmd_bench_bbs,
    "bench-vgg-correspond": cmd_bench_vgg_correspond,
    "bench-vgg-detect": cmd_bench_vgg_detect,
    "sweep": cmd_sweep,
    "timing": cmd_timing,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError) as e:
        print(f"dimmatch {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
