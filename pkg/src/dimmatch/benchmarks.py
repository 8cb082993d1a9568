"""Correspondence and detection benchmark protocols.

Each protocol takes loaded dataset cases and returns plain result objects;
writing reports is left to :mod:`dimmatch.reports`.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .datasets import PairCase, SequenceCase
from .dim import DimParams, PatchSpec, build_bank, match, match_bank, template_patches
from .evaluation import (BoundingBox, EvalCurve, apply_homography, argmax_point, iou, local_maxima_points,
                         match_detections, pr_from_matches, success_curve, top_k_peaks)
from .imaging import as_image
from .keypoints import (Keypoint, SelectionStrategy, extract_patch, filter_keypoints_vgg, harris_detect,
                        select_additional)
from .zncc import zncc_match

log = logging.getLogger(__name__)

METHODS = ("dim", "zncc")
SWEEP_PARAMS = ("sigma", "epsilon1", "epsilon2", "lambda", "iterations")
TABLE_FACTORS = (0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0)


@dataclass(frozen=True)
class MethodConfig:
    method: str = "dim"
    params: DimParams = field(default_factory=DimParams)
    strategy: SelectionStrategy = field(default_factory=SelectionStrategy)
    dim_colorspace: str = "lab"
    zncc_colorspace: str = "hsv"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")


def _pmap(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# -- BBS pairs ------------------------------------------------------------

@dataclass
class PairResult:
    name: str
    iou: float
    iou_top7: float
    n_additional: int
    seconds: float


@dataclass
class BbsReport:
    pairs: list[PairResult]
    curve: EvalCurve
    curve_top7: EvalCurve
    seconds: float

    @property
    def auc(self) -> float:
        return self.curve.auc


def similarity_for_pair(img1, img2, box1: BoundingBox, cfg: MethodConfig) -> tuple[np.ndarray, int]:
    """Target similarity map over ``img2`` and the number of additional templates."""
    if cfg.method == "zncc":
        return zncc_match(img2, extract_patch(img1, box1), cfg.zncc_colorspace), 0
    source = img1 if cfg.strategy.source is None else as_image(cfg.strategy.source)
    adds = select_additional(img1, box1, cfg.strategy, cfg.zncc_colorspace)
    if source.shape[2] != img1.shape[2]:
        adds = []
    Y = match(img2, PatchSpec(img1, box1.as_tuple()), [PatchSpec(source, a.as_tuple()) for a in adds],
              cfg.params, cfg.dim_colorspace)
    return Y[0], len(adds)


def evaluate_pair(case: PairCase, cfg: MethodConfig) -> PairResult:
    t0 = time.perf_counter()
    img1, img2 = case.load()
    box1, box2 = case.gt_box1, case.gt_box2
    S, n_add = similarity_for_pair(img1, img2, box1, cfg)
    x, y = argmax_point(S)
    best = iou(BoundingBox.around(x, y, box1.w, box1.h), box2)
    peaks = top_k_peaks(S, 7) or [(x, y, 0.0)]
    best7 = max(iou(BoundingBox.around(px, py, box1.w, box1.h), box2) for px, py, _ in peaks)
    return PairResult(case.name, best, best7, n_add, time.perf_counter() - t0)


class _PairJob:
    def __init__(self, cfg):
        self.cfg = cfg

    def __call__(self, case):
        return evaluate_pair(case, self.cfg)


def run_bbs(cases: Sequence[PairCase], cfg: MethodConfig, threads: int = 1) -> BbsReport:
    if not cases:
        raise ValueError("no image pairs to evaluate")
    t0 = time.perf_counter()
    pairs = _pmap(_PairJob(cfg), list(cases), threads)
    return BbsReport(pairs, success_curve([p.iou for p in pairs]), success_curve([p.iou_top7 for p in pairs]),
                     time.perf_counter() - t0)


def sweep_params(param: str, factor: float, base: DimParams | None = None) -> DimParams:
    """``base`` with one parameter scaled by ``factor`` relative to its default."""
    base = base or DimParams()
    if param == "sigma":
        return replace(base, sigma_factor=base.sigma_factor * factor)
    if param == "epsilon1":
        return replace(base, epsilon1_scale=base.epsilon1_scale * factor)
    if param == "epsilon2":
        return replace(base, epsilon2=base.epsilon2 * factor)
    if param == "lambda":
        return replace(base, lam=base.lam * factor)
    if param == "iterations":
        return replace(base, iterations=max(1, int(round(base.iterations_for(1) * factor))))
    raise ValueError(f"unknown parameter {param!r}; expected one of {SWEEP_PARAMS}")


def run_sweep(cases: Sequence[PairCase], param: str, factors: Sequence[float], cfg: MethodConfig,
              threads: int = 1) -> list[tuple[float, DimParams, float]]:
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown parameter {param!r}; expected one of {SWEEP_PARAMS}")
    rows = []
    for f in factors:
        p = sweep_params(param, f, cfg.params)
        rep = run_bbs(cases, replace(cfg, method="dim", params=p), threads)
        log.info("%s x%g: AUC %.3f", param, f, rep.auc)
        rows.append((f, p, rep.auc))
    return rows


# -- VGG sequences --------------------------------------------------------

def _dims(img) -> tuple[int, int]:
    return img.shape[1], img.shape[0]


def sequence_keypoints(seq: SequenceCase, size: int, count: int) -> list[Keypoint]:
    img1 = seq.images[0]
    kps = harris_detect(img1)
    return filter_keypoints_vgg(kps, size, size, _dims(img1), [_dims(im) for im in seq.images[1:]],
                                seq.homographies, min_spacing=24, count=count)


def truth_box(kp: Keypoint, H, size: int) -> BoundingBox:
    x, y = apply_homography(H, (kp.x, kp.y))
    return BoundingBox.around(x, y, size, size)


@dataclass
class SequenceResult:
    name: str
    ious: list[float]
    curve: EvalCurve
    seconds: float


@dataclass
class VggCorrespondReport:
    size: int
    sequences: list[SequenceResult]
    curve: EvalCurve
    seconds: float

    @property
    def auc(self) -> float:
        return self.curve.auc


class _SeqJob:
    def __init__(self, size, cfg, count):
        self.size, self.cfg, self.count = size, cfg, count

    def __call__(self, seq):
        return evaluate_sequence(seq, self.size, self.cfg, self.count)


def evaluate_sequence(seq: SequenceCase, size: int, cfg: MethodConfig, count: int = 25) -> SequenceResult:
    t0 = time.perf_counter()
    kps = sequence_keypoints(seq, size, count)
    img1 = seq.images[0]
    boxes = [BoundingBox.around(k.x, k.y, size, size) for k in kps]
    ious = []
    if cfg.method == "dim" and kps:
        specs = [PatchSpec(img1, b.as_tuple()) for b in boxes]
        bank = build_bank(template_patches(specs, size, size, cfg.params, cfg.dim_colorspace))
    for img, H in zip(seq.images[1:], seq.homographies):
        if not kps:
            break
        if cfg.method == "dim":
            maps = match_bank(img, bank, cfg.params, cfg.dim_colorspace).maps
        else:
            maps = [zncc_match(img, extract_patch(img1, b), cfg.zncc_colorspace) for b in boxes]
        for kp, S in zip(kps, maps):
            x, y = argmax_point(S)
            ious.append(iou(BoundingBox.around(x, y, size, size), truth_box(kp, H, size)))
    curve = success_curve(ious) if ious else success_curve([0.0])
    return SequenceResult(seq.name, ious, curve, time.perf_counter() - t0)


def run_vgg_correspond(seqs: Sequence[SequenceCase], size: int, cfg: MethodConfig, threads: int = 1,
                       count: int = 25) -> VggCorrespondReport:
    if not seqs:
        raise ValueError("no sequences to evaluate")
    t0 = time.perf_counter()
    results = _pmap(_SeqJob(size, cfg, count), list(seqs), threads)
    pooled = [v for r in results for v in r.ious]
    if not pooled:
        raise ValueError("no keypoints survived the selection criteria")
    return VggCorrespondReport(size, results, success_curve(pooled), time.perf_counter() - t0)


@dataclass
class VggDetectReport:
    size: int
    curve: EvalCurve
    n_templates: int
    n_images: int
    n_truth: int
    seconds: float

    @property
    def best_fscore(self) -> float:
        return self.curve.best_fscore


@dataclass(frozen=True)
class _Template:
    seq: int
    kp: Keypoint
    box: BoundingBox


class _DetectJob:
    def __init__(self, templates, seqs_img1, bank, size, cfg):
        self.templates, self.seqs_img1, self.bank, self.size, self.cfg = templates, seqs_img1, bank, size, cfg

    def __call__(self, item):
        q_seq, img, H = item
        size, cfg = self.size, self.cfg
        if cfg.method == "dim":
            maps = match_bank(img, self.bank, cfg.params, cfg.dim_colorspace).maps
        else:
            maps = [zncc_match(img, extract_patch(self.seqs_img1[t.seq], t.box), cfg.zncc_colorspace)
                    for t in self.templates]
        W, Hh = _dims(img)
        scores, flags, n_truth = [], [], 0
        for t, S in zip(self.templates, maps):
            dets = [(BoundingBox.around(x, y, size, size).clipped(W, Hh), s)
                    for x, y, s in local_maxima_points(S) if s > 0]
            truths = [truth_box(t.kp, H, size)] if t.seq == q_seq else []
            s, tp = match_detections(dets, truths)
            scores.append(s)
            flags.append(tp)
            n_truth += len(truths)
        return np.concatenate(scores), np.concatenate(flags), n_truth


def run_vgg_detect(seqs: Sequence[SequenceCase], size: int, cfg: MethodConfig, threads: int = 1,
                   per_sequence: int = 10) -> VggDetectReport:
    """Match every template from every colour sequence to every query image."""
    seqs = [s for s in seqs if not s.grayscale]
    if not seqs:
        raise ValueError("no colour sequences to evaluate")
    t0 = time.perf_counter()
    templates: list[_Template] = []
    for si, seq in enumerate(seqs):
        for kp in sequence_keypoints(seq, size, per_sequence):
            templates.append(_Template(si, kp, BoundingBox.around(kp.x, kp.y, size, size)))
    if not templates:
        raise ValueError("no keypoints survived the selection criteria")
    img1s = [s.images[0] for s in seqs]
    bank = None
    if cfg.method == "dim":
        specs = [PatchSpec(img1s[t.seq], t.box.as_tuple()) for t in templates]
        bank = build_bank(template_patches(specs, size, size, cfg.params, cfg.dim_colorspace))
    items = [(si, img, H) for si, seq in enumerate(seqs) for img, H in zip(seq.images[1:], seq.homographies)]
    parts = _pmap(_DetectJob(templates, img1s, bank, size, cfg), items, threads)
    scores = np.concatenate([p[0] for p in parts])
    flags = np.concatenate([p[1] for p in parts])
    n_truth = sum(p[2] for p in parts)
    curve = pr_from_matches(scores, flags, n_truth)
    return VggDetectReport(size, curve, len(templates), len(items), n_truth, time.perf_counter() - t0)
