"""Frame-level and pixel-level metrics, corpus evaluation and throughput.

Report columns follow the usual layout: ``Det. mAP``, ``Det. ACC``,
``Loc. MCC``, ``Loc. F1``.
"""
from __future__ import annotations

import json
import logging
import math
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from .errors import InvalidArgumentError, UndefinedMetricError
from .geometry import ForgeryMask, block_labels, plan_grid, write_mask
from .heads import DETECTION_THRESHOLD
from .postprocess import blocks_to_mask, interpolate_grid

log = logging.getLogger(__name__)

COLUMNS = ("Det. mAP", "Det. ACC", "Loc. MCC", "Loc. F1")


@dataclass
class FrameResult:
    frame_id: str
    detection_score: float
    true_label: int
    dataset: str = ""
    pred_mask_path: Optional[str] = None
    gt_mask_path: Optional[str] = None
    threshold_report: Optional[dict] = None
    f1: Optional[float] = None
    mcc: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.detection_score <= 1.0:
            raise InvalidArgumentError(f"detection score {self.detection_score} outside [0, 1]")


# ---- detection ------------------------------------------------------------

def average_precision(scores, labels) -> float:
    """Area under the step-interpolated precision-recall curve.

    Frames are cut at each distinct score, highest first; tied scores enter
    together.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    npos = int(y.sum())
    if npos == 0 or npos == len(y):
        raise UndefinedMetricError("average precision needs both positive and negative frames")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_group = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last_of_group]
    fp = (last_of_group + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / npos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


def detection_accuracy(scores, labels, threshold: float = DETECTION_THRESHOLD) -> float:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if s.size == 0:
        raise InvalidArgumentError("no frames")
    return float(np.mean((s >= threshold).astype(int) == y))


def _group(results):
    groups = {}
    for r in results:
        groups.setdefault(r.dataset, []).append(r)
    return groups


def detection_metrics(results, threshold: float = DETECTION_THRESHOLD):
    """``(mAP, ACC)`` over :class:`FrameResult` items.

    AP is computed per dataset and averaged; ACC is averaged the same way. When
    AP is undefined for some dataset an :class:`UndefinedMetricError` is raised
    carrying the ACC in its ``acc`` attribute.
    """
    results = list(results)
    if not results:
        raise InvalidArgumentError("no frame results")
    aps, accs, undefined = [], [], []
    for name, rs in sorted(_group(results).items()):
        scores = [r.detection_score for r in rs]
        labels = [r.true_label for r in rs]
        accs.append(detection_accuracy(scores, labels, threshold))
        try:
            aps.append(average_precision(scores, labels))
        except UndefinedMetricError:
            undefined.append(name or "<default>")
    acc = float(np.mean(accs))
    if undefined:
        err = UndefinedMetricError(f"AP undefined for single-class dataset(s): {undefined}")
        err.acc = acc
        raise err
    return float(np.mean(aps)), acc


# ---- localization ---------------------------------------------------------

def _binary(mask, threshold=0.5):
    v = mask.values if isinstance(mask, ForgeryMask) else np.asarray(mask, dtype=np.float64)
    return v >= threshold


def confusion_counts(pred_mask, gt_mask, threshold: float = 0.5):
    p, g = _binary(pred_mask, threshold), _binary(gt_mask, threshold)
    if p.shape != g.shape:
        raise InvalidArgumentError(f"mask shapes differ: {p.shape} vs {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size - tp - fp - fn)
    return tp, fp, fn, tn


def f1_from_counts(tp, fp, fn, tn=0) -> float:
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def mcc_from_counts(tp, fp, fn, tn) -> float:
    marg = [tp + fp, tp + fn, tn + fp, tn + fn]
    if any(m == 0 for m in marg):
        return 0.0
    return float((tp * tn - fp * fn) / math.sqrt(float(marg[0]) * marg[1] * marg[2] * marg[3]))


def localization_metrics(pred_mask, gt_mask, threshold: float = 0.5):
    """Pixel-level ``(F1, MCC)`` after binarizing both masks at ``threshold``."""
    counts = confusion_counts(pred_mask, gt_mask, threshold)
    return f1_from_counts(*counts), mcc_from_counts(*counts)


# ---- reports --------------------------------------------------------------

@dataclass
class MetricsReport:
    rows: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    localization_mode: str = "per-frame"
    mask_mode: str = "histogram"
    frames_evaluated: int = 0
    errors: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    def render(self) -> str:
        """Plain-text table, one row per dataset plus the mean."""
        head = f"{'Dataset':<10}" + "".join(f"{c:>10}" for c in COLUMNS)
        lines = [head, "-" * len(head)]
        for name, row in list(self.rows.items()) + [("mean", self.summary)]:
            cells = "".join(f"{_fmt(row.get(c)):>10}" for c in COLUMNS)
            lines.append(f"{name:<10}{cells}")
        return "\n".join(lines)


def _fmt(v):
    return "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.3f}"


def _nanmean(vals):
    vals = [v for v in vals if v is not None and not math.isnan(v)]
    return float(np.mean(vals)) if vals else float("nan")


def summarize(results, localization_mode: str = "per-frame", pooled_counts=None,
              mask_mode: str = "histogram") -> MetricsReport:
    """Aggregate per-frame results into a :class:`MetricsReport`."""
    if localization_mode not in ("per-frame", "pooled"):
        raise InvalidArgumentError(f"unknown localization mode {localization_mode!r}")
    report = MetricsReport(localization_mode=localization_mode, mask_mode=mask_mode,
                           frames_evaluated=len(results))
    for name, rs in sorted(_group(results).items()):
        scores = [r.detection_score for r in rs]
        labels = [r.true_label for r in rs]
        try:
            ap = average_precision(scores, labels)
        except UndefinedMetricError:
            ap = float("nan")
        loc = [r for r in rs if r.f1 is not None]
        if localization_mode == "pooled" and pooled_counts is not None and name in pooled_counts:
            counts = pooled_counts[name]
            f1, mcc = f1_from_counts(*counts), mcc_from_counts(*counts)
        else:
            f1 = _nanmean([r.f1 for r in loc])
            mcc = _nanmean([r.mcc for r in loc])
        report.rows[name] = {
            "Det. mAP": ap,
            "Det. ACC": detection_accuracy(scores, labels),
            "Loc. MCC": mcc,
            "Loc. F1": f1,
            "frames": len(rs),
            "localization_frames": len(loc),
            "authentic_excluded_from_localization": sum(1 for r in rs if r.true_label == 0),
        }
    for c in COLUMNS:
        report.summary[c] = _nanmean([row[c] for row in report.rows.values()])
    return report


# ---- predictors -----------------------------------------------------------

class NetworkPredictor:
    """Wraps a network: ``(pixels, record) -> {"p_fake", "q", "maps"}``."""

    def __init__(self, model):
        self.model = model

    def __call__(self, pixels, record=None) -> dict:
        return self.model.predict(pixels)


class OraclePredictor:
    """Answers from ground truth; returns the true pixel mask directly."""

    def __init__(self, manifest):
        self.manifest = manifest

    def __call__(self, pixels, record) -> dict:
        mask = self.manifest.mask(record)
        return {"p_fake": float(record["manipulated"]), "mask": mask}


def predicted_mask(pred: dict, height: int, width: int, block_size: int = 128, mask_mode: str = "histogram"):
    """Turn a prediction into ``(ForgeryMask, threshold report or None)``.

    The mask is empty when the detection score says pristine.
    """
    if pred["p_fake"] < DETECTION_THRESHOLD:
        return ForgeryMask.zeros(height, width), None
    if "mask" in pred:
        return pred["mask"], None
    grid = plan_grid(height, width, block_size)
    if mask_mode == "histogram":
        mask, report, _ = blocks_to_mask(pred["q"], grid, height, width)
        return mask, report.to_dict()
    if mask_mode == "fixed":
        soft = interpolate_grid(pred["q"], grid, height, width)
        return ForgeryMask((soft >= 0.5).astype(np.float64)), None
    raise InvalidArgumentError(f"unknown mask mode {mask_mode!r}")


def evaluate_corpus(manifest, predictor: Callable, split: Optional[str] = None, out_dir=None,
                    localization_mode: str = "per-frame", mask_mode: str = "histogram",
                    block_size: int = 128) -> MetricsReport:
    """Run ``predictor`` over every frame of ``manifest`` and aggregate metrics.

    Missing or unreadable files are itemized in ``report.errors``; evaluation
    continues with the remaining items.
    """
    if split is not None:
        manifest = manifest.select(split=split)
    if len(manifest) == 0:
        raise InvalidArgumentError("manifest has no items to evaluate")
    out_dir = Path(out_dir) if out_dir is not None else None
    results, errors, pooled = [], [], {}
    for record in manifest:
        try:
            gt = manifest.mask(record)
            frames = list(manifest.frames(record))
        except (OSError, ValueError) as exc:
            errors.append({"id": record.get("id"), "error": str(exc)})
            continue
        for frame_id, frame in frames:
            pred = predictor(frame.pixels, record)
            mask, trep = predicted_mask(pred, frame.height, frame.width, block_size, mask_mode)
            res = FrameResult(frame_id, float(pred["p_fake"]), int(record["manipulated"]),
                              dataset=record["dataset"], gt_mask_path=record["mask_path"],
                              threshold_report=trep)
            if record["manipulated"]:
                counts = confusion_counts(mask, gt)
                res.f1, res.mcc = f1_from_counts(*counts), mcc_from_counts(*counts)
                acc = pooled.setdefault(record["dataset"], [0, 0, 0, 0])
                for i, c in enumerate(counts):
                    acc[i] += c
            if out_dir is not None:
                p = out_dir / (frame_id.replace("/", "__") + "_mask.png")
                p.parent.mkdir(parents=True, exist_ok=True)
                write_mask(mask, p)
                res.pred_mask_path = str(p)
            results.append(res)
    if not results:
        raise InvalidArgumentError(f"no frame could be evaluated: {errors}")
    report = summarize(results, localization_mode, pooled, mask_mode)
    report.errors = errors
    return report


# ---- throughput -----------------------------------------------------------

def hardware_descriptor() -> str:
    return (f"{platform.machine()} {platform.processor() or platform.system()} | "
            f"cpus={os.cpu_count()} torch_threads={torch.get_num_threads()} | "
            f"python {platform.python_version()} torch {torch.__version__}")


def benchmark_throughput(model, n_frames: int = 10, height: int = 1080, width: int = 1920,
                         seed: int = 0, warmup: int = 1) -> dict:
    """Run ``n_frames`` random ``height x width x 3`` frames through ``model.predict`` one at a time."""
    if n_frames < 10:
        raise InvalidArgumentError("benchmark needs at least 10 frames")
    rng = np.random.default_rng(seed)
    frame = rng.random((height, width, 3))
    for _ in range(warmup):
        model.predict(frame)
    start = time.perf_counter()
    for _ in range(n_frames):
        model.predict(frame)
    elapsed = time.perf_counter() - start
    return {"fps": n_frames / elapsed, "n_frames": n_frames, "seconds": elapsed,
            "frame_size": [height, width, 3], "hardware": hardware_descriptor()}
