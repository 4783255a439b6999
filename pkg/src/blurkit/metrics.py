"""Threshold-swept precision/recall, F-measure (beta^2 = 0.3) and MAE.

A blur map holds per-pixel blur probabilities in [0, 1]; thresholding uses
round(255 * value) >= t so the integer sweep over [0, 255] partitions the map
exactly as its 8-bit PNG export would. Dataset-level curves pool pixel counts
across images (micro-averaging) by default; per-image averaging is available
as ``aggregation="macro"``.

Empty-set conventions: an empty segmentation has precision 1 and an empty
ground truth has recall 1 (vacuously true); both are flagged in the report
notes when they fire.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import preprocess
from .errors import ConfigError, ShapeError

BETA2 = 0.3
FIXED_THRESHOLD = 127
N_THRESHOLDS = 256


@dataclass
class BlurMap:
    """Per-pixel probability of the blur class, same spatial size as the input."""

    values: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"blur map must be 2-D, got shape {v.shape}")
        if v.size and (v.min() < 0 or v.max() > 1):
            raise ConfigError(
                f"blur map values must lie in [0,1], got [{v.min()}, {v.max()}]"
            )
        self.values = v


@dataclass
class PerImageResult:
    id: str
    mae: float
    best_f: float


@dataclass
class EvalReport:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f_measure: np.ndarray
    max_f: float
    f_at_fixed: float
    mae: float
    per_image: list
    aggregation: str = "micro"
    notes: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    partial: bool = False


def quantize(values: np.ndarray) -> np.ndarray:
    """Map [0,1] values onto the 8-bit grid the threshold sweep runs over."""
    return np.rint(255.0 * np.asarray(values, dtype=np.float64)).astype(np.int64)


def threshold_segment(blur_map: BlurMap, t: int) -> np.ndarray:
    """Binary segmentation at integer threshold t; t = 0 selects every pixel."""
    if not 0 <= t <= 255:
        raise ConfigError(f"threshold must be in [0, 255], got {t}")
    return (quantize(blur_map.values) >= t).astype(np.uint8)


def precision_recall(seg: np.ndarray, gt: np.ndarray):
    """(|R ^ Rg| / |R|, |R ^ Rg| / |Rg|) with vacuous-truth conventions for
    empty sets."""
    if seg.shape != gt.shape:
        raise ShapeError(f"segmentation {seg.shape} vs ground truth {gt.shape}")
    seg = seg.astype(bool)
    gt = gt.astype(bool)
    inter = int(np.count_nonzero(seg & gt))
    n_seg = int(np.count_nonzero(seg))
    n_gt = int(np.count_nonzero(gt))
    precision = inter / n_seg if n_seg else 1.0
    recall = inter / n_gt if n_gt else 1.0
    return precision, recall


def f_measure(precision: float, recall: float, beta2: float = BETA2) -> float:
    """(1+b2)*P*R / (b2*P + R), defined as 0 when the denominator vanishes."""
    denom = beta2 * precision + recall
    if denom == 0:
        return 0.0
    return (1 + beta2) * precision * recall / denom


def mae(blur_map, gt: np.ndarray) -> float:
    """Mean absolute difference between map values and binary ground truth."""
    values = blur_map.values if isinstance(blur_map, BlurMap) else np.asarray(blur_map)
    if values.shape != gt.shape:
        raise ShapeError(f"map {values.shape} vs ground truth {gt.shape}")
    return float(np.mean(np.abs(gt.astype(np.float64) - values)))


def _sweep_counts(blur_map: BlurMap, gt: np.ndarray):
    """Per-threshold (|R|, |R ^ Rg|) for t = 0..255 plus |Rg|, via a histogram
    of the quantized map (|R(t)| = number of pixels quantized to >= t)."""
    q = quantize(blur_map.values)
    gt_bool = gt.astype(bool)
    hist_all = np.bincount(q.ravel(), minlength=N_THRESHOLDS)
    hist_gt = np.bincount(q[gt_bool], minlength=N_THRESHOLDS)
    seg_sizes = np.cumsum(hist_all[::-1])[::-1]
    true_pos = np.cumsum(hist_gt[::-1])[::-1]
    return seg_sizes.astype(np.int64), true_pos.astype(np.int64), int(gt_bool.sum())


def _curves_from_counts(seg_sizes, true_pos, gt_size):
    precision = np.where(seg_sizes > 0, true_pos / np.maximum(seg_sizes, 1), 1.0)
    recall = np.where(gt_size > 0, true_pos / max(gt_size, 1), 1.0)
    return precision, recall


def _f_curve(precision, recall, beta2=BETA2):
    denom = beta2 * precision + recall
    return np.where(denom > 0, (1 + beta2) * precision * recall / np.maximum(denom, 1e-300), 0.0)


def evaluate_maps(pairs: list, aggregation: str = "micro") -> EvalReport:
    """Build an EvalReport from (BlurMap, ground-truth) pairs.

    micro: pool pixel counts across images before dividing (one dataset-level
    curve, invariant to evaluation order). macro: average per-image precision
    and recall curves, then compute F from the averages.
    """
    if aggregation not in ("micro", "macro"):
        raise ConfigError(f"aggregation must be 'micro' or 'macro', got {aggregation!r}")
    if not pairs:
        raise ConfigError("no (map, ground truth) pairs to evaluate")

    pooled_seg = np.zeros(N_THRESHOLDS, dtype=np.int64)
    pooled_tp = np.zeros(N_THRESHOLDS, dtype=np.int64)
    pooled_gt = 0
    sum_precision = np.zeros(N_THRESHOLDS)
    sum_recall = np.zeros(N_THRESHOLDS)
    per_image = []
    notes = []
    mae_total = 0.0
    for blur_map, gt in pairs:
        if blur_map.values.shape != gt.shape:
            raise ShapeError(
                f"{blur_map.source_id!r}: map {blur_map.values.shape} vs "
                f"ground truth {gt.shape}"
            )
        seg_sizes, true_pos, gt_size = _sweep_counts(blur_map, gt)
        if gt_size == 0:
            notes.append(f"{blur_map.source_id}: empty ground truth, recall vacuously 1")
        image_p, image_r = _curves_from_counts(seg_sizes, true_pos, gt_size)
        image_mae = mae(blur_map, gt)
        per_image.append(PerImageResult(
            blur_map.source_id, image_mae, float(_f_curve(image_p, image_r).max())
        ))
        pooled_seg += seg_sizes
        pooled_tp += true_pos
        pooled_gt += gt_size
        sum_precision += image_p
        sum_recall += image_r
        mae_total += image_mae

    if aggregation == "micro":
        precision, recall = _curves_from_counts(pooled_seg, pooled_tp, pooled_gt)
        if (pooled_seg == 0).any():
            notes.append(
                f"{int((pooled_seg == 0).sum())} thresholds with empty segmentation, "
                "precision vacuously 1"
            )
    else:
        precision = sum_precision / len(pairs)
        recall = sum_recall / len(pairs)
    f_curve = _f_curve(precision, recall)
    return EvalReport(
        thresholds=np.arange(N_THRESHOLDS),
        precision=precision,
        recall=recall,
        f_measure=f_curve,
        max_f=float(f_curve.max()),
        f_at_fixed=float(f_curve[FIXED_THRESHOLD]),
        mae=mae_total / len(pairs),
        per_image=per_image,
        aggregation=aggregation,
        notes=notes,
    )


def predict_map(model, sample, out_size=None) -> BlurMap:
    """Forward one sample and return the blur-class channel, bilinearly
    resized back to the requested (or the sample's own) resolution."""
    image, _ = preprocess(sample, model.config.input_size)
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        probs = model(torch.as_tensor(image[None]).to(dtype))
    values = probs[0, 1].numpy().astype(np.float64)
    target = out_size if out_size is not None else sample.mask.shape
    if tuple(target) != values.shape:
        resized = Image.fromarray(values.astype(np.float32), mode="F").resize(
            (target[1], target[0]), Image.BILINEAR)
        values = np.asarray(resized, dtype=np.float64)
    return BlurMap(np.clip(values, 0.0, 1.0), sample.id)


def evaluate(model, samples: list, aggregation: str = "micro",
             map_dir=None) -> EvalReport:
    """Forward every sample, sweep thresholds, and aggregate a dataset report.

    Per-sample failures are recorded on the report (marked partial) instead
    of aborting the run. ``map_dir`` additionally writes each predicted map
    as an 8-bit PNG.
    """
    if not samples:
        raise ConfigError("no samples to evaluate")
    model.eval()
    pairs = []
    failures = []
    for sample in sorted(samples, key=lambda s: s.id):
        try:
            blur_map = predict_map(model, sample)
            if map_dir is not None:
                save_map_png(blur_map.values, Path(map_dir) / f"{sample.id}.png")
            pairs.append((blur_map, sample.mask))
        except Exception as exc:
            failures.append((sample.id, str(exc)))
    if not pairs:
        raise ConfigError(f"every sample failed evaluation: {failures}")
    report = evaluate_maps(pairs, aggregation)
    report.failures = failures
    report.partial = bool(failures)
    return report


def save_map_png(values: np.ndarray, path):
    """Export a [0,1] map as a single-channel 8-bit PNG (round(255 * value))."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantize(values).astype(np.uint8), mode="L").save(path)


def export_report(report: EvalReport, out_dir) -> list:
    """Write pr_curve.csv, f_curve.csv, summary.csv and per_image.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    def emit(name, header, rows):
        path = out_dir / name
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for row in rows:
                fh.write(",".join(str(v) for v in row) + "\n")
        paths.append(path)

    emit("pr_curve.csv", "threshold,precision,recall",
         ((t, repr(float(p)), repr(float(r)))
          for t, p, r in zip(report.thresholds, report.precision, report.recall)))
    emit("f_curve.csv", "threshold,f",
         ((t, repr(float(f))) for t, f in zip(report.thresholds, report.f_measure)))
    emit("summary.csv", "max_f,f_at_fixed,mae",
         [(repr(report.max_f), repr(report.f_at_fixed), repr(report.mae))])
    emit("per_image.csv", "id,mae,best_f",
         ((r.id, repr(r.mae), repr(r.best_f)) for r in report.per_image))
    if report.notes or report.failures:
        notes = out_dir / "notes.txt"
        with open(notes, "w") as fh:
            for line in report.notes:
                fh.write(line + "\n")
            for sample_id, msg in report.failures:
                fh.write(f"FAILED {sample_id}: {msg}\n")
        paths.append(notes)
    return paths
