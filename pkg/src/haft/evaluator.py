"""Tracking metrics and reports: IoU, OTB-style success/precision,
occlusion-segment analysis, ablation sweeps, and CSV/plot emission."""

import math
import os
from dataclasses import dataclass

import numpy as np

SUCCESS_THRESHOLDS = np.arange(21) * 0.05  # 0.00 .. 1.00


def iou(a, b):
    """Intersection over union of two (x, y, w, h) boxes; 0 when disjoint."""
    left = max(a.x, b.x)
    top = max(a.y, b.y)
    right = min(a.x + a.w, b.x + b.w)
    bottom = min(a.y + a.h, b.y + b.h)
    inter = max(0.0, right - left) * max(0.0, bottom - top)
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def center_error(a, b):
    (ax, ay), (bx, by) = a.center, b.center
    return math.hypot(ax - bx, ay - by)


def success_curve(ious):
    """curve[k] = fraction of frames with IoU >= threshold_k; AUC is the
    mean over the 21 thresholds."""
    if len(ious) == 0:
        raise ValueError("empty IoU list")
    arr = np.asarray(ious, dtype=np.float64)
    curve = np.array([(arr >= t).mean() for t in SUCCESS_THRESHOLDS])
    return curve, float(curve.mean())


def precision_at(center_errors, tau=20.0):
    """Fraction of frames with center distance <= tau pixels."""
    if len(center_errors) == 0:
        raise ValueError("empty center-error list")
    arr = np.asarray(center_errors, dtype=np.float64)
    return float((arr <= tau).mean())


@dataclass
class OcclusionSegment:
    start: int
    end: int               # inclusive
    mean_iou: float
    recovery_iou: float    # mean IoU over the `window` frames after the segment


def occlusion_segments(visibility, threshold=0.5):
    """Maximal runs of frames with visibility < threshold."""
    segments = []
    start = None
    for i, v in enumerate(visibility):
        if v < threshold and start is None:
            start = i
        elif v >= threshold and start is not None:
            segments.append((start, i - 1))
            start = None
    if start is not None:
        segments.append((start, len(visibility) - 1))
    return segments


def occlusion_report(seq, boxes, window=5):
    """Per-segment mean IoU and post-segment recovery IoU, plus the number
    of tracking failures (transitions into IoU < 0.1)."""
    if seq.visibility is None:
        raise ValueError("sequence has no visibility annotation")
    ious = [iou(gt, bx) for gt, bx in zip(seq.boxes, boxes)]
    segments = []
    for start, end in occlusion_segments(seq.visibility):
        seg_iou = float(np.mean(ious[start:end + 1]))
        rec = ious[end + 1:end + 1 + window]
        rec_iou = float(np.mean(rec)) if rec else float("nan")
        segments.append(OcclusionSegment(start, end, seg_iou, rec_iou))

    failures = 0
    below = False
    for v in ious[1:]:
        if v < 0.1 and not below:
            failures += 1
            below = True
        elif v >= 0.1:
            below = False
    return segments, failures


@dataclass
class EvalResult:
    name: str
    ious: list
    center_errors: list
    curve: np.ndarray
    auc: float
    precision20: float
    segments: list
    failures: int


def evaluate_sequence(seq, boxes, window=5, tau=20.0):
    """Score one tracker output against ground truth; the init frame is
    excluded from all metrics."""
    ious = [iou(gt, bx) for gt, bx in zip(seq.boxes[1:], boxes[1:])]
    errors = [center_error(gt, bx) for gt, bx in zip(seq.boxes[1:], boxes[1:])]
    curve, auc = success_curve(ious)
    prec = precision_at(errors, tau)
    if seq.visibility is not None:
        segments, failures = occlusion_report(seq, boxes, window)
    else:
        segments, failures = [], sum(
            1 for a, b in zip(ious, ious[1:]) if b < 0.1 <= a)
    return EvalResult(seq.name, ious, errors, curve, auc, prec, segments, failures)


def occlusion_window_iou(seq, boxes, window=5):
    """Mean IoU over all occlusion-segment frames plus their recovery
    windows; nan when the sequence has no occlusion segment."""
    if seq.visibility is None:
        return float("nan")
    ious = [iou(gt, bx) for gt, bx in zip(seq.boxes, boxes)]
    picked = []
    for start, end in occlusion_segments(seq.visibility):
        picked.extend(ious[start:min(end + 1 + window, len(ious))])
    return float(np.mean(picked)) if picked else float("nan")


def emit_report(results, out_dir, lambda_sweep=None):
    """Write summary.csv, per-sequence CSVs, and plots with deterministic
    names. `results` is a list of EvalResult."""
    if not results:
        raise ValueError("empty result set")
    os.makedirs(out_dir, exist_ok=True)
    results = sorted(results, key=lambda r: r.name)

    with open(os.path.join(out_dir, "summary.csv"), "w") as fh:
        fh.write("sequence,auc,precision20,failures,occl_mean_iou,recovery_iou\n")
        for r in results:
            occl = np.mean([s.mean_iou for s in r.segments]) if r.segments else float("nan")
            rec_vals = [s.recovery_iou for s in r.segments
                        if not math.isnan(s.recovery_iou)]
            rec = np.mean(rec_vals) if rec_vals else float("nan")
            fh.write("%s,%.6f,%.6f,%d,%.6f,%.6f\n"
                     % (r.name, r.auc, r.precision20, r.failures, occl, rec))

    for r in results:
        with open(os.path.join(out_dir, "%s.csv" % r.name), "w") as fh:
            fh.write("frame,iou,center_error\n")
            for i, (v, e) in enumerate(zip(r.ious, r.center_errors), start=1):
                fh.write("%d,%.6f,%.6f\n" % (i, v, e))

    _plot_curves(results, out_dir)
    if lambda_sweep is not None:
        with open(os.path.join(out_dir, "lambda_sweep.csv"), "w") as fh:
            fh.write("lambda,mean_auc\n")
            for lam, auc in lambda_sweep:
                fh.write("%.4f,%.6f\n" % (lam, auc))
        _plot_lambda(lambda_sweep, out_dir)


def _plot_curves(results, out_dir):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    mean_curve = np.mean([r.curve for r in results], axis=0)
    fig, ax = plt.subplots()
    ax.plot(SUCCESS_THRESHOLDS, mean_curve)
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("success rate")
    ax.set_title("Success plot (AUC %.3f)" % mean_curve.mean())
    fig.savefig(os.path.join(out_dir, "success_plot.png"))
    plt.close(fig)

    taus = np.arange(0, 51, 2.5)
    errs = np.concatenate([r.center_errors for r in results])
    prec = [(errs <= t).mean() for t in taus]
    fig, ax = plt.subplots()
    ax.plot(taus, prec)
    ax.set_xlabel("center error threshold (px)")
    ax.set_ylabel("precision")
    ax.set_title("Precision plot")
    fig.savefig(os.path.join(out_dir, "precision_plot.png"))
    plt.close(fig)


def _plot_lambda(sweep, out_dir):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    lams = [s[0] for s in sweep]
    aucs = [s[1] for s in sweep]
    fig, ax = plt.subplots()
    ax.plot(lams, aucs, marker="o")
    ax.set_xlabel("fusion weight")
    ax.set_ylabel("mean AUC")
    fig.savefig(os.path.join(out_dir, "lambda_sweep.png"))
    plt.close(fig)
