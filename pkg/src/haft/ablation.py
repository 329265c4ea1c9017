"""Ablation drivers: fusion-weight sweep and loss-combination comparison,
reported as CSV tables over a synthetic evaluation suite."""

import os

import numpy as np

from .evaluator import evaluate_sequence, occlusion_window_iou
from .tracker import track_sequence

LOSS_VARIANTS = {
    "none": {"train.w_v": 0.0, "train.w_r": 0.0},
    "gan_only": {"train.w_r": 0.0},
    "l2_only": {"train.w_v": 0.0},
    "both": {},
}


def track_suite(models, config, sequences, seed=0, jobs=1):
    """Track every sequence; returns {name: list of boxes}."""
    def one(seq):
        return seq.name, [box for box, _ in track_sequence(models, config, seq, seed)]

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            pairs = list(pool.map(one, sequences))
    else:
        pairs = [one(seq) for seq in sequences]
    return dict(pairs)


def run_lambda_sweep(models, config, sequences, lambdas, seed=0, jobs=1):
    """Mean AUC per fusion weight with a shared checkpoint; returns a list
    of (lambda, mean_auc) rows."""
    rows = []
    for lam in lambdas:
        cfg = type(config)(config.as_dict())
        cfg.set("track.lambda_fuse", float(lam))
        tracks = track_suite(models, cfg, sequences, seed, jobs)
        aucs = [evaluate_sequence(seq, tracks[seq.name]).auc for seq in sequences]
        rows.append((float(lam), float(np.mean(aucs))))
    return rows


def run_loss_ablation(checkpoints, sequences, seed=0, jobs=1):
    """Evaluate checkpoints trained with different loss combinations;
    `checkpoints` maps variant name -> (models, config). Returns rows of
    (variant, mean_auc, mean_occlusion_iou)."""
    rows = []
    for name, (models, config) in checkpoints.items():
        tracks = track_suite(models, config, sequences, seed, jobs)
        aucs = [evaluate_sequence(seq, tracks[seq.name]).auc for seq in sequences]
        occ = [occlusion_window_iou(seq, tracks[seq.name]) for seq in sequences]
        occ = [v for v in occ if not np.isnan(v)]
        rows.append((name, float(np.mean(aucs)),
                     float(np.mean(occ)) if occ else float("nan")))
    return rows


def write_table(rows, header, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join("%.6f" % v if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def generator_loss_variance(log_path, last_n=500):
    """Variance of the logged generator adversarial loss over the final
    `last_n` iterations of a training log CSV."""
    values = []
    with open(log_path) as fh:
        next(fh)
        for line in fh:
            values.append(float(line.split(",")[2]))
    tail = values[-last_n:]
    return float(np.var(tail))
