"""Scikit-learn style estimator wrapping offline training and online
tracking, so the tracker composes with the wider ecosystem
(`get_params`/`set_params`, fit/predict)."""

import os
import tempfile

from sklearn.base import BaseEstimator

from .config import Config
from .data import Sequence
from .evaluator import evaluate_sequence
from .tracker import track_sequence
from .trainer import load_train_checkpoint, train


def _check_sequences(X):
    if isinstance(X, Sequence):
        return [X]
    seqs = list(X)
    if not seqs or not all(isinstance(s, Sequence) for s in seqs):
        raise ValueError("expected a Sequence or a non-empty list of Sequence")
    return seqs


class HaftTracker(BaseEstimator):
    """Occlusion-robust tracker trained on annotated sequences.

    fit(X) trains the feature extractor, future-feature generator,
    discriminator, and IoU head on a list of Sequence; predict(X) returns
    per-frame bounding boxes for each sequence.
    """

    def __init__(self, lambda_fuse=0.2, channels=32, patch_size=64,
                 clip_length=16, epochs=4, iters_per_epoch=500, batch_size=4,
                 lr=1e-3, w_v=0.1, w_r=1.0, w_l=1.0, w_s=1.0, seed=0,
                 workdir=None):
        self.lambda_fuse = lambda_fuse
        self.channels = channels
        self.patch_size = patch_size
        self.clip_length = clip_length
        self.epochs = epochs
        self.iters_per_epoch = iters_per_epoch
        self.batch_size = batch_size
        self.lr = lr
        self.w_v = w_v
        self.w_r = w_r
        self.w_l = w_l
        self.w_s = w_s
        self.seed = seed
        self.workdir = workdir

    def _config(self):
        return Config({
            "seed": self.seed,
            "model.channels": self.channels,
            "data.patch_size": self.patch_size,
            "train.clip_length": self.clip_length,
            "train.epochs": self.epochs,
            "train.iters_per_epoch": self.iters_per_epoch,
            "train.batch_size": self.batch_size,
            "train.lr": self.lr,
            "train.w_v": self.w_v,
            "train.w_r": self.w_r,
            "train.w_l": self.w_l,
            "train.w_s": self.w_s,
            "train.lambda_fuse": self.lambda_fuse,
            "track.lambda_fuse": self.lambda_fuse,
        })

    def fit(self, X, y=None):
        sequences = _check_sequences(X)
        config = self._config()
        workdir = self.workdir or tempfile.mkdtemp(prefix="haft_fit_")
        ckpt = train(config, sequences, workdir)
        self.checkpoint_path_ = ckpt
        self.models_, self.config_, _ = load_train_checkpoint(ckpt, strict=False)
        self.config_.set("track.lambda_fuse", self.lambda_fuse)
        return self

    @classmethod
    def from_checkpoint(cls, path, lambda_fuse=None):
        models, config, _ = load_train_checkpoint(path, strict=False)
        est = cls(lambda_fuse=config["track.lambda_fuse"] if lambda_fuse is None
                  else lambda_fuse,
                  channels=config["model.channels"],
                  patch_size=config["data.patch_size"],
                  seed=config["seed"])
        est.checkpoint_path_ = os.path.abspath(path)
        est.models_ = models
        est.config_ = config
        est.config_.set("track.lambda_fuse", est.lambda_fuse)
        return est

    def _check_fitted(self):
        if not hasattr(self, "models_"):
            raise RuntimeError("estimator is not fitted; call fit() or "
                               "from_checkpoint() first")

    def predict(self, X):
        """Per-frame boxes for each sequence (init box echoed at frame 0)."""
        self._check_fitted()
        sequences = _check_sequences(X)
        results = []
        for seq in sequences:
            outputs = track_sequence(self.models_, self.config_, seq, self.seed)
            results.append([box for box, _ in outputs])
        return results[0] if isinstance(X, Sequence) else results

    def score(self, X, y=None):
        """Mean success AUC over the sequences."""
        self._check_fitted()
        sequences = _check_sequences(X)
        aucs = []
        for seq in sequences:
            outputs = track_sequence(self.models_, self.config_, seq, self.seed)
            boxes = [box for box, _ in outputs]
            aucs.append(evaluate_sequence(seq, boxes).auc)
        return sum(aucs) / len(aucs)
