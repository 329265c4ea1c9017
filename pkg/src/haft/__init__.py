"""Occlusion-robust visual tracking by hallucinating future feature
embeddings and fusing them with observed features."""

from .config import Config, ConfigError
from .data import (BoundingBox, Frame, JitterConfig, OcclusionMask,
                   SamplePatch, Sequence, SynthConfig, apply_random_mask,
                   crop_search_region, generate_synthetic, load_sequence,
                   save_sequence, synth_dataset)
from .estimator import HaftTracker
from .evaluator import (evaluate_sequence, iou, occlusion_report,
                        precision_at, success_curve)
from .tracker import fuse_features, track_sequence
from .trainer import (LossWeights, Models, load_train_checkpoint, train,
                      train_step)

__all__ = [
    "BoundingBox", "Config", "ConfigError", "Frame", "HaftTracker",
    "JitterConfig", "LossWeights", "Models", "OcclusionMask", "SamplePatch",
    "Sequence", "SynthConfig", "apply_random_mask", "crop_search_region",
    "evaluate_sequence", "fuse_features", "generate_synthetic", "iou",
    "load_sequence", "load_train_checkpoint", "occlusion_report",
    "precision_at", "save_sequence", "success_curve", "synth_dataset",
    "track_sequence", "train", "train_step",
]

__version__ = "0.1.0"
