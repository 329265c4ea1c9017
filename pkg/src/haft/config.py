"""Flat key-value configuration with dotted namespaces.

Config files are line-oriented ``key = value`` text with ``#`` comments.
Every key must appear in the defaults registry below; unknown keys are
rejected with the nearest known key named in the error.
"""

import difflib

# Registry of every known key with its default value. Types are inferred
# from the defaults (bool before int, since bool is an int subclass).
DEFAULTS = {
    "seed": 0,

    # synthetic dataset generation
    "synth.num_sequences": 200,
    "synth.length": 60,
    "synth.image_size": 128,
    "synth.min_target": 16,
    "synth.max_target": 28,
    "synth.occluded_fraction": 0.5,
    "synth.occlusion_min_len": 6,
    "synth.occlusion_max_len": 12,
    "synth.max_coverage": 1.0,

    # cropping / augmentation
    "data.patch_size": 64,
    "data.context_factor": 5.0,
    "data.p_mask": 0.3,
    "data.mask_cover_min": 0.3,
    "data.mask_cover_max": 0.7,
    # probability that a training clip gets a sustained total-occlusion
    # mask run (4-10 consecutive inputs, textured fill)
    "data.mask_run_prob": 0.5,

    # model dimensions
    "model.channels": 32,
    "model.filter_size": 5,
    "model.pool_size": 3,
    "model.label_sigma": 1.0,

    # offline training
    "train.clip_length": 16,
    "train.batch_size": 4,
    "train.epochs": 4,
    "train.iters_per_epoch": 500,
    "train.lr": 1e-3,
    "train.lr_decay": 0.2,
    "train.decay_period": 15,
    "train.w_v": 0.1,
    "train.w_r": 1.0,
    "train.w_l": 1.0,
    "train.w_s": 1.0,
    "train.lambda_fuse": 0.2,
    "train.grad_clip": 10.0,
    "train.jitter_scale": 0.15,
    "train.jitter_shift": 0.2,
    "train.filter_iters": 5,
    "train.size_candidates": 4,
    "train.size_frames": 4,

    # online tracking
    "track.lambda_fuse": 0.2,
    "track.use_predictor": True,
    "track.update_threshold": 0.25,
    "track.update_interval": 10,
    "track.memory_size": 50,
    "track.memory_decay": 0.99,
    "track.init_filter_iters": 10,
    "track.update_filter_iters": 2,
    "track.filter_reg": 0.05,
    "track.refine_steps": 5,
    "track.refine_candidates": 10,
    "track.refine_topk": 3,

    # evaluation
    "eval.recovery_window": 5,
    "eval.precision_tau": 20.0,
}


class ConfigError(ValueError):
    """Raised for unknown keys, bad values, or malformed config lines."""


def _parse_value(key, text, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError("key '%s': expected boolean, got '%s'" % (key, text))
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError("key '%s': expected integer, got '%s'" % (key, text))
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError("key '%s': expected number, got '%s'" % (key, text))
    return text


class Config:
    """Validated key-value configuration with materialized defaults."""

    def __init__(self, overrides=None):
        self._values = dict(DEFAULTS)
        if overrides:
            for key, value in overrides.items():
                self.set(key, value)

    def set(self, key, value):
        if key not in DEFAULTS:
            near = difflib.get_close_matches(key, DEFAULTS.keys(), n=1)
            hint = (", did you mean '%s'?" % near[0]) if near else ""
            raise ConfigError("unknown config key '%s'%s" % (key, hint))
        default = DEFAULTS[key]
        if isinstance(value, str) and not isinstance(default, str):
            value = _parse_value(key, value, default)
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError("key '%s': expected boolean" % key)
        if isinstance(default, float) and isinstance(value, int):
            value = float(value)
        self._values[key] = value

    def __getitem__(self, key):
        if key not in self._values:
            raise ConfigError("unknown config key '%s'" % key)
        return self._values[key]

    def as_dict(self):
        return dict(self._values)

    def dump(self, path):
        """Write the fully resolved config (defaults included) to a file."""
        with open(path, "w") as fh:
            for key in sorted(self._values):
                fh.write("%s = %s\n" % (key, self._values[key]))

    @classmethod
    def from_file(cls, path, overrides=None):
        cfg = cls()
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError("%s:%d: expected 'key = value'" % (path, lineno))
                key, _, value = line.partition("=")
                cfg.set(key.strip(), value.strip())
        if overrides:
            for key, value in overrides.items():
                cfg.set(key, value)
        return cfg
