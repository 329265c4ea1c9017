"""Offline training: clip sampling, forward pass, the four losses, the
weighted total, alternating discriminator/generator optimization, learning
rate schedule, CSV logging, and checkpointing."""

import copy
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from . import checkpoint as ckpt_io
from .adversary import Discriminator, loss_discriminator, loss_generator, loss_reconstruction
from .backbone import Backbone, FeatureMap, TOTAL_STRIDE
from .data import BoundingBox, JitterConfig, apply_random_mask, crop_search_region
from .localizer import (SampleMemory, correlate, gaussian_label, learn_filter,
                        localization_loss, region_weight)
from .predictor import ConvGRUPredictor
from .size_estimator import IouHead, pool_region, size_loss


@dataclass
class LossWeights:
    w_v: float = 0.1
    w_r: float = 1.0
    w_l: float = 1.0
    w_s: float = 1.0
    lambda_fuse: float = 0.2

    def __post_init__(self):
        if min(self.w_v, self.w_r, self.w_l, self.w_s) < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 <= self.lambda_fuse <= 1.0:
            raise ValueError("lambda_fuse must lie in [0, 1]")


@dataclass
class LossReport:
    l_v: float
    l_r: float
    l_l: float
    l_s: float
    total: float
    d_loss: float = float("nan")


def total_loss(components, weights):
    """Exact weighted sum w_v*l_v + w_r*l_r + w_l*l_l + w_s*l_s."""
    for name in ("l_v", "l_r", "l_l", "l_s"):
        value = components[name]
        scalar = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not math.isfinite(scalar):
            raise FloatingPointError("non-finite loss component '%s'" % name)
    total = (weights.w_v * components["l_v"] + weights.w_r * components["l_r"]
             + weights.w_l * components["l_l"] + weights.w_s * components["l_s"])

    def val(x):
        return float(x.detach()) if torch.is_tensor(x) else float(x)

    report = LossReport(val(components["l_v"]), val(components["l_r"]),
                        val(components["l_l"]), val(components["l_s"]),
                        val(total))
    return total, report


class Models:
    """The four networks plus the geometry they share."""

    def __init__(self, config):
        self.config = config
        self.channels = config["model.channels"]
        self.patch_size = config["data.patch_size"]
        self.filter_size = config["model.filter_size"]
        self.pool_size = config["model.pool_size"]
        self.sigma = config["model.label_sigma"]
        self.feat_size = self.patch_size // TOTAL_STRIDE
        torch.manual_seed(config["seed"])
        self.backbone = Backbone(self.channels)
        self.predictor = ConvGRUPredictor(self.channels)
        self.iou_head = IouHead(self.channels, self.pool_size)
        self.discriminator = Discriminator(self.channels)

    def geometry(self):
        return FeatureMap(torch.zeros(0))  # carries only stride/offset

    def train(self):
        for net in (self.backbone, self.predictor, self.iou_head, self.discriminator):
            net.train()

    def eval(self):
        for net in (self.backbone, self.predictor, self.iou_head, self.discriminator):
            net.eval()

    def generator_parameters(self):
        for net in (self.backbone, self.predictor, self.iou_head):
            yield from net.parameters()

    def named_arrays(self):
        """Flatten all network state into name -> numpy array."""
        arrays, train_only = {}, set()
        nets = [("backbone", self.backbone), ("predictor", self.predictor),
                ("iou_head", self.iou_head), ("discriminator", self.discriminator)]
        for prefix, net in nets:
            for key, tensor in net.state_dict().items():
                name = "%s.%s" % (prefix, key)
                arrays[name] = tensor.detach().cpu().numpy()
                if prefix == "discriminator":
                    train_only.add(name)
        return arrays, train_only

    def load_arrays(self, arrays, strict=True):
        nets = {"backbone": self.backbone, "predictor": self.predictor,
                "iou_head": self.iou_head, "discriminator": self.discriminator}
        for prefix, net in nets.items():
            state = {}
            for key, ref in net.state_dict().items():
                name = "%s.%s" % (prefix, key)
                if name not in arrays:
                    if strict or prefix != "discriminator":
                        raise KeyError("checkpoint missing array '%s'" % name)
                    continue
                state[key] = torch.as_tensor(arrays[name]).reshape(ref.shape).to(ref.dtype)
            if state:
                net.load_state_dict(state)


@dataclass
class TrainingClip:
    inputs: list          # N masked input patches (SamplePatch)
    targets: list         # N unmasked future-target patches (SamplePatch)
    raw_inputs: list      # the N input patches before masking
    masks: list           # OcclusionMask per input
    num_frames: int       # distinct frames touched (clip_length + 1)


def sample_clip(sequences, config, rng):
    """Sample clip_length+1 consecutive frames; each frame is cropped with
    the previous frame's ground-truth box plus jitter. Random masks are
    applied to input crops only, never to the future-target crops."""
    n = config["train.clip_length"]
    if n < 2:
        raise ValueError("clip_length must be >= 2")
    eligible = [s for s in sequences if len(s) >= n + 1]
    if not eligible:
        raise ValueError("no sequence of length >= %d in dataset" % (n + 1))

    seq = eligible[int(rng.integers(len(eligible)))]
    start = int(rng.integers(len(seq) - n))
    jitter = JitterConfig(scale=config["train.jitter_scale"],
                          shift=config["train.jitter_shift"])
    patch_size = config["data.patch_size"]
    context = config["data.context_factor"]

    # correlated mask run: a sustained, total, textured occlusion so the
    # predictor learns to coast on its state across multi-frame gaps; the
    # first two inputs stay clean so the clip always establishes the target
    in_run = [False] * n
    if rng.random() < config["data.mask_run_prob"] and n >= 6:
        run_len = min(int(rng.integers(4, 11)), n - 2)
        run_start = int(rng.integers(2, n - run_len + 1))
        for j in range(run_start, run_start + run_len):
            in_run[j] = True

    crops = []
    for j in range(n + 1):
        a = start + j
        ref = seq.boxes[a - 1] if j > 0 else seq.boxes[a]
        crops.append(crop_search_region(seq.frames[a], ref, jitter, rng,
                                        patch_size=patch_size,
                                        context_factor=context,
                                        gt_box=seq.boxes[a]))
    inputs, masks = [], []
    for j, patch in enumerate(crops[:n]):
        if in_run[j]:
            masked, mask = apply_random_mask(patch, rng, p_mask=1.0,
                                             cover_min=1.2, cover_max=2.0,
                                             textured=True)
        else:
            masked, mask = apply_random_mask(
                patch, rng, p_mask=config["data.p_mask"],
                cover_min=config["data.mask_cover_min"],
                cover_max=config["data.mask_cover_max"])
        inputs.append(masked)
        masks.append(mask)
    return TrainingClip(inputs=inputs, targets=crops[1:], raw_inputs=crops[:n],
                        masks=masks, num_frames=n + 1)


def _stack_patches(patches):
    arr = np.stack([p.pixels.transpose(2, 0, 1) for p in patches])
    return torch.as_tensor(np.ascontiguousarray(arr), dtype=torch.float32)


@dataclass
class TrainState:
    models: Models
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    iteration: int = 0
    epoch: int = 0
    skip_streak: int = 0
    weights: LossWeights = field(default_factory=LossWeights)


def make_train_state(config):
    models = Models(config)
    weights = LossWeights(config["train.w_v"], config["train.w_r"],
                          config["train.w_l"], config["train.w_s"],
                          config["train.lambda_fuse"])
    lr = config["train.lr"]
    opt_g = torch.optim.Adam(models.generator_parameters(), lr=lr,
                             betas=(0.9, 0.999), eps=1e-8)
    opt_d = torch.optim.Adam(models.discriminator.parameters(), lr=lr,
                             betas=(0.9, 0.999), eps=1e-8)
    return TrainState(models, opt_g, opt_d, weights=weights)


def _clip_forward(models, clip, config, rng):
    """Forward one clip through backbone + predictor; returns the loss
    components as torch scalars."""
    geometry = FeatureMap(torch.zeros(0))
    inputs = _stack_patches(clip.inputs)
    targets = _stack_patches(clip.targets)
    n = inputs.shape[0]

    alphas = models.backbone(inputs)      # masked observations, frames 1..N
    betas = models.backbone(targets)      # real futures, frames 2..N+1
    etas = models.predictor.rollout(alphas[0], list(alphas))
    etas = torch.stack(etas)

    # reconstruction targets are detached: the L2 term pulls the forecast
    # toward the real feature, never the real feature toward the forecast
    # (which would reward the backbone for collapsing features into
    # something easier to predict)
    l_r = loss_reconstruction(list(etas), [b.detach() for b in betas])

    lam = config["train.lambda_fuse"]
    fused = lam * etas + (1.0 - lam) * betas

    # localization: filter learned on the first observed frame, detached
    h = w = models.feat_size
    centers = []
    for patch in clip.targets:
        cx, cy = patch.target_box_in_patch.center
        centers.append((geometry.patch_to_cell(cx), geometry.patch_to_cell(cy)))
    first_box = clip.raw_inputs[0].target_box_in_patch
    c0 = (geometry.patch_to_cell(first_box.center[0]),
          geometry.patch_to_cell(first_box.center[1]))
    memory = SampleMemory(capacity=1)
    memory.insert(alphas[0].detach(), gaussian_label(c0, models.sigma, (h, w)))
    f0 = torch.zeros(models.channels, models.filter_size, models.filter_size)
    filt = learn_filter(memory, f0, config["train.filter_iters"],
                        config["track.filter_reg"], sigma=models.sigma)

    responses = correlate(fused, filt)
    labels = [gaussian_label(c, models.sigma, (h, w)) for c in centers]
    rweights = [region_weight(c, models.sigma, (h, w)) for c in centers]
    l_l = localization_loss(list(responses), labels, rweights)

    # size estimation on a subset of fused frames
    template_pool = pool_region(alphas[0], first_box, geometry, k=models.pool_size)
    n_size = min(config["train.size_frames"], n)
    size_idx = rng.choice(n, size=n_size, replace=False)
    size_terms = []
    for j in sorted(int(i) for i in size_idx):
        size_terms.append(size_loss(
            models.iou_head, template_pool, fused[j], geometry,
            clip.targets[j].target_box_in_patch,
            config["train.size_candidates"], rng, k=models.pool_size))
    l_s = torch.stack(size_terms).mean()

    # conditional GAN pairs: condition at t, candidate at t+1
    conditions = torch.cat([alphas[:1], betas[:-1]])
    return {"alphas": alphas, "betas": betas, "etas": etas,
            "conditions": conditions, "l_r": l_r, "l_l": l_l, "l_s": l_s}


def train_step(state, clips, config, rng):
    """One alternating optimization step over a batch of clips:
    discriminator first (generator outputs detached), then the generator
    side on the weighted total loss."""
    models = state.models
    models.train()
    forwards = [_clip_forward(models, clip, config, rng) for clip in clips]

    # --- discriminator step (all feature inputs detached) ---
    state.opt_d.zero_grad(set_to_none=True)
    d_terms = []
    for fw in forwards:
        cond = fw["conditions"].detach()
        real_logits = models.discriminator(cond, fw["betas"].detach())
        fake_logits = models.discriminator(cond, fw["etas"].detach())
        d_terms.append(loss_discriminator(real_logits, fake_logits))
    d_loss = torch.stack(d_terms).mean()
    if not torch.isfinite(d_loss):
        return _skip(state, "discriminator loss non-finite")
    d_loss.backward()
    torch.nn.utils.clip_grad_norm_(models.discriminator.parameters(),
                                   config["train.grad_clip"])
    state.opt_d.step()

    # --- generator step ---
    state.opt_g.zero_grad(set_to_none=True)
    g_terms = {"l_v": [], "l_r": [], "l_l": [], "l_s": []}
    for fw in forwards:
        fake_logits = models.discriminator(fw["conditions"].detach(), fw["etas"])
        g_terms["l_v"].append(loss_generator(fake_logits))
        g_terms["l_r"].append(fw["l_r"])
        g_terms["l_l"].append(fw["l_l"])
        g_terms["l_s"].append(fw["l_s"])
    components = {k: torch.stack(v).mean() for k, v in g_terms.items()}
    try:
        loss, report = total_loss(components, state.weights)
    except FloatingPointError as err:
        return _skip(state, str(err))
    loss.backward()
    torch.nn.utils.clip_grad_norm_(models.generator_parameters(),
                                   config["train.grad_clip"])
    state.opt_g.step()
    # leftover generator-path gradients on D params are discarded next step

    state.skip_streak = 0
    state.iteration += 1
    report.d_loss = float(d_loss.detach())
    return state, report


def _skip(state, reason):
    state.skip_streak += 1
    if state.skip_streak >= 10:
        raise RuntimeError("10 consecutive non-finite training steps: %s" % reason)
    state.iteration += 1
    report = LossReport(*(float("nan"),) * 5)
    return state, report


def _lr_at(config, epoch):
    decay_steps = epoch // config["train.decay_period"]
    return config["train.lr"] * (config["train.lr_decay"] ** decay_steps)


def _optimizer_arrays(opt, prefix):
    arrays = {}
    sd = opt.state_dict()
    for pidx, pstate in sd["state"].items():
        for key, value in pstate.items():
            if torch.is_tensor(value):
                arr = value.detach().cpu().numpy()
            else:
                arr = np.array(value, dtype=np.float64)
            arrays["%s.%d.%s" % (prefix, pidx, key)] = np.atleast_1d(arr)
    return arrays


def _restore_optimizer(opt, arrays, prefix):
    sd = opt.state_dict()
    state = {}
    names = [n for n in arrays if n.startswith(prefix + ".")]
    for name in names:
        _, pidx, key = name.split(".", 2)
        entry = state.setdefault(int(pidx), {})
        arr = arrays[name]
        if key == "step":
            entry[key] = torch.as_tensor(float(arr.reshape(-1)[0]))
        else:
            entry[key] = torch.as_tensor(arr, dtype=torch.float32)
    if state:
        sd["state"] = state
        opt.load_state_dict(sd)


def save_train_checkpoint(path, state, config):
    arrays, train_only = state.models.named_arrays()
    for name, arr in _optimizer_arrays(state.opt_g, "opt_g").items():
        arrays[name] = arr
        train_only.add(name)
    for name, arr in _optimizer_arrays(state.opt_d, "opt_d").items():
        arrays[name] = arr
        train_only.add(name)
    meta = {"config": config.as_dict(), "iteration": state.iteration,
            "epoch": state.epoch}
    ckpt_io.save_checkpoint(path, arrays, train_only, meta)


def load_train_checkpoint(path, strict=True):
    """Restore (models, config, meta[, state]) from a checkpoint archive."""
    from .config import Config

    arrays, meta = ckpt_io.load_checkpoint(path, strict=strict)
    config = Config(meta["config"])
    models = Models(config)
    models.load_arrays(arrays, strict=strict)
    if not strict:
        return models, config, meta
    state = make_train_state(config)
    state.models = models
    state.opt_g = torch.optim.Adam(models.generator_parameters(),
                                   lr=config["train.lr"], betas=(0.9, 0.999))
    state.opt_d = torch.optim.Adam(models.discriminator.parameters(),
                                   lr=config["train.lr"], betas=(0.9, 0.999))
    _restore_optimizer(state.opt_g, arrays, "opt_g")
    _restore_optimizer(state.opt_d, arrays, "opt_d")
    state.iteration = meta["iteration"]
    state.epoch = meta["epoch"]
    return models, config, meta, state


def train(config, dataset, out_dir, resume_state=None, log_name="train_log.csv"):
    """Run the full schedule; writes per-epoch checkpoints, a final
    checkpoint, and a CSV loss log. Returns the final checkpoint path."""
    if not dataset:
        raise ValueError("empty training dataset")
    os.makedirs(out_dir, exist_ok=True)
    state = resume_state or make_train_state(config)
    seed = config["seed"]
    iters = config["train.iters_per_epoch"]
    epochs = config["train.epochs"]
    batch = config["train.batch_size"]

    log_path = os.path.join(out_dir, log_name)
    mode = "a" if resume_state else "w"
    with open(log_path, mode) as log:
        if not resume_state:
            log.write("iteration,lr,l_V,l_R,l_L,l_S,total\n")
        start_epoch = state.epoch
        for epoch in range(start_epoch, epochs):
            state.epoch = epoch
            lr = _lr_at(config, epoch)
            for group in state.opt_g.param_groups:
                group["lr"] = lr
            for group in state.opt_d.param_groups:
                group["lr"] = lr
            for _ in range(iters):
                rng = np.random.default_rng([seed, 1000, state.iteration])
                clips = [sample_clip(dataset, config, rng) for _ in range(batch)]
                state, report = train_step(state, clips, config, rng)
                log.write("%d,%.6g,%.6f,%.6f,%.6f,%.6f,%.6f\n"
                          % (state.iteration, lr, report.l_v, report.l_r,
                             report.l_l, report.l_s, report.total))
            log.flush()
            state.epoch = epoch + 1
            save_train_checkpoint(os.path.join(out_dir, "checkpoint_ep%03d" % (epoch + 1)),
                                  state, config)
    final = os.path.join(out_dir, "checkpoint_final")
    save_train_checkpoint(final, state, config)
    return final


def clone_state(state):
    """Deep copy for determinism checks."""
    return copy.deepcopy(state)
