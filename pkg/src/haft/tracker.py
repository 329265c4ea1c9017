"""Online tracking: initialization from 15 augmented first-frame samples,
per-frame localization on fused (hallucinated + real) features, IoU-head
size refinement, online filter updates, and recurrent state propagation."""

import math
from dataclasses import dataclass, field

import cv2
import numpy as np
import torch

from .backbone import FeatureMap, patch_to_tensor
from .data import BoundingBox, JitterConfig, crop_search_region, patch_to_frame_box
from .localizer import (SampleMemory, correlate, gaussian_label, learn_filter,
                        localize)
from .size_estimator import pool_region, predict_iou, refine_box


def fuse_features(eta, beta, lambda_fuse):
    """Convex combination lambda*eta + (1-lambda)*beta; the endpoints
    return the inputs bit-exactly."""
    if eta.shape != beta.shape:
        raise ValueError("eta/beta shape mismatch")
    if not 0.0 <= lambda_fuse <= 1.0:
        raise ValueError("lambda_fuse must lie in [0, 1]")
    if lambda_fuse == 0.0:
        return beta
    if lambda_fuse == 1.0:
        return eta
    return lambda_fuse * eta + (1.0 - lambda_fuse) * beta


@dataclass
class TrackerState:
    predictor_state: object
    eta_pending: torch.Tensor
    filter: torch.Tensor
    memory: SampleMemory
    template_pool: object
    current_box: BoundingBox
    frame_index: int
    rng: np.random.Generator
    confidence_history: list = field(default_factory=list)


def _feature(models, patch):
    x = patch_to_tensor(patch)
    with torch.no_grad():
        return models.backbone(x)[0]


def _label_for(patch_center_xy, geometry, sigma, shape):
    cx = geometry.patch_to_cell(patch_center_xy[0])
    cy = geometry.patch_to_cell(patch_center_xy[1])
    return gaussian_label((cx, cy), sigma, shape)


def _augmented_patches(frame, init_box, config, rng):
    """The 15 initialization samples: identity, 4 translations, 2 scales,
    1 horizontal flip, 2 rotations, 2 blurs, 3 combined jitters."""
    patch_size = config["data.patch_size"]
    context = config["data.context_factor"]

    def crop(ref):
        return crop_search_region(frame, ref, None, rng, patch_size=patch_size,
                                  context_factor=context, gt_box=init_box)

    identity = crop(init_box)
    patches = [identity]

    dx, dy = 0.1 * init_box.w, 0.1 * init_box.h
    for sx, sy in ((dx, 0), (-dx, 0), (0, dy), (0, -dy)):
        patches.append(crop(BoundingBox(init_box.x + sx, init_box.y + sy,
                                        init_box.w, init_box.h)))
    for s in (0.95, 1.05):
        cx, cy = init_box.center
        patches.append(crop(BoundingBox(cx - init_box.w * s / 2,
                                        cy - init_box.h * s / 2,
                                        init_box.w * s, init_box.h * s)))

    # horizontal flip of the identity patch
    box = identity.target_box_in_patch
    flipped = identity.pixels[:, ::-1].copy()
    fbox = BoundingBox(patch_size - box.x - box.w, box.y, box.w, box.h)
    patches.append(type(identity)(flipped, fbox, identity.crop_transform))

    # rotations about the patch center
    for angle in (10.0, -10.0):
        center = ((patch_size - 1) / 2.0, (patch_size - 1) / 2.0)
        m = cv2.getRotationMatrix2D(center, angle, 1.0)
        rot = cv2.warpAffine(identity.pixels, m, (patch_size, patch_size),
                             flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
        bx, by = box.center
        nx = m[0, 0] * bx + m[0, 1] * by + m[0, 2]
        ny = m[1, 0] * bx + m[1, 1] * by + m[1, 2]
        rbox = BoundingBox(nx - box.w / 2, ny - box.h / 2, box.w, box.h)
        patches.append(type(identity)(rot.astype(np.float32), rbox,
                                      identity.crop_transform))

    for sigma in (1.0, 2.0):
        blurred = cv2.GaussianBlur(identity.pixels, (0, 0), sigma)
        patches.append(type(identity)(blurred.astype(np.float32), box,
                                      identity.crop_transform))

    jitter = JitterConfig(scale=0.1, shift=0.1)
    for _ in range(3):
        patches.append(crop_search_region(frame, init_box, jitter, rng,
                                          patch_size=patch_size,
                                          context_factor=context,
                                          gt_box=init_box))
    return patches


def init(models, config, first_frame, init_box, seed=0):
    """Build the tracker state from the annotated first frame."""
    if init_box.w <= 0 or init_box.h <= 0:
        raise ValueError("degenerate init box")
    models.eval()
    rng = np.random.default_rng([seed, 0x7AC4])
    geometry = FeatureMap(torch.zeros(0))
    shape = (models.feat_size, models.feat_size)

    patches = _augmented_patches(first_frame, init_box, config, rng)
    memory = SampleMemory(capacity=config["track.memory_size"],
                          decay=config["track.memory_decay"])
    identity_feature = None
    for patch in patches:
        feat = _feature(models, patch)
        if identity_feature is None:
            identity_feature = feat
        label = _label_for(patch.target_box_in_patch.center, geometry,
                           models.sigma, shape)
        memory.insert(feat, label)

    f0 = torch.zeros(models.channels, models.filter_size, models.filter_size)
    filt = learn_filter(memory, f0, config["track.init_filter_iters"],
                        config["track.filter_reg"], sigma=models.sigma)

    template_pool = pool_region(identity_feature,
                                patches[0].target_box_in_patch, geometry,
                                k=models.pool_size)
    predictor_state = models.predictor.init_state(identity_feature)
    with torch.no_grad():
        predictor_state, eta_pending = models.predictor.step(
            predictor_state, identity_feature)

    return TrackerState(predictor_state=predictor_state,
                        eta_pending=eta_pending, filter=filt, memory=memory,
                        template_pool=template_pool, current_box=init_box,
                        frame_index=0, rng=rng)


def step(models, config, state, frame):
    """Track one frame; returns (state, box_in_frame_coords, confidence)."""
    models.eval()
    geometry = FeatureMap(torch.zeros(0))
    shape = (models.feat_size, models.feat_size)
    state.frame_index += 1

    patch = crop_search_region(frame, state.current_box, None, state.rng,
                               patch_size=config["data.patch_size"],
                               context_factor=config["data.context_factor"])
    beta = _feature(models, patch)
    if not torch.isfinite(beta).all():
        state.confidence_history.append(0.0)
        return state, state.current_box, 0.0

    lam = config["track.lambda_fuse"] if config["track.use_predictor"] else 0.0
    x_t = fuse_features(state.eta_pending, beta, lam)

    response = correlate(x_t, state.filter)
    (px, py), conf = localize(response, geometry)

    # size refinement from the localized center with the previous size
    scale = patch.crop_transform[0]
    pw, ph = state.current_box.w / scale, state.current_box.h / scale
    start = BoundingBox(px - pw / 2, py - ph / 2, pw, ph)
    best = _refine_size(models, config, state, x_t, geometry, start)
    new_box = patch_to_frame_box(best, patch.crop_transform)
    state.current_box = new_box
    state.confidence_history.append(conf)

    # online model update
    tau = config["track.update_threshold"]
    if conf > tau:
        label = _label_for((px, py), geometry, models.sigma, shape)
        state.memory.insert(x_t, label)
    if len(state.memory) and (conf > tau or
                              state.frame_index % config["track.update_interval"] == 0):
        state.filter = learn_filter(state.memory, state.filter,
                                    config["track.update_filter_iters"],
                                    config["track.filter_reg"],
                                    sigma=models.sigma)

    # forecast the next frame from the real observation
    with torch.no_grad():
        state.predictor_state, state.eta_pending = models.predictor.step(
            state.predictor_state, beta)
    return state, new_box, conf


def _refine_size(models, config, state, x_t, geometry, start):
    """Refine several jittered starts by gradient ascent on predicted IoU
    and average the boxes of the top-scoring refinements."""
    n_cand = config["track.refine_candidates"]
    n_steps = config["track.refine_steps"]
    topk = config["track.refine_topk"]

    starts = [start]
    for _ in range(n_cand - 1):
        jw = start.w * math.exp(state.rng.normal(0.0, 0.08))
        jh = start.h * math.exp(state.rng.normal(0.0, 0.08))
        jx = start.x + state.rng.normal(0.0, 0.05) * start.w
        jy = start.y + state.rng.normal(0.0, 0.05) * start.h
        starts.append(BoundingBox(jx, jy, max(jw, 4.0), max(jh, 4.0)))

    refined, scores = [], []
    for s in starts:
        box = refine_box(models.iou_head, state.template_pool, x_t, geometry,
                         s, n_steps, k=models.pool_size)
        with torch.no_grad():
            score = float(predict_iou(
                models.iou_head, state.template_pool,
                pool_region(x_t, box, geometry, k=models.pool_size)))
        refined.append(box)
        scores.append(score)

    order = np.argsort(scores)[::-1][:topk]
    arr = np.mean([refined[i].as_array() for i in order], axis=0)
    # keep the localized center; refinement controls the size
    cx, cy = start.center
    w, h = max(arr[2], 4.0), max(arr[3], 4.0)
    return BoundingBox(cx - w / 2, cy - h / 2, w, h)


def track_sequence(models, config, sequence, seed=0):
    """Run init + step over a Sequence; the first output echoes the
    ground-truth init box with confidence 1."""
    if len(sequence) == 0:
        raise ValueError("empty sequence")
    state = init(models, config, sequence.frames[0], sequence.boxes[0], seed)
    outputs = [(sequence.boxes[0], 1.0)]
    for frame in sequence.frames[1:]:
        state, box, conf = step(models, config, state, frame)
        outputs.append((box, conf))
    return outputs


def save_tracking_csv(outputs, path):
    with open(path, "w") as fh:
        fh.write("frame_index,x,y,w,h,confidence\n")
        for i, (box, conf) in enumerate(outputs):
            fh.write("%d,%.3f,%.3f,%.3f,%.3f,%.6f\n"
                     % (i, box.x, box.y, box.w, box.h, conf))


def load_tracking_csv(path):
    outputs = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            parts = line.strip().split(",")
            outputs.append((BoundingBox(*(float(v) for v in parts[1:5])),
                            float(parts[5])))
    return outputs
