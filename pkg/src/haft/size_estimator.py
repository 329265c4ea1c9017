"""IoU-prediction head with template modulation, differentiable region
pooling, and gradient-ascent box refinement.

Region pooling samples a KxK grid of bilinear interpolation points at the
box cell centers, so predicted IoU is differentiable in the box
coordinates and gradient ascent can refine the box directly.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import BoundingBox
from .evaluator import iou


@dataclass
class PooledFeature:
    values: torch.Tensor  # C x K x K
    valid: bool = True


def _box_tensor(box, dtype=torch.float32):
    if isinstance(box, BoundingBox):
        return torch.tensor([box.x, box.y, box.w, box.h], dtype=dtype)
    return box


def pool_region(fm_values, box, geometry, k=3):
    """Bilinear KxK pooling of a CxHxW feature map over a box given in
    patch pixels; zero contribution outside the feature extent."""
    box = _box_tensor(box, dtype=fm_values.dtype)
    if float(box[2].detach()) <= 0 or float(box[3].detach()) <= 0:
        raise ValueError("box must have positive size")
    c, h, w = fm_values.shape

    steps = torch.arange(k, dtype=fm_values.dtype) + 0.5
    px = box[0] + steps / k * box[2]          # sample x coords, patch px
    py = box[1] + steps / k * box[3]
    u = (px - geometry.offset) / geometry.stride  # feature cell coords
    v = (py - geometry.offset) / geometry.stride

    gu = u.view(1, -1).expand(k, k)
    gv = v.view(-1, 1).expand(k, k)

    u0 = torch.floor(gu)
    v0 = torch.floor(gv)
    du = gu - u0
    dv = gv - v0

    pooled = torch.zeros(c, k, k, dtype=fm_values.dtype)
    any_inside = False
    for oy, wy in ((0, 1.0 - dv), (1, dv)):
        for ox, wx in ((0, 1.0 - du), (1, du)):
            ui = u0.long() + ox
            vi = v0.long() + oy
            inside = ((ui >= 0) & (ui < w) & (vi >= 0) & (vi < h))
            any_inside = any_inside or bool(inside.any())
            uc = ui.clamp(0, w - 1)
            vc = vi.clamp(0, h - 1)
            vals = fm_values[:, vc.reshape(-1), uc.reshape(-1)].view(c, k, k)
            pooled = pooled + vals * (wx * wy * inside.to(fm_values.dtype))
    return PooledFeature(pooled, valid=any_inside)


class IouHead(nn.Module):
    """Template modulation followed by a linear scoring head on the
    elementwise product with the candidate pooling."""

    def __init__(self, channels=64, k=3):
        super().__init__()
        dim = channels * k * k
        self.modulation = nn.Linear(dim, dim)
        self.score = nn.Linear(dim, 1)
        self.k = k
        nn.init.kaiming_normal_(self.modulation.weight, mode="fan_in",
                                nonlinearity="relu")
        nn.init.zeros_(self.modulation.bias)
        nn.init.normal_(self.score.weight, std=0.01)
        nn.init.zeros_(self.score.bias)

    def forward(self, template_pool, candidate_pool):
        t = template_pool.values if isinstance(template_pool, PooledFeature) else template_pool
        x = candidate_pool.values if isinstance(candidate_pool, PooledFeature) else candidate_pool
        m = self.modulation(t.reshape(-1))
        return self.score(m * x.reshape(-1)).squeeze(-1)


def predict_iou(head, template_pool, candidate_pool):
    return head(template_pool, candidate_pool)


def sample_candidates(gt_box, n_candidates, rng, min_iou=0.1, jitter=0.3):
    """Gaussian-jittered candidate boxes around the ground truth, rejected
    below the IoU floor."""
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    out = []
    attempts = 0
    limit = 100 * n_candidates
    while len(out) < n_candidates:
        if attempts >= limit:
            raise RuntimeError("failed to sample candidates with IoU >= %.2f"
                               % min_iou)
        attempts += 1
        cx, cy = gt_box.center
        cx += rng.normal(0.0, jitter) * gt_box.w
        cy += rng.normal(0.0, jitter) * gt_box.h
        w = gt_box.w * math.exp(rng.normal(0.0, jitter))
        h = gt_box.h * math.exp(rng.normal(0.0, jitter))
        cand = BoundingBox(cx - w / 2.0, cy - h / 2.0, max(w, 1.0), max(h, 1.0))
        if iou(cand, gt_box) >= min_iou:
            out.append(cand)
    return out


def size_loss(head, template_pool, fm_values, geometry, gt_box, n_candidates,
              rng, k=3):
    """MSE between predicted IoU and the analytic IoU of jittered candidate
    boxes; differentiable into the feature map and head parameters."""
    candidates = sample_candidates(gt_box, n_candidates, rng)
    preds, targets = [], []
    for cand in candidates:
        pooled = pool_region(fm_values, cand, geometry, k=k)
        preds.append(head(template_pool, pooled))
        targets.append(iou(cand, gt_box))
    preds = torch.stack(preds)
    targets = torch.tensor(targets, dtype=preds.dtype)
    return ((preds - targets) ** 2).mean()


def refine_box(head, template_pool, fm_values, geometry, box0, n_steps,
               step_size=0.1, min_size=4.0, k=3):
    """Gradient ascent on predicted IoU over (x, y, w, h), with per-
    coordinate steps scaled by the box size and backtracking halving.
    Predicted IoU is non-decreasing over accepted steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")

    def score_of(t):
        return head(template_pool, pool_region(fm_values, t, geometry, k=k))

    box = _box_tensor(box0, dtype=fm_values.dtype)
    with torch.no_grad():
        best = float(score_of(box))

    for _ in range(n_steps):
        t = box.clone().requires_grad_(True)
        score = score_of(t)
        grad, = torch.autograd.grad(score, t)
        if not torch.isfinite(grad).all():
            return box0 if isinstance(box0, BoundingBox) else _as_box(box, min_size)
        scale = torch.stack([box[2], box[3], box[2], box[3]])
        step = step_size
        with torch.no_grad():
            for _ in range(8):
                cand = box + step * grad * scale
                cand[2] = cand[2].clamp(min=min_size)
                cand[3] = cand[3].clamp(min=min_size)
                val = float(score_of(cand))
                if val >= best:
                    box, best = cand, val
                    break
                step *= 0.5
    return _as_box(box, min_size)


def _as_box(t, min_size=4.0):
    x, y, w, h = (float(v) for v in t)
    return BoundingBox(x, y, max(w, min_size), max(h, min_size))


def monte_carlo_iou(a, b, n=200000, rng=None):
    """Point-sampling IoU estimate; test oracle for the analytic formula."""
    rng = rng or np.random.default_rng(0)
    x0 = min(a.x, b.x)
    y0 = min(a.y, b.y)
    x1 = max(a.x + a.w, b.x + b.w)
    y1 = max(a.y + a.h, b.y + b.h)
    xs = rng.uniform(x0, x1, n)
    ys = rng.uniform(y0, y1, n)
    in_a = (xs >= a.x) & (xs < a.x + a.w) & (ys >= a.y) & (ys < a.y + a.h)
    in_b = (xs >= b.x) & (xs < b.x + b.w) & (ys >= b.y) & (ys < b.y + b.h)
    union = (in_a | in_b).sum()
    return float((in_a & in_b).sum() / union) if union else 0.0
