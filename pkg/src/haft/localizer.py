"""Target center localization.

Gaussian regression labels, filter correlation, online discriminative
filter learning by steepest descent with exact line search (the objective
is quadratic in the filter), and peak picking with sub-cell refinement.

Points are (x, y) pairs; label/response arrays are indexed [row, col].
"""

import numpy as np
import torch
import torch.nn.functional as F


def gaussian_label(center, sigma, shape, dtype=torch.float32):
    """Gaussian regression target peaked at `center` = (cx, cy) in cell
    coordinates, on an h x w grid."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    h, w = shape
    cx, cy = center
    ys = torch.arange(h, dtype=dtype).view(-1, 1)
    xs = torch.arange(w, dtype=dtype).view(1, -1)
    d2 = (ys - cy) ** 2 + (xs - cx) ** 2
    return torch.exp(-d2 / (2.0 * sigma ** 2))


def region_weight(center, sigma, shape, inner=2.0, outer=1.0):
    """Spatial weighting emphasizing the target vicinity: `inner` within
    2*sigma of the center, `outer` elsewhere."""
    h, w = shape
    cx, cy = center
    ys = torch.arange(h, dtype=torch.float32).view(-1, 1)
    xs = torch.arange(w, dtype=torch.float32).view(1, -1)
    d2 = (ys - cy) ** 2 + (xs - cx) ** 2
    return torch.where(d2 <= (2.0 * sigma) ** 2,
                       torch.tensor(inner), torch.tensor(outer))


def correlate(x, f):
    """Same-size cross-correlation of a CxHxW feature map with a Cxkxk
    filter (kernel centered, zero padding). Accepts a leading batch dim."""
    if x.shape[-3] != f.shape[-3]:
        raise ValueError("channel mismatch: %d vs %d" % (x.shape[-3], f.shape[-3]))
    k = f.shape[-1]
    batched = x.dim() == 4
    xb = x if batched else x.unsqueeze(0)
    out = F.conv2d(xb, f.unsqueeze(0), padding=k // 2).squeeze(1)
    return out if batched else out[0]


def localization_residual(response, label, weight):
    if response.shape != label.shape or response.shape != weight.shape:
        raise ValueError("response/label/weight shape mismatch")
    return weight * (response - label)


def localization_loss(responses, labels, weights):
    """Mean over time of the mean squared weighted residual."""
    if len(responses) == 0:
        raise ValueError("empty response list")
    if not (len(responses) == len(labels) == len(weights)):
        raise ValueError("misaligned loss inputs")
    terms = [(localization_residual(r, z, w) ** 2).mean()
             for r, z, w in zip(responses, labels, weights)]
    return torch.stack(terms).mean()


class SampleMemory:
    """Ring buffer of (feature, label, weight) training samples with
    exponential down-weighting of old entries."""

    def __init__(self, capacity=50, decay=0.99):
        self.capacity = capacity
        self.decay = decay
        self._items = []  # list of [feature, label, weight]

    def __len__(self):
        return len(self._items)

    def insert(self, feature, label, weight=1.0):
        for item in self._items:
            item[2] *= self.decay
        self._items.append([feature, label, float(weight)])
        if len(self._items) > self.capacity:
            self._items.pop(0)

    def samples(self):
        """(features, labels, normalized weights) snapshot."""
        if not self._items:
            return [], [], []
        total = sum(item[2] for item in self._items)
        return ([item[0] for item in self._items],
                [item[1] for item in self._items],
                [item[2] / total for item in self._items])


def _objective_terms(features, labels, weights, rweights, f, reg_lambda):
    loss = reg_lambda * (f ** 2).sum()
    for x, z, w, rw in zip(features, labels, weights, rweights):
        res = rw * (correlate(x, f) - z)
        loss = loss + w * (res ** 2).sum()
    return loss


def learn_filter(memory, f0, n_iters, reg_lambda, sigma=1.0):
    """Minimize the regularized weighted least-squares objective over the
    memory by steepest descent with exact line search; the objective is
    quadratic in the filter so each step has a closed-form optimal length
    and the loss is non-increasing."""
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    if reg_lambda < 0:
        raise ValueError("reg_lambda must be non-negative")
    features, labels, weights = memory.samples()
    if not features:
        raise ValueError("empty sample memory")

    rweights = []
    for z in labels:
        # recover peak location to build the emphasis map
        idx = int(np.argmax(z.detach().numpy()))
        cy, cx = divmod(idx, z.shape[1])
        rweights.append(region_weight((cx, cy), sigma, tuple(z.shape)))

    f = f0.detach().clone()
    for it in range(n_iters):
        f_var = f.clone().requires_grad_(True)
        loss = _objective_terms(features, labels, weights, rweights, f_var, reg_lambda)
        grad, = torch.autograd.grad(loss, f_var)
        gg = float((grad ** 2).sum())
        if gg <= 1e-30:
            # Zero gradient at the start with residual loss means the samples
            # cannot inform the filter; after a step it just means we converged.
            if it == 0 and float(loss.detach()) > 1e-12:
                return f0.detach().clone()
            break
        with torch.no_grad():
            # curvature of the quadratic along -grad
            q = reg_lambda * (grad ** 2).sum()
            for x, w, rw in zip(features, weights, rweights):
                q = q + w * ((rw * correlate(x, grad)) ** 2).sum()
            step = gg / (2.0 * float(q) + 1e-30)
            f = f - step * grad
    return f


def localize(response, geometry=None):
    """Peak of the response map refined by separable quadratic interpolation
    of the 3x3 neighborhood. Returns ((x, y) in patch pixels, confidence);
    ties break to the smallest row-major index."""
    r = response.detach().numpy() if torch.is_tensor(response) else np.asarray(response)
    if not np.isfinite(r).all():
        raise ValueError("non-finite response map")
    h, w = r.shape
    idx = int(np.argmax(r))
    cy, cx = divmod(idx, w)
    conf = float(r[cy, cx])

    fx, fy = float(cx), float(cy)
    if 0 < cx < w - 1:
        dx = 0.5 * (r[cy, cx + 1] - r[cy, cx - 1])
        dxx = r[cy, cx + 1] - 2.0 * r[cy, cx] + r[cy, cx - 1]
        if dxx < 0:
            fx += float(np.clip(-dx / dxx, -0.5, 0.5))
    if 0 < cy < h - 1:
        dy = 0.5 * (r[cy + 1, cx] - r[cy - 1, cx])
        dyy = r[cy + 1, cx] - 2.0 * r[cy, cx] + r[cy - 1, cx]
        if dyy < 0:
            fy += float(np.clip(-dy / dyy, -0.5, 0.5))

    if geometry is not None:
        fx = geometry.cell_to_patch(fx)
        fy = geometry.cell_to_patch(fy)
    return (fx, fy), conf
