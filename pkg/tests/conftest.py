import numpy as np
import pytest
import torch

from haft.config import Config

torch.set_num_threads(1)


def numeric_grad(fn, tensor, eps=1e-3):
    """Central-difference gradient of a scalar function w.r.t. one tensor,
    evaluated in double precision."""
    grad = torch.zeros_like(tensor)
    flat = tensor.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = float(fn())
        flat[i] = orig - eps
        lo = float(fn())
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def assert_grads_match(scalar_fn, tensors, rtol=1e-3, eps=1e-3):
    """Compare autograd gradients against central differences for every
    tensor; relative error is measured in the 2-norm."""
    for t in tensors:
        t.requires_grad_(True)
        if t.grad is not None:
            t.grad = None
    loss = scalar_fn()
    loss.backward()
    for t in tensors:
        analytic = t.grad.detach().clone()
        t.requires_grad_(False)
        with torch.no_grad():
            numeric = numeric_grad(scalar_fn, t.data, eps=eps)
        denom = max(float(numeric.norm()), float(analytic.norm()), 1e-8)
        rel = float((analytic - numeric).norm()) / denom
        assert rel < rtol, "gradient mismatch: rel err %.2e" % rel


@pytest.fixture
def tiny_config():
    """Small geometry for fast unit tests."""
    return Config({
        "data.patch_size": 32,
        "model.channels": 8,
        "synth.image_size": 64,
        "synth.length": 12,
        "synth.min_target": 8,
        "synth.max_target": 12,
        "train.clip_length": 4,
        "train.batch_size": 1,
        "train.epochs": 1,
        "train.iters_per_epoch": 2,
        "train.size_frames": 2,
        "train.size_candidates": 2,
        "train.filter_iters": 2,
    })


@pytest.fixture
def rng():
    return np.random.default_rng(0)
