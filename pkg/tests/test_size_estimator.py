import numpy as np
import pytest
import torch

from conftest import assert_grads_match
from haft.backbone import FeatureMap
from haft.data import BoundingBox
from haft.evaluator import iou
from haft.size_estimator import (IouHead, monte_carlo_iou, pool_region,
                                 predict_iou, refine_box, sample_candidates,
                                 size_loss)


def _geom(h=8, w=8):
    return FeatureMap(torch.zeros(1, h, w), stride=8.0, offset=4.0)


# --- region pooling --------------------------------------------------------

def test_pool_constant_map_interior():
    fm = torch.full((2, 8, 8), 3.25)
    out = pool_region(fm, BoundingBox(10, 10, 40, 40), _geom())
    assert out.valid
    assert torch.allclose(out.values, torch.full((2, 3, 3), 3.25), atol=1e-6)


def test_pool_center_sample_hits_cell_center():
    fm = torch.zeros(1, 8, 8)
    fm[0, 2, 3] = 7.0  # cell (row 2, col 3) centered at patch px (28, 20)
    out = pool_region(fm, BoundingBox(28 - 3, 20 - 3, 6, 6), _geom())
    assert float(out.values[0, 1, 1]) == pytest.approx(7.0, abs=1e-5)


def test_pool_linear_in_features(rng):
    a = torch.tensor(rng.standard_normal((2, 8, 8)), dtype=torch.float32)
    b = torch.tensor(rng.standard_normal((2, 8, 8)), dtype=torch.float32)
    box = BoundingBox(9.0, 14.0, 31.0, 27.0)
    pa = pool_region(a, box, _geom()).values
    pb = pool_region(b, box, _geom()).values
    pab = pool_region(a + 2.0 * b, box, _geom()).values
    assert torch.allclose(pab, pa + 2.0 * pb, atol=1e-5)


def test_pool_outside_extent_is_zero_invalid():
    fm = torch.ones(1, 8, 8)
    out = pool_region(fm, BoundingBox(500.0, 500.0, 20.0, 20.0), _geom())
    assert not out.valid
    assert torch.equal(out.values, torch.zeros(1, 3, 3))


def test_pool_rejects_degenerate_box():
    with pytest.raises(ValueError):
        pool_region(torch.ones(1, 8, 8), BoundingBox(1, 1, 0, 5), _geom())


def test_pool_gradient_wrt_box(rng):
    fm = torch.tensor(rng.standard_normal((2, 8, 8)), dtype=torch.float64)
    geom = _geom()
    # fractional box keeps the sample points away from bilinear kinks
    box = torch.tensor([10.3, 12.7, 30.0, 26.0], dtype=torch.float64)

    def loss():
        return (pool_region(fm, box, geom).values ** 2).sum()

    assert_grads_match(loss, [box], rtol=1e-3, eps=1e-5)


def test_pool_gradient_wrt_features(rng):
    fm = torch.tensor(rng.standard_normal((2, 8, 8)), dtype=torch.float64)
    geom = _geom()
    box = torch.tensor([10.3, 12.7, 30.0, 26.0], dtype=torch.float64)

    def loss():
        return (pool_region(fm, box, geom).values ** 2).sum()

    assert_grads_match(loss, [fm], rtol=1e-3, eps=1e-5)


# --- IoU head ----------------------------------------------------------

def test_head_affine_in_candidate(rng):
    torch.manual_seed(0)
    head = IouHead(channels=2, k=3).eval()
    t = torch.tensor(rng.standard_normal((2, 3, 3)), dtype=torch.float32)
    a = torch.tensor(rng.standard_normal((2, 3, 3)), dtype=torch.float32)
    b = torch.tensor(rng.standard_normal((2, 3, 3)), dtype=torch.float32)
    with torch.no_grad():
        f0 = float(predict_iou(head, t, torch.zeros_like(a)))
        fa = float(predict_iou(head, t, a))
        fb = float(predict_iou(head, t, b))
        fab = float(predict_iou(head, t, a + b))
        f3a = float(predict_iou(head, t, 3.0 * a))
    assert fab + f0 == pytest.approx(fa + fb, abs=1e-5)
    assert f3a - f0 == pytest.approx(3.0 * (fa - f0), abs=1e-4)


def test_head_gradient_matches_central_differences(rng):
    for seed in range(3):
        torch.manual_seed(seed)
        head = IouHead(channels=2, k=3).double()
        t = torch.tensor(rng.standard_normal((2, 3, 3)), dtype=torch.float64)
        c = torch.tensor(rng.standard_normal((2, 3, 3)), dtype=torch.float64)
        params = list(head.parameters())

        def loss():
            return predict_iou(head, t, c) ** 2

        assert_grads_match(loss, params, rtol=1e-3, eps=1e-5)


# --- candidate sampling / training loss ------------------------------------

def test_sample_candidates_respect_floor():
    gt = BoundingBox(20.0, 24.0, 16.0, 12.0)
    cands = sample_candidates(gt, 40, np.random.default_rng(0))
    assert len(cands) == 40
    for c in cands:
        assert iou(c, gt) >= 0.1


def test_sample_candidates_deterministic():
    gt = BoundingBox(20.0, 24.0, 16.0, 12.0)
    a = sample_candidates(gt, 10, np.random.default_rng(7))
    b = sample_candidates(gt, 10, np.random.default_rng(7))
    assert [tuple(c.as_array()) for c in a] == [tuple(c.as_array()) for c in b]


def test_sample_candidates_count_validation():
    with pytest.raises(ValueError):
        sample_candidates(BoundingBox(0, 0, 10, 10), 0, np.random.default_rng(0))


def test_size_loss_nonnegative_and_differentiable(rng):
    torch.manual_seed(1)
    head = IouHead(channels=2, k=3)
    fm = torch.tensor(rng.standard_normal((2, 8, 8)), dtype=torch.float32)
    geom = _geom()
    gt = BoundingBox(20.0, 20.0, 20.0, 18.0)
    tpool = pool_region(fm, gt, geom)
    loss = size_loss(head, tpool, fm, geom, gt, 8, np.random.default_rng(0))
    assert float(loss.detach()) >= 0.0
    grads = torch.autograd.grad(loss, list(head.parameters()))
    assert all(torch.isfinite(g).all() for g in grads)


# --- refinement --------------------------------------------------------

def test_refine_box_scores_non_decreasing(rng):
    torch.manual_seed(2)
    head = IouHead(channels=4, k=3).eval()
    fm = torch.tensor(rng.standard_normal((4, 8, 8)), dtype=torch.float32)
    geom = _geom()
    tpool = pool_region(fm, BoundingBox(22.0, 22.0, 20.0, 20.0), geom)
    box0 = BoundingBox(18.0, 25.0, 16.0, 14.0)
    with torch.no_grad():
        before = float(predict_iou(
            head, tpool, pool_region(fm, box0, geom)))
    refined = refine_box(head, tpool, fm, geom, box0, n_steps=5)
    with torch.no_grad():
        after = float(predict_iou(
            head, tpool, pool_region(fm, refined, geom)))
    assert after >= before - 1e-6


def test_refine_box_stationary_under_constant_head(rng):
    head = IouHead(channels=2, k=3)
    with torch.no_grad():
        head.score.weight.zero_()
        head.score.bias.zero_()
    fm = torch.tensor(rng.standard_normal((2, 8, 8)), dtype=torch.float32)
    geom = _geom()
    tpool = pool_region(fm, BoundingBox(20.0, 20.0, 20.0, 20.0), geom)
    box0 = BoundingBox(18.0, 25.0, 16.0, 14.0)
    refined = refine_box(head, tpool, fm, geom, box0, n_steps=4)
    assert tuple(refined.as_array()) == pytest.approx(tuple(box0.as_array()), abs=1e-6)


def test_refine_box_min_size_clamp(rng):
    torch.manual_seed(3)
    head = IouHead(channels=2, k=3)
    fm = torch.tensor(rng.standard_normal((2, 8, 8)), dtype=torch.float32)
    geom = _geom()
    tpool = pool_region(fm, BoundingBox(20.0, 20.0, 20.0, 20.0), geom)
    refined = refine_box(head, tpool, fm, geom,
                         BoundingBox(30.0, 30.0, 5.0, 5.0), n_steps=10)
    assert refined.w >= 4.0 and refined.h >= 4.0


def test_refine_box_step_validation(rng):
    head = IouHead(channels=2, k=3)
    fm = torch.zeros(2, 8, 8)
    tpool = pool_region(torch.ones(2, 8, 8), BoundingBox(20, 20, 20, 20), _geom())
    with pytest.raises(ValueError):
        refine_box(head, tpool, fm, _geom(), BoundingBox(10, 10, 10, 10), 0)


# --- Monte-Carlo oracle for the analytic IoU ----------------------------

def test_iou_matches_monte_carlo():
    pairs = [
        (BoundingBox(0, 0, 10, 10), BoundingBox(5, 5, 10, 10)),
        (BoundingBox(2, 3, 8, 6), BoundingBox(4, 4, 5, 9)),
        (BoundingBox(0, 0, 4, 4), BoundingBox(10, 10, 4, 4)),
        (BoundingBox(1, 1, 6, 6), BoundingBox(1, 1, 6, 6)),
    ]
    rng = np.random.default_rng(11)
    for a, b in pairs:
        assert iou(a, b) == pytest.approx(monte_carlo_iou(a, b, rng=rng), abs=0.01)
