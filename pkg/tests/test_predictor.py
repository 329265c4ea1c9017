import pytest
import torch

from conftest import assert_grads_match
from haft.predictor import ConvGRUPredictor


def _random_features(n, c=4, hw=4, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(c, hw, hw, generator=g, dtype=dtype) for _ in range(n)]


def test_init_state_zero_hidden():
    net = ConvGRUPredictor(channels=4)
    template = _random_features(1)[0]
    state = net.init_state(template)
    assert torch.equal(state.hidden, torch.zeros_like(template))
    assert state.hidden.shape == template.shape
    assert torch.equal(net.init_state(template).hidden, state.hidden)


def test_init_state_shape_mismatch():
    net = ConvGRUPredictor(channels=4)
    with pytest.raises(ValueError):
        net.init_state(torch.zeros(3, 4, 4))


def test_condition_input_ordering():
    net = ConvGRUPredictor(channels=4)
    template, alpha = _random_features(2)
    state = net.init_state(template)
    cat = net.condition_input(state, alpha)
    assert cat.shape[0] == 8
    assert torch.equal(cat[:4], template)
    assert torch.equal(cat[4:], alpha)
    with pytest.raises(ValueError):
        net.condition_input(state, torch.zeros(4, 5, 5))


def test_hidden_bounded_from_zero_init():
    torch.manual_seed(1)
    net = ConvGRUPredictor(channels=4)
    feats = _random_features(10, seed=2)
    state = net.init_state(feats[0])
    with torch.no_grad():
        for f in feats:
            state, _ = net.step(state, f)
            assert float(state.hidden.abs().max()) < 1.0


def test_step_deterministic():
    torch.manual_seed(0)
    net = ConvGRUPredictor(channels=4)
    template, alpha = _random_features(2)
    s0 = net.init_state(template)
    with torch.no_grad():
        (_, e1) = net.step(s0, alpha)
        (_, e2) = net.step(net.init_state(template), alpha)
    assert torch.equal(e1, e2)


def test_rollout_matches_repeated_steps():
    torch.manual_seed(3)
    net = ConvGRUPredictor(channels=4)
    feats = _random_features(5, seed=4)
    with torch.no_grad():
        etas = net.rollout(feats[0], feats)
        state = net.init_state(feats[0])
        for k, f in enumerate(feats):
            state, eta = net.step(state, f)
            assert torch.equal(eta, etas[k])


def test_rollout_causality():
    torch.manual_seed(5)
    net = ConvGRUPredictor(channels=4)
    feats = _random_features(5, seed=6)
    with torch.no_grad():
        base = net.rollout(feats[0], feats)
        perturbed = list(feats)
        perturbed[3] = perturbed[3] + 1.0
        out = net.rollout(feats[0], perturbed)
    for k in range(3):
        assert torch.equal(base[k], out[k])
    assert not torch.equal(base[3], out[3])


def test_rollout_empty_rejected():
    net = ConvGRUPredictor(channels=4)
    with pytest.raises(ValueError):
        net.rollout(torch.zeros(4, 4, 4), [])


def test_non_finite_state_rejected():
    net = ConvGRUPredictor(channels=4)
    template = torch.zeros(4, 4, 4)
    state = net.init_state(template)
    state.hidden[0, 0, 0] = float("nan")
    with pytest.raises(FloatingPointError):
        net.step(state, template)


def test_bptt_gradient_matches_central_differences():
    for seed in range(3):
        torch.manual_seed(seed)
        net = ConvGRUPredictor(channels=2).double()
        feats = _random_features(5, c=2, hw=3, seed=seed + 10, dtype=torch.float64)
        params = list(net.parameters())

        def loss():
            etas = net.rollout(feats[0], feats)
            return torch.stack([(e ** 2).sum() for e in etas]).sum()

        assert_grads_match(loss, params, rtol=1e-3)
