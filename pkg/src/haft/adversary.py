"""Conditional discriminator and the generator-side training losses.

The discriminator scores (condition, candidate) feature pairs with three
conv layers (BatchNorm + LeakyReLU 0.2), global average pooling, and a
linear head. Generator training uses the non-saturating loss; an L2
reconstruction term compares forecast features against the real ones.
"""

import torch
from torch import nn
import torch.nn.functional as F

LOGIT_CLAMP = 30.0


class Discriminator(nn.Module):

    def __init__(self, channels=64, width=64):
        super().__init__()
        in_ch = 2 * channels  # concat[condition, candidate]
        # conv biases omitted: each conv feeds a BatchNorm
        self.conv = nn.Sequential(
            nn.Conv2d(in_ch, width, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(width),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(width, width, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(width),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(width, width, 3, stride=1, padding=1, bias=False),
            nn.BatchNorm2d(width),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.head = nn.Linear(width, 1)

    def forward(self, condition, candidate):
        if condition.shape != candidate.shape:
            raise ValueError("condition/candidate shape mismatch")
        x = torch.cat([condition, candidate], dim=-3)
        if x.dim() == 3:
            x = x.unsqueeze(0)
        if not torch.isfinite(x).all():
            raise FloatingPointError("non-finite discriminator input")
        feat = self.conv(x).mean(dim=(2, 3))
        return self.head(feat).squeeze(-1)


def _clamped(logits):
    if not torch.is_tensor(logits):
        logits = torch.stack(list(logits))
    return logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)


def loss_discriminator(real_logits, fake_logits):
    """Mean of -log sigmoid(real) - log(1 - sigmoid(fake)). Fake logits are
    detached so no gradient reaches the generator through this loss."""
    real = _clamped(real_logits)
    fake = _clamped(fake_logits).detach()
    return (F.softplus(-real).mean() + F.softplus(fake).mean())


def loss_generator(fake_logits):
    """Non-saturating generator loss: mean of -log sigmoid(fake)."""
    return F.softplus(-_clamped(fake_logits)).mean()


def loss_reconstruction(etas, betas):
    """Mean squared difference between forecast and real features,
    averaged over time steps."""
    if len(etas) != len(betas):
        raise ValueError("eta/beta list length mismatch")
    terms = []
    for eta, beta in zip(etas, betas):
        if eta.shape != beta.shape:
            raise ValueError("eta/beta shape mismatch")
        terms.append(((eta - beta) ** 2).mean())
    return torch.stack(terms).mean()
