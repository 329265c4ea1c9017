"""Template-conditioned convolutional GRU forecasting next-frame features.

The input at step t is the channel concatenation [template, alpha_t]; the
recurrent update is the standard ConvGRU cell, and a 1x1 output projection
decouples the tanh-bounded hidden state from the emitted feature embedding.
"""

from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class PredictorState:
    hidden: torch.Tensor    # (B?, C, h, w) ConvGRU hidden state
    template: torch.Tensor  # frozen first-frame feature, same shape


class ConvGRUPredictor(nn.Module):

    def __init__(self, channels=64, kernel_size=3):
        super().__init__()
        pad = kernel_size // 2
        in_ch = 2 * channels  # concat[template, alpha_t]
        self.update_gate = nn.Conv2d(in_ch + channels, channels, kernel_size, padding=pad)
        self.reset_gate = nn.Conv2d(in_ch + channels, channels, kernel_size, padding=pad)
        self.candidate = nn.Conv2d(in_ch + channels, channels, kernel_size, padding=pad)
        self.out_proj = nn.Conv2d(channels, channels, 1)
        self.channels = channels
        for m in (self.update_gate, self.reset_gate, self.candidate, self.out_proj):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            nn.init.zeros_(m.bias)

    def init_state(self, template):
        if template.shape[-3] != self.channels:
            raise ValueError("template has %d channels, expected %d"
                             % (template.shape[-3], self.channels))
        return PredictorState(torch.zeros_like(template), template)

    @staticmethod
    def condition_input(state, alpha_t):
        if alpha_t.shape != state.template.shape:
            raise ValueError("feature shape mismatch: %s vs template %s"
                             % (tuple(alpha_t.shape), tuple(state.template.shape)))
        return torch.cat([state.template, alpha_t], dim=-3)

    def step(self, state, alpha_t):
        """One recurrent update; returns (new_state, eta_next)."""
        if not torch.isfinite(state.hidden).all():
            raise FloatingPointError("non-finite predictor hidden state")
        x = self.condition_input(state, alpha_t)
        batched = x.dim() == 4
        if not batched:
            x = x.unsqueeze(0)
        hidden = state.hidden if batched else state.hidden.unsqueeze(0)

        xh = torch.cat([x, hidden], dim=1)
        z = torch.sigmoid(self.update_gate(xh))
        r = torch.sigmoid(self.reset_gate(xh))
        cand = torch.tanh(self.candidate(torch.cat([x, r * hidden], dim=1)))
        new_hidden = (1.0 - z) * hidden + z * cand
        eta = self.out_proj(new_hidden)

        if not batched:
            new_hidden, eta = new_hidden[0], eta[0]
        return PredictorState(new_hidden, state.template), eta

    def rollout(self, template, alphas):
        """Run the cell over a list/stack of observed features; output k is
        the forecast for step k+1 and depends only on alphas[0..k]."""
        if len(alphas) == 0:
            raise ValueError("rollout needs at least one observed feature")
        state = self.init_state(template)
        etas = []
        for alpha in alphas:
            state, eta = self.step(state, alpha)
            etas.append(eta)
        return etas
