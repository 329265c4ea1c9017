"""Fully convolutional feature extractor.

Four 3x3 conv layers (strides 2, 2, 2, 1), each followed by batch
normalization and ReLU, mapping an SxSx3 patch to a C x S/8 x S/8 feature
map. Trained from He-initialized random weights.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

TOTAL_STRIDE = 8


@dataclass
class FeatureMap:
    """Dense CxHxW embedding plus the geometry mapping cells to continuous
    patch coordinates: patch = stride * cell + offset (cell k covers patch
    span [stride*k, stride*(k+1)), centered at stride*k + stride/2)."""
    values: torch.Tensor
    stride: float = float(TOTAL_STRIDE)
    offset: float = TOTAL_STRIDE / 2.0

    @property
    def shape(self):
        return tuple(self.values.shape)

    def cell_to_patch(self, cell):
        return self.stride * cell + self.offset

    def patch_to_cell(self, px):
        return (px - self.offset) / self.stride


class Backbone(nn.Module):

    def __init__(self, channels=64):
        super().__init__()
        widths = [3, channels // 2, channels, channels, channels]
        strides = [2, 2, 2, 1]
        layers = []
        for i, stride in enumerate(strides):
            layers += [
                # bias omitted: the following BatchNorm cancels any shift
                nn.Conv2d(widths[i], widths[i + 1], 3, stride=stride,
                          padding=1, bias=False),
                nn.BatchNorm2d(widths[i + 1]),
                nn.ReLU(inplace=True),
            ]
        self.net = nn.Sequential(*layers)
        self.channels = channels
        self._init_weights()

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")

    def forward(self, x):
        if x.shape[-1] % TOTAL_STRIDE or x.shape[-2] % TOTAL_STRIDE:
            raise ValueError("patch size %s not divisible by stride %d"
                             % (tuple(x.shape[-2:]), TOTAL_STRIDE))
        return self.net(x)


def patch_to_tensor(patch, device=None, dtype=torch.float32):
    """SamplePatch (HxWx3 numpy) -> 1x3xHxW tensor."""
    arr = np.ascontiguousarray(patch.pixels.transpose(2, 0, 1))
    return torch.as_tensor(arr, dtype=dtype, device=device).unsqueeze(0)


def extract_features(backbone, patch):
    """Run a single SamplePatch through the backbone (eval-mode statistics
    are the caller's responsibility via backbone.train()/.eval())."""
    x = patch_to_tensor(patch, dtype=next(backbone.parameters()).dtype)
    with torch.no_grad():
        out = backbone(x)[0]
    return FeatureMap(out)
