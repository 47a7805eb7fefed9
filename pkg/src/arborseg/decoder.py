"""Convolutional decoder: pyramid features back to a probability volume.

Each upsampling stage doubles every spatial axis with a stride-2 transposed
convolution while cutting channels to a quarter, concatenates the matching
skip features, and fuses them with a residual block back to the skip width:

    8E @ G/8 -> 2E @ G/4 ++ 4E -> 4E -> E @ G/2 ++ 2E -> 2E
             -> E/2 @ G ++ E -> E -> head -> 1 @ full resolution

The head inverts the patch embedding with a patch-shaped transposed
convolution (E -> E/2), refines with two 3x3x3 convolutions, and applies a
sigmoid. Its last bias starts at -2 so the initial foreground probability is
low, which keeps the focal/dice losses away from their saturated region on
sparse targets.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .encoder import tokens_to_volume
from .modules import BatchNorm3d, Conv3d, ConvTranspose3d, Dropout, Module
from .tensor import Tensor


class ResidualBlock(Module):
    """Two conv -> batchnorm -> GeLU -> dropout units plus a projection shortcut."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator,
                 dropout: float = 0.1, drop_rng: np.random.Generator | None = None):
        super().__init__()
        self.conv1 = Conv3d(cin, cout, 3, rng, padding=(1, 1, 1))
        self.bn1 = BatchNorm3d(cout)
        self.conv2 = Conv3d(cout, cout, 3, rng, padding=(1, 1, 1))
        self.bn2 = BatchNorm3d(cout)
        self.drop = Dropout(dropout, drop_rng) if dropout > 0 else None
        self.shortcut = Conv3d(cin, cout, 1, rng) if cin != cout else None

    def forward(self, x: Tensor) -> Tensor:
        h = T.gelu(self.bn1(self.conv1(x)))
        if self.drop is not None:
            h = self.drop(h)
        h = T.gelu(self.bn2(self.conv2(h)))
        if self.drop is not None:
            h = self.drop(h)
        skip = x if self.shortcut is None else self.shortcut(x)
        return h + skip


class SegmentationHead(Module):
    def __init__(self, embed_dim: int, patch: tuple[int, int, int],
                 rng: np.random.Generator):
        super().__init__()
        pw, ph, pd = patch
        half = embed_dim // 2
        self.up = ConvTranspose3d(embed_dim, half, (pd, ph, pw), rng,
                                  stride=(pd, ph, pw))
        self.conv1 = Conv3d(half, half, 3, rng, padding=(1, 1, 1))
        self.conv2 = Conv3d(half, 1, 3, rng, padding=(1, 1, 1))
        self.conv2.bias.data[:] = -2.0

    def forward(self, x: Tensor) -> Tensor:
        x = T.gelu(self.up(x))
        x = T.gelu(self.conv1(x))
        return T.sigmoid(self.conv2(x))


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 drop_rng: np.random.Generator | None = None):
        super().__init__()
        e = cfg.embed_dim
        self.grids = [tuple(v >> k for v in cfg.grid) for k in range(4)]
        self.up1 = ConvTranspose3d(8 * e, 2 * e, 2, rng, stride=(2, 2, 2))
        self.res1 = ResidualBlock(2 * e + 4 * e, 4 * e, rng, cfg.dropout, drop_rng)
        self.up2 = ConvTranspose3d(4 * e, e, 2, rng, stride=(2, 2, 2))
        self.res2 = ResidualBlock(e + 2 * e, 2 * e, rng, cfg.dropout, drop_rng)
        self.up3 = ConvTranspose3d(2 * e, e // 2, 2, rng, stride=(2, 2, 2))
        self.res3 = ResidualBlock(e // 2 + e, e, rng, cfg.dropout, drop_rng)
        self.head = SegmentationHead(e, cfg.patch, rng)

    def forward(self, pyramid: list[Tensor]) -> Tensor:
        """Four token tensors (finest first) -> probability volume (1, D, H, W)."""
        x = tokens_to_volume(pyramid[3], self.grids[3])
        for stage, level in ((1, 2), (2, 1), (3, 0)):
            x = getattr(self, f"up{stage}")(x)
            skip = tokens_to_volume(pyramid[level], self.grids[level])
            x = T.concat([x, skip], axis=0)
            x = getattr(self, f"res{stage}")(x)
        return self.head(x)
