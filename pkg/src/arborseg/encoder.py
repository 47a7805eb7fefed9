"""Hierarchical 3D vision-transformer encoder.

A volume is cut into non-overlapping patches by a strided convolution, tagged
with sinusoidal positional embeddings, and pushed through six pre-norm
transformer blocks. After blocks 1, 2, and 3 a patch-merging step halves every
grid axis and doubles the channel width, so features are tapped at four scales:

    level 0: block 1 output, E channels, grid G
    level 1: block 2 output, 2E channels, grid G/2
    level 2: block 3 output, 4E channels, grid G/4
    level 3: block 6 output, 8E channels, grid G/8

Grid tensors are laid out (G_w, G_h, G_d, C); token tensors are the same data
flattened to (N, C) with the depth axis fastest. Volumes are channel-first
(C, D, H, W).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .modules import Conv3d, Linear, Module, TransformerBlock
from .tensor import Tensor


def sinusoidal_pe_3d(grid: tuple[int, int, int], dim: int) -> np.ndarray:
    """Positional embedding table of shape grid + (dim,), values in [-1, 1].

    Channels are split into three near-equal groups, one per axis; each group
    is a sin/cos frequency ladder over that axis's integer coordinate. When
    dim is odd the final channel is left at zero.
    """
    if dim < 6:
        raise ValueError(f"positional embedding dim {dim} too small, need >= 6")
    pairs = dim // 2
    per_axis = [pairs // 3] * 3
    for i in range(pairs % 3):
        per_axis[i] += 1

    out = np.zeros(tuple(grid) + (dim,), np.float32)
    chan = 0
    for axis, n_pairs in enumerate(per_axis):
        pos = np.arange(grid[axis], dtype=np.float64)
        shape = [1, 1, 1]
        shape[axis] = grid[axis]
        pos = pos.reshape(shape)
        for j in range(n_pairs):
            freq = 1.0 / (10000.0 ** (j / max(n_pairs, 1)))
            out[..., chan] = np.sin(pos * freq)
            out[..., chan + 1] = np.cos(pos * freq)
            chan += 2
    return out


def grid_to_tokens(g: Tensor) -> Tensor:
    gw, gh, gd, c = g.shape
    return T.reshape(g, (gw * gh * gd, c))


def tokens_to_grid(t: Tensor, grid: tuple[int, int, int]) -> Tensor:
    return T.reshape(t, tuple(grid) + (t.shape[-1],))


def tokens_to_volume(t: Tensor, grid: tuple[int, int, int]) -> Tensor:
    """(N, C) tokens on (G_w, G_h, G_d) -> channel-first volume (C, G_d, G_h, G_w)."""
    g = tokens_to_grid(t, grid)
    return T.permute(g, (3, 2, 1, 0))


class PatchEmbed(Module):
    """Strided convolution cutting the volume into patch tokens."""

    def __init__(self, embed_dim: int, patch: tuple[int, int, int],
                 rng: np.random.Generator):
        super().__init__()
        pw, ph, pd = patch
        self.patch = patch
        self.conv = Conv3d(1, embed_dim, (pd, ph, pw), rng, stride=(pd, ph, pw))

    def forward(self, volume: Tensor) -> Tensor:
        """(1, D, H, W) -> grid tensor (G_w, G_h, G_d, E)."""
        for axis, (dim, p) in enumerate(zip(volume.shape[:0:-1], self.patch)):
            if dim % p != 0:
                raise ValueError(
                    f"volume axis {'whd'[axis]} = {dim} not divisible by patch {p}")
        feat = self.conv(volume)                 # (E, G_d, G_h, G_w)
        return T.permute(feat, (3, 2, 1, 0))


class PatchMerge(Module):
    """Concatenate each 2x2x2 token neighborhood (8C) and project to 2C.

    The eight neighbors are ordered by lexicographic (w, h, d) offset; the
    order is arbitrary but must stay fixed for checkpoint compatibility.
    """

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.proj = Linear(8 * channels, 2 * channels, rng)

    def forward(self, g: Tensor) -> Tensor:
        gw, gh, gd, c = g.shape
        if gw % 2 or gh % 2 or gd % 2:
            raise ValueError(f"cannot merge odd grid {(gw, gh, gd)}")
        x = T.reshape(g, (gw // 2, 2, gh // 2, 2, gd // 2, 2, c))
        x = T.permute(x, (0, 2, 4, 1, 3, 5, 6))
        x = T.reshape(x, (gw // 2, gh // 2, gd // 2, 8 * c))
        return self.proj(x)


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 drop_rng: np.random.Generator | None = None):
        super().__init__()
        e = cfg.embed_dim
        self.cfg = cfg
        self.patch_embed = PatchEmbed(e, cfg.patch, rng)
        widths = [e, 2 * e, 4 * e, 8 * e, 8 * e, 8 * e]
        for i, w in enumerate(widths, start=1):
            setattr(self, f"block{i}",
                    TransformerBlock(w, cfg.heads, cfg.mlp_ratio, rng,
                                     cfg.dropout, drop_rng))
        for j, w in enumerate(widths[:3], start=1):
            setattr(self, f"merge{j}", PatchMerge(w, rng))

        g = cfg.grid
        self.grids = [tuple(v >> k for v in g) for k in range(4)]
        self.channels = [e, 2 * e, 4 * e, 8 * e]
        self._pe = [sinusoidal_pe_3d(self.grids[k], self.channels[k])
                    for k in range(4)]

    def level_pe(self, level: int) -> np.ndarray:
        """Flattened positional embedding table (N, C) for a pyramid level."""
        pe = self._pe[level]
        return pe.reshape(-1, pe.shape[-1])

    def forward(self, volume: Tensor) -> list[Tensor]:
        """(1, D, H, W) -> four token tensors (N_k, C_k), finest first."""
        expect = (volume.shape[3], volume.shape[2], volume.shape[1])
        if expect != tuple(self.cfg.input_dims):
            raise ValueError(f"volume dims (W,H,D) = {expect} do not match "
                             f"config input_dims {tuple(self.cfg.input_dims)}")
        g = self.patch_embed(volume)
        g = g + Tensor(self._pe[0])
        t = grid_to_tokens(g)

        pyramid = []
        for i in (1, 2, 3):
            t = getattr(self, f"block{i}")(t)
            pyramid.append(t)                       # tap before merging
            g = tokens_to_grid(t, self.grids[i - 1])
            g = getattr(self, f"merge{i}")(g)
            g = g + Tensor(self._pe[i])
            t = grid_to_tokens(g)

        t = self.block4(t)
        t = self.block5(t)
        t = self.block6(t)
        pyramid.append(t)
        return pyramid
