"""End-to-end segmentation models and parameter accounting.

The soma detector is encoder -> identity skips -> decoder. The branch
segmenter shares that trunk but routes every pyramid level through a
prompt-conditioned cross-attention block before decoding, so the same image
yields different masks for different target-cell prompts.
"""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .decoder import Decoder
from .encoder import Encoder
from .modules import Module
from .prompts import PromptEncoder
from .rcam import RcamBlock, identity_skip
from .tensor import Tensor


class SomaModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        drop_rng = np.random.default_rng((seed + 1) * 7919)
        self.encoder = Encoder(cfg, rng, drop_rng)
        self.decoder = Decoder(cfg, rng, drop_rng)

    def forward(self, volume: Tensor) -> Tensor:
        pyramid = [identity_skip(level) for level in self.encoder(volume)]
        return self.decoder(pyramid)


class BranchModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        drop_rng = np.random.default_rng((seed + 1) * 7919)
        self.encoder = Encoder(cfg, rng, drop_rng)
        self.decoder = Decoder(cfg, rng, drop_rng)
        self.prompt = PromptEncoder(cfg.embed_dim, rng)
        for level in range(4):
            setattr(self, f"rcam{level}",
                    RcamBlock(cfg.embed_dim << level, cfg.heads, rng,
                              dropout=cfg.dropout, drop_rng=drop_rng))

    def forward(self, volume: Tensor, points) -> Tensor:
        """points: (N, 3) voxel coordinates of target somas, (x, y, z)."""
        pyramid = self.encoder(volume)
        emb, pe = self.prompt.encode(points, self.cfg.input_dims)
        pe_t = Tensor(pe)
        refined = []
        for level in range(4):
            p = self.prompt.project(emb, level)
            p_pe = self.prompt.project(pe_t, level)
            i_pe = Tensor(self.encoder.level_pe(level))
            block = getattr(self, f"rcam{level}")
            refined.append(block(pyramid[level], p, i_pe, p_pe))
        return self.decoder(refined)


def count_parameters(model: Module) -> dict[str, int]:
    """Parameter totals grouped by checkpoint-name prefix."""
    groups = {"encoder": 0, "skips": 0, "decoder": 0, "prompt": 0}
    total = 0
    for name, p in model.named_parameters().items():
        n = p.size
        total += n
        if name.startswith("encoder."):
            groups["encoder"] += n
        elif name.startswith("rcam"):
            groups["skips"] += n
        elif name.startswith("decoder."):
            groups["decoder"] += n
        elif name.startswith("prompt."):
            groups["prompt"] += n
        else:
            raise ValueError(f"parameter {name} outside known groups")
    groups["total"] = total
    return groups
