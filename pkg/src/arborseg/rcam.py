"""Skip connections: identity pass-through or prompt-conditioned refinement.

The refinement block runs a fixed four-step chain between prompt tokens P and
image tokens I (positional embeddings P_pe / I_pe added to queries and keys
only, never to values):

    1. prompt self-attention:   P'   = P   + LN(Attn(P + P_pe, P + P_pe, P))
    2. prompts query the image: P''  = P'  + LN(Attn(P' + P_pe, I + I_pe, I))
    3. prompt MLP:              P''' = P'' + LN(MLP(P''))
    4. the image queries the
       refined prompts:         I'   = I   + LN(Attn(I + I_pe, P''' + P_pe, P'''))

and returns I'. Normalization sits on each sub-block's output, inside the
residual, so zeroed attention/MLP output projections make every step an exact
identity (LN maps the zero vector to its zero-initialized bias).
"""

from __future__ import annotations

import numpy as np

from .modules import LayerNorm, Mlp, Module, MultiHeadAttention
from .tensor import Tensor


def identity_skip(level_features: Tensor) -> Tensor:
    return level_features


class RcamBlock(Module):
    def __init__(self, channels: int, heads: int, rng: np.random.Generator,
                 mlp_ratio: int = 2, dropout: float = 0.0,
                 drop_rng: np.random.Generator | None = None):
        super().__init__()
        self.self_attn = MultiHeadAttention(channels, heads, rng, dropout, drop_rng)
        self.ln1 = LayerNorm(channels)
        self.prompt_to_image = MultiHeadAttention(channels, heads, rng, dropout, drop_rng)
        self.ln2 = LayerNorm(channels)
        self.mlp = Mlp(channels, mlp_ratio * channels, rng, dropout, drop_rng)
        self.ln3 = LayerNorm(channels)
        self.image_to_prompt = MultiHeadAttention(channels, heads, rng, dropout, drop_rng)
        self.ln4 = LayerNorm(channels)

    def forward(self, image_tokens: Tensor, prompt_tokens: Tensor,
                image_pe: Tensor, prompt_pe: Tensor) -> Tensor:
        if image_tokens.shape[-1] != prompt_tokens.shape[-1]:
            raise ValueError(
                f"channel mismatch: image {image_tokens.shape} vs prompt "
                f"{prompt_tokens.shape}")

        p, i = prompt_tokens, image_tokens
        q = p + prompt_pe
        p = p + self.ln1(self.self_attn(q, q, p))
        p = p + self.ln2(self.prompt_to_image(p + prompt_pe, i + image_pe, i))
        p = p + self.ln3(self.mlp(p))
        return i + self.ln4(self.image_to_prompt(i + image_pe, p + prompt_pe, p))
