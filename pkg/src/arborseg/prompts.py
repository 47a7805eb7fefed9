"""Point-prompt encoder: soma coordinates to token embeddings.

A point is normalized to [0,1)^3, lifted through random Fourier features
(a frozen 3 x d Gaussian matrix), and offset by a learned base vector. The
Fourier part doubles as the prompt's positional embedding inside the
cross-attention skips; per-level linear maps match the pyramid widths.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .modules import Linear, Module
from .tensor import Tensor


class PromptEncoder(Module):
    def __init__(self, embed_dim: int, rng: np.random.Generator, fourier_dim: int = 64):
        super().__init__()
        self.fourier_dim = fourier_dim
        # frozen random features: registered as a buffer, not a parameter,
        # so no gradient ever reaches it
        self.register_buffer("phi", rng.standard_normal((3, fourier_dim)).astype(np.float32))
        self.w_point = Tensor(np.zeros(2 * fourier_dim, np.float32), requires_grad=True)
        for level in range(4):
            setattr(self, f"proj{level}",
                    Linear(2 * fourier_dim, embed_dim << level, rng))

    def normalize_points(self, points, volume_dims) -> np.ndarray:
        """Voxel triples (x, y, z) -> [0,1)^3 rows, dividing by (W, H, D)."""
        pts = np.atleast_2d(np.asarray(points, np.float64))
        dims = np.asarray(volume_dims, np.float64)
        if pts.shape[1] != 3:
            raise ValueError(f"expected (N, 3) points, got {pts.shape}")
        if (pts < 0).any() or (pts >= dims).any():
            bad = pts[((pts < 0) | (pts >= dims)).any(axis=1)][0]
            raise ValueError(f"point {tuple(bad)} outside volume dims {tuple(dims)}")
        return (pts / dims).astype(np.float32)

    def fourier_pe(self, normalized: np.ndarray) -> np.ndarray:
        """[sin(2*pi*p@phi), cos(2*pi*p@phi)] rows of width 2d (no gradient)."""
        angles = 2.0 * np.pi * (normalized.astype(np.float64) @ self.phi.astype(np.float64))
        return np.concatenate([np.sin(angles), np.cos(angles)], axis=1).astype(np.float32)

    def encode(self, points, volume_dims) -> tuple[Tensor, np.ndarray]:
        """Returns (embeddings (N, 2d) with gradient into w_point, pe (N, 2d))."""
        pe = self.fourier_pe(self.normalize_points(points, volume_dims))
        emb = T.reshape(self.w_point, (1, 2 * self.fourier_dim)) + Tensor(pe)
        return emb, pe

    def project(self, rows: Tensor, level: int) -> Tensor:
        """(N, 2d) -> (N, C_level); shared map for embeddings and their PE."""
        if not 0 <= level <= 3:
            raise ValueError(f"pyramid level {level} out of range 0..3")
        return getattr(self, f"proj{level}")(rows)
