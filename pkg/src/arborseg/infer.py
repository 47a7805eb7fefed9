"""Inference: tiled soma detection and prompt-driven per-cell segmentation."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .preprocess import histogram_equalize, tile_offsets
from .tensor import Tensor, no_grad

_CONN26 = np.ones((3, 3, 3), bool)


def sliding_window_infer(model, volume: np.ndarray, tile_dims=None,
                         overlap: float = 0.5, equalize: bool = True) -> np.ndarray:
    """Tile the volume, run the model per tile, mean-blend overlaps.

    `volume` is (D, H, W); `tile_dims` is (W, H, D) and defaults to the
    model's configured input dims. Each tile is histogram-equalized before
    the forward pass (matching training preprocessing) unless equalize=False.
    """
    volume = np.asarray(volume, np.float32)
    if tile_dims is None:
        tile_dims = tuple(model.cfg.input_dims)
    vd = (volume.shape[2], volume.shape[1], volume.shape[0])
    tw, th, td = tile_dims

    acc = np.zeros_like(volume, np.float64)
    cnt = np.zeros_like(volume, np.float64)
    model.eval()
    with no_grad():
        for ox, oy, oz in tile_offsets(vd, tile_dims, overlap):
            tile = volume[oz:oz + td, oy:oy + th, ox:ox + tw]
            if equalize:
                tile = histogram_equalize(tile)
            pred = model(Tensor(np.ascontiguousarray(tile)[None, ...]))
            acc[oz:oz + td, oy:oy + th, ox:ox + tw] += pred.data[0].astype(np.float64)
            cnt[oz:oz + td, oy:oy + th, ox:ox + tw] += 1.0
    if (cnt == 0).any():
        raise RuntimeError("tiling left voxels uncovered")
    return (acc / cnt).astype(np.float32)


def extract_somas(prob_volume: np.ndarray, threshold: float = 0.5,
                  min_size: int = 10) -> list[tuple[int, int, int]]:
    """Threshold, label 26-connected components, drop small ones, return
    integer (x, y, z) centroids."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold {threshold} outside (0, 1)")
    binary = np.asarray(prob_volume) >= threshold
    labels, n = ndimage.label(binary, structure=_CONN26)
    centroids = []
    for idx in range(1, n + 1):
        size = int((labels == idx).sum())
        if size < min_size:
            continue
        cz, cy, cx = ndimage.center_of_mass(binary, labels, idx)
        centroids.append((int(round(cx)), int(round(cy)), int(round(cz))))
    return centroids


def segment_cell(branch_model, volume: np.ndarray, soma_point, crop_dims=None,
                 threshold: float = 0.5, equalize: bool = True) -> np.ndarray:
    """Prompted segmentation of one cell, returned on a full-volume canvas.

    A crop window is centered on the soma (clamped to the volume), the prompt
    is the soma position in crop coordinates, and the thresholded prediction
    is placed back at the crop offset.
    """
    volume = np.asarray(volume, np.float32)
    if crop_dims is None:
        crop_dims = tuple(branch_model.cfg.input_dims)
    vd = (volume.shape[2], volume.shape[1], volume.shape[0])
    x, y, z = soma_point
    if not (0 <= x < vd[0] and 0 <= y < vd[1] and 0 <= z < vd[2]):
        raise ValueError(f"soma point {tuple(soma_point)} outside volume {vd}")

    offset = tuple(int(np.clip(int(round(c - cd / 2.0)), 0, v - cd))
                   for c, cd, v in zip((x, y, z), crop_dims, vd))
    cw, ch, cd = crop_dims
    ox, oy, oz = offset
    tile = volume[oz:oz + cd, oy:oy + ch, ox:ox + cw]
    if equalize:
        tile = histogram_equalize(tile)
    prompt = (x - ox, y - oy, z - oz)

    branch_model.eval()
    with no_grad():
        pred = branch_model(Tensor(np.ascontiguousarray(tile)[None, ...]), [prompt])
    mask = np.zeros(volume.shape, bool)
    mask[oz:oz + cd, oy:oy + ch, ox:ox + cw] = pred.data[0] >= threshold
    return mask
