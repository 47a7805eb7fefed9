"""Tiling, normalization, augmentation, and prompt-centered cropping.

Dims arguments are (W, H, D) to match config records; arrays are (D, H, W).
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import affine_transform, gaussian_filter

from .synth import VolumeSample


def tile_offsets(volume_dims, tile_dims, overlap_fraction: float) -> list[tuple[int, int, int]]:
    """Regular (x, y, z) offsets covering the volume; the last tile on each
    axis is clamped to the boundary so every voxel is covered."""
    if not (0.0 <= overlap_fraction < 1.0):
        raise ValueError(f"overlap fraction {overlap_fraction} outside [0, 1)")
    axes = []
    for v, t in zip(volume_dims, tile_dims):
        if t > v:
            raise ValueError(f"tile dim {t} exceeds volume dim {v}")
        stride = max(int(round(t * (1.0 - overlap_fraction))), 1)
        starts = list(range(0, v - t + 1, stride))
        if starts[-1] != v - t:
            starts.append(v - t)
        axes.append(starts)
    return [(x, y, z) for x in axes[0] for y in axes[1] for z in axes[2]]


def _slice(arr: np.ndarray, offset, tile_dims) -> np.ndarray:
    ox, oy, oz = offset
    tw, th, td = tile_dims
    return arr[oz:oz + td, oy:oy + th, ox:ox + tw]


def tile_volume(sample: VolumeSample, tile_dims, overlap_fraction: float = 0.0,
                mode: str = "train", min_foreground: float = 0.05) -> list[dict]:
    """Cut a sample into tiles: [{offset, image, soma_mask}].

    Training mode drops tiles whose foreground (any cell) fraction is below
    `min_foreground`; inference mode keeps everything so stitching stays
    complete.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown tiling mode {mode!r}")
    volume_dims = (sample.image.shape[2], sample.image.shape[1], sample.image.shape[0])
    foreground = np.zeros_like(sample.soma_mask)
    for mask in sample.cell_masks:
        foreground |= mask

    tiles = []
    for offset in tile_offsets(volume_dims, tile_dims, overlap_fraction):
        if mode == "train":
            frac = _slice(foreground, offset, tile_dims).mean()
            if frac < min_foreground:
                continue
        tiles.append({
            "offset": offset,
            "image": _slice(sample.image, offset, tile_dims).copy(),
            "soma_mask": _slice(sample.soma_mask, offset, tile_dims).copy(),
        })
    return tiles


def histogram_equalize(tile: np.ndarray, bins: int = 256) -> np.ndarray:
    """Remap intensities through their own CDF onto [0, 1].

    A (near-)constant tile is returned unchanged rather than being blown up
    to full range.
    """
    tile = np.asarray(tile, np.float32)
    lo, hi = float(tile.min()), float(tile.max())
    if hi - lo < 1e-6:
        return tile.copy()
    counts, edges = np.histogram(tile, bins=bins, range=(lo, hi))
    cdf = np.cumsum(counts).astype(np.float64)
    cdf /= cdf[-1]
    idx = np.minimum((((tile - lo) / (hi - lo)) * bins).astype(np.int64), bins - 1)
    return cdf[idx].astype(np.float32)


def _rotation_scale_2d(theta: float, scale: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return scale * np.array([[c, -s], [s, c]])


def augment(image: np.ndarray, masks: list[np.ndarray], rng: np.random.Generator,
            ops=("flip", "affine", "noise", "blur", "gamma"),
            points: np.ndarray | None = None):
    """Jointly augment an image, its masks, and optional (x, y, z) points.

    Spatial transforms hit image and masks identically (nearest-neighbor for
    masks) and remap the points; intensity transforms touch only the image.
    Returns (image, masks, points or None).
    """
    image = np.asarray(image, np.float32).copy()
    masks = [np.asarray(m) for m in masks]
    pts = None if points is None else np.asarray(points, np.float64).copy()
    d, h, w = image.shape

    if "flip" in ops:
        for axis, extent in ((0, d), (1, h), (2, w)):
            if rng.random() < 0.5:
                image = np.flip(image, axis)
                masks = [np.flip(m, axis) for m in masks]
                if pts is not None:
                    col = 2 - axis          # points are (x, y, z)
                    pts[:, col] = extent - 1 - pts[:, col]

    if "affine" in ops:
        theta = rng.uniform(-np.pi / 12, np.pi / 12)
        scale = rng.uniform(0.9, 1.1)
        center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
        forward = _rotation_scale_2d(theta, scale)          # acts on (y, x)
        inverse = np.linalg.inv(forward)
        matrix = np.eye(3)
        matrix[1:, 1:] = inverse
        offset = np.zeros(3)
        offset[1:] = center - inverse @ center
        image = affine_transform(image, matrix, offset=offset, order=1,
                                 mode="constant", cval=0.0)
        masks = [affine_transform(m.astype(np.uint8), matrix, offset=offset,
                                  order=0, mode="constant", cval=0).astype(m.dtype)
                 for m in masks]
        if pts is not None:
            yx = pts[:, [1, 0]]
            pts[:, [1, 0]] = (yx - center) @ forward.T + center

    if "noise" in ops:
        image = np.clip(image + 0.03 * rng.standard_normal(image.shape), 0, 1)
    if "blur" in ops and rng.random() < 0.5:
        image = gaussian_filter(image, sigma=rng.uniform(0.3, 0.8))
    if "gamma" in ops:
        image = np.clip(image, 0, 1) ** rng.uniform(0.7, 1.4)

    return image.astype(np.float32), masks, pts


def crop_around_cell(sample: VolumeSample, cell_index: int, crop_dims,
                     rng: np.random.Generator | None = None,
                     jitter: float = 0.1):
    """Window around one cell's soma: (image crop, that cell's mask crop,
    prompt point in crop coordinates).

    The window is centered on the soma centroid plus uniform jitter up to
    +-jitter*crop_dims, then clamped inside the volume. Other cells stay
    visible in the image but are absent from the target mask.
    """
    if not 0 <= cell_index < len(sample.cell_masks):
        raise IndexError(f"cell index {cell_index} out of range "
                         f"0..{len(sample.cell_masks) - 1}")
    volume_dims = (sample.image.shape[2], sample.image.shape[1], sample.image.shape[0])
    cw, ch, cd = crop_dims
    for cdim, vdim in zip(crop_dims, volume_dims):
        if cdim > vdim:
            raise ValueError(f"crop dim {cdim} exceeds volume dim {vdim}")

    centroid = np.asarray(sample.soma_centroids[cell_index], np.float64)
    if rng is not None and jitter > 0:
        centroid = centroid + rng.uniform(-jitter, jitter, 3) * np.asarray(crop_dims)

    offset = []
    for c, cdim, vdim in zip(centroid, crop_dims, volume_dims):
        o = int(round(c - cdim / 2.0))
        offset.append(int(np.clip(o, 0, vdim - cdim)))
    offset = tuple(offset)

    image = _slice(sample.image, offset, crop_dims).copy()
    target = _slice(sample.cell_masks[cell_index], offset, crop_dims).copy()
    prompt = tuple(np.asarray(sample.soma_centroids[cell_index]) - np.asarray(offset))
    prompt = tuple(int(np.clip(p, 0, cdim - 1))
                   for p, cdim in zip(prompt, crop_dims))
    return image, target, prompt
