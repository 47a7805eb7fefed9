"""Synthetic microglia-like volumes with instance labels.

Each cell is an anisotropic ellipsoid soma plus a handful of branch tubes
grown by persistent random walks from the soma surface, with probabilistic
bifurcation and tapering radius. Volumes place several cells with a minimum
soma separation but let branches overlap on purpose, since disentangling
overlapping arbors is exactly what the prompted model is for.

Masks are (D, H, W) arrays indexed [z, y, x]; points are (x, y, z) triples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .config import SynthConfig
from .v3d import read_v3d, write_v3d


@dataclass
class VolumeSample:
    image: np.ndarray                 # (D, H, W) float32 in [0, 1]
    soma_mask: np.ndarray             # (D, H, W) bool
    cell_masks: list[np.ndarray]      # per-cell (D, H, W) bool, soma + branches
    soma_centroids: list[tuple[int, int, int]]   # (x, y, z) per cell
    voxel_size: tuple[float, float, float] = (0.4, 0.4, 1.1)


def _paint_ball(mask: np.ndarray, center, radius: float, z_squash: float) -> None:
    """Set an ellipsoid (radius in x/y, radius*z_squash in z) around center."""
    d, h, w = mask.shape
    cx, cy, cz = center
    rz = max(radius * z_squash, 0.6)
    x0, x1 = max(int(cx - radius - 1), 0), min(int(cx + radius + 2), w)
    y0, y1 = max(int(cy - radius - 1), 0), min(int(cy + radius + 2), h)
    z0, z1 = max(int(cz - rz - 1), 0), min(int(cz + rz + 2), d)
    if x0 >= x1 or y0 >= y1 or z0 >= z1:
        return
    zz, yy, xx = np.mgrid[z0:z1, y0:y1, x0:x1]
    dist = (((xx - cx) / max(radius, 0.6)) ** 2
            + ((yy - cy) / max(radius, 0.6)) ** 2
            + ((zz - cz) / rz) ** 2)
    mask[z0:z1, y0:y1, x0:x1] |= dist <= 1.0


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 1e-9 else np.array([1.0, 0.0, 0.0])


def generate_cell(rng: np.random.Generator, cfg: SynthConfig,
                  center=None) -> tuple[np.ndarray, np.ndarray, tuple[int, int, int]]:
    """One cell: returns (cell mask, soma-only mask, soma centroid (x, y, z))."""
    w, h, d = cfg.dims
    z_squash = cfg.voxel_size[0] / cfg.voxel_size[2]
    soma_r = rng.uniform(*cfg.soma_radius)
    if center is None:
        margin = soma_r + 2
        zmargin = max(soma_r * z_squash + 1, 1.5)
        center = (rng.uniform(margin, w - margin),
                  rng.uniform(margin, h - margin),
                  rng.uniform(zmargin, d - zmargin))
    cx, cy, cz = center

    soma = np.zeros((d, h, w), bool)
    _paint_ball(soma, (cx, cy, cz), soma_r, z_squash)
    cell = soma.copy()

    n_branches = int(rng.integers(cfg.branches_range[0], cfg.branches_range[1] + 1))
    # (position, direction, remaining steps, radius); children get pushed here
    stack = []
    for _ in range(n_branches):
        u = _unit(rng.standard_normal(3) * np.array([1.0, 1.0, z_squash]))
        start = np.array([cx, cy, cz]) + u * soma_r * np.array([1.0, 1.0, z_squash])
        length = int(rng.integers(cfg.branch_length[0], cfg.branch_length[1] + 1))
        radius = rng.uniform(*cfg.branch_radius)
        stack.append((start, u, length, radius))

    segments = 0
    while stack and segments < 64:
        pos, direction, length, radius = stack.pop()
        segments += 1
        for step in range(length):
            taper = 1.0 - 0.5 * step / max(length, 1)
            _paint_ball(cell, tuple(pos), max(radius * taper, 0.7), z_squash)
            direction = _unit(direction + 0.3 * rng.standard_normal(3)
                              * np.array([1.0, 1.0, z_squash]))
            pos = pos + direction
            if not (0 <= pos[0] < w and 0 <= pos[1] < h and 0 <= pos[2] < d):
                break
            if rng.random() < cfg.branch_prob and length - step > 3:
                fork = _unit(direction + rng.standard_normal(3))
                stack.append((pos.copy(), fork, (length - step) // 2,
                              max(radius * 0.75, 0.7)))

    centroid = (int(round(cx)), int(round(cy)), int(round(cz)))
    return cell, soma, centroid


def generate_volume(rng: np.random.Generator, cfg: SynthConfig,
                    n_cells: int | None = None) -> VolumeSample:
    """Place cells with separated somas and render the intensity image."""
    cfg.validate()
    w, h, d = cfg.dims
    if n_cells is None:
        n_cells = int(rng.integers(cfg.cells_range[0], cfg.cells_range[1] + 1))

    centers: list[np.ndarray] = []
    tries = 0
    while len(centers) < n_cells:
        if tries > 200 * max(n_cells, 1):
            raise RuntimeError(
                f"could not place {n_cells} somas with separation "
                f"{cfg.min_separation} in dims {cfg.dims}")
        tries += 1
        margin = cfg.soma_radius[1] + 2
        cand = np.array([rng.uniform(margin, w - margin),
                         rng.uniform(margin, h - margin),
                         rng.uniform(2.0, d - 2.0)])
        if all(np.linalg.norm(cand - c) >= cfg.min_separation for c in centers):
            centers.append(cand)

    cell_masks, centroids = [], []
    soma_mask = np.zeros((d, h, w), bool)
    for c in centers:
        cell, soma, centroid = generate_cell(rng, cfg, center=tuple(c))
        cell_masks.append(cell)
        soma_mask |= soma
        centroids.append(centroid)

    image = render_intensity(cell_masks, cfg, rng)
    return VolumeSample(image=image, soma_mask=soma_mask, cell_masks=cell_masks,
                        soma_centroids=centroids, voxel_size=cfg.voxel_size)


def render_intensity(masks: list[np.ndarray], cfg: SynthConfig,
                     rng: np.random.Generator) -> np.ndarray:
    w, h, d = cfg.dims
    img = np.zeros((d, h, w), np.float64)
    for mask in masks:
        brightness = rng.uniform(0.6, 1.0)
        img = np.maximum(img, brightness * mask)

    if cfg.background_amp > 0:
        zz, yy, xx = np.mgrid[0:d, 0:h, 0:w].astype(np.float64)
        phase = rng.uniform(0, 2 * np.pi, 3)
        bg = (np.sin(2 * np.pi * xx / w + phase[0])
              + np.sin(2 * np.pi * yy / h + phase[1])
              + np.sin(2 * np.pi * zz / max(d, 1) + phase[2]))
        img += cfg.background_amp * (bg / 3.0 + 1.0) * 0.5

    if cfg.blur_sigma > 0:
        z_squash = cfg.voxel_size[0] / cfg.voxel_size[2]
        img = gaussian_filter(img, sigma=(cfg.blur_sigma * z_squash,
                                          cfg.blur_sigma, cfg.blur_sigma))
    if cfg.signal_noise > 0:
        img += cfg.signal_noise * img * rng.standard_normal(img.shape)
    if cfg.noise_sigma > 0:
        img += cfg.noise_sigma * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_overlap_volume(rng: np.random.Generator, cfg: SynthConfig,
                            max_tries: int = 200) -> VolumeSample:
    """Two-cell volume whose cell masks' bounding boxes overlap (for
    prompt-disambiguation tests); rejection-samples until one appears."""
    for _ in range(max_tries):
        sample = generate_volume(rng, cfg, n_cells=2)
        boxes = []
        for mask in sample.cell_masks:
            idx = np.argwhere(mask)
            boxes.append((idx.min(axis=0), idx.max(axis=0)))
        (lo1, hi1), (lo2, hi2) = boxes
        if (lo1 <= hi2).all() and (lo2 <= hi1).all():
            return sample
    raise RuntimeError(f"no overlapping two-cell volume in {max_tries} tries")


# ---------------------------------------------------------------- dataset IO

def save_sample(directory, sample: VolumeSample) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_v3d(directory / "image.v3d", sample.image)
    write_v3d(directory / "soma.v3d", sample.soma_mask)
    for k, mask in enumerate(sample.cell_masks):
        write_v3d(directory / f"cell_{k}.v3d", mask)
    meta = {"soma_centroids": [list(c) for c in sample.soma_centroids],
            "voxel_size": list(sample.voxel_size),
            "n_cells": len(sample.cell_masks)}
    (directory / "meta.json").write_text(json.dumps(meta, indent=1))


def load_sample(directory) -> VolumeSample:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    cells = [read_v3d(directory / f"cell_{k}.v3d").astype(bool)
             for k in range(meta["n_cells"])]
    return VolumeSample(
        image=read_v3d(directory / "image.v3d"),
        soma_mask=read_v3d(directory / "soma.v3d").astype(bool),
        cell_masks=cells,
        soma_centroids=[tuple(c) for c in meta["soma_centroids"]],
        voxel_size=tuple(meta["voxel_size"]))


def generate_dataset(root, n_volumes: int, cfg: SynthConfig,
                     overlap_fraction_of_volumes: float = 0.0) -> list[str]:
    """Write n_volumes sample directories under root; returns their paths.

    Volume i uses an rng seeded by (cfg.seed, i) so any volume is reproducible
    in isolation. The last `overlap_fraction_of_volumes` of the set are forced
    two-cell overlap volumes.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    n_overlap = int(round(n_volumes * overlap_fraction_of_volumes))
    paths = []
    for i in range(n_volumes):
        rng = np.random.default_rng([cfg.seed, i])
        if i >= n_volumes - n_overlap:
            sample = generate_overlap_volume(rng, cfg)
        else:
            sample = generate_volume(rng, cfg)
        path = root / f"vol_{i:04d}"
        save_sample(path, sample)
        paths.append(str(path))
    return paths
