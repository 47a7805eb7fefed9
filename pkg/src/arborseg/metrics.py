"""Evaluation metrics (plain numpy, no gradients).

Conventions: point sets are (N, 3) arrays of (x, y, z) voxel coordinates;
dense masks are (D, H, W) arrays indexed [z, y, x]; `spacing` is the physical
voxel size in micrometers, ordered (x, y, z).
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial import cKDTree
from skimage.morphology import skeletonize


def detection_metrics(pred_centroids, gt_centroids, radius: float = 5.0) -> dict[str, float]:
    """Greedy centroid matching within `radius` voxels.

    Candidate pairs are taken closest-first, each prediction and each ground
    truth used at most once. Accuracy is TP/(TP+FP+FN) since detection has no
    true negatives. Two empty sets count as vacuously perfect.
    """
    if radius <= 0:
        raise ValueError(f"matching radius {radius} must be positive")
    pred = np.asarray(pred_centroids, np.float64).reshape(-1, 3)
    gt = np.asarray(gt_centroids, np.float64).reshape(-1, 3)
    if pred.size == 0 and gt.size == 0:
        return {"accuracy": 1.0, "f1": 1.0, "precision": 1.0, "recall": 1.0}

    tp = 0
    if pred.size and gt.size:
        d = np.linalg.norm(pred[:, None, :] - gt[None, :, :], axis=2)
        pairs = np.argwhere(d <= radius)
        order = np.argsort(d[pairs[:, 0], pairs[:, 1]], kind="stable")
        used_p, used_g = set(), set()
        for pi, gi in pairs[order]:
            if pi not in used_p and gi not in used_g:
                used_p.add(int(pi))
                used_g.add(int(gi))
                tp += 1
    fp = len(pred) - tp
    fn = len(gt) - tp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = tp / (tp + fp + fn)
    return {"accuracy": accuracy, "f1": f1, "precision": precision, "recall": recall}


def dice_score(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    a = np.asarray(pred_mask, bool)
    b = np.asarray(gt_mask, bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def hausdorff(a, b, spacing=(1.0, 1.0, 1.0)) -> float:
    """Max over both directed max-min distances, in micrometers."""
    a = np.asarray(a, np.float64).reshape(-1, 3)
    b = np.asarray(b, np.float64).reshape(-1, 3)
    if a.size == 0 or b.size == 0:
        raise ValueError("hausdorff distance undefined for an empty point set")
    s = np.asarray(spacing, np.float64)
    a = a * s
    b = b * s
    d_ab = cKDTree(b).query(a)[0].max()
    d_ba = cKDTree(a).query(b)[0].max()
    return float(max(d_ab, d_ba))


def mask_points(mask: np.ndarray) -> np.ndarray:
    """Foreground voxel coordinates of a (D, H, W) mask as (N, 3) (x, y, z)."""
    zyx = np.argwhere(np.asarray(mask, bool))
    return zyx[:, ::-1]


def skeleton_length(mask: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> float:
    """Total centerline path length of a binary (D, H, W) mask in micrometers.

    The mask is thinned to a voxel skeleton, 26-adjacent skeleton voxels are
    joined by edges weighted with their physical distance, and the length is
    the weight of the minimum spanning forest, so loops and double-counted
    diagonals do not inflate it.
    """
    mask = np.asarray(mask, bool)
    skel = skeletonize(mask) if mask.any() else mask
    coords = np.argwhere(skel)          # (n, 3) as (z, y, x)
    n = len(coords)
    if n < 2:
        return 0.0
    sp = np.asarray(spacing, np.float64)[::-1]   # to (z, y, x)
    index = {tuple(c): i for i, c in enumerate(coords)}
    rows, cols, weights = [], [], []
    offsets = [(dz, dy, dx)
               for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
               if (dz, dy, dx) > (0, 0, 0)]     # forward half of the 26 moves
    for i, c in enumerate(coords):
        for off in offsets:
            j = index.get((c[0] + off[0], c[1] + off[1], c[2] + off[2]))
            if j is not None:
                rows.append(i)
                cols.append(j)
                weights.append(float(np.linalg.norm(np.asarray(off) * sp)))
    if not rows:
        return 0.0
    graph = coo_matrix((weights, (rows, cols)), shape=(n, n))
    return float(minimum_spanning_tree(graph).sum())


def apld(pred_mask: np.ndarray, gt_mask: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> float:
    """Relative skeleton path-length difference |L_pred - L_gt| / L_gt."""
    l_gt = skeleton_length(gt_mask, spacing)
    if l_gt == 0.0:
        raise ValueError("ground-truth skeleton is empty; APLD undefined")
    l_pred = skeleton_length(pred_mask, spacing)
    return abs(l_pred - l_gt) / l_gt
