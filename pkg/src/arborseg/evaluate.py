"""Evaluation drivers producing JSON-ready metric reports.

Predictors are injectable callables so the same report machinery runs on a
trained model, a baseline, or ground truth itself (which must score
perfectly and is used as an oracle in tests).
"""

from __future__ import annotations

import numpy as np

from .infer import extract_somas, segment_cell, sliding_window_infer
from .metrics import apld, detection_metrics, dice_score, hausdorff, mask_points
from .synth import VolumeSample


def make_soma_predictor(model, tile_dims=None, overlap: float = 0.5,
                        threshold: float = 0.5, min_size: int = 10):
    """Predictor: sample -> (centroids, binary soma mask)."""
    def predict(sample: VolumeSample):
        prob = sliding_window_infer(model, sample.image, tile_dims, overlap)
        return extract_somas(prob, threshold, min_size), prob >= threshold
    return predict


def make_branch_predictor(model, crop_dims=None, threshold: float = 0.5):
    """Predictor: (sample, cell_index) -> full-volume instance mask, prompted
    with the ground-truth soma centroid."""
    def predict(sample: VolumeSample, cell_index: int):
        return segment_cell(model, sample.image,
                            sample.soma_centroids[cell_index], crop_dims,
                            threshold)
    return predict


def _aggregate(per_sample: list[dict]) -> dict:
    keys = sorted({k for row in per_sample for k in row if k != "index"})
    out = {}
    for k in keys:
        vals = np.array([row[k] for row in per_sample if k in row], np.float64)
        out[k] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


def evaluate_soma(samples: list[VolumeSample], predictor,
                  radius: float = 5.0) -> dict:
    """Detection metrics plus voxel dice of the soma mask, per volume."""
    if not samples:
        raise ValueError("empty evaluation dataset")
    rows = []
    for i, sample in enumerate(samples):
        centroids, mask = predictor(sample)
        det = detection_metrics(centroids, sample.soma_centroids, radius)
        row = {"index": i, "dice": dice_score(mask, sample.soma_mask), **det}
        rows.append(row)
    return {"per_sample": rows, "aggregate": _aggregate(rows)}


def evaluate_branch(samples: list[VolumeSample], predictor) -> dict:
    """Per-cell dice, skeleton path-length difference, and Hausdorff distance
    (prompted with ground-truth centroids)."""
    if not samples:
        raise ValueError("empty evaluation dataset")
    rows = []
    for i, sample in enumerate(samples):
        spacing = sample.voxel_size
        for ci, gt_mask in enumerate(sample.cell_masks):
            pred = predictor(sample, ci)
            row = {"index": i, "cell": ci,
                   "dice": dice_score(pred, gt_mask)}
            try:
                row["apld"] = apld(pred, gt_mask, spacing)
            except ValueError:
                pass  # degenerate ground truth with empty skeleton
            if pred.any() and gt_mask.any():
                row["hausdorff"] = hausdorff(mask_points(pred),
                                             mask_points(gt_mask), spacing)
            rows.append(row)
    agg_rows = [{k: v for k, v in r.items() if k != "cell"} for r in rows]
    return {"per_sample": rows, "aggregate": _aggregate(agg_rows)}
