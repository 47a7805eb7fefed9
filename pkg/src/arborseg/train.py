"""Two-stage training: schedule, loop, weight transfer, dataset splits."""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import (load_checkpoint, load_model_state, model_state,
                         save_checkpoint)
from .config import ModelConfig, TrainConfig
from .losses import branch_loss, soma_loss
from .optim import AdamW
from .preprocess import augment, crop_around_cell, tile_volume
from .tensor import NonFiniteError, Tensor


def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup from the final to the peak rate, then a half cosine back
    down so lr(warmup) = peak and lr(epochs) = final."""
    if not 0 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside 0..{cfg.epochs}")
    if epoch <= cfg.warmup_epochs:
        if cfg.warmup_epochs == 0:
            return cfg.peak_lr
        frac = epoch / cfg.warmup_epochs
        return cfg.final_lr + (cfg.peak_lr - cfg.final_lr) * frac
    frac = (epoch - cfg.warmup_epochs) / (cfg.epochs - cfg.warmup_epochs)
    return cfg.final_lr + (cfg.peak_lr - cfg.final_lr) * 0.5 * (1.0 + math.cos(math.pi * frac))


def _to_volume_tensor(arr: np.ndarray) -> Tensor:
    # flips/slices upstream may hand us views; the jit kernels want C layout
    return Tensor(np.ascontiguousarray(arr, np.float32)[None, ...])


def _sample_loss(model, item: dict, stage: str, skeleton_iterations: int = 3):
    image = _to_volume_tensor(item["image"])
    target = _to_volume_tensor(item["target"])
    if stage == "soma":
        pred = model(image)
        return soma_loss(pred, target)
    pred = model(image, [item["prompt"]])
    return branch_loss(pred, target, skeleton_iterations)


def train_stage(model, dataset: list[dict], cfg: TrainConfig,
                out_dir=None, log=print) -> dict:
    """Run the training loop over a prepared dataset.

    Dataset items are dicts with "image" and "target" (both (D, H, W)), plus
    "prompt" (an (x, y, z) point) for the branch stage. Each epoch shuffles
    the items, walks them in micro-batches of `batch_size`, averages the loss
    inside a micro-batch, and steps the optimizer every `accumulation`
    micro-batches with gradients scaled by 1/accumulation.

    Returns {"history": [...], "best_epoch": int, "best_loss": float} and, if
    out_dir is given, writes last.tr3d every epoch plus best.tr3d on
    improvement.
    """
    cfg.validate()
    if not dataset:
        raise ValueError("empty training dataset")
    model.train()
    opt = AdamW(model.named_parameters(), weight_decay=cfg.weight_decay)
    order_rng = np.random.default_rng([cfg.seed, 1])

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    history = []
    best_loss, best_epoch = float("inf"), -1
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.time()
        lr = cosine_lr(epoch, cfg)
        order = order_rng.permutation(len(dataset))
        epoch_loss = 0.0
        micro_since_step = 0
        opt.zero_grad()

        for start in range(0, len(order), cfg.batch_size):
            batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
            items = []
            for j, item in enumerate(batch):
                if cfg.augmentations:
                    aug_rng = np.random.default_rng(
                        [cfg.seed, 2, epoch, int(order[start + j])])
                    pts = None if "prompt" not in item else np.asarray(
                        [item["prompt"]], np.float64)
                    img, masks, pts = augment(item["image"], [item["target"]],
                                              aug_rng, cfg.augmentations, pts)
                    new = {"image": img, "target": masks[0]}
                    if pts is not None:
                        new["prompt"] = _clamp_point(pts[0], img.shape)
                    items.append(new)
                else:
                    items.append(item)

            try:
                losses = [_sample_loss(model, it, cfg.stage) for it in items]
                micro = losses[0]
                for extra in losses[1:]:
                    micro = micro + extra
                micro = micro * (1.0 / len(losses))
                value = micro.item()
            except NonFiniteError as exc:
                raise RuntimeError(
                    f"non-finite forward value at epoch {epoch}, micro-batch "
                    f"starting at sample {start}: {exc}") from exc
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss {value} at epoch {epoch}, micro-batch "
                    f"starting at sample {start}")
            try:
                micro.backward()
            except NonFiniteError as exc:
                raise RuntimeError(
                    f"non-finite gradient at epoch {epoch}, micro-batch "
                    f"starting at sample {start}: {exc}") from exc
            epoch_loss += value * len(losses)
            micro_since_step += 1
            if micro_since_step == cfg.accumulation:
                opt.scale_grads(1.0 / cfg.accumulation)
                opt.step(lr)
                opt.zero_grad()
                micro_since_step = 0

        if micro_since_step:
            opt.scale_grads(1.0 / micro_since_step)
            opt.step(lr)
            opt.zero_grad()

        epoch_loss /= len(order)
        history.append({"epoch": epoch, "lr": lr, "loss": epoch_loss,
                        "seconds": round(time.time() - t0, 2)})
        if log is not None:
            log(f"epoch {epoch:3d}/{cfg.epochs}  lr {lr:.2e}  "
                f"loss {epoch_loss:.4f}  ({history[-1]['seconds']}s)")

        if out_dir is not None:
            meta = {"stage": cfg.stage, "epoch": epoch,
                    "model": _config_meta(model.cfg),
                    "history": history}
            save_checkpoint(out_dir / "last.tr3d", model_state(model), meta)
            if epoch_loss < best_loss:
                save_checkpoint(out_dir / "best.tr3d", model_state(model), meta)
        if epoch_loss < best_loss:
            best_loss, best_epoch = epoch_loss, epoch

    model.eval()
    return {"history": history, "best_epoch": best_epoch, "best_loss": best_loss}


def _clamp_point(pt, shape_dhw) -> tuple[int, int, int]:
    d, h, w = shape_dhw
    return (int(np.clip(round(pt[0]), 0, w - 1)),
            int(np.clip(round(pt[1]), 0, h - 1)),
            int(np.clip(round(pt[2]), 0, d - 1)))


def build_soma_dataset(samples, tile_dims, overlap_fraction: float = 0.0,
                       min_foreground: float = 0.05) -> list[dict]:
    """Tile full volumes into training items {"image", "target"}."""
    items = []
    for sample in samples:
        for tile in tile_volume(sample, tile_dims, overlap_fraction,
                                "train", min_foreground):
            items.append({"image": tile["image"],
                          "target": tile["soma_mask"].astype(np.float32)})
    return items


def build_branch_dataset(samples, crop_dims, seed: int = 0,
                         crops_per_cell: int = 1,
                         jitter: float = 0.1) -> list[dict]:
    """Per-cell jittered crops as training items {"image", "target", "prompt"}.

    Crop (i, cell, rep) draws from its own rng so the dataset is reproducible
    regardless of iteration order.
    """
    items = []
    for i, sample in enumerate(samples):
        for ci in range(len(sample.cell_masks)):
            for rep in range(crops_per_cell):
                rng = np.random.default_rng([seed, 5, i, ci, rep])
                image, target, prompt = crop_around_cell(
                    sample, ci, crop_dims, rng, jitter)
                items.append({"image": image,
                              "target": target.astype(np.float32),
                              "prompt": prompt})
    return items


def _config_meta(cfg: ModelConfig) -> dict:
    return {"variant": cfg.variant, "embed_dim": cfg.embed_dim,
            "heads": cfg.heads, "blocks": cfg.blocks,
            "patch": list(cfg.patch), "mlp_ratio": cfg.mlp_ratio,
            "input_dims": list(cfg.input_dims), "dropout": cfg.dropout}


def load_trained_model(path):
    """Rebuild the model a checkpoint was trained with and load its weights.

    Returns (model, meta); the model is in eval mode. The checkpoint must
    carry the training metadata written by train_stage.
    """
    from .model import BranchModel, SomaModel

    tensors, meta = load_checkpoint(path)
    if "stage" not in meta or "model" not in meta:
        raise ValueError(f"{path}: checkpoint lacks training metadata "
                         "(stage/model); cannot rebuild the model")
    raw = dict(meta["model"])
    for key in ("patch", "input_dims"):
        raw[key] = tuple(raw[key])
    cfg = ModelConfig(**raw).validate()
    cls = SomaModel if meta["stage"] == "soma" else BranchModel
    model = cls(cfg)
    load_model_state(model, tensors)
    model.eval()
    return model, meta


def transfer_weights(soma_ckpt_path, branch_model) -> dict[str, list[str]]:
    """Initialize a branch model's encoder and decoder from a soma checkpoint.

    Prompt-encoder and cross-attention parameters keep their fresh
    initialization. Returns a manifest {"transferred": [...], "fresh": [...]}.
    """
    tensors, meta = load_checkpoint(soma_ckpt_path)
    ckpt_model = meta.get("model", {})
    own = _config_meta(branch_model.cfg)
    for key in ("variant", "embed_dim", "patch", "input_dims"):
        if key in ckpt_model and ckpt_model[key] != own[key]:
            raise ValueError(f"checkpoint/model config mismatch on {key}: "
                             f"{ckpt_model[key]} vs {own[key]}")

    params = branch_model.named_parameters()
    buffers = branch_model.named_buffers()
    transferred, fresh = [], []
    for name in sorted(set(params) | set(buffers)):
        dst = params[name].data if name in params else buffers[name]
        if name.startswith(("encoder.", "decoder.")):
            if name not in tensors:
                raise ValueError(f"soma checkpoint missing tensor {name!r}")
            src = tensors[name]
            if tuple(src.shape) != tuple(dst.shape):
                raise ValueError(f"shape mismatch for {name!r}: checkpoint "
                                 f"{tuple(src.shape)} vs model {tuple(dst.shape)}")
            dst[...] = src
            transferred.append(name)
        else:
            fresh.append(name)
    return {"transferred": transferred, "fresh": fresh}


def split_dataset(paths: list, seed: int = 0,
                  fractions=(0.8, 0.15, 0.05)) -> dict[str, list]:
    """Deterministic train/test/val split by whole volumes."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions {fractions} do not sum to 1")
    order = np.random.default_rng([seed, 3]).permutation(len(paths))
    n_train = int(round(len(paths) * fractions[0]))
    n_test = int(round(len(paths) * fractions[1]))
    shuffled = [paths[i] for i in order]
    return {"train": shuffled[:n_train],
            "test": shuffled[n_train:n_train + n_test],
            "val": shuffled[n_train + n_test:]}


def kfold_splits(paths: list, k: int = 5, seed: int = 0) -> list[dict[str, list]]:
    """k folds of {"train", "val"} partitions covering every volume once."""
    if k < 2 or k > len(paths):
        raise ValueError(f"cannot make {k} folds from {len(paths)} volumes")
    order = np.random.default_rng([seed, 4]).permutation(len(paths))
    shuffled = [paths[i] for i in order]
    folds = [shuffled[i::k] for i in range(k)]
    out = []
    for i in range(k):
        val = folds[i]
        train = [p for j, f in enumerate(folds) if j != i for p in f]
        out.append({"train": train, "val": val})
    return out
