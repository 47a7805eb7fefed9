"""Configuration records for models, training, and synthetic data.

Validation errors carry the dotted field path (e.g. "train.warmup_epochs") so
CLI users can locate the offending entry in their JSON config.
"""

from __future__ import annotations

from dataclasses import dataclass, fields


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


VARIANT_DIMS = {"tiny": 16, "s": 32, "m": 64, "l": 128}


@dataclass
class ModelConfig:
    variant: str = "tiny"
    embed_dim: int = 16
    heads: int = 8
    blocks: int = 6
    patch: tuple[int, int, int] = (8, 8, 2)   # (W, H, D) voxels per patch
    mlp_ratio: int = 8
    input_dims: tuple[int, int, int] = (64, 64, 16)  # (W, H, D)
    dropout: float = 0.1

    def validate(self, prefix: str = "model") -> "ModelConfig":
        if self.variant not in VARIANT_DIMS:
            raise ConfigError(f"{prefix}.variant",
                              f"unknown variant {self.variant!r}, expected one of "
                              f"{sorted(VARIANT_DIMS)}")
        if self.embed_dim != VARIANT_DIMS[self.variant]:
            raise ConfigError(f"{prefix}.embed_dim",
                              f"variant {self.variant!r} requires embed_dim "
                              f"{VARIANT_DIMS[self.variant]}, got {self.embed_dim}")
        if self.embed_dim % self.heads != 0:
            raise ConfigError(f"{prefix}.heads",
                              f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.embed_dim < 8 or self.embed_dim % 2 != 0:
            raise ConfigError(f"{prefix}.embed_dim",
                              "embed_dim must be even and at least 8 (decoder head halves it)")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"{prefix}.dropout", f"dropout {self.dropout} outside [0, 1)")
        if len(self.patch) != 3 or any(p < 1 for p in self.patch):
            raise ConfigError(f"{prefix}.patch", f"invalid patch dims {self.patch}")
        for axis, (dim, p) in enumerate(zip(self.input_dims, self.patch)):
            name = "whd"[axis]
            if dim % p != 0:
                raise ConfigError(f"{prefix}.input_dims",
                                  f"axis {name} = {dim} not divisible by patch {p}")
            if (dim // p) % 8 != 0:
                raise ConfigError(f"{prefix}.input_dims",
                                  f"patch grid axis {name} = {dim // p} not divisible by 8 "
                                  "(three 2x downsamplings must stay integral)")
        return self

    @property
    def grid(self) -> tuple[int, int, int]:
        """Patch-grid extents (G_w, G_h, G_d)."""
        return tuple(d // p for d, p in zip(self.input_dims, self.patch))

    @classmethod
    def for_variant(cls, variant: str, input_dims=(64, 64, 16), **kw) -> "ModelConfig":
        variant = variant.lower()
        if variant not in VARIANT_DIMS:
            raise ConfigError("model.variant",
                              f"unknown variant {variant!r}, expected one of {sorted(VARIANT_DIMS)}")
        return cls(variant=variant, embed_dim=VARIANT_DIMS[variant],
                   input_dims=tuple(input_dims), **kw).validate()


@dataclass
class TrainConfig:
    stage: str = "soma"
    epochs: int = 200
    batch_size: int = 64
    accumulation: int = 2
    peak_lr: float = 1e-4
    final_lr: float = 1e-6
    warmup_epochs: int = 50
    weight_decay: float = 0.01
    seed: int = 0
    augmentations: tuple[str, ...] = ("flip", "affine", "noise", "blur", "gamma")
    crop_dims: tuple[int, int, int] = (64, 64, 16)   # branch-stage crops (W, H, D)

    def validate(self, prefix: str = "train") -> "TrainConfig":
        if self.stage not in ("soma", "branch"):
            raise ConfigError(f"{prefix}.stage", f"expected 'soma' or 'branch', got {self.stage!r}")
        if self.epochs < 1:
            raise ConfigError(f"{prefix}.epochs", f"epochs {self.epochs} must be positive")
        if not (0 <= self.warmup_epochs < self.epochs):
            raise ConfigError(f"{prefix}.warmup_epochs",
                              f"warmup_epochs {self.warmup_epochs} must be < epochs {self.epochs}")
        if self.peak_lr <= 0 or self.final_lr <= 0:
            raise ConfigError(f"{prefix}.peak_lr", "learning rates must be positive")
        if self.accumulation < 1:
            raise ConfigError(f"{prefix}.accumulation",
                              f"accumulation {self.accumulation} must be >= 1")
        if self.batch_size < 1:
            raise ConfigError(f"{prefix}.batch_size", f"batch_size {self.batch_size} must be >= 1")
        known = {"flip", "affine", "noise", "blur", "gamma"}
        for a in self.augmentations:
            if a not in known:
                raise ConfigError(f"{prefix}.augmentations",
                                  f"unknown augmentation {a!r}, expected subset of {sorted(known)}")
        return self


@dataclass
class SynthConfig:
    dims: tuple[int, int, int] = (64, 64, 16)        # (W, H, D)
    cells_range: tuple[int, int] = (1, 3)
    soma_radius: tuple[float, float] = (3.0, 5.0)    # voxels in W/H; squashed in D
    branches_range: tuple[int, int] = (3, 6)
    branch_length: tuple[int, int] = (8, 20)         # walk steps (voxels)
    branch_radius: tuple[float, float] = (1.0, 2.0)
    branch_prob: float = 0.25                        # per-step bifurcation probability
    min_separation: float = 12.0                     # between soma centers, voxels
    noise_sigma: float = 0.05
    signal_noise: float = 0.08
    blur_sigma: float = 0.7
    background_amp: float = 0.08
    voxel_size: tuple[float, float, float] = (0.4, 0.4, 1.1)  # micrometers (W, H, D)
    seed: int = 0

    def validate(self, prefix: str = "synth") -> "SynthConfig":
        for name in ("cells_range", "branches_range", "branch_length",
                     "soma_radius", "branch_radius"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ConfigError(f"{prefix}.{name}", f"invalid range ({lo}, {hi})")
        if any(d < 8 for d in self.dims):
            raise ConfigError(f"{prefix}.dims", f"volume dims {self.dims} too small")
        if not (0.0 <= self.branch_prob <= 1.0):
            raise ConfigError(f"{prefix}.branch_prob",
                              f"branch_prob {self.branch_prob} outside [0, 1]")
        if max(self.soma_radius) * 2 >= min(self.dims):
            raise ConfigError(f"{prefix}.soma_radius", "somas would not fit in the volume")
        return self


def _from_dict(cls, raw: dict, prefix: str):
    """Build a dataclass from a plain dict, reporting unknown keys by path."""
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{prefix}.{key}", "unknown config field")
        # JSON has no tuples; every list-valued field here is tuple-typed
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    try:
        obj = cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(prefix, str(exc)) from exc
    return obj.validate(prefix)


def load_config(raw: dict) -> tuple[ModelConfig, TrainConfig, SynthConfig]:
    """Parse {"model": {...}, "train": {...}, "synth": {...}} (all optional)."""
    for key in raw:
        if key not in ("model", "train", "synth"):
            raise ConfigError(key, "unknown top-level config section")
    model = _from_dict(ModelConfig, raw.get("model", {}), "model")
    train = _from_dict(TrainConfig, raw.get("train", {}), "train")
    synth = _from_dict(SynthConfig, raw.get("synth", {}), "synth")
    return model, train, synth


def desk_scale_train(stage: str = "soma", **overrides) -> TrainConfig:
    """Laptop-class defaults: short schedule with the same warmup/decay shape.

    The peak rate is 10x the full-scale default: with tiny tile counts and 60
    epochs the full-scale rate never leaves the all-background plateau, while
    1e-3 reliably escapes it on the synthetic corpus.
    """
    base = dict(stage=stage, epochs=60, batch_size=4, accumulation=2,
                warmup_epochs=15, peak_lr=1e-3)
    base.update(overrides)
    return TrainConfig(**base).validate()
