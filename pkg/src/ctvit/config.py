"""Model/training configuration, the ``key = value`` config file format and presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Architecture description; defaults are the full two-task model at 224px.

    Phase-2 depths come from fitting the analytic parameter/FLOP counts
    (see ``complexity.calibrate_phase2``); the rest mirror CrossViT-B.
    """

    image_side: int = 224
    sbranch_input_side: int = 0  # 0: largest multiple of patch_s not above image_side
    patch_l: int = 16
    patch_s: int = 12
    dim_l: int = 768
    dim_s: int = 384
    depth_l: int = 4
    depth_s: int = 1
    heads_l: int = 12
    heads_s: int = 12
    l1: int = 3
    depth_e: int = 2
    depth_m: int = 2
    l2: int = 2
    mlp_ratio: float = 4.0
    num_expr_classes: int = 7
    num_mask_classes: int = 2
    fusion_variant_last: str = "additive"
    use_phase2: bool = True
    additive_hidden: int = 0  # 0: same as branch width
    ln_eps: float = 1e-6
    seed: int = 0

    @property
    def sbranch_side(self) -> int:
        if self.sbranch_input_side:
            return self.sbranch_input_side
        return (self.image_side // self.patch_s) * self.patch_s

    @property
    def tokens_l(self) -> int:
        return 1 + (self.image_side // self.patch_l) ** 2

    @property
    def tokens_s(self) -> int:
        return 1 + (self.sbranch_side // self.patch_s) ** 2

    def validate(self) -> ModelConfig:
        if self.image_side % self.patch_l:
            raise ConfigError(f"image_side {self.image_side} not divisible by patch_l {self.patch_l}")
        if self.sbranch_side % self.patch_s or self.sbranch_side <= 0:
            raise ConfigError(f"S-branch side {self.sbranch_side} not divisible by patch_s {self.patch_s}")
        for dim, heads, tag in ((self.dim_l, self.heads_l, "l"), (self.dim_s, self.heads_s, "s")):
            if dim <= 0 or heads <= 0 or dim % heads:
                raise ConfigError(f"dim_{tag}={dim} must be a positive multiple of heads_{tag}={heads}")
        if self.l1 < 1 or self.l2 < 1:
            raise ConfigError("l1 and l2 must be at least 1")
        if min(self.depth_l, self.depth_s, self.depth_e, self.depth_m) < 0:
            raise ConfigError("depths must be non-negative")
        if self.num_expr_classes < 2 or self.num_mask_classes < 2:
            raise ConfigError("class counts must be at least 2")
        if self.fusion_variant_last not in ("additive", "dot_product"):
            raise ConfigError(f"fusion_variant_last must be additive or dot_product, not {self.fusion_variant_last!r}")
        if self.mlp_ratio <= 0 or self.ln_eps <= 0 or self.additive_hidden < 0:
            raise ConfigError("mlp_ratio and ln_eps must be positive, additive_hidden non-negative")
        return self


@dataclass
class ViTConfig:
    """Plain single-branch ViT, used only as a complexity reference."""

    image_side: int = 224
    patch: int = 16
    dim: int = 768
    depth: int = 12
    heads: int = 12
    mlp_ratio: float = 4.0
    num_classes: int = 1000
    ln_eps: float = 1e-6

    @property
    def tokens(self) -> int:
        return 1 + (self.image_side // self.patch) ** 2

    def validate(self) -> ViTConfig:
        if self.image_side % self.patch or self.dim % self.heads:
            raise ConfigError("invalid ViT geometry")
        return self


@dataclass
class TrainingConfig:
    batch_size: int = 16
    learning_rate: float = 1e-4
    epochs_stage1: int = 8
    epochs_stage2: int = 2
    optimizer: str = "adam"
    lambda_expr: float = 1.0
    lambda_mask: float = 1.0
    lambda_shared: float = 1.0
    seed: int = 0
    norm_mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    norm_std: tuple[float, float, float] = (0.5, 0.5, 0.5)
    train_data: str = ""
    test_data: str = ""
    toy_train: int = 700
    toy_test: int = 280

    def validate(self) -> TrainingConfig:
        if self.batch_size < 1 or self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ConfigError("batch_size must be positive and epochs non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, not {self.optimizer!r}")
        lams = (self.lambda_expr, self.lambda_mask, self.lambda_shared)
        if min(lams) < 0 or self.lambda_expr + self.lambda_mask <= 0:
            raise ConfigError("loss weights must be >= 0 with lambda_expr + lambda_mask > 0")
        if any(s <= 0 for s in self.norm_std) or len(self.norm_mean) != 3 or len(self.norm_std) != 3:
            raise ConfigError("norm_mean/norm_std need three channels, std positive")
        return self


TRAIN_PREFIX = "train."


def _parse_value(raw: str, current, key: str):
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(float(v) for v in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str) -> tuple[ModelConfig, TrainingConfig]:
    model, train = ModelConfig(), TrainingConfig()
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainingConfig)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key.startswith(TRAIN_PREFIX) and key[len(TRAIN_PREFIX):] in train_keys:
            name = key[len(TRAIN_PREFIX):]
            setattr(train, name, _parse_value(raw, getattr(train, name), key))
        elif key in model_keys:
            setattr(model, key, _parse_value(raw, getattr(model, key), key))
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return model.validate(), train.validate()


def load_config(path: str | Path) -> tuple[ModelConfig, TrainingConfig]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    return str(value)


def dump_config(model: ModelConfig, train: TrainingConfig | None = None) -> str:
    lines = ["# model"]
    lines += [f"{f.name} = {_format(getattr(model, f.name))}" for f in fields(model)]
    if train is not None:
        lines.append("# training")
        lines += [f"{TRAIN_PREFIX}{f.name} = {_format(getattr(train, f.name))}" for f in fields(train)]
    return "\n".join(lines) + "\n"


def as_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


# presets -------------------------------------------------------------------

def crossvit_b() -> ModelConfig:
    """CrossViT-B backbone with the two-task heads and no phase 2."""
    return ModelConfig(use_phase2=False)


def proposed() -> ModelConfig:
    return ModelConfig()


def vit_b16() -> ViTConfig:
    return ViTConfig()


def tiny() -> ModelConfig:
    """Desk-scale model for the synthetic two-task data (32px inputs)."""
    return ModelConfig(
        image_side=32, patch_l=16, patch_s=8, dim_l=32, dim_s=16,
        depth_l=1, depth_s=1, heads_l=2, heads_s=2, l1=2,
        depth_e=1, depth_m=1, l2=2, mlp_ratio=2.0,
    )


def tiny_training() -> TrainingConfig:
    """The reported schedule (batch 16, lr 1e-4, 8 + 2 epochs) on 700/280 toy samples."""
    return TrainingConfig()


PRESETS = {
    "vit-b16": vit_b16,
    "crossvit-b": crossvit_b,
    "proposed": proposed,
}

VARIANTS = ("full", "dot-product-last", "phase1-only")


def apply_variant(cfg: ModelConfig, variant: str) -> ModelConfig:
    if variant == "full":
        return dataclasses.replace(cfg, fusion_variant_last="additive", use_phase2=True)
    if variant == "dot-product-last":
        return dataclasses.replace(cfg, fusion_variant_last="dot_product", use_phase2=True)
    if variant == "phase1-only":
        return dataclasses.replace(cfg, use_phase2=False)
    raise ConfigError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")


__all__ = [
    "ConfigError", "ModelConfig", "ViTConfig", "TrainingConfig", "parse_config_text",
    "load_config", "dump_config", "PRESETS", "VARIANTS", "apply_variant", "tiny",
]
