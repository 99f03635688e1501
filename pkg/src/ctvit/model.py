"""The two-phase cross-task network.

Phase 1 is a CrossViT-style pair of branches (large patches / small
patches) exchanging CLS tokens ``l1`` times. Phase 2 duplicates the
S-branch output into an expression branch and a mask branch that exchange
CLS tokens ``l2`` times; the last exchange can use additive attention.
Each task head reads its branch CLS concatenated with the L-branch CLS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import DOT_PRODUCT, CrossAttentionFusion
from .config import ModelConfig
from .nn import LayerNorm, Linear, Module
from .tensor import Tensor, concat
from .tokens import TokenSequence
from .vit import BranchStem, EncoderBlock, branch_forward, resize_bilinear


def _blocks(n: int, dim: int, heads: int, cfg: ModelConfig) -> list[EncoderBlock]:
    return [EncoderBlock(dim, heads, cfg.mlp_ratio, cfg.ln_eps) for _ in range(n)]


class Phase1Stage(Module):
    def __init__(self, cfg: ModelConfig):
        self.l_blocks = _blocks(cfg.depth_l, cfg.dim_l, cfg.heads_l, cfg)
        self.s_blocks = _blocks(cfg.depth_s, cfg.dim_s, cfg.heads_s, cfg)
        self.fusion = CrossAttentionFusion(
            cfg.dim_l, cfg.dim_s, cfg.heads_l, cfg.heads_s, DOT_PRODUCT, eps=cfg.ln_eps
        )


class Phase1(Module):
    def __init__(self, cfg: ModelConfig):
        self.l_stem = BranchStem(cfg.image_side, cfg.patch_l, cfg.dim_l)
        self.s_stem = BranchStem(cfg.sbranch_side, cfg.patch_s, cfg.dim_s)
        self.stages = [Phase1Stage(cfg) for _ in range(cfg.l1)]
        self.norm_l = LayerNorm(cfg.dim_l, cfg.ln_eps)
        self.norm_s = LayerNorm(cfg.dim_s, cfg.ln_eps)


class Phase2Stage(Module):
    def __init__(self, cfg: ModelConfig, variant: str):
        self.e_blocks = _blocks(cfg.depth_e, cfg.dim_s, cfg.heads_s, cfg)
        self.m_blocks = _blocks(cfg.depth_m, cfg.dim_s, cfg.heads_s, cfg)
        self.fusion = CrossAttentionFusion(
            cfg.dim_s, cfg.dim_s, cfg.heads_s, cfg.heads_s, variant,
            additive_hidden=cfg.additive_hidden or None, eps=cfg.ln_eps,
        )


class Phase2(Module):
    def __init__(self, cfg: ModelConfig):
        self.stages = [
            Phase2Stage(cfg, cfg.fusion_variant_last if i == cfg.l2 - 1 else DOT_PRODUCT)
            for i in range(cfg.l2)
        ]
        self.norm_e = LayerNorm(cfg.dim_s, cfg.ln_eps)
        self.norm_m = LayerNorm(cfg.dim_s, cfg.ln_eps)


class ClsFusionHead(Module):
    """Linear classifier over ``[project(cls_branch) | cls_l]``."""

    def __init__(self, dim_branch: int, dim_l: int, num_classes: int):
        self.proj = Linear(dim_branch, dim_l)
        self.fc = Linear(2 * dim_l, num_classes)

    def __call__(self, cls_branch: Tensor, cls_l: Tensor) -> Tensor:
        return self.fc(concat([self.proj(cls_branch), cls_l], axis=-1))


class Heads(Module):
    def __init__(self, cfg: ModelConfig):
        self.shared = ClsFusionHead(cfg.dim_s, cfg.dim_l, cfg.num_expr_classes)
        if cfg.use_phase2:
            self.expr = ClsFusionHead(cfg.dim_s, cfg.dim_l, cfg.num_expr_classes)
        self.mask = ClsFusionHead(cfg.dim_s, cfg.dim_l, cfg.num_mask_classes)


@dataclass
class Phase1Output:
    cls_l: Tensor  # (B, dim_l)
    cls_s: Tensor  # (B, dim_s)
    patches_l: Tensor
    patches_s: Tensor
    grid_s: tuple[int, int]


@dataclass
class Predictions:
    expr_logits: Tensor
    mask_logits: Tensor
    shared_logits: Tensor


class CrossTaskModel(Module):
    def __init__(self, config: ModelConfig, initialize: bool = True):
        config.validate()
        self.config = config
        self.phase1 = Phase1(config)
        if config.use_phase2:
            self.phase2 = Phase2(config)
        self.heads = Heads(config)
        if initialize:
            self.initialize(config.seed)

    def stage1_parameters(self) -> list[tuple[str, Tensor]]:
        """Phase-1 backbone plus the shared classifier."""
        return [
            (n, p) for n, p in self.named_parameters()
            if n.startswith("phase1.") or n.startswith("heads.shared.")
        ]

    def frozen_in_stage1(self) -> list[tuple[str, Tensor]]:
        keep = {n for n, _ in self.stage1_parameters()}
        return [(n, p) for n, p in self.named_parameters() if n not in keep]

    def __call__(self, images: np.ndarray) -> Predictions:
        return predict(self, images)


def _squeeze_cls(cls: Tensor) -> Tensor:
    return cls.reshape(cls.shape[0], cls.shape[-1])


def _as_batch(images) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    return images[None] if images.ndim == 3 else images


def phase1_forward(model: CrossTaskModel, images) -> Phase1Output:
    cfg = model.config
    images = _as_batch(images)
    if images.shape[1:] != (3, cfg.image_side, cfg.image_side):
        raise ValueError(f"expected images of shape (B, 3, {cfg.image_side}, {cfg.image_side}), got {images.shape}")
    p1 = model.phase1
    seq_l = p1.l_stem(images)
    seq_s = p1.s_stem(resize_bilinear(images, cfg.sbranch_side))
    for stage in p1.stages:
        seq_l = branch_forward(stage.l_blocks, seq_l)
        seq_s = branch_forward(stage.s_blocks, seq_s)
        seq_l, seq_s = stage.fusion(seq_l, seq_s)
    return Phase1Output(
        cls_l=_squeeze_cls(seq_l.cls),
        cls_s=_squeeze_cls(seq_s.cls),
        patches_l=seq_l.patches,
        patches_s=seq_s.patches,
        grid_s=seq_s.grid,
    )


def phase2_forward(model: CrossTaskModel, p1: Phase1Output) -> tuple[Tensor, Tensor]:
    cfg = model.config
    if not cfg.use_phase2:
        raise ValueError("model was built without phase 2")
    if p1.cls_s.shape[-1] != cfg.dim_s:
        raise ValueError(f"phase-1 S width {p1.cls_s.shape[-1]} != dim_s {cfg.dim_s}")
    start = concat([p1.cls_s.reshape(p1.cls_s.shape[0], 1, cfg.dim_s), p1.patches_s], axis=1)
    seq_e = TokenSequence(start, p1.grid_s)
    seq_m = TokenSequence(start, p1.grid_s)
    for stage in model.phase2.stages:
        seq_e = branch_forward(stage.e_blocks, seq_e)
        seq_m = branch_forward(stage.m_blocks, seq_m)
        seq_e, seq_m = stage.fusion(seq_e, seq_m)
    return _squeeze_cls(seq_e.cls), _squeeze_cls(seq_m.cls)


def shared_logits(model: CrossTaskModel, p1: Phase1Output) -> Tensor:
    ph = model.phase1
    return model.heads.shared(ph.norm_s(p1.cls_s), ph.norm_l(p1.cls_l))


def predict(model: CrossTaskModel, images) -> Predictions:
    p1 = phase1_forward(model, images)
    ph, heads = model.phase1, model.heads
    cls_l = ph.norm_l(p1.cls_l)
    cls_s = ph.norm_s(p1.cls_s)
    shared = heads.shared(cls_s, cls_l)
    if not model.config.use_phase2:
        return Predictions(expr_logits=shared, mask_logits=heads.mask(cls_s, cls_l), shared_logits=shared)
    cls_e, cls_m = phase2_forward(model, p1)
    p2 = model.phase2
    return Predictions(
        expr_logits=heads.expr(p2.norm_e(cls_e), cls_l),
        mask_logits=heads.mask(p2.norm_m(cls_m), cls_l),
        shared_logits=shared,
    )


def argmax_lowest(logits: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    return np.argmax(np.asarray(logits), axis=-1)
