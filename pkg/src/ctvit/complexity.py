"""Closed-form parameter and FLOP counts.

Nothing here instantiates a model. FLOPs count one multiply-accumulate as
one FLOP; linear layers and the two attention products (QK^T and the
weighted sum of values) are counted, softmax/normalisation/activations and
the input resize are not.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable

from .config import ModelConfig, ViTConfig


@dataclass(frozen=True)
class Cost:
    params: int = 0
    flops: int = 0

    def __add__(self, other: Cost) -> Cost:
        return Cost(self.params + other.params, self.flops + other.flops)

    def __mul__(self, k: int) -> Cost:
        return Cost(self.params * k, self.flops * k)

    __rmul__ = __mul__


def linear(d_in: int, d_out: int, tokens: int, bias: bool = True) -> Cost:
    return Cost(d_in * d_out + (d_out if bias else 0), tokens * d_in * d_out)


def layer_norm(d: int) -> Cost:
    return Cost(2 * d, 0)


def self_attention(d: int, tokens: int) -> Cost:
    proj = 4 * linear(d, d, tokens)
    return proj + Cost(0, 2 * tokens * tokens * d)


def encoder_block(d: int, tokens: int, mlp_ratio: float) -> Cost:
    hidden = int(d * mlp_ratio)
    return (
        2 * layer_norm(d)
        + self_attention(d, tokens)
        + linear(d, hidden, tokens)
        + linear(hidden, d, tokens)
    )


def stem(side: int, patch: int, d: int) -> Cost:
    n = (side // patch) ** 2
    return linear(3 * patch * patch, d, n) + Cost(d + (n + 1) * d, 0)


def fusion_unit(own: int, other: int, other_tokens: int, variant: str, hidden: int = 0) -> Cost:
    """One CLS query against ``other_tokens`` keys (projected CLS + patches)."""
    t = other_tokens
    c = layer_norm(other)
    if own != other:
        c += layer_norm(own) + linear(own, other, 1) + linear(other, own, 1)
    if variant == "dot_product":
        c += linear(other, other, 1)          # query
        c += 2 * linear(other, other, t)      # keys, values
        c += Cost(0, 2 * t * other)           # q k^T, weights @ v
        c += linear(other, other, 1)          # output
    else:
        h = hidden or other
        c += linear(other, other, t)          # values
        c += Cost(2 * other * h + h, other * h + t * other * h + t * h)  # W_a halves, v_a
        c += Cost(0, t * other)               # weights @ v
        c += linear(other, other, 1)          # output
    return c


def cls_head(d_branch: int, d_l: int, classes: int) -> Cost:
    return linear(d_branch, d_l, 1) + linear(2 * d_l, classes, 1)


def breakdown(cfg: ModelConfig | ViTConfig) -> dict[str, Cost]:
    """Per-module subtotals; values sum to the model total."""
    if isinstance(cfg, ViTConfig):
        return {
            "stem": stem(cfg.image_side, cfg.patch, cfg.dim),
            "blocks": cfg.depth * encoder_block(cfg.dim, cfg.tokens, cfg.mlp_ratio),
            "norm": layer_norm(cfg.dim),
            "head": linear(cfg.dim, cfg.num_classes, 1),
        }
    c = cfg
    tl, ts = c.tokens_l, c.tokens_s
    parts = {
        "phase1.l_stem": stem(c.image_side, c.patch_l, c.dim_l),
        "phase1.s_stem": stem(c.sbranch_side, c.patch_s, c.dim_s),
        "phase1.l_blocks": c.l1 * c.depth_l * encoder_block(c.dim_l, tl, c.mlp_ratio),
        "phase1.s_blocks": c.l1 * c.depth_s * encoder_block(c.dim_s, ts, c.mlp_ratio),
        "phase1.fusions": c.l1 * (
            fusion_unit(c.dim_l, c.dim_s, ts, "dot_product")
            + fusion_unit(c.dim_s, c.dim_l, tl, "dot_product")
        ),
        "phase1.norms": layer_norm(c.dim_l) + layer_norm(c.dim_s),
    }
    if c.use_phase2:
        variants = ["dot_product"] * (c.l2 - 1) + [c.fusion_variant_last]
        parts["phase2.e_blocks"] = c.l2 * c.depth_e * encoder_block(c.dim_s, ts, c.mlp_ratio)
        parts["phase2.m_blocks"] = c.l2 * c.depth_m * encoder_block(c.dim_s, ts, c.mlp_ratio)
        parts["phase2.fusions"] = sum(
            (2 * fusion_unit(c.dim_s, c.dim_s, ts, v, c.additive_hidden) for v in variants), Cost()
        )
        parts["phase2.norms"] = 2 * layer_norm(c.dim_s)
    heads = cls_head(c.dim_s, c.dim_l, c.num_expr_classes) + cls_head(c.dim_s, c.dim_l, c.num_mask_classes)
    if c.use_phase2:
        heads += cls_head(c.dim_s, c.dim_l, c.num_expr_classes)
    parts["heads"] = heads
    return parts


def total(cfg) -> Cost:
    return sum(breakdown(cfg).values(), Cost())


def count_parameters(cfg) -> int:
    return total(cfg).params


def estimate_flops(cfg) -> int:
    return total(cfg).flops


def rel_error(value: float, target: float) -> float:
    return abs(value - target) / target


def calibrate_phase2(
    base: ModelConfig,
    param_target: float = 125.8e6,
    flop_target: float = 24.6e9,
    param_tol: float = 0.05,
    flop_tol: float = 0.10,
    depths: Iterable[int] = range(0, 9),
    fusions: Iterable[int] = (2,),
) -> tuple[ModelConfig, float]:
    """Pick a symmetric phase-2 depth (and optionally fusion count) that
    minimises the worse of the two relative errors, each scaled by its
    tolerance. Returns the config and that scaled error (<= 1 means both fit)."""
    best, best_err = None, float("inf")
    for l2 in fusions:
        for depth in depths:
            cand = dataclasses.replace(base, depth_e=depth, depth_m=depth, l2=l2, use_phase2=True)
            err = max(
                rel_error(count_parameters(cand), param_target) / param_tol,
                rel_error(estimate_flops(cand), flop_target) / flop_tol,
            )
            if err < best_err:
                best, best_err = cand, err
    return best, best_err
