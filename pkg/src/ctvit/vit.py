"""Patch tokenisation and the pre-norm transformer encoder block."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .attention import MultiHeadAttention
from .nn import LayerNorm, Linear, Module, Parameter
from .tensor import ShapeError, Tensor, broadcast_to, concat, gelu
from .tokens import TokenSequence


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, C, S, S) -> (B, N, C*patch*patch); raster order over the patch
    grid, each patch flattened channel-major."""
    b, c, h, w = images.shape
    if h % patch or w % patch:
        raise ValueError(f"image side {h}x{w} is not divisible by patch size {patch}")
    rows, cols = h // patch, w // patch
    x = images.reshape(b, c, rows, patch, cols, patch).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, rows * cols, c * patch * patch)


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    # half-pixel centres, edge-clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), i0] += 1.0 - frac
    m[np.arange(n_out), i1] += frac
    return m


def resize_bilinear(images: np.ndarray, side: int) -> np.ndarray:
    """Resize the two trailing axes of ``images`` to ``side``x``side``."""
    h, w = images.shape[-2:]
    if (h, w) == (side, side):
        return images
    rh = _bilinear_matrix(h, side)
    rw = _bilinear_matrix(w, side)
    return rh @ images @ rw.T


class PatchEmbed(Module):
    """Linear embedding ``x_i W_e + b_e`` of flattened patches."""

    def __init__(self, patch_size: int, dim: int, in_channels: int = 3):
        self.patch_size = patch_size
        self.in_channels = in_channels
        self.dim = dim
        self.proj = Linear(in_channels * patch_size * patch_size, dim)

    def __call__(self, images: np.ndarray) -> Tensor:
        return self.proj(Tensor(patchify(images, self.patch_size)))


class BranchStem(Module):
    """Patch embedding plus learned CLS token and absolute position table."""

    def __init__(self, image_side: int, patch_size: int, dim: int, in_channels: int = 3):
        if image_side % patch_size:
            raise ValueError(f"image side {image_side} is not divisible by patch size {patch_size}")
        self.image_side = image_side
        self.grid = (image_side // patch_size, image_side // patch_size)
        self.embed = PatchEmbed(patch_size, dim, in_channels)
        self.cls = Parameter((1, 1, dim), init="zeros")
        self.pos = Parameter((1 + self.grid[0] * self.grid[1], dim), init="zeros")

    def __call__(self, images: np.ndarray) -> TokenSequence:
        return tokenize(images, self.embed, self.pos, self.cls)


def tokenize(images: np.ndarray, embed: PatchEmbed, pos: Tensor, cls: Tensor) -> TokenSequence:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    side = images.shape[-1]
    if side % embed.patch_size:
        raise ValueError(f"image side {side} is not divisible by patch size {embed.patch_size}")
    grid = (images.shape[-2] // embed.patch_size, side // embed.patch_size)
    patches = embed(images)
    cls_tok = broadcast_to(cls.reshape(1, 1, embed.dim), (images.shape[0], 1, embed.dim))
    tokens = concat([cls_tok, patches], axis=1) + pos
    return TokenSequence(tokens, grid)


class EncoderBlock(Module):
    """x += MHSA(LN(x)); x += MLP(LN(x))."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0, eps: float = 1e-6):
        self.dim = dim
        hidden = int(dim * mlp_ratio)
        self.norm1 = LayerNorm(dim, eps)
        self.attn = MultiHeadAttention(dim, num_heads)
        self.norm2 = LayerNorm(dim, eps)
        self.fc1 = Linear(dim, hidden)
        self.fc2 = Linear(hidden, dim)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise ShapeError(f"block width {self.dim} got tokens of width {x.shape[-1]}")
        h = self.norm1(x)
        x = x + self.attn(h, h, h)
        return x + self.fc2(gelu(self.fc1(self.norm2(x))))


def encoder_block_forward(block: EncoderBlock, seq: TokenSequence) -> TokenSequence:
    return seq.replace(block(seq.tokens))


def branch_forward(blocks: Sequence[EncoderBlock], seq: TokenSequence) -> TokenSequence:
    for block in blocks:
        seq = encoder_block_forward(block, seq)
    return seq


class VisionTransformer(Module):
    """Single-branch ViT classifier; kept for complexity reference points."""

    def __init__(self, config):
        self.config = config
        c = config
        self.stem = BranchStem(c.image_side, c.patch, c.dim)
        self.blocks = [EncoderBlock(c.dim, c.heads, c.mlp_ratio, c.ln_eps) for _ in range(c.depth)]
        self.norm = LayerNorm(c.dim, c.ln_eps)
        self.head = Linear(c.dim, c.num_classes)

    def __call__(self, images: np.ndarray) -> Tensor:
        seq = branch_forward(self.blocks, self.stem(images))
        cls = self.norm(seq.cls)
        return self.head(cls.reshape(cls.shape[0], cls.shape[-1]))
