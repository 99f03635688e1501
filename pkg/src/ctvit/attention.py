"""Dot-product, multi-head and additive attention, plus the CLS-only
cross-branch fusion block built from either of them."""

from __future__ import annotations

import math

from .nn import LayerNorm, Linear, Module, Parameter
from .tensor import ShapeError, Tensor, concat, gelu, matmul, softmax, swapaxes, tanh
from .tokens import TokenSequence

DOT_PRODUCT = "dot_product"
ADDITIVE = "additive"
FUSION_VARIANTS = (DOT_PRODUCT, ADDITIVE)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v over the last two axes."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    return matmul(softmax(scores, axis=-1), v)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, num_heads: int, bias: bool = True):
        if dim % num_heads:
            raise ValueError(f"dim {dim} is not divisible by num_heads {num_heads}")
        self.dim = dim
        self.num_heads = num_heads
        self.w_q = Linear(dim, dim, bias)
        self.w_k = Linear(dim, dim, bias)
        self.w_v = Linear(dim, dim, bias)
        self.w_o = Linear(dim, dim, bias)

    @property
    def head_dim(self) -> int:
        return self.dim // self.num_heads

    def _split(self, x: Tensor) -> Tensor:
        # (..., n, d) -> (..., h, n, d_k)
        lead, n = x.shape[:-2], x.shape[-2]
        x = x.reshape(*lead, n, self.num_heads, self.head_dim)
        return swapaxes(x, -2, -3)

    def _merge(self, x: Tensor) -> Tensor:
        x = swapaxes(x, -2, -3)
        lead, n = x.shape[:-3], x.shape[-3]
        return x.reshape(*lead, n, self.dim)

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor) -> Tensor:
        for x in (q_in, k_in, v_in):
            if x.shape[-1] != self.dim:
                raise ShapeError(f"input width {x.shape[-1]} != attention dim {self.dim}")
        heads = scaled_dot_attention(
            self._split(self.w_q(q_in)),
            self._split(self.w_k(k_in)),
            self._split(self.w_v(v_in)),
        )
        return self.w_o(self._merge(heads))


def multi_head_attention(mha: MultiHeadAttention, q_in: Tensor, k_in: Tensor, v_in: Tensor) -> Tensor:
    return mha(q_in, k_in, v_in)


class AdditiveAttention(Module):
    """Bahdanau scoring ``v_a . tanh(W_a [query; key])``.

    ``w_a`` is stored (2*dim, hidden) so the top rows act on the query and
    the bottom rows on the key; the query half is evaluated once and
    broadcast over keys.
    """

    def __init__(self, dim: int, hidden: int | None = None):
        self.dim = dim
        self.hidden = hidden or dim
        self.w_a = Parameter((2 * dim, self.hidden))
        self.v_a = Parameter((self.hidden,))

    def scores(self, query: Tensor, keys: Tensor) -> Tensor:
        d = self.dim
        if query.shape[-1] != d or keys.shape[-1] != d:
            raise ShapeError(f"additive attention expects width {d}, got {query.shape}/{keys.shape}")
        hq = matmul(query.reshape(*query.shape[:-1], 1, d), self.w_a[:d])
        hk = matmul(keys, self.w_a[d:])
        e = tanh(hq + hk)
        return matmul(e, self.v_a.reshape(self.hidden, 1)).reshape(*keys.shape[:-1])

    def weights(self, query: Tensor, keys: Tensor) -> Tensor:
        return softmax(self.scores(query, keys), axis=-1)

    def __call__(self, query: Tensor, keys: Tensor, values: Tensor) -> Tensor:
        if keys.shape[-2] != values.shape[-2]:
            raise ShapeError(f"{keys.shape[-2]} keys but {values.shape[-2]} values")
        w = self.weights(query, keys)
        out = matmul(w.reshape(*w.shape[:-1], 1, w.shape[-1]), values)
        return out.reshape(*out.shape[:-2], values.shape[-1])


def additive_attention(att: AdditiveAttention, query: Tensor, keys: Tensor, values: Tensor) -> Tensor:
    return att(query, keys, values)


class FusionUnit(Module):
    """Updates one branch's CLS token from the other branch's patch tokens.

    The CLS is projected into the other branch's width when the widths
    differ, attends as the only query over ``LN([cls | other patches])``, and
    the result is projected back and added to the original CLS.
    """

    def __init__(
        self,
        own_dim: int,
        other_dim: int,
        num_heads: int,
        variant: str = DOT_PRODUCT,
        additive_hidden: int | None = None,
        eps: float = 1e-6,
    ):
        if variant not in FUSION_VARIANTS:
            raise ValueError(f"unknown fusion variant {variant!r}")
        self.variant = variant
        self.projecting = own_dim != other_dim
        if self.projecting:
            self.proj_norm = LayerNorm(own_dim, eps)
            self.proj = Linear(own_dim, other_dim)
        self.norm = LayerNorm(other_dim, eps)
        if variant == DOT_PRODUCT:
            self.attn = MultiHeadAttention(other_dim, num_heads)
        else:
            self.w_v = Linear(other_dim, other_dim)
            self.score = AdditiveAttention(other_dim, additive_hidden)
            self.w_o = Linear(other_dim, other_dim)
        if self.projecting:
            self.back = Linear(other_dim, own_dim)

    def output_projection(self) -> Linear:
        """The last linear map before the residual add."""
        if self.projecting:
            return self.back
        return self.attn.w_o if self.variant == DOT_PRODUCT else self.w_o

    def __call__(self, cls: Tensor, other_patches: Tensor) -> Tensor:
        q = self.proj(gelu(self.proj_norm(cls))) if self.projecting else cls
        x = self.norm(concat([q, other_patches], axis=-2))
        query = x[..., :1, :]
        if self.variant == DOT_PRODUCT:
            update = self.attn(query, x, x)
        else:
            pooled = self.score(query.reshape(*query.shape[:-2], query.shape[-1]), x, self.w_v(x))
            update = self.w_o(pooled.reshape(*query.shape))
        if self.projecting:
            update = self.back(update)
        return cls + update


class CrossAttentionFusion(Module):
    """Bidirectional CLS exchange between two token streams."""

    def __init__(
        self,
        dim_a: int,
        dim_b: int,
        heads_a: int,
        heads_b: int,
        variant: str = DOT_PRODUCT,
        additive_hidden: int | None = None,
        eps: float = 1e-6,
    ):
        self.variant = variant
        # attention runs in the width of the stream being read, so it takes that stream's head count
        self.a_from_b = FusionUnit(dim_a, dim_b, heads_b, variant, additive_hidden, eps)
        self.b_from_a = FusionUnit(dim_b, dim_a, heads_a, variant, additive_hidden, eps)

    def __call__(self, a: TokenSequence, b: TokenSequence) -> tuple[TokenSequence, TokenSequence]:
        return cross_attention_fuse(self, a, b)


def cross_attention_fuse(
    fusion: CrossAttentionFusion, branch_a: TokenSequence, branch_b: TokenSequence
) -> tuple[TokenSequence, TokenSequence]:
    for seq in (branch_a, branch_b):
        if seq.length < 2:
            raise ValueError("fusion needs a CLS token followed by at least one patch token")
    cls_a = fusion.a_from_b(branch_a.cls, branch_b.patches)
    cls_b = fusion.b_from_a(branch_b.cls, branch_a.patches)
    return (
        branch_a.replace(concat([cls_a, branch_a.patches], axis=-2)),
        branch_b.replace(concat([cls_b, branch_b.patches], axis=-2)),
    )
