import numpy as np
import pytest

from conftest import randomize, ref_block
from ctvit.config import ModelConfig
from ctvit.gradcheck import check_gradients, projection_loss
from ctvit.tensor import ShapeError, Tensor
from ctvit.tokens import TokenSequence
from ctvit.vit import (
    BranchStem, EncoderBlock, PatchEmbed, _bilinear_matrix, branch_forward,
    encoder_block_forward, patchify, resize_bilinear, tokenize,
)


def test_default_token_counts():
    cfg = ModelConfig()
    assert cfg.tokens_l == 197
    assert cfg.sbranch_side == 216
    assert cfg.tokens_s == 18 * 18 + 1 == 325
    assert BranchStem(224, 16, 8).pos.shape == (197, 8)
    assert BranchStem(cfg.sbranch_side, 12, 8).pos.shape == (325, 8)


def test_stem_token_counts_from_images():
    img = np.random.default_rng(0).normal(size=(2, 3, 224, 224))
    assert BranchStem(224, 16, 4)(img).tokens.shape == (2, 197, 4)
    small = resize_bilinear(img, 216)
    assert small.shape == (2, 3, 216, 216)
    assert BranchStem(216, 12, 4)(small).tokens.shape == (2, 325, 4)


def test_indivisible_side_rejected():
    with pytest.raises(ValueError, match="divisible"):
        BranchStem(224, 12, 4)
    with pytest.raises(ValueError, match="divisible"):
        patchify(np.zeros((1, 3, 10, 10)), 4)


def test_zero_embedding_gives_zero_patches_and_keeps_cls():
    stem = BranchStem(8, 4, 5)
    stem.cls.data[...] = np.arange(5.0)
    seq = stem(np.random.default_rng(1).normal(size=(3, 8, 8)))
    np.testing.assert_array_equal(seq.patches.data, 0.0)
    np.testing.assert_array_equal(seq.cls.data[0, 0], np.arange(5.0))


def test_identity_embedding_recovers_raw_patches():
    p, side = 2, 6
    embed = PatchEmbed(p, 3 * p * p)
    embed.proj.weight.data[...] = np.eye(3 * p * p)
    embed.proj.bias.data[...] = 0.0
    img = np.random.default_rng(2).normal(size=(3, side, side))
    seq = tokenize(img, embed, Tensor(np.zeros((10, 12))), Tensor(np.zeros((1, 1, 12))))
    assert seq.grid == (3, 3)
    for r in range(3):
        for c in range(3):
            raw = img[:, r * p:(r + 1) * p, c * p:(c + 1) * p].reshape(-1)
            np.testing.assert_array_equal(seq.patches.data[0, r * 3 + c], raw)


def test_positions_added_to_every_slot():
    stem = randomize(BranchStem(4, 2, 3), seed=3)
    img = np.zeros((1, 3, 4, 4))
    seq = stem(img)
    np.testing.assert_allclose(seq.tokens.data[0, 0], stem.cls.data[0, 0] + stem.pos.data[0])
    np.testing.assert_allclose(seq.tokens.data[0, 1:], stem.embed.proj.bias.data + stem.pos.data[1:])


def test_bilinear_resize_preserves_constants_and_rows_sum_to_one():
    for n_in, n_out in [(224, 216), (32, 24), (5, 9)]:
        m = _bilinear_matrix(n_in, n_out)
        np.testing.assert_allclose(m.sum(1), 1.0, atol=1e-14)
    img = np.full((3, 224, 224), 0.7)
    np.testing.assert_allclose(resize_bilinear(img, 216), 0.7, atol=1e-14)


def test_bilinear_resize_identity_when_same_side():
    img = np.random.default_rng(4).normal(size=(2, 3, 8, 8))
    assert resize_bilinear(img, 8) is img


# encoder block -----------------------------------------------------------------

def _zero_outputs(block):
    for lin in (block.attn.w_o, block.fc2):
        lin.weight.data[...] = 0.0
        lin.bias.data[...] = 0.0


def test_block_residual_identity():
    block = randomize(EncoderBlock(8, 2), seed=5)
    _zero_outputs(block)
    x = Tensor(np.random.default_rng(5).normal(size=(2, 5, 8)))
    assert block(x).data.tobytes() == x.data.tobytes()


def test_block_single_token_matches_step_oracle():
    block = randomize(EncoderBlock(4, 1, mlp_ratio=2.0), seed=6)
    x = np.random.default_rng(6).normal(size=(1, 4))
    np.testing.assert_allclose(block(Tensor(x)).data, ref_block(block, x), rtol=0, atol=1e-12)


def test_block_matches_oracle_multi_token_multi_head():
    block = randomize(EncoderBlock(6, 3, mlp_ratio=4.0), seed=7)
    x = np.random.default_rng(7).normal(size=(2, 5, 6))
    np.testing.assert_allclose(block(Tensor(x)).data, ref_block(block, x), rtol=0, atol=1e-12)


def test_block_preserves_shape_and_rejects_wrong_width():
    block = EncoderBlock(8, 2)
    block.initialize(0)
    seq = TokenSequence(Tensor(np.ones((1, 5, 8))), (2, 2))
    assert encoder_block_forward(block, seq).tokens.shape == (1, 5, 8)
    with pytest.raises(ShapeError):
        block(Tensor(np.ones((1, 5, 6))))


def test_permutation_equivariance_without_positions():
    block = randomize(EncoderBlock(8, 2), seed=8)
    rng = np.random.default_rng(8)
    x = rng.normal(size=(1, 7, 8))
    perm = np.concatenate([[0], 1 + rng.permutation(6)])
    out = block(Tensor(x)).data
    out_perm = block(Tensor(x[:, perm])).data
    np.testing.assert_allclose(out_perm, out[:, perm], atol=1e-12)
    np.testing.assert_allclose(out_perm[:, 0], out[:, 0], atol=1e-12)


@pytest.mark.parametrize("shape,heads", [((1, 4), 1), ((3, 4), 2), ((2, 2, 4), 2)])
def test_block_gradcheck(shape, heads):
    block = randomize(EncoderBlock(4, heads, mlp_ratio=2.0), seed=9, scale=0.4)
    x = Tensor(np.random.default_rng(9).normal(size=shape), requires_grad=True)
    errs = check_gradients(lambda: projection_loss(block(x)), [x] + block.parameters())
    assert max(errs) <= 1e-4


@pytest.mark.parametrize("shape", [(1, 4, 6), (2, 3, 6), (1, 2, 6)])
def test_stem_gradcheck(shape):
    stem = randomize(BranchStem(4, 2, shape[-1]), seed=10)
    img = np.random.default_rng(10).normal(size=(shape[0], 3, 4, 4))
    errs = check_gradients(lambda: projection_loss(stem(img).tokens), stem.parameters())
    assert max(errs) <= 1e-4


def test_branch_forward_composition():
    blocks = [randomize(EncoderBlock(8, 2), seed=s) for s in (11, 12)]
    seq = TokenSequence(Tensor(np.random.default_rng(11).normal(size=(2, 5, 8))), (2, 2))
    assert branch_forward([], seq) is seq
    one = branch_forward(blocks[:1], seq)
    assert one.tokens.data.tobytes() == encoder_block_forward(blocks[0], seq).tokens.data.tobytes()
    two = branch_forward(blocks, seq)
    chained = encoder_block_forward(blocks[1], encoder_block_forward(blocks[0], seq))
    assert two.tokens.data.tobytes() == chained.tokens.data.tobytes()
    assert two.length == seq.length and two.dim == seq.dim


def test_token_sequence_validates_grid():
    with pytest.raises(ValueError):
        TokenSequence(Tensor(np.ones((1, 4, 2))), (2, 2))
