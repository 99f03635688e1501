import math

import numpy as np
import pytest

from ctvit.config import tiny


def randomize(module, seed=0, scale=0.5):
    """Fill every parameter (norms and biases included) with random values so
    oracles exercise all of them, not just the ones the initialiser touches."""
    rng = np.random.default_rng(seed)
    for _, p in module.named_parameters():
        p.data[...] = rng.normal(0.0, scale, size=p.shape)
    return module


def ref_softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def ref_layer_norm(x, gamma, beta, eps):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


_erf = np.vectorize(math.erf)


def ref_gelu(x):
    return 0.5 * x * (1.0 + _erf(x / math.sqrt(2.0)))


def ref_linear(lin, x):
    y = x @ lin.weight.data
    return y if lin.bias is None else y + lin.bias.data


def ref_ln(norm, x):
    return ref_layer_norm(x, norm.gamma.data, norm.beta.data, norm.eps)


def ref_mha(mha, q_in, k_in, v_in):
    """Per-head loop over column slices of the projection weights."""
    q, k, v = ref_linear(mha.w_q, q_in), ref_linear(mha.w_k, k_in), ref_linear(mha.w_v, v_in)
    dk = mha.head_dim
    heads = []
    for h in range(mha.num_heads):
        s = slice(h * dk, (h + 1) * dk)
        a = ref_softmax(q[..., s] @ np.swapaxes(k[..., s], -1, -2) / math.sqrt(dk))
        heads.append(a @ v[..., s])
    return ref_linear(mha.w_o, np.concatenate(heads, axis=-1))


def ref_block(block, x):
    h = ref_ln(block.norm1, x)
    x = x + ref_mha(block.attn, h, h, h)
    return x + ref_linear(block.fc2, ref_gelu(ref_linear(block.fc1, ref_ln(block.norm2, x))))


def ref_additive(att, query, keys, values):
    d = att.dim
    wa, va = att.w_a.data, att.v_a.data
    scores = np.tanh(query[..., None, :] @ wa[:d] + keys @ wa[d:]) @ va
    w = ref_softmax(scores)
    return (w[..., None] * values).sum(-2)


def ref_fusion_unit(unit, cls, other):
    q = ref_linear(unit.proj, ref_gelu(ref_ln(unit.proj_norm, cls))) if unit.projecting else cls
    x = ref_ln(unit.norm, np.concatenate([q, other], axis=-2))
    query = x[..., :1, :]
    if unit.variant == "dot_product":
        upd = ref_mha(unit.attn, query, x, x)
    else:
        pooled = ref_additive(unit.score, query[..., 0, :], x, ref_linear(unit.w_v, x))
        upd = ref_linear(unit.w_o, pooled)[..., None, :]
    if unit.projecting:
        upd = ref_linear(unit.back, upd)
    return cls + upd


@pytest.fixture
def tiny_cfg():
    return tiny()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
