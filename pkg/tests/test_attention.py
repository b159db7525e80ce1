"""Cross-attention block tests: stage equations vs brute-force oracles,
initialization identities, gating contracts, head splitting."""

import numpy as np
import pytest

from avse import tensor as T
from avse.attention import (CrossAttentionBlock, channel_attention,
                            filter_attention)
from avse.errors import ConfigError
from avse.tensor import Tensor

import oracles


def tensor(a, rg=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=rg)


def scalar(v):
    return Tensor(np.array([v]))


# -- stage equations -------------------------------------------------------------


def test_balance_strict_alpha_zero_gives_zero():
    rng = np.random.default_rng(0)
    k = tensor(rng.standard_normal((1, 3, 4)))
    v = tensor(rng.standard_normal((1, 3, 4)))
    g, attn = channel_attention(k, v, scalar(0.0), residual=False)
    assert np.all(g.data == 0.0)
    assert np.max(np.abs(attn.data.sum(axis=2) - 1.0)) < 1e-9


def test_balance_default_alpha_zero_gives_values_exactly():
    rng = np.random.default_rng(1)
    k = tensor(rng.standard_normal((1, 3, 4)))
    v = tensor(rng.standard_normal((1, 3, 4)))
    g, _ = channel_attention(k, v, scalar(0.0), residual=True)
    assert np.array_equal(g.data, v.data)


def test_balance_matches_brute_force_c2():
    rng = np.random.default_rng(2)
    for case in range(20):
        k = rng.standard_normal((2, 1))
        v = rng.standard_normal((2, 1))
        alpha = rng.standard_normal()
        for residual in (False, True):
            g, attn = channel_attention(tensor(k[None]), tensor(v[None]),
                                        scalar(alpha), residual)
            g_ref, x_ref = oracles.balance_loops(k, v, alpha, residual)
            assert np.max(np.abs(attn.data[0] - x_ref)) < 1e-12
            assert np.max(np.abs(g.data[0] - g_ref)) < 1e-12


def test_filter_strict_beta_zero_gives_zero_and_uniform_rows():
    rng = np.random.default_rng(3)
    q = tensor(rng.standard_normal((1, 4, 5)))
    g = tensor(np.zeros((1, 4, 5)))
    out, attn = filter_attention(q, g, scalar(0.0), residual=False)
    assert np.all(out.data == 0.0)
    assert np.max(np.abs(attn.data - 0.25)) < 1e-15  # softmax of zeros


def test_filter_matches_brute_force_c2():
    rng = np.random.default_rng(4)
    for case in range(20):
        q = rng.standard_normal((2, 1))
        g = rng.standard_normal((2, 1))
        beta = rng.standard_normal()
        for residual in (False, True):
            out, attn = filter_attention(tensor(q[None]), tensor(g[None]),
                                         scalar(beta), residual)
            l_ref, y_ref = oracles.filter_loops(q, g, beta, residual)
            assert np.max(np.abs(attn.data[0] - y_ref)) < 1e-12
            assert np.max(np.abs(out.data[0] - l_ref)) < 1e-12


def test_attention_rows_sum_to_one_on_wild_inputs():
    rng = np.random.default_rng(5)
    for _ in range(50):
        k = tensor(rng.standard_normal((2, 5, 9)) * rng.uniform(0.1, 50))
        v = tensor(rng.standard_normal((2, 5, 9)) * rng.uniform(0.1, 50))
        _, attn = channel_attention(k, v, scalar(0.3), residual=True)
        assert np.max(np.abs(attn.data.sum(axis=2) - 1.0)) < 1e-9
        assert attn.data.min() >= 0.0 and attn.data.max() <= 1.0


# -- the block -----------------------------------------------------------------


def make_block(channels=4, heads=1, strict=False, seed=0, **kw):
    return CrossAttentionBlock(channels, np.random.default_rng(seed),
                               heads=heads, strict=strict, **kw)


def test_block_gate_at_zero_stage_is_half_fd():
    # L = 0 with zero deconv bias -> gate 0.5 everywhere.
    rng = np.random.default_rng(6)
    block = make_block(strict=True)
    fd = tensor(rng.standard_normal((2, 4, 5, 3)))
    ff = tensor(rng.standard_normal((2, 4, 5, 3)))
    out = block.forward(ff, fd, training=False)
    assert np.max(np.abs(out.data - 0.5 * fd.data)) < 1e-15


def test_block_zero_decoder_feature_gives_zero():
    rng = np.random.default_rng(7)
    block = make_block()
    ff = tensor(rng.standard_normal((1, 4, 3, 3)))
    fd = tensor(np.zeros((1, 4, 3, 3)))
    out = block.forward(ff, fd, training=False)
    assert np.all(out.data == 0.0)


def test_block_output_bounded_by_decoder_feature():
    rng = np.random.default_rng(8)
    block = make_block()
    ff = tensor(rng.standard_normal((2, 4, 6, 5)))
    fd = tensor(rng.standard_normal((2, 4, 6, 5)))
    out = block.forward(ff, fd, training=True, update_stats=False)
    assert np.all(np.abs(out.data) <= np.abs(fd.data) + 1e-15)


def test_block_strict_init_gate_is_bias_only_exactly():
    # strict, alpha=beta=0: L == 0, so F_out == sigmoid(deconv bias) * F_d
    rng = np.random.default_rng(9)
    block = make_block(strict=True)
    bias = rng.standard_normal(4)
    block.gate_deconv.bias.data = bias.copy()
    ff = tensor(rng.standard_normal((3, 4, 2, 5)))
    fd = tensor(rng.standard_normal((3, 4, 2, 5)))
    out = block.forward(ff, fd, training=False)
    gate = T.sigmoid(tensor(bias)).data
    expected = gate[None, :, None, None] * fd.data
    assert np.array_equal(out.data, expected)


def test_block_default_init_is_pure_value_driven_gate():
    # default mode, alpha=beta=0: G = V and L = V, so the gate is
    # sigmoid(deconv(V)) elementwise on F_d.
    rng = np.random.default_rng(10)
    block = make_block(strict=False)
    ff = tensor(rng.standard_normal((2, 4, 3, 3)))
    fd = tensor(rng.standard_normal((2, 4, 3, 3)))
    out = block.forward(ff, fd, training=False)
    v = block.to_values.forward(ff, training=False)
    gated = T.sigmoid(block.gate_deconv.forward(v))
    assert np.array_equal(out.data, gated.data * fd.data)


def test_block_spatial_permutation_equivariance_strict():
    rng = np.random.default_rng(11)
    block = make_block(strict=True)
    block.balance_scale.data = np.array([0.7])
    block.filter_scale.data = np.array([-0.4])
    n, c, h, w = 1, 4, 3, 4
    ff = rng.standard_normal((n, c, h, w))
    fd = rng.standard_normal((n, c, h, w))
    perm = rng.permutation(h * w)

    def permuted(x):
        flat = x.reshape(n, c, h * w)[:, :, perm]
        return flat.reshape(n, c, h, w)

    out = block.forward(tensor(ff), tensor(fd), training=False)
    out_p = block.forward(tensor(permuted(ff)), tensor(permuted(fd)),
                          training=False)
    assert np.max(np.abs(out_p.data - permuted(out.data))) < 1e-12


def test_block_heads_equal_unsplit_when_one():
    rng = np.random.default_rng(12)
    b1 = make_block(channels=4, heads=1, seed=3)
    ff = tensor(rng.standard_normal((1, 4, 3, 3)))
    fd = tensor(rng.standard_normal((1, 4, 3, 3)))
    out_a = b1.forward(ff, fd, training=False)
    out_b = b1.forward(ff, fd, training=False)
    assert np.array_equal(out_a.data, out_b.data)


def test_block_two_heads_match_independent_halves():
    # With block-diagonal 1x1 convs, a heads=2 block must equal two
    # independent heads=1 blocks run on the channel halves.
    rng = np.random.default_rng(13)
    c = 4
    big = make_block(channels=c, heads=2, seed=5)
    big.balance_scale.data = np.array([0.9])
    big.filter_scale.data = np.array([0.5])
    halves = [make_block(channels=c // 2, heads=1, seed=7),
              make_block(channels=c // 2, heads=1, seed=8)]

    def blockify(conv_big, conv_halves):
        w = np.zeros_like(conv_big.conv.weight.data)
        b = np.zeros_like(conv_big.conv.bias.data)
        for i, half in enumerate(conv_halves):
            sl = slice(i * c // 2, (i + 1) * c // 2)
            w[sl, sl] = half.conv.weight.data
            b[sl] = half.conv.bias.data
            conv_big.bn.gamma.data[sl] = half.bn.gamma.data
            conv_big.bn.beta.data[sl] = half.bn.beta.data
            conv_big.bn.running_mean[sl] = half.bn.running_mean
            conv_big.bn.running_var[sl] = half.bn.running_var
        conv_big.conv.weight.data = w
        conv_big.conv.bias.data = b

    blockify(big.to_keys, [h.to_keys for h in halves])
    blockify(big.to_values, [h.to_values for h in halves])
    blockify(big.to_query, [h.to_query for h in halves])
    wg = np.zeros_like(big.gate_deconv.weight.data)
    bg = np.zeros_like(big.gate_deconv.bias.data)
    for i, half in enumerate(halves):
        sl = slice(i * c // 2, (i + 1) * c // 2)
        wg[sl, sl] = half.gate_deconv.weight.data
        bg[sl] = half.gate_deconv.bias.data
        half.balance_scale.data = np.array([0.9])
        half.filter_scale.data = np.array([0.5])
    big.gate_deconv.weight.data = wg
    big.gate_deconv.bias.data = bg

    ff = rng.standard_normal((1, c, 3, 3))
    fd = rng.standard_normal((1, c, 3, 3))
    out_big = big.forward(tensor(ff), tensor(fd), training=False)
    parts = []
    for i, half in enumerate(halves):
        sl = slice(i * c // 2, (i + 1) * c // 2)
        parts.append(half.forward(tensor(ff[:, sl]), tensor(fd[:, sl]),
                                  training=False).data)
    out_halves = np.concatenate(parts, axis=1)
    assert np.max(np.abs(out_big.data - out_halves)) < 1e-12


def test_block_rejects_indivisible_heads():
    with pytest.raises(ConfigError, match="divisible"):
        make_block(channels=6, heads=4)


def test_block_parameter_counts_by_stage():
    full = make_block()
    no_filter = make_block(use_filtering=False)
    no_balance = make_block(use_balancing=False)
    assert full.parameter_count() > no_filter.parameter_count() \
        > no_balance.parameter_count() > 0


def test_block_gradients_flow_to_scales_and_convs():
    rng = np.random.default_rng(14)
    block = make_block()
    block.balance_scale.data = np.array([0.3])
    block.filter_scale.data = np.array([0.2])
    ff = tensor(rng.standard_normal((1, 4, 3, 3)))
    fd = tensor(rng.standard_normal((1, 4, 3, 3)))
    out = block.forward(ff, fd, training=True, update_stats=False)
    (out * out).sum().backward()
    names = dict(block.named_parameters())
    eps = 1e-4
    for name in ("balance_scale", "filter_scale", "to_values.conv.weight",
                 "gate_deconv.weight"):
        p = names[name]
        assert p.grad is not None, name
        idx = 0
        flat = p.data.reshape(-1)

        def loss_with(v):
            orig = flat[idx]
            flat[idx] = v
            out2 = block.forward(ff, fd, training=True, update_stats=False)
            val = (out2 * out2).sum().item()
            flat[idx] = orig
            return val

        numeric = (loss_with(flat[idx] + eps) - loss_with(flat[idx] - eps)) / (2 * eps)
        analytic = p.grad.reshape(-1)[idx]
        assert oracles.relative_error([analytic], [numeric])[0] < 1e-4, name
