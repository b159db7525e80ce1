"""Two-stage cross-attention gate between fused encoder features and the
decoder path.

Stage one (balancing) forms channel-to-channel attention over the fused
feature map: K and V come from 1x1 conv->BN->ELU blocks, scores are inner
products over flattened space, and the stage output per channel is the
attention row sum times that channel's V row, scaled by a learnable weight
that starts at zero. Stage two (filtering) repeats the construction with Q
drawn from the decoder feature against the stage-one output. A transposed
1x1 convolution plus sigmoid turns the result into a multiplicative gate on
the decoder feature.

By default both stages add a residual shortcut (G = alpha*... + V,
L = beta*... + G); with the scale weights initialized to zero the literal
equations would emit all-zero maps and kill the gradient path through the
second stage, so the shortcut mirrors the usual channel-attention
formulation. strict=True keeps the literal zero-shortcut equations for
comparison. Multi-head operation splits channels into equal groups and runs
both stages per group.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import ConvBNELU, ConvTranspose2d, Module
from .tensor import Tensor, concat, matmul, narrow, reshape, sigmoid, softmax, transpose


def channel_attention(keys, values, scale, residual: bool):
    """Balancing stage on (N, C, S) features.

    scores[n, j, i] = <keys[n, i], values[n, j]>; rows softmax over i.
    Output row j is scale * (sum_i x_ji) * values[j], plus values[j] when
    residual is set. Returns (output, attention) with attention (N, C, C).
    """
    scores = matmul(values, transpose(keys, (0, 2, 1)))
    attn = softmax(scores, axis=2)
    row_sums = T.tensor_sum(attn, axis=2, keepdims=True)   # analytically one
    out = scale * (row_sums * values)
    if residual:
        out = out + values
    return out, attn


def filter_attention(queries, stage_one, scale, residual: bool):
    """Filtering stage: scores[n, j, i] = <queries[n, i], stage_one[n, j]>,
    then the same weighted-row-sum construction against stage_one."""
    scores = matmul(stage_one, transpose(queries, (0, 2, 1)))
    attn = softmax(scores, axis=2)
    row_sums = T.tensor_sum(attn, axis=2, keepdims=True)
    out = scale * (row_sums * stage_one)
    if residual:
        out = out + stage_one
    return out, attn


def _split_heads(x, heads: int):
    if heads == 1:
        return [x]
    per = x.shape[1] // heads
    return [narrow(x, 1, h * per, per) for h in range(heads)]


class CrossAttentionBlock(Module):
    """Balance -> filter -> sigmoid gate, one block per decoder layer.

    use_balancing / use_filtering correspond to the ablations that drop a
    stage (the dropped stage's parameters are not constructed); with both
    dropped only the gate path remains.
    """

    def __init__(self, channels: int, rng, heads: int = 1, strict: bool = False,
                 use_balancing: bool = True, use_filtering: bool = True):
        super().__init__()
        if channels % heads != 0:
            raise ConfigError(
                f"channel count {channels} not divisible by heads {heads}")
        self.channels = channels
        self.heads = heads
        self.strict = strict
        self.use_balancing = use_balancing
        self.use_filtering = use_filtering
        one = ((1, 1), (1, 1), (0, 0))  # kernel, stride, padding
        if use_balancing:
            self.to_keys = ConvBNELU(channels, channels, *one, rng=rng)
            self.to_values = ConvBNELU(channels, channels, *one, rng=rng)
            self.balance_scale = Tensor(np.zeros(1), requires_grad=True)
        if use_filtering:
            self.to_query = ConvBNELU(channels, channels, *one, rng=rng)
            self.filter_scale = Tensor(np.zeros(1), requires_grad=True)
        self.gate_deconv = ConvTranspose2d(channels, channels, (1, 1), (1, 1),
                                           (0, 0), rng=rng)

    def forward(self, fused, decoder_feat, training: bool, update_stats=None):
        n, c, h, w = decoder_feat.shape
        residual = not self.strict

        if self.use_balancing:
            k = reshape(self.to_keys.forward(fused, training, update_stats),
                        (n, c, h * w))
            v = reshape(self.to_values.forward(fused, training, update_stats),
                        (n, c, h * w))
            parts = []
            for kh, vh in zip(_split_heads(k, self.heads),
                              _split_heads(v, self.heads)):
                g, _ = channel_attention(kh, vh, self.balance_scale, residual)
                parts.append(g)
            stage_one = parts[0] if len(parts) == 1 else concat(parts, axis=1)
        else:
            stage_one = reshape(fused, (n, c, h * w))

        if self.use_filtering:
            q = reshape(self.to_query.forward(decoder_feat, training, update_stats),
                        (n, c, h * w))
            parts = []
            for qh, gh in zip(_split_heads(q, self.heads),
                              _split_heads(stage_one, self.heads)):
                l, _ = filter_attention(qh, gh, self.filter_scale, residual)
                parts.append(l)
            stage_two = parts[0] if len(parts) == 1 else concat(parts, axis=1)
        else:
            stage_two = stage_one

        gate = sigmoid(self.gate_deconv.forward(reshape(stage_two, (n, c, h, w))))
        return gate * decoder_feat
