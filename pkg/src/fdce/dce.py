"""Dual color encoder.

The first color encoder (FCE) is an FSRB backbone that downsamples the
input to a 1/2, 1/4, 1/8 feature pyramid and predicts a per-channel color
histogram from globally pooled bottom features. The second color encoder
(SCE) refines a bank of trainable color queries against the pyramid through
3N transformer-style blocks: cross-attention first, then multi-head
self-attention, then a feed-forward stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .fsnet import Fsrb
from .nn import Conv2d, Downsample2x, LayerNorm, Linear, Module
from .tensor import Tensor, TensorError


@dataclass
class FeaturePyramid:
    """Per-image features at exactly the 1/2, 1/4, 1/8 scales."""
    f1: Tensor
    f2: Tensor
    f3: Tensor

    def __iter__(self):
        return iter((self.f1, self.f2, self.f3))


class ColorEmbeddingBank(Module):
    """M x C_e trainable color-query matrix, zero at construction."""

    def __init__(self, num_queries, width, dtype=np.float32):
        self.num_queries = num_queries
        self.width = width
        self.embeddings = Tensor(np.zeros((num_queries, width), dtype=dtype),
                                 requires_grad=True)


class Fce(Module):
    """First color encoder: feature pyramid plus histogram head."""

    def __init__(self, rng, base=16, bins=64, dtype=np.float32):
        self.bins = bins
        self.stem = Conv2d(3, base, 3, rng, dtype=dtype)
        widths = [base * (2 ** s) for s in range(4)]  # stem + 3 downsamples
        self.blocks = [Fsrb(w, rng, dtype=dtype) for w in widths[:3]]
        self.downs = [Downsample2x(widths[s], widths[s + 1], rng, dtype=dtype)
                      for s in range(3)]
        self.hist_fc1 = Linear(widths[3], widths[3], rng, dtype=dtype)
        self.hist_fc2 = Linear(widths[3], 3 * bins, rng, dtype=dtype)
        self.pyramid_widths = widths[1:4]

    def __call__(self, x):
        h, w = x.shape[-2:]
        if h % 8 or w % 8:
            raise TensorError(f"FCE input {h}x{w} not divisible by 8")
        feat = self.stem(x)
        levels = []
        for block, down in zip(self.blocks, self.downs):
            feat = down(block(feat))
            levels.append(feat)
        pyramid = FeaturePyramid(*levels)
        pooled = levels[-1].mean(axis=(2, 3))  # [B, 8*base]
        logits = self.hist_fc2(tt.gelu(self.hist_fc1(pooled)))
        b = logits.shape[0]
        hist = tt.softmax(logits.reshape(b, 3, self.bins), axis=-1)
        return pyramid, hist


class MultiHeadSelfAttention(Module):
    def __init__(self, width, heads, rng, dtype=np.float32):
        if width % heads:
            raise TensorError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = width // heads
        self.q_proj = Linear(width, width, rng, dtype=dtype)
        self.k_proj = Linear(width, width, rng, dtype=dtype)
        self.v_proj = Linear(width, width, rng, dtype=dtype)
        self.out_proj = Linear(width, width, rng, dtype=dtype)

    def __call__(self, x):
        m, c = x.shape
        h, d = self.heads, self.head_dim

        def split(t):
            return t.reshape(m, h, d).transpose(1, 0, 2)  # [h, M, d]

        q, k, v = split(self.q_proj(x)), split(self.k_proj(x)), split(self.v_proj(x))
        attn = tt.softmax(tt.matmul(q, k.transpose(0, 2, 1)) * (1.0 / np.sqrt(d)),
                          axis=-1)
        mixed = tt.matmul(attn, v).transpose(1, 0, 2).reshape(m, c)
        return self.out_proj(mixed)


class CebBlock(Module):
    """One color encoder block: Eqs. cross-attn -> MHSA -> FFN with norms."""

    def __init__(self, feat_width, embed_width, heads, rng,
                 eq1_unscaled=False, dtype=np.float32):
        self.embed_width = embed_width
        self.cross_scale = 1.0 if eq1_unscaled else 1.0 / np.sqrt(embed_width)
        self.query_proj = Linear(embed_width, embed_width, rng, dtype=dtype)
        self.key_proj = Linear(feat_width, embed_width, rng, dtype=dtype)
        self.value_proj = Linear(feat_width, embed_width, rng, dtype=dtype)
        self.mhsa = MultiHeadSelfAttention(embed_width, heads, rng, dtype=dtype)
        self.ffn_fc1 = Linear(embed_width, 4 * embed_width, rng, dtype=dtype)
        self.ffn_fc2 = Linear(4 * embed_width, embed_width, rng, dtype=dtype)
        self.norm1 = LayerNorm(embed_width, dtype=dtype)
        self.norm2 = LayerNorm(embed_width, dtype=dtype)
        self.norm3 = LayerNorm(embed_width, dtype=dtype)

    def _tokens(self, feat):
        cf = feat.shape[0]
        return feat.reshape(cf, -1).transpose(1, 0)  # [H*W, Cf]

    def __call__(self, e_prev, feat):
        if feat.ndim == 4:
            if feat.shape[0] != 1:
                raise TensorError("CEB processes one query stream at a time")
            feat = feat.reshape(feat.shape[1:])
        tokens = self._tokens(feat)
        q = self.query_proj(e_prev)
        k = self.key_proj(tokens)
        v = self.value_proj(tokens)
        attn = tt.softmax(tt.matmul(q, k.transpose(1, 0)) * self.cross_scale,
                          axis=-1)
        e1 = tt.matmul(attn, v) + e_prev
        e2 = self.mhsa(self.norm1(e1)) + e1
        ff = self.ffn_fc2(tt.gelu(self.ffn_fc1(self.norm2(e2))))
        return self.norm3(ff + e2)


class Sce(Module):
    """Second color encoder: 3N distinct blocks cycling over pyramid scales."""

    def __init__(self, pyramid_widths, embed_width, heads, rng, n_groups=3,
                 eq1_unscaled=False, dtype=np.float32):
        if n_groups < 1:
            raise TensorError("SCE needs n_groups >= 1")
        self.n_groups = n_groups
        self.blocks = [
            CebBlock(pyramid_widths[j], embed_width, heads, rng,
                     eq1_unscaled=eq1_unscaled, dtype=dtype)
            for _ in range(n_groups) for j in range(3)
        ]

    def forward_single(self, e0, pyramid):
        """Refine one image's query bank through all 3N blocks in order."""
        if len(self.blocks) != 3 * self.n_groups:
            raise TensorError("SCE block count must equal 3N")
        feats = list(pyramid)
        e = e0
        for idx, block in enumerate(self.blocks):
            e = block(e, feats[idx % 3])
        return e

    def __call__(self, e0, pyramid):
        """Batch forward: independent query stream per image -> [B, M, C_e]."""
        b = pyramid.f1.shape[0]
        outs = []
        for i in range(b):
            per_img = FeaturePyramid(pyramid.f1[i:i + 1], pyramid.f2[i:i + 1],
                                     pyramid.f3[i:i + 1])
            outs.append(self.forward_single(e0, per_img))
        return tt.stack(outs, axis=0)


def visualize_query(e_row, feat, key_proj):
    """Activation map of one color query against a feature map.

    map(h, w) = sigmoid(<e_row, proj(feat)(h, w)> / sqrt(C_e)); returns a
    [Hl, Wl] numpy array in (0, 1).
    """
    e = np.asarray(e_row.data if isinstance(e_row, Tensor) else e_row)
    f = np.asarray(feat.data if isinstance(feat, Tensor) else feat)
    if f.ndim == 4:
        f = f[0]
    cf, hl, wl = f.shape
    tokens = f.reshape(cf, hl * wl).T
    keys = tokens @ key_proj.weight.data + key_proj.bias.data
    dots = keys @ e / np.sqrt(e.shape[0])
    return (1.0 / (1.0 + np.exp(-dots))).reshape(hl, wl)
