"""Fusion network and the end-to-end model forward pass.

Fusion-Net shares FS-Net's encoder-decoder structure (independent weights)
with a thinner base width so its bottleneck equals the color-embedding
width. Color embeddings are fused into the bottleneck by per-pixel dot
products, projected back to bottleneck width, and decoded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .dce import ColorEmbeddingBank, Fce, Sce
from .fsnet import FreqSpatialUNet, FsNet
from .nn import Conv2d, Module
from .tensor import Tensor, TensorError


def fuse(image_feat, embeddings):
    """Per-pixel dot products between bottleneck features and color queries.

    image_feat: [B, C_e, Hb, Wb]; embeddings: [M, C_e] (shared across the
    batch) or [B, M, C_e] (per-image). Returns [B, M, Hb, Wb].
    """
    b, ce, hb, wb = image_feat.shape
    if embeddings.shape[-1] != ce:
        raise TensorError(
            f"fuse width mismatch: features {ce} vs embeddings "
            f"{embeddings.shape[-1]}")
    pixels = image_feat.reshape(b, ce, hb * wb).transpose(0, 2, 1)  # [B,HW,Ce]
    if embeddings.ndim == 2:
        dots = tt.matmul(pixels, embeddings.transpose(1, 0))
    else:
        dots = tt.matmul(pixels, embeddings.transpose(0, 2, 1))
    return dots.transpose(0, 2, 1).reshape(b, -1, hb, wb)


class FusionNet(Module):
    """FS-Net-shaped network fusing color embeddings at the bottleneck."""

    def __init__(self, rng, embed_width=64, num_queries=8, dtype=np.float32):
        if embed_width % 8:
            raise TensorError("embed_width must be divisible by 8")
        self.unet = FreqSpatialUNet(embed_width // 8, rng, dtype=dtype)
        self.proj = Conv2d(num_queries, embed_width, 1, rng, dtype=dtype)

    def __call__(self, y_hat, embeddings):
        bottleneck, skips = self.unet.encode(y_hat)
        fused = fuse(bottleneck, embeddings)
        return self.unet.decode(self.proj(fused), skips)


@dataclass
class ModelConfig:
    base_width: int = 16
    num_queries: int = 8       # M
    embed_width: int = 64      # C_e
    heads: int = 4
    n_groups: int = 3          # N
    bins: int = 64
    eq1_unscaled: bool = False
    seed: int = 0
    dtype: object = np.float32


class FdceNet(Module):
    """Full pipeline: FS-Net, dual color encoder, fusion network."""

    def __init__(self, config=None):
        self.config = config or ModelConfig()
        c = self.config
        rng = np.random.default_rng(c.seed)
        self.fsnet = FsNet(rng, base=c.base_width, dtype=c.dtype)
        self.fce = Fce(rng, base=c.base_width, bins=c.bins, dtype=c.dtype)
        self.bank = ColorEmbeddingBank(c.num_queries, c.embed_width,
                                       dtype=c.dtype)
        self.sce = Sce(self.fce.pyramid_widths, c.embed_width, c.heads, rng,
                       n_groups=c.n_groups, eq1_unscaled=c.eq1_unscaled,
                       dtype=c.dtype)
        self.fusion = FusionNet(rng, embed_width=c.embed_width,
                                num_queries=c.num_queries, dtype=c.dtype)

    def __call__(self, x):
        """x: [B, 3, H, W] -> (y_hat, y_prime, hist_pred, embeddings).

        y_hat, y_prime: [B, 3, H, W]; hist_pred: [B, 3, bins];
        embeddings: [B, M, C_e].
        """
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.config.dtype))
        y_hat = self.fsnet(x)
        pyramid, hist_pred = self.fce(x)
        embeddings = self.sce(self.bank.embeddings, pyramid)
        y_prime = self.fusion(y_hat, embeddings)
        return y_hat, y_prime, hist_pred, embeddings
