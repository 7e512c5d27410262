"""Frequency Spatial Residual Block and the U-shaped coarse-enhancement net.

The FSRB splits its input channels in two: the first half runs through the
frequency path (FFT, separate 1x1 conv stacks on amplitude and phase, IFFT,
residual add), the second half through a 3x3 spatial conv stack with a
residual add. The last convolution of each branch is zero-initialized, so a
freshly built block is exactly the identity map.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tt
from .fourier import PolarSpectrum, decompose, fft2, ifft2, recompose
from .nn import Conv2d, Downsample2x, Module
from .tensor import TensorError


class Fsrb(Module):
    def __init__(self, channels, rng, dtype=np.float32, leaky_slope=0.2):
        if channels < 2:
            raise TensorError("FSRB needs at least 2 channels to split")
        self.c_freq = channels // 2
        self.c_spat = channels - self.c_freq
        self.leaky_slope = leaky_slope
        cf, cs = self.c_freq, self.c_spat
        self.amp_conv1 = Conv2d(cf, cf, 1, rng, dtype=dtype)
        self.amp_conv2 = Conv2d(cf, cf, 1, rng, zero_init=True, dtype=dtype)
        self.pha_conv1 = Conv2d(cf, cf, 1, rng, dtype=dtype)
        self.pha_conv2 = Conv2d(cf, cf, 1, rng, zero_init=True, dtype=dtype)
        self.spa_conv1 = Conv2d(cs, cs, 3, rng, dtype=dtype)
        self.spa_conv2 = Conv2d(cs, cs, 3, rng, zero_init=True, dtype=dtype)

    def __call__(self, x):
        cf = self.c_freq
        x_freq = x[:, :cf]
        x_spat = x[:, cf:]

        polar = decompose(fft2(x_freq))
        amp = self.amp_conv2(tt.leaky_relu(self.amp_conv1(polar.amplitude),
                                           self.leaky_slope))
        pha = self.pha_conv2(tt.leaky_relu(self.pha_conv1(polar.phase),
                                           self.leaky_slope))
        y_freq = ifft2(recompose(PolarSpectrum(amp, pha))) + x_freq

        y_spat = self.spa_conv2(tt.gelu(self.spa_conv1(x_spat))) + x_spat
        return tt.concat([y_freq, y_spat], axis=1)


class FreqSpatialUNet(Module):
    """Encoder-decoder with FSRB compute blocks, 3 down / 3 up stages.

    Channel widths double per downsample: base, 2*base, 4*base, 8*base at
    the bottleneck. Decoder stages upsample 2x (nearest + 3x3 conv), concat
    the matching encoder skip, merge with a 1x1 conv, then run an FSRB.
    """

    N_STAGES = 3

    def __init__(self, base, rng, in_ch=3, out_ch=3, dtype=np.float32):
        self.base = base
        self.stem = Conv2d(in_ch, base, 3, rng, dtype=dtype)
        widths = [base * (2 ** s) for s in range(self.N_STAGES + 1)]
        self.enc_blocks = [Fsrb(w, rng, dtype=dtype) for w in widths[:-1]]
        self.downs = [Downsample2x(widths[s], widths[s + 1], rng, dtype=dtype)
                      for s in range(self.N_STAGES)]
        self.bottleneck = Fsrb(widths[-1], rng, dtype=dtype)
        self.ups = [Conv2d(widths[s + 1], widths[s], 3, rng, dtype=dtype)
                    for s in reversed(range(self.N_STAGES))]
        self.merges = [Conv2d(2 * widths[s], widths[s], 1, rng, dtype=dtype)
                       for s in reversed(range(self.N_STAGES))]
        self.dec_blocks = [Fsrb(widths[s], rng, dtype=dtype)
                           for s in reversed(range(self.N_STAGES))]
        self.head = Conv2d(base, out_ch, 3, rng, dtype=dtype)

    def _check_input(self, x):
        h, w = x.shape[-2:]
        div = 2 ** self.N_STAGES
        if h % div or w % div:
            raise TensorError(
                f"input extent {h}x{w} not divisible by {div}")

    def encode(self, x):
        self._check_input(x)
        feat = self.stem(x)
        skips = []
        for block, down in zip(self.enc_blocks, self.downs):
            feat = block(feat)
            skips.append(feat)
            feat = down(feat)
        return self.bottleneck(feat), skips

    def decode(self, feat, skips):
        for up, merge, block, skip in zip(self.ups, self.merges,
                                          self.dec_blocks, reversed(skips)):
            feat = up(tt.upsample2x(feat))
            feat = merge(tt.concat([feat, skip], axis=1))
            feat = block(feat)
        return tt.sigmoid(self.head(feat))

    def __call__(self, x):
        feat, skips = self.encode(x)
        return self.decode(feat, skips)


class FsNet(FreqSpatialUNet):
    """Coarse enhancement network: degraded batch -> preliminary result."""

    def __init__(self, rng, base=16, dtype=np.float32):
        super().__init__(base, rng, in_ch=3, out_ch=3, dtype=dtype)
