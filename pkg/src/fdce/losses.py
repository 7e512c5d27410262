"""Training losses: SSIM, L1 reconstruction, color histogram, perceptual.

SSIM uses 11x11 Gaussian windows (sigma 1.5) with the unit-range constants
c1 = 0.01^2, c2 = 0.03^2 and both exponents fixed to 1. The perceptual
term runs images through a small frozen feature extractor; by default its
weights are seeded random (a random-feature perceptual loss), and a frozen
stack trained elsewhere can be loaded in its place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .nn import fan_in_uniform
from .tensor import Tensor, TensorError


@dataclass
class SsimParams:
    window_size: int = 11
    sigma: float = 1.5
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2


@dataclass
class LossWeights:
    """Weights of the histogram and perceptual terms in the total loss."""
    alpha: float = 0.5
    beta: float = 0.05


def gaussian_window(size=11, sigma=1.5, dtype=np.float64):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return (win / win.sum()).astype(dtype)


def _check_pair(a, b, name):
    if a.shape != b.shape:
        raise TensorError(f"{name} shape mismatch: {a.shape} vs {b.shape}")


def _window_moments(img, window):
    """Local Gaussian-window means via valid-mode convolution, channelwise."""
    b, c, h, w = img.shape
    flat = img.reshape(b * c, 1, h, w)
    return tt.conv2d(flat, window, stride=1, padding=0)


def ssim_map(yp, y, params=None):
    """Local SSIM index over valid Gaussian windows; returns a Tensor map."""
    params = params or SsimParams()
    _check_pair(yp, y, "ssim")
    # small inputs: shrink the window so at least one valid position exists
    size = min(params.window_size, yp.shape[-2], yp.shape[-1])
    if size % 2 == 0:
        size -= 1
    win = Tensor(gaussian_window(size, params.sigma,
                                 yp.dtype).reshape(1, 1, size, size))
    mu_e = _window_moments(yp, win)
    mu_r = _window_moments(y, win)
    mu_ee = _window_moments(yp * yp, win)
    mu_rr = _window_moments(y * y, win)
    mu_er = _window_moments(yp * y, win)
    var_e = mu_ee - mu_e * mu_e
    var_r = mu_rr - mu_r * mu_r
    cov = mu_er - mu_e * mu_r
    lum = (2.0 * mu_e * mu_r + params.c1) / (mu_e * mu_e + mu_r * mu_r + params.c1)
    con = (2.0 * cov + params.c2) / (var_e + var_r + params.c2)
    return lum * con


def ssim_loss(yp, y, params=None):
    """1 - mean local SSIM index."""
    return 1.0 - ssim_map(yp, y, params).mean()


def rec_loss(yp, y):
    """Mean absolute difference over all pixel-channel entries."""
    _check_pair(yp, y, "rec_loss")
    return (yp - y).abs().mean()


def hist_loss(hist_pred, hist_ref):
    """L1 distance between predicted and reference histograms, normalized
    by channel count (3) and bin count. Batched inputs average over batch."""
    if not isinstance(hist_ref, Tensor):
        hist_ref = Tensor(np.asarray(hist_ref, dtype=hist_pred.dtype))
    if hist_pred.shape[-1] != hist_ref.shape[-1]:
        raise TensorError(
            f"hist_loss bins mismatch: {hist_pred.shape} vs {hist_ref.shape}")
    bins = hist_pred.shape[-1]
    diff = (hist_pred - hist_ref).abs()
    per_image = diff.sum(axis=(-2, -1)) * (1.0 / (3 * bins))
    return per_image.mean()


class PerceptualExtractor:
    """Three frozen conv-downsample stages used by the perceptual loss."""

    STAGE_WIDTHS = (16, 32, 64)

    def __init__(self, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        cin = 3
        for cout in self.STAGE_WIDTHS:
            w = fan_in_uniform(rng, (cout, cin, 3, 3), cin * 9, dtype)
            self.weights.append(Tensor(w))
            self.biases.append(Tensor(np.zeros(cout, dtype=dtype)))
            cin = cout

    def load_weights(self, tensors):
        """Replace stage weights from a name->array mapping
        (stage{j}.weight / stage{j}.bias, j = 0..2)."""
        for j in range(3):
            self.weights[j] = Tensor(np.asarray(tensors[f"stage{j}.weight"]))
            self.biases[j] = Tensor(np.asarray(tensors[f"stage{j}.bias"]))

    def stages(self, img):
        feats = []
        feat = img
        for w, b in zip(self.weights, self.biases):
            feat = tt.gelu(tt.conv2d(feat, w, b, stride=1, padding=1))
            feat = feat[:, :, ::2, ::2]
            feats.append(feat)
        return feats


def perceptual_loss(yp, y, extractor):
    """Sum over stages of mean squared feature difference."""
    _check_pair(yp, y, "perceptual_loss")
    total = None
    for fe, fr in zip(extractor.stages(yp), extractor.stages(y)):
        d = fe - fr
        b = d.shape[0]
        term = (d * d).sum() * (1.0 / (b * d.shape[1] * d.shape[2] * d.shape[3]))
        total = term if total is None else total + term
    return total


def total_loss(ssim, rec, hist, per, weights=None):
    """ssim + rec + alpha * hist + beta * per."""
    weights = weights or LossWeights()
    return ssim + rec + weights.alpha * hist + weights.beta * per
