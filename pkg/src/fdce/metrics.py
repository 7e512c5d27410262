"""Full-reference (PSNR, SSIM, MSE) and no-reference (UIQM, UCIQE) metrics.

The no-reference metrics follow the published linear-combination form, but
component definitions vary across the literature; the exact constants and
block sizes used here are pinned below, so scores are comparable only to
scores from this implementation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .losses import SsimParams, ssim_loss
from .tensor import Tensor, TensorError

PSNR_CAP_DB = 100.0
PSNR_MSE_FLOOR = 1e-10

# UIQM combination coefficients and component settings (pinned)
UIQM_C1 = 0.0282   # colorfulness (UICM)
UIQM_C2 = 0.2953   # sharpness (UISM)
UIQM_C3 = 3.5753   # contrast (UIConM)
UICM_TRIM = 0.1          # asymmetric trim fraction per tail
UICM_MU_W = -0.0268
UICM_SIGMA_W = 0.1586
UISM_LAMBDA = (0.299, 0.587, 0.114)
EME_BLOCK = 8
EME_EPS = 1e-8

# UCIQE combination coefficients over (chroma std, luma contrast, mean sat)
UCIQE_C1 = 0.4680
UCIQE_C2 = 0.2745
UCIQE_C3 = 0.2576
# BT.601 luma/chroma matrix rows: Y, U, V. U and V are built from
# 0.492(B-Y) and 0.877(R-Y) so gray pixels map to exactly zero chroma.
_LUMA = np.array([0.299, 0.587, 0.114])
YUV_MATRIX = np.array([
    _LUMA,
    0.492 * (np.array([0.0, 0.0, 1.0]) - _LUMA),
    0.877 * (np.array([1.0, 0.0, 0.0]) - _LUMA),
])


def mse(yp, y):
    yp = np.asarray(yp, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if yp.shape != y.shape:
        raise TensorError(f"mse shape mismatch: {yp.shape} vs {y.shape}")
    return float(np.mean((yp - y) ** 2))


def psnr(yp, y):
    """10 log10(1 / mse) for unit dynamic range, capped at 100 dB."""
    m = mse(yp, y)
    if m < PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return min(float(10.0 * np.log10(1.0 / m)), PSNR_CAP_DB)


def _to_nchw(img):
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        arr = np.moveaxis(arr, -1, 0)[None]
    return Tensor(arr)


def ssim_index(yp, y, params=None):
    """Mean local SSIM index in [-1, 1] (1 - ssim_loss)."""
    return float(1.0 - ssim_loss(_to_nchw(yp), _to_nchw(y), params).item())


# ----------------------------------------------------------------------
# UIQM
# ----------------------------------------------------------------------
def _trimmed_stats(values, trim=UICM_TRIM):
    """Asymmetric-trimmed mean and variance about it."""
    v = np.sort(values.reshape(-1))
    n = v.size
    cut = int(np.floor(trim * n))
    kept = v[cut:n - cut] if n - 2 * cut > 0 else v
    mu = kept.mean()
    var = np.mean((kept - mu) ** 2)
    return mu, var


def _uicm(img):
    r, g, b = img[:, :, 0], img[:, :, 1], img[:, :, 2]
    rg = r - g
    yb = 0.5 * (r + g) - b
    mu_rg, var_rg = _trimmed_stats(rg)
    mu_yb, var_yb = _trimmed_stats(yb)
    return (UICM_MU_W * np.sqrt(mu_rg ** 2 + mu_yb ** 2)
            + UICM_SIGMA_W * np.sqrt(var_rg + var_yb))


def _sobel_magnitude(plane):
    kx = np.array([[1, 0, -1], [2, 0, -2], [1, 0, -1]], dtype=np.float64)
    ky = kx.T
    padded = np.pad(plane, 1, mode="edge")
    gx = np.zeros_like(plane)
    gy = np.zeros_like(plane)
    for i in range(3):
        for j in range(3):
            sub = padded[i:i + plane.shape[0], j:j + plane.shape[1]]
            gx += kx[i, j] * sub
            gy += ky[i, j] * sub
    return np.sqrt(gx ** 2 + gy ** 2)


def _eme(plane, block=EME_BLOCK):
    """Mean over blocks of 2 log((max+eps)/(min+eps))."""
    h, w = plane.shape
    nh, nw = h // block, w // block
    if nh == 0 or nw == 0:
        return 0.0
    trimmed = plane[:nh * block, :nw * block]
    blocks = trimmed.reshape(nh, block, nw, block)
    bmax = blocks.max(axis=(1, 3))
    bmin = blocks.min(axis=(1, 3))
    return float(np.mean(2.0 * np.log((bmax + EME_EPS) / (bmin + EME_EPS))))


def _uism(img):
    total = 0.0
    for c, lam in enumerate(UISM_LAMBDA):
        total += lam * _eme(_sobel_magnitude(img[:, :, c]))
    return total


def _uiconm(img, block=EME_BLOCK):
    """log-AMEE contrast of the BT.601 luma plane.

    Per block, m is the Michelson contrast (max-min)/(max+min); the score
    is -(1/K) sum m ln m with m ln m taken as 0 at m = 0.
    """
    luma = img @ YUV_MATRIX[0]
    h, w = luma.shape
    nh, nw = h // block, w // block
    if nh == 0 or nw == 0:
        return 0.0
    blocks = luma[:nh * block, :nw * block].reshape(nh, block, nw, block)
    bmax = blocks.max(axis=(1, 3))
    bmin = blocks.min(axis=(1, 3))
    m = (bmax - bmin) / (bmax + bmin + EME_EPS)
    ent = np.where(m > 0, m * np.log(np.maximum(m, 1e-300)), 0.0)
    return float(-np.mean(ent))


def uiqm(img):
    img = np.asarray(img, dtype=np.float64)
    return float(UIQM_C1 * _uicm(img) + UIQM_C2 * _uism(img)
                 + UIQM_C3 * _uiconm(img))


# ----------------------------------------------------------------------
# UCIQE
# ----------------------------------------------------------------------
def uciqe(img):
    img = np.asarray(img, dtype=np.float64)
    yuv = img @ YUV_MATRIX.T
    luma = yuv[:, :, 0]
    chroma = np.sqrt(yuv[:, :, 1] ** 2 + yuv[:, :, 2] ** 2)
    chroma_std = float(chroma.std())
    lo, hi = np.quantile(luma, [0.01, 0.99])
    contrast = float(hi - lo)
    saturation = float(np.mean(chroma / (np.sqrt(chroma ** 2 + luma ** 2)
                                         + 1e-12)))
    return UCIQE_C1 * chroma_std + UCIQE_C2 * contrast + UCIQE_C3 * saturation


# ----------------------------------------------------------------------
# reporting
# ----------------------------------------------------------------------
@dataclass
class MetricReport:
    """Per-image metric rows plus dataset means."""
    ids: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # dicts keyed by metric name

    COLUMNS = ("id", "psnr", "ssim", "mse", "uiqm", "uciqe")

    def add(self, image_id, **values):
        self.ids.append(image_id)
        self.rows.append(values)

    def means(self):
        out = {}
        for key in self.COLUMNS[1:]:
            vals = [r[key] for r in self.rows if key in r]
            if vals:
                out[key] = float(np.mean(vals))
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(self.COLUMNS) + ["mse_x1e3"])
            for image_id, row in zip(self.ids, self.rows):
                writer.writerow(
                    [image_id] + [row.get(k, "") for k in self.COLUMNS[1:]]
                    + [row["mse"] * 1e3 if "mse" in row else ""])
            means = self.means()
            writer.writerow(
                ["mean"] + [means.get(k, "") for k in self.COLUMNS[1:]]
                + [means["mse"] * 1e3 if "mse" in means else ""])

    def summary(self):
        means = self.means()
        parts = [f"{k}={v:.4f}" for k, v in means.items()]
        return f"{len(self.rows)} images | " + " ".join(parts)


def evaluate_pair(yp, y):
    return {
        "psnr": psnr(yp, y),
        "ssim": ssim_index(yp, y),
        "mse": mse(yp, y),
        "uiqm": uiqm(yp),
        "uciqe": uciqe(yp),
    }
