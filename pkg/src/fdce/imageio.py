"""Image file I/O, paired datasets, augmentation, and hard color histograms.

Images are H x W x 3 float arrays in [0, 1], RGB order. The normative file
format is binary PPM (P6, maxval 255); PNG/JPEG are handled through Pillow
when the extension asks for them.
"""

from __future__ import annotations

import os

import numpy as np


class ImageIOError(IOError):
    """Base class for image I/O failures."""


class MissingFileError(ImageIOError):
    pass


class DecodeError(ImageIOError):
    pass


def _read_ppm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"P6"):
        raise DecodeError(f"not a P6 portable pixmap: {path}")
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DecodeError(f"truncated PPM header: {path}")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise DecodeError(f"bad PPM header in {path}") from exc
    if maxval != 255:
        raise DecodeError(f"unsupported PPM maxval {maxval} in {path}")
    need = width * height * 3
    payload = raw[pos:pos + need]
    if len(payload) != need:
        raise DecodeError(f"truncated PPM payload in {path}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return arr


def load_image(path):
    """Load an image file to an H x W x 3 float array in [0, 1]."""
    if not os.path.exists(path):
        raise MissingFileError(f"image file not found: {path}")
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ppm":
        arr = _read_ppm(path)
    else:
        try:
            from PIL import Image as PILImage
        except ImportError as exc:
            raise DecodeError(
                f"Pillow unavailable for non-PPM format: {path}") from exc
        try:
            with PILImage.open(path) as im:
                arr = np.asarray(im.convert("RGB"))
        except Exception as exc:
            raise DecodeError(f"cannot decode image: {path}") from exc
    return arr.astype(np.float64) / 255.0


def save_image(img, path):
    """Write an H x W x 3 image; values are clamped then rounded to 8-bit."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageIOError(f"expected H x W x 3 image, got shape {img.shape}")
    data = np.clip(img, 0.0, 1.0)
    bytes_ = np.floor(data * 255.0 + 0.5).astype(np.uint8)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ppm":
        h, w = bytes_.shape[:2]
        with open(path, "wb") as fh:
            fh.write(b"P6\n%d %d\n255\n" % (w, h))
            fh.write(bytes_.tobytes())
    else:
        from PIL import Image as PILImage
        PILImage.fromarray(bytes_, mode="RGB").save(path)


def save_grayscale(plane, path):
    """Write a 2D array in [0, 1] as a gray RGB image."""
    plane = np.asarray(plane)
    save_image(np.repeat(plane[:, :, None], 3, axis=2), path)


# ----------------------------------------------------------------------
# augmentation
# ----------------------------------------------------------------------
def _apply_transform(img, rot, hflip, vflip):
    out = np.rot90(img, k=rot, axes=(0, 1))
    if hflip:
        out = out[:, ::-1]
    if vflip:
        out = out[::-1]
    return np.ascontiguousarray(out)


def augment_pair(x, y, rng):
    """Apply one shared random rotation (0/90/180/270) plus independent
    horizontal/vertical flip coin-flips to both images."""
    if x.shape != y.shape:
        raise ImageIOError(f"augment_pair shape mismatch: {x.shape} vs {y.shape}")
    rot = int(rng.integers(0, 4))
    hflip = bool(rng.integers(0, 2))
    vflip = bool(rng.integers(0, 2))
    return (_apply_transform(x, rot, hflip, vflip),
            _apply_transform(y, rot, hflip, vflip))


def random_patch(x, y, size, rng):
    """Crop the same random size x size window out of both images."""
    h, w = x.shape[:2]
    if size > min(h, w):
        raise ImageIOError(f"patch size {size} exceeds image extent {h}x{w}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return (x[top:top + size, left:left + size].copy(),
            y[top:top + size, left:left + size].copy())


def compute_histogram(img, bins=64):
    """Hard per-channel color histogram, rows normalized to sum 1.

    Bin index is floor(v * bins) clamped to bins - 1.
    """
    if bins < 2:
        raise ImageIOError("compute_histogram requires bins >= 2")
    img = np.asarray(img)
    n = img.shape[0] * img.shape[1]
    idx = np.minimum((img * bins).astype(np.int64), bins - 1)
    hist = np.zeros((3, bins), dtype=np.float64)
    for c in range(3):
        hist[c] = np.bincount(idx[:, :, c].reshape(-1), minlength=bins) / n
    return hist


# ----------------------------------------------------------------------
# paired dataset
# ----------------------------------------------------------------------
class PairedDataset:
    """Paired (degraded, reference) images from DIR/degraded and DIR/reference.

    Pairs are matched by filename and iterated in sorted order.
    """

    def __init__(self, root):
        deg_dir = os.path.join(root, "degraded")
        ref_dir = os.path.join(root, "reference")
        if not os.path.isdir(deg_dir) or not os.path.isdir(ref_dir):
            raise MissingFileError(
                f"dataset root must contain degraded/ and reference/: {root}")
        names = sorted(set(os.listdir(deg_dir)) & set(os.listdir(ref_dir)))
        if not names:
            raise ImageIOError(f"no paired filenames under {root}")
        self.names = names
        self.pairs = [(os.path.join(deg_dir, n), os.path.join(ref_dir, n))
                      for n in names]

    def __len__(self):
        return len(self.pairs)

    def load(self, i):
        xp, yp = self.pairs[i]
        x = load_image(xp)
        y = load_image(yp)
        if x.shape != y.shape:
            raise ImageIOError(
                f"pair dimension mismatch: {xp} {x.shape} vs {yp} {y.shape}")
        return x, y


def to_batch(images):
    """Stack H x W x 3 images into a [B, 3, H, W] float32 array."""
    return np.stack([np.moveaxis(img, -1, 0) for img in images]).astype(
        np.float32)


def from_batch(batch):
    """[B, 3, H, W] array -> list of H x W x 3 images."""
    return [np.moveaxis(np.asarray(batch)[b], 0, -1) for b in range(len(batch))]
