"""Optimizer, learning-rate schedule, training loop, checkpointing.

Training follows the paper-style protocol at desk scale: AdamW
(beta1=0.9, beta2=0.999), cosine learning-rate decay from 1e-4 to 1e-6
over the run, rotation/flip augmentation, 64x64 crops. Randomness is
derived per step from (seed, step), so a resumed run reproduces an
uninterrupted one exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import losses as L
from .fusion import FdceNet, ModelConfig
from .imageio import augment_pair, compute_histogram, random_patch, to_batch
from .tensor import Tensor, TensorError


@dataclass
class TrainConfig:
    epochs: int = 40
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    batch_size: int = 4
    patch: int = 64
    seed: int = 0
    bins: int = 64
    num_queries: int = 8   # M
    embed_width: int = 64  # C_e
    n_groups: int = 3      # N
    base_width: int = 16
    alpha: float = 0.5
    beta: float = 0.05
    aux_coarse_loss: bool = True
    augment: bool = True

    def __post_init__(self):
        if self.lr_end > self.lr_start:
            raise ValueError("lr_end must not exceed lr_start")
        for name in ("epochs", "batch_size", "patch", "bins", "num_queries",
                     "embed_width", "n_groups", "base_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def model_config(self):
        return ModelConfig(base_width=self.base_width,
                           num_queries=self.num_queries,
                           embed_width=self.embed_width,
                           n_groups=self.n_groups, bins=self.bins,
                           seed=self.seed)


class TrainingDivergence(FloatingPointError):
    def __init__(self, step, components):
        super().__init__(f"non-finite loss at step {step}: {components}")
        self.step = step
        self.components = components


def lr_at(step, total_steps, cfg):
    """Cosine interpolation from lr_start (step 0) to lr_end (last step)."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    frac = step / total_steps if total_steps else 1.0
    return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (
        1.0 + np.cos(np.pi * frac))


class AdamW:
    """Decoupled-weight-decay Adam; state is keyed by parameter name."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, lr):
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for name, p in params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise TensorError(f"gradient shape mismatch for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            if cfg.weight_decay:
                p.data *= 1.0 - lr * cfg.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def adamw_step(param, grad, m, v, t, cfg, lr):
    """Single-tensor AdamW update; returns (param, m, v) as new arrays."""
    if param.shape != grad.shape:
        raise TensorError("adamw_step shape mismatch")
    if t < 1:
        raise ValueError("adamw_step requires t >= 1")
    param = param * (1.0 - lr * cfg.weight_decay)
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
    mhat = m / (1.0 - cfg.beta1 ** t)
    vhat = v / (1.0 - cfg.beta2 ** t)
    return param - lr * mhat / (np.sqrt(vhat) + cfg.eps), m, v


# ----------------------------------------------------------------------
# checkpoint format: magic, version, JSON config, named-tensor table, sha256
# ----------------------------------------------------------------------
CKPT_MAGIC = b"FDCE"
CKPT_VERSION = 1
_DTYPE_TAGS = {0: np.float32, 1: np.float64}
_TAGS_BY_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(IOError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


def save_checkpoint(path, tensors, config):
    """Write named arrays plus a JSON config snapshot, checksummed."""
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION)]
    cfg_raw = json.dumps(config, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(cfg_raw)))
    parts.append(cfg_raw)
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype not in _TAGS_BY_DTYPE:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw_name = name.encode()
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BI", _TAGS_BY_DTYPE[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    payload = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest())


def load_checkpoint(path):
    """Read a checkpoint; returns (tensors, config).

    Raises BadMagicError / VersionMismatchError / ChecksumError before any
    tensor content is exposed.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 40 or blob[:4] != CKPT_MAGIC:
        raise BadMagicError(f"not a checkpoint file: {path}")
    payload, digest = blob[:-32], blob[-32:]
    version = struct.unpack_from("<I", payload, 4)[0]
    if version != CKPT_VERSION:
        raise VersionMismatchError(
            f"checkpoint version {version}, expected {CKPT_VERSION}")
    if hashlib.sha256(payload).digest() != digest:
        raise ChecksumError(f"checksum mismatch in {path}")
    pos = 8
    cfg_len = struct.unpack_from("<I", payload, pos)[0]
    pos += 4
    config = json.loads(payload[pos:pos + cfg_len].decode())
    pos += cfg_len
    count = struct.unpack_from("<I", payload, pos)[0]
    pos += 4
    tensors = {}
    for _ in range(count):
        name_len = struct.unpack_from("<I", payload, pos)[0]
        pos += 4
        name = payload[pos:pos + name_len].decode()
        pos += name_len
        tag, rank = struct.unpack_from("<BI", payload, pos)
        pos += 5
        shape = struct.unpack_from(f"<{rank}Q", payload, pos)
        pos += 8 * rank
        dtype = np.dtype(_DTYPE_TAGS[tag]).newbyteorder("<")
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(payload[pos:pos + n_bytes], dtype=dtype)
        pos += n_bytes
        tensors[name] = arr.astype(_DTYPE_TAGS[tag]).reshape(shape)
    return tensors, config


def model_state(model, optimizer=None):
    tensors = {f"model.{k}": p.data for k, p in
               model.named_parameters().items()}
    if optimizer is not None:
        tensors.update({f"opt.m.{k}": v for k, v in optimizer.m.items()})
        tensors.update({f"opt.v.{k}": v for k, v in optimizer.v.items()})
    return tensors


def restore_model(model, tensors, optimizer=None):
    params = model.named_parameters()
    for name, p in params.items():
        src = tensors[f"model.{name}"]
        if src.shape != p.data.shape:
            raise CheckpointError(f"shape mismatch restoring {name}")
        p.data = src.astype(p.data.dtype).copy()
    if optimizer is not None:
        for name in params:
            if f"opt.m.{name}" in tensors:
                optimizer.m[name] = tensors[f"opt.m.{name}"].astype(
                    params[name].dtype).copy()
                optimizer.v[name] = tensors[f"opt.v.{name}"].astype(
                    params[name].dtype).copy()


def load_model(path):
    """Rebuild a trained model from a checkpoint; returns (model, meta)."""
    tensors, meta = load_checkpoint(path)
    fields = {f for f in TrainConfig.__dataclass_fields__}
    cfg = TrainConfig(**{k: v for k, v in meta.items() if k in fields})
    model = FdceNet(cfg.model_config())
    restore_model(model, tensors)
    return model, meta


# ----------------------------------------------------------------------
# training loop
# ----------------------------------------------------------------------
def _prepare_batch(dataset, indices, cfg, step):
    rng = np.random.default_rng([cfg.seed, 1 + step])
    xs, ys, hists = [], [], []
    for i in indices:
        x, y = dataset.load(i)
        if cfg.augment:
            x, y = augment_pair(x, y, rng)
        if min(x.shape[0], x.shape[1]) > cfg.patch:
            x, y = random_patch(x, y, cfg.patch, rng)
        xs.append(x)
        ys.append(y)
        hists.append(compute_histogram(y, cfg.bins))
    return to_batch(xs), to_batch(ys), np.stack(hists).astype(np.float32)


def train_step(model, extractor, x, y, hist_ref, cfg):
    """One forward/backward pass; returns (loss components, total Tensor)."""
    xt = Tensor(x)
    yt = Tensor(y)
    y_hat, y_prime, hist_pred, _ = model(xt)
    comp = {
        "ssim": L.ssim_loss(y_prime, yt),
        "rec": L.rec_loss(y_prime, yt),
        "hist": L.hist_loss(hist_pred, hist_ref),
        "per": L.perceptual_loss(y_prime, yt, extractor),
    }
    total = L.total_loss(comp["ssim"], comp["rec"], comp["hist"], comp["per"],
                         L.LossWeights(cfg.alpha, cfg.beta))
    if cfg.aux_coarse_loss:
        total = total + L.rec_loss(y_hat, yt)
    return comp, total


def train_loop(cfg, dataset, ckpt_path=None, log_path=None, val_dataset=None,
               resume_from=None, progress=None):
    """Train the full pipeline; returns (model, history).

    history: dict with per-step "loss" list and per-epoch "epochs" rows
    (epoch, lr, ssim, rec, hist, per, total).
    """
    if len(dataset) == 0:
        raise ValueError("empty training dataset")
    model = FdceNet(cfg.model_config())
    optimizer = AdamW(cfg)
    extractor = L.PerceptualExtractor(seed=cfg.seed)
    start_epoch = 0
    if resume_from is not None:
        tensors, meta = load_checkpoint(resume_from)
        restore_model(model, tensors, optimizer)
        start_epoch = int(meta.get("epochs_done", 0))
        optimizer.t = int(meta.get("opt_t", 0))

    n = len(dataset)
    batches = [list(range(i, min(i + cfg.batch_size, n)))
               for i in range(0, n, cfg.batch_size)]
    total_steps = cfg.epochs * len(batches)
    params = model.named_parameters()

    history = {"loss": [], "epochs": []}
    best_val = np.inf
    step = start_epoch * len(batches)
    for epoch in range(start_epoch, cfg.epochs):
        order_rng = np.random.default_rng([cfg.seed, 10 ** 6 + epoch])
        order = order_rng.permutation(n)
        sums = {k: 0.0 for k in ("ssim", "rec", "hist", "per", "total")}
        epoch_lr = lr_at(step, total_steps, cfg)
        for batch in batches:
            idx = [int(order[i]) for i in batch]
            x, y, hist_ref = _prepare_batch(dataset, idx, cfg, step)
            comp, total = train_step(model, extractor, x, y, hist_ref, cfg)
            values = {k: float(v.item()) for k, v in comp.items()}
            values["total"] = float(total.item())
            if not all(np.isfinite(v) for v in values.values()):
                raise TrainingDivergence(step, values)
            model.zero_grad()
            total.backward()
            optimizer.step(params, lr_at(step, total_steps, cfg))
            for k in sums:
                sums[k] += values[k]
            history["loss"].append(values["total"])
            step += 1
        row = {"epoch": epoch, "lr": epoch_lr}
        row.update({k: sums[k] / len(batches) for k in sums})
        history["epochs"].append(row)
        if progress is not None:
            progress(row)
        if val_dataset is not None and ckpt_path is not None:
            val = _validation_loss(model, extractor, val_dataset, cfg)
            if val < best_val:
                best_val = val
                _save_run(ckpt_path + ".best", model, optimizer, cfg,
                          epoch + 1)
    if ckpt_path is not None:
        _save_run(ckpt_path, model, optimizer, cfg, cfg.epochs)
    if log_path is not None:
        _write_log(log_path, history["epochs"])
    return model, history


def _validation_loss(model, extractor, dataset, cfg):
    total = 0.0
    for i in range(len(dataset)):
        x, y, hist_ref = _prepare_batch(dataset, [i], cfg, step=0)
        _, loss = train_step(model, extractor, x, y, hist_ref, cfg)
        total += float(loss.item())
    return total / len(dataset)


def _save_run(path, model, optimizer, cfg, epochs_done):
    meta = asdict(cfg)
    meta["epochs_done"] = epochs_done
    meta["opt_t"] = optimizer.t
    save_checkpoint(path, model_state(model, optimizer), meta)


def _write_log(path, rows):
    with open(path, "w") as fh:
        fh.write("epoch,lr,ssim_loss,rec_loss,hist_loss,per_loss,total\n")
        for r in rows:
            fh.write(f"{r['epoch']},{r['lr']:.8e},{r['ssim']:.8e},"
                     f"{r['rec']:.8e},{r['hist']:.8e},{r['per']:.8e},"
                     f"{r['total']:.8e}\n")
