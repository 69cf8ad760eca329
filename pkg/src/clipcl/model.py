"""A three-layer convolutional density regressor trained with Adam.

conv 5x5 (1->8) + ReLU -> conv 3x3 (8->8) + ReLU -> 1x1 head (8->1) + ReLU,
all with same-padding, so the predicted map has the input's resolution.
Gradients are derived by hand; ``tests/test_model.py`` checks them against
central differences.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataio import Sample
from .errors import DataFormatError, StateError

CHANNELS = 8
# (name, shape, fan_in, fan_out); biases share their layer's Glorot bound
LAYOUT = (
    ("w1", (CHANNELS, 1, 5, 5), 1 * 25, CHANNELS * 25),
    ("b1", (CHANNELS,), 1 * 25, CHANNELS * 25),
    ("w2", (CHANNELS, CHANNELS, 3, 3), CHANNELS * 9, CHANNELS * 9),
    ("b2", (CHANNELS,), CHANNELS * 9, CHANNELS * 9),
    ("w3", (1, CHANNELS, 1, 1), CHANNELS, 1),
    ("b3", (1,), CHANNELS, 1),
)
NAMES = tuple(name for name, *_ in LAYOUT)
MIN_SIDE = 7


@dataclass(frozen=True, eq=False)
class ModelParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in NAMES]

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, flat: np.ndarray) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != param_count():
            raise ValueError(f"expected {param_count()} parameters, got {flat.size}")
        out, pos = {}, 0
        for name, shape, *_ in LAYOUT:
            n = math.prod(shape)
            out[name] = flat[pos : pos + n].reshape(shape).copy()
            pos += n
        return cls(**out)

    def map(self, fn) -> "ModelParams":
        return ModelParams(**{n: fn(getattr(self, n)) for n in NAMES})

    def equals(self, other: "ModelParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def param_count() -> int:
    return sum(math.prod(shape) for _, shape, *_ in LAYOUT)


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_model(seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape, fan_in, fan_out in LAYOUT:
        if name.startswith("b"):
            out[name] = np.zeros(shape)
        else:
            s = glorot_bound(fan_in, fan_out)
            out[name] = rng.uniform(-s, s, size=shape)
    return ModelParams(**out)


# -- convolution helpers ------------------------------------------------------


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, C, H, W) -> (B*H*W, C*k*k) patches for a same-padded k x k convolution."""
    b, c, h, w = x.shape
    p = k // 2
    padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(padded, (k, k), axis=(2, 3))  # B, C, H, W, k, k
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * k * k)


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], k: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patch gradients back onto the input."""
    b, c, h, w = shape
    p = k // 2
    cols = cols.reshape(b, h, w, c, k, k)
    padded = np.zeros((b, c, h + 2 * p, w + 2 * p))
    for di in range(k):
        for dj in range(k):
            padded[:, :, di : di + h, dj : dj + w] += cols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
    return padded[:, :, p : p + h, p : p + w]


@dataclass
class _Cache:
    shape: tuple[int, int, int]
    cols1: np.ndarray
    z1: np.ndarray
    cols2: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    z3: np.ndarray


def _forward(params: ModelParams, images: np.ndarray) -> tuple[np.ndarray, _Cache]:
    b, h, w = images.shape
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ValueError(f"input must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}")
    cols1 = _im2col(images[:, None], 5)
    z1 = cols1 @ params.w1.reshape(CHANNELS, -1).T + params.b1
    a1 = np.maximum(z1, 0.0).reshape(b, h, w, CHANNELS).transpose(0, 3, 1, 2)
    cols2 = _im2col(a1, 3)
    z2 = cols2 @ params.w2.reshape(CHANNELS, -1).T + params.b2
    a2 = np.maximum(z2, 0.0)
    z3 = a2 @ params.w3.reshape(CHANNELS) + params.b3[0]
    out = np.maximum(z3, 0.0).reshape(b, h, w)
    return out, _Cache((b, h, w), cols1, z1, cols2, z2, a2, z3)


def _backward(params: ModelParams, cache: _Cache, grad_out: np.ndarray) -> ModelParams:
    b, h, w = cache.shape
    g3 = grad_out.reshape(-1) * (cache.z3 > 0)
    dw3 = (g3 @ cache.a2).reshape(params.w3.shape)
    db3 = np.array([g3.sum()])
    g2 = np.outer(g3, params.w3.reshape(CHANNELS)) * (cache.z2 > 0)
    dw2 = (g2.T @ cache.cols2).reshape(params.w2.shape)
    db2 = g2.sum(axis=0)
    da1 = _col2im(g2 @ params.w2.reshape(CHANNELS, -1), (b, CHANNELS, h, w), 3)
    g1 = da1.transpose(0, 2, 3, 1).reshape(-1, CHANNELS) * (cache.z1 > 0)
    dw1 = (g1.T @ cache.cols1).reshape(params.w1.shape)
    db1 = g1.sum(axis=0)
    return ModelParams(dw1, db1, dw2, db2, dw3, db3)


def forward(params: ModelParams, image: np.ndarray) -> np.ndarray:
    """Predicted density map for one image; non-negative, same shape as the input."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("forward expects a single 2-D image")
    return _forward(params, image[None])[0][0]


def predict(params: ModelParams, images: Sequence[np.ndarray], chunk: int = 64) -> list[np.ndarray]:
    out = []
    for i in range(0, len(images), chunk):
        stack = np.stack([np.asarray(im, dtype=np.float64) for im in images[i : i + chunk]])
        out.extend(_forward(params, stack)[0])
    return out


def loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Squared Euclidean distance between two maps, summed over cells."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float(np.sum((pred - gt) ** 2))


def _batch_arrays(batch: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    if not batch:
        raise ValueError("empty batch")
    for s in batch:
        if s.density is None:
            raise StateError(f"sample {s.id!r} has no cached density")
    return np.stack([s.image for s in batch]), np.stack([s.density for s in batch])


def per_sample_losses(params: ModelParams, samples: Sequence[Sample], chunk: int = 64) -> np.ndarray:
    out = []
    for i in range(0, len(samples), chunk):
        images, gts = _batch_arrays(samples[i : i + chunk])
        pred, _ = _forward(params, images)
        out.append(np.sum((pred - gts) ** 2, axis=(1, 2)))
    return np.concatenate(out) if out else np.zeros(0)


def loss_and_grad(params: ModelParams, batch: Sequence[Sample]) -> tuple[float, ModelParams]:
    """Mean per-sample loss over the batch and its exact gradient."""
    images, gts = _batch_arrays(batch)
    pred, cache = _forward(params, images)
    diff = pred - gts
    value = float(np.mean(np.sum(diff**2, axis=(1, 2))))
    grads = _backward(params, cache, 2.0 * diff / len(batch))
    return value, grads


# -- Adam ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OptimizerState:
    first_moment: ModelParams
    second_moment: ModelParams
    step_count: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8


def init_optimizer(params: ModelParams, lr: float = 1e-4, **kw) -> OptimizerState:
    zeros = params.map(np.zeros_like)
    return OptimizerState(zeros, zeros.map(np.copy), lr=lr, **kw)


def adam_step(
    params: ModelParams, opt: OptimizerState, grads: ModelParams
) -> tuple[ModelParams, OptimizerState]:
    t = opt.step_count + 1
    c1 = 1.0 - opt.beta1**t
    c2 = 1.0 - opt.beta2**t
    new_p, new_m, new_v = {}, {}, {}
    for n in NAMES:
        g = getattr(grads, n)
        m = opt.beta1 * getattr(opt.first_moment, n) + (1 - opt.beta1) * g
        v = opt.beta2 * getattr(opt.second_moment, n) + (1 - opt.beta2) * g * g
        new_p[n] = getattr(params, n) - opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps_hat)
        new_m[n], new_v[n] = m, v
    opt = replace(opt, first_moment=ModelParams(**new_m), second_moment=ModelParams(**new_v), step_count=t)
    return ModelParams(**new_p), opt


def train_batch(
    params: ModelParams, opt: OptimizerState, batch: Sequence[Sample]
) -> tuple[ModelParams, OptimizerState, float]:
    """One Adam step on the batch; returns the loss measured before the step."""
    value, grads = loss_and_grad(params, batch)
    params, opt = adam_step(params, opt, grads)
    return params, opt, value


# -- augmentation ---------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    hflip_prob: float = 0.5
    brightness_delta: float = 0.1
    contrast_range: tuple[float, float] = (0.9, 1.1)

    def __post_init__(self):
        if not 0 <= self.hflip_prob <= 1:
            raise ValueError("hflip_prob must be in [0, 1]")
        if self.brightness_delta < 0:
            raise ValueError("brightness_delta must be non-negative")
        lo, hi = self.contrast_range
        if not 0 < lo <= hi:
            raise ValueError("contrast_range must be a positive, ordered interval")


NO_AUGMENT = AugmentConfig(hflip_prob=0.0, brightness_delta=0.0, contrast_range=(1.0, 1.0))


def hflip(sample: Sample) -> Sample:
    w = sample.image.shape[1]
    dots = sample.dots.copy()
    dots[:, 0] = (w - 1) - dots[:, 0]
    density = None if sample.density is None else sample.density[:, ::-1].copy()
    return Sample(sample.id, sample.image[:, ::-1].copy(), dots, density)


def augment(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Random mirror of image, dots and density, then brightness/contrast on the image only."""
    # always draw all three values so the stream position does not depend on outcomes
    flip = rng.random() < cfg.hflip_prob
    shift = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta)
    scale = rng.uniform(*cfg.contrast_range)
    if flip:
        sample = hflip(sample)
    if shift == 0.0 and scale == 1.0:
        return sample
    img = sample.image
    mean = img.mean()
    img = np.clip((img - mean) * scale + mean + shift, 0.0, 1.0)
    return Sample(sample.id, img, sample.dots, sample.density)


# -- checkpoints ----------------------------------------------------------------

CHECKPOINT_MAGIC = b"CLPM"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIII")  # magic, version, count, reserved


def save_checkpoint(params: ModelParams, path: str | os.PathLike) -> Path:
    path = Path(path)
    flat = params.flatten()
    with open(path, "wb") as f:
        f.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, flat.size, 0))
        f.write(flat.astype("<f8").tobytes())
    return path


def load_checkpoint(path: str | os.PathLike) -> ModelParams:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if len(buf) < _CKPT_HEADER.size:
        raise DataFormatError(f"{path}: truncated checkpoint header")
    magic, version, count, _ = _CKPT_HEADER.unpack_from(buf)
    if magic != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    body = buf[_CKPT_HEADER.size :]
    if count != param_count() or len(body) != 8 * count:
        raise DataFormatError(f"{path}: expected {param_count()} parameters, header says {count}")
    return ModelParams.from_flat(np.frombuffer(body, dtype="<f8"))
