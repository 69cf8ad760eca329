"""Seeded synthetic crowd scenes: bright Gaussian blobs on a dark, noisy background."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Dataset, Sample
from .density import KernelSpec, render_density

MIN_SEPARATION = 2.0
MAX_RETRIES = 100


@dataclass(frozen=True)
class SceneConfig:
    height: int = 32
    width: int = 32
    count_range: tuple[int, int] = (0, 30)
    blob_sigma: float = 1.5
    noise_std: float = 0.02
    sigma_gt: float = 2.0

    def __post_init__(self):
        lo, hi = self.count_range
        if lo < 0 or hi < lo:
            raise ValueError(f"count_range must be non-negative and ordered, got {self.count_range}")
        if self.height < 16 or self.width < 16:
            raise ValueError("scene dimensions must be at least 16x16")
        if self.blob_sigma <= 0 or self.sigma_gt <= 0 or self.noise_std < 0:
            raise ValueError("blob_sigma and sigma_gt must be positive, noise_std non-negative")


def _place_dots(count: int, cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    dots = np.zeros((count, 2))
    for i in range(count):
        for _ in range(MAX_RETRIES):
            cand = rng.uniform((0.0, 0.0), (cfg.width, cfg.height))
            if i == 0 or np.min(np.hypot(*(dots[:i] - cand).T)) >= MIN_SEPARATION:
                break
        # after MAX_RETRIES the last candidate is kept regardless of spacing
        dots[i] = cand
    return dots


def _render_image(dots: np.ndarray, cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    ys = np.arange(cfg.height, dtype=np.float64)[:, None, None]
    xs = np.arange(cfg.width, dtype=np.float64)[None, :, None]
    if len(dots):
        d2 = (xs - dots[:, 0]) ** 2 + (ys - dots[:, 1]) ** 2
        img = np.exp(-d2 / (2 * cfg.blob_sigma**2)).sum(axis=2)
        img /= img.max()
    else:
        img = np.zeros((cfg.height, cfg.width))
    img = img + rng.normal(0.0, cfg.noise_std, size=img.shape)
    # quantise to the 8-bit grid so the PGM round-trip is lossless
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def generate_scene(cfg: SceneConfig, rng: np.random.Generator, sample_id: str = "syn-000000") -> Sample:
    lo, hi = cfg.count_range
    count = int(rng.integers(lo, hi, endpoint=True))
    dots = _place_dots(count, cfg, rng)
    image = _render_image(dots, cfg, rng)
    density = render_density(dots, cfg.height, cfg.width, KernelSpec(cfg.sigma_gt))
    return Sample(sample_id, image, dots, density)


def generate_dataset(n: int, cfg: SceneConfig | None = None, seed: int = 0) -> Dataset:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cfg = cfg or SceneConfig()
    streams = np.random.SeedSequence(seed).spawn(n)
    samples = tuple(
        generate_scene(cfg, np.random.default_rng(ss), f"syn-{i:06d}") for i, ss in enumerate(streams)
    )
    return Dataset(samples, cfg.sigma_gt)
