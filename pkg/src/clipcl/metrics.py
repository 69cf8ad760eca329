"""Counting and map-quality metrics: MAE, GAME, SSIM, PSNR."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# PSNR of a perfect prediction is infinite; this is what gets written to logs instead.
PSNR_SENTINEL_DB = 100.0


@dataclass(frozen=True)
class MetricsRecord:
    mae: float
    game: float
    ssim: float
    psnr: float
    game_level: int = 2

    def as_dict(self, finite_psnr: bool = True) -> dict:
        d = asdict(self)
        if finite_psnr and math.isinf(self.psnr):
            d["psnr"] = PSNR_SENTINEL_DB
        return d


def _same_shape(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"grids must be 2-D with equal shapes, got {a.shape} and {b.shape}")
    return a, b


def mae(estimated_counts: Sequence[float], true_counts: Sequence[float]) -> float:
    e = np.asarray(estimated_counts, dtype=np.float64)
    g = np.asarray(true_counts, dtype=np.float64)
    if e.ndim != 1 or e.shape != g.shape or len(e) == 0:
        raise ValueError("mae needs two non-empty count lists of equal length")
    return float(np.mean(np.abs(e - g)))


def patch_edges(size: int, parts: int) -> np.ndarray:
    """Boundaries of ``parts`` near-equal slices; the remainder goes to the last slice."""
    step = size // parts
    edges = np.arange(parts + 1) * step
    edges[-1] = size
    return edges


def game(pred: np.ndarray, gt: np.ndarray, level: int = 2) -> float:
    """Sum of absolute patch-count errors over a 2^level x 2^level partition."""
    pred, gt = _same_shape(pred, gt)
    if level < 0 or 2**level > min(pred.shape):
        raise ValueError(f"GAME level {level} too large for a {pred.shape[0]}x{pred.shape[1]} grid")
    parts = 2**level
    rows = patch_edges(pred.shape[0], parts)
    cols = patch_edges(pred.shape[1], parts)
    total = 0.0
    for r0, r1 in zip(rows[:-1], rows[1:]):
        for c0, c1 in zip(cols[:-1], cols[1:]):
            total += abs(float(pred[r0:r1, c0:c1].sum()) - float(gt[r0:r1, c0:c1].sum()))
    return total


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over all valid 11x11 Gaussian-weighted windows.

    The dynamic range is the maximum over both grids (floored at 1e-12), since
    density maps have no fixed intensity scale.
    """
    a, b = _same_shape(a, b)
    if min(a.shape) < window:
        raise ValueError(f"SSIM needs grids of at least {window}x{window}, got {a.shape}")
    data_range = max(float(a.max()), float(b.max()), 1e-12)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    w = _gaussian_window(window, sigma)

    def wmean(x):
        return np.einsum("ijkl,kl->ij", sliding_window_view(x, w.shape), w)

    mu_a, mu_b = wmean(a), wmean(b)
    var_a = wmean(a * a) - mu_a**2
    var_b = wmean(b * b) - mu_b**2
    cov = wmean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR of prediction ``a`` against ground truth ``b``, peak = max of ``b``.

    Returns ``math.inf`` when the grids are identical.
    """
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    peak = max(float(b.max()), 1e-12)
    return 10.0 * math.log10(peak * peak / mse)


def evaluate(predictions: Sequence[np.ndarray], dataset, game_level: int = 2) -> MetricsRecord:
    samples = list(dataset)
    if len(predictions) != len(samples):
        raise ValueError(f"{len(predictions)} predictions for {len(samples)} samples")
    if not samples:
        raise ValueError("cannot evaluate an empty dataset")
    est, true, games, ssims, psnrs = [], [], [], [], []
    for pred, s in zip(predictions, samples):
        if s.density is None:
            raise ValueError(f"sample {s.id!r} has no ground-truth density")
        est.append(float(np.sum(pred)))
        true.append(float(np.sum(s.density)))
        games.append(game(pred, s.density, game_level))
        ssims.append(ssim(pred, s.density))
        psnrs.append(psnr(pred, s.density))
    finite = [p for p in psnrs if math.isfinite(p)]
    return MetricsRecord(
        mae=mae(est, true),
        game=float(np.mean(games)),
        ssim=float(np.mean(ssims)),
        psnr=float(np.mean(finite)) if finite else math.inf,
        game_level=game_level,
    )
