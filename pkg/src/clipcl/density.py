"""Ground-truth density maps from dot annotations by fixed-bandwidth Gaussian stamping."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dataio import check_dots
from .errors import ValidationError


@dataclass(frozen=True)
class KernelSpec:
    sigma: float = 2.0
    truncation_radius: int | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        if self.truncation_radius is None:
            object.__setattr__(self, "truncation_radius", max(1, math.ceil(3 * self.sigma)))
        if int(self.truncation_radius) != self.truncation_radius or self.truncation_radius < 1:
            raise ValidationError(f"truncation_radius must be an integer >= 1, got {self.truncation_radius}")
        object.__setattr__(self, "truncation_radius", int(self.truncation_radius))


@lru_cache(maxsize=32)
def _kernel(sigma: float, radius: int) -> np.ndarray:
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    k /= k.sum()
    k.flags.writeable = False
    return k


def gaussian_kernel(spec: KernelSpec) -> np.ndarray:
    """Square isotropic Gaussian of side ``2 * radius + 1`` whose cells sum to 1."""
    return _kernel(float(spec.sigma), spec.truncation_radius).copy()


def snap(coord: float, size: int) -> list[tuple[int, float]]:
    """Nearest integer cell(s) of one coordinate, as (cell, weight) pairs.

    Ties are broken towards the image centre so that snapping commutes with
    mirroring. A coordinate exactly on the centre line of an even-sized axis
    has no symmetric nearest cell; its mass is split between the two.
    """
    last = size - 1
    mid = last / 2.0
    if coord == mid and size % 2 == 0:
        return [(int(mid), 0.5), (int(mid) + 1, 0.5)]
    if coord <= mid:
        cell = math.floor(coord + 0.5)
    else:
        cell = last - math.floor(last - coord + 0.5)
    return [(min(max(cell, 0), last), 1.0)]


def _stamp(out: np.ndarray, kernel: np.ndarray, row: int, col: int, weight: float) -> None:
    height, width = out.shape
    r = (kernel.shape[0] - 1) // 2
    top, bottom = max(0, row - r), min(height, row + r + 1)
    left, right = max(0, col - r), min(width, col + r + 1)
    patch = kernel[top - row + r : bottom - row + r, left - col + r : right - col + r]
    if bottom - top < 2 * r + 1 or right - left < 2 * r + 1:
        patch = patch / patch.sum()
    out[top:bottom, left:right] += patch if weight == 1.0 else weight * patch


def render_density(dots, height: int, width: int, spec: KernelSpec | None = None) -> np.ndarray:
    """Sum of one unit-mass kernel per dot.

    Kernels clipped by the border are renormalised over their in-bounds cells, so
    the map always integrates to the dot count.
    """
    spec = spec or KernelSpec()
    dots = np.asarray(dots, dtype=np.float64).reshape(-1, 2)
    check_dots(dots, height, width)
    out = np.zeros((height, width), dtype=np.float64)
    kernel = _kernel(float(spec.sigma), spec.truncation_radius)
    for x, y in dots:
        for row, wr in snap(float(y), height):
            for col, wc in snap(float(x), width):
                _stamp(out, kernel, row, col, wr * wc)
    return out
