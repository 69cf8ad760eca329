"""Sample and dataset types plus their on-disk formats.

Layout written by :func:`save_dataset`::

    <dir>/manifest.json
    <dir>/images/<id>.pgm      8-bit binary PGM (P5), intensities scaled by 255
    <dir>/dots/<id>.txt        one "x y" pair per line
    <dir>/density/<id>.dgrd    "DGRD" + u32 height + u32 width + f64 values (LE)
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataFormatError, ValidationError

DENSITY_MAGIC = b"DGRD"
_DENSITY_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True, eq=False)
class Sample:
    """One scene: image in [0,1], dot annotations as (x, y) rows, optional cached density."""

    id: str
    image: np.ndarray
    dots: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    density: np.ndarray | None = None

    def __post_init__(self):
        image = np.asarray(self.image, dtype=np.float64)
        dots = np.asarray(self.dots, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "dots", dots)
        if self.density is not None:
            object.__setattr__(self, "density", np.asarray(self.density, dtype=np.float64))
        for arr in (image, dots, self.density):
            if arr is not None:
                arr.flags.writeable = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape

    @property
    def count(self) -> int:
        return len(self.dots)

    def with_density(self, density: np.ndarray) -> "Sample":
        return Sample(self.id, self.image, self.dots, density)


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: tuple[Sample, ...]
    sigma: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.sigma > 0:
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise ValidationError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
            validate_sample(s)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> Sample:
        return self.samples[i]

    def __iter__(self):
        return iter(self.samples)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.samples[i] for i in indices), self.sigma)

    def split(self, val_fraction: float) -> tuple["Dataset", "Dataset"]:
        """Split into (train, val); val is the last ``val_fraction`` of samples by id order."""
        if not 0 <= val_fraction < 1:
            raise ValueError(f"val_fraction must be in [0, 1), got {val_fraction}")
        by_id = sorted(range(len(self.samples)), key=lambda i: self.samples[i].id)
        n_val = int(round(len(by_id) * val_fraction))
        cut = len(by_id) - n_val
        return self.subset(by_id[:cut]), self.subset(by_id[cut:])


def validate_sample(sample: Sample) -> None:
    image = sample.image
    if image.ndim != 2 or image.size == 0:
        raise ValidationError(f"sample {sample.id!r}: image must be a non-empty 2-D grid")
    if not np.all(np.isfinite(image)) or image.min() < 0 or image.max() > 1:
        raise ValidationError(f"sample {sample.id!r}: image values must be finite and in [0, 1]")
    h, w = image.shape
    check_dots(sample.dots, h, w, sample.id)
    if sample.density is not None:
        d = sample.density
        if d.shape != image.shape:
            raise ValidationError(
                f"sample {sample.id!r}: density shape {d.shape} != image shape {image.shape}"
            )
        if not np.all(np.isfinite(d)) or d.min(initial=0.0) < 0:
            raise ValidationError(f"sample {sample.id!r}: density must be finite and non-negative")


def check_dots(dots: np.ndarray, height: int, width: int, sample_id: str = "?") -> None:
    dots = np.asarray(dots, dtype=np.float64).reshape(-1, 2)
    if len(dots) == 0:
        return
    x, y = dots[:, 0], dots[:, 1]
    bad = ~((x >= 0) & (x < width) & (y >= 0) & (y < height))
    if bad.any():
        px, py = dots[np.argmax(bad)]
        raise ValidationError(
            f"sample {sample_id!r}: dot ({px}, {py}) outside {width}x{height} image"
        )


def samples_equal(a: Sample, b: Sample, atol: float = 1e-9) -> bool:
    if a.id != b.id or a.image.shape != b.image.shape:
        return False
    if not np.array_equal(a.dots, b.dots):
        return False
    if not np.allclose(a.image, b.image, rtol=0, atol=atol):
        return False
    if (a.density is None) != (b.density is None):
        return False
    return a.density is None or np.allclose(a.density, b.density, rtol=0, atol=atol)


def datasets_equal(a: Dataset, b: Dataset, atol: float = 1e-9) -> bool:
    return (
        abs(a.sigma - b.sigma) <= atol
        and len(a) == len(b)
        and all(samples_equal(x, y, atol) for x, y in zip(a, b))
    )


# -- PGM ---------------------------------------------------------------------


def write_pgm(path: Path, image: np.ndarray) -> None:
    data = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


def _pgm_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated header integers, skipping comments."""
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise DataFormatError("truncated or malformed PGM header")
        tokens.append(int(buf[start:pos]))
    # exactly one whitespace byte separates header from raster
    return tokens, pos + 1


def read_pgm(path: Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise DataFormatError(f"{path}: not a binary PGM (P5) file")
    try:
        (w, h, maxval), offset = _pgm_tokens(buf, 3)
    except DataFormatError as e:
        raise DataFormatError(f"{path}: {e}") from None
    if not 0 < maxval < 256:
        raise DataFormatError(f"{path}: only 8-bit PGM is supported (maxval={maxval})")
    raster = buf[offset : offset + w * h]
    if len(raster) != w * h:
        raise DataFormatError(f"{path}: expected {w * h} raster bytes, found {len(raster)}")
    data = np.frombuffer(raster, dtype=np.uint8).reshape(h, w)
    return data.astype(np.float64) / float(maxval)


# -- density blobs -----------------------------------------------------------


def write_density(path: Path, density: np.ndarray) -> None:
    h, w = density.shape
    with open(path, "wb") as f:
        f.write(_DENSITY_HEADER.pack(DENSITY_MAGIC, h, w))
        f.write(np.ascontiguousarray(density, dtype="<f8").tobytes())


def read_density(path: Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _DENSITY_HEADER.size:
        raise DataFormatError(f"{path}: truncated density header")
    magic, h, w = _DENSITY_HEADER.unpack_from(buf)
    if magic != DENSITY_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    body = buf[_DENSITY_HEADER.size :]
    if len(body) != 8 * h * w:
        raise DataFormatError(f"{path}: expected {h}x{w} float64 values, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(h, w).astype(np.float64)


# -- dot annotations ---------------------------------------------------------


def write_dots(path: Path, dots: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for x, y in dots:
            f.write(f"{float(x)!r} {float(y)!r}\n")


def read_dots(path: Path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            try:
                if len(parts) != 2:
                    raise ValueError
                rows.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: expected 'x y', got {line!r}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, 2)


# -- manifest ----------------------------------------------------------------


def _resolve(root: Path, rel: str) -> Path:
    path = root / rel
    if not path.is_file():
        raise FileNotFoundError(f"missing file referenced by manifest: {path}")
    return path


def load_dataset(manifest_path: str | os.PathLike) -> Dataset:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
        sigma = float(doc["sigma"])
        entries = doc["samples"]
        if not isinstance(entries, list):
            raise TypeError("'samples' must be a list")
    except (ValueError, KeyError, TypeError) as e:
        raise DataFormatError(f"{manifest_path}: malformed manifest ({e})") from None

    root = manifest_path.parent
    samples = []
    for entry in entries:
        try:
            sid = str(entry["id"])
            image_rel, dots_rel = entry["image"], entry["dots"]
            density_rel = entry.get("density")
        except (KeyError, TypeError, AttributeError):
            raise DataFormatError(f"{manifest_path}: malformed sample entry {entry!r}") from None
        image = read_pgm(_resolve(root, image_rel))
        dots = read_dots(_resolve(root, dots_rel))
        density = None
        if density_rel is not None:
            density = read_density(_resolve(root, density_rel))
            if density.shape != image.shape:
                raise DataFormatError(
                    f"sample {sid!r}: density {density.shape} does not match raster {image.shape}"
                )
        h, w = image.shape
        expected = entry.get("height"), entry.get("width")
        if expected != (None, None) and expected != (h, w):
            raise DataFormatError(
                f"sample {sid!r}: manifest declares {expected[0]}x{expected[1]}, raster is {h}x{w}"
            )
        check_dots(dots, h, w, sid)
        samples.append(Sample(sid, image, dots, density))
    return Dataset(tuple(samples), sigma)


def save_dataset(dataset: Dataset, directory: str | os.PathLike) -> Path:
    root = Path(directory)
    for sub in ("images", "dots", "density"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for s in dataset:
        h, w = s.shape
        entry = {
            "id": s.id,
            "image": f"images/{s.id}.pgm",
            "dots": f"dots/{s.id}.txt",
            "density": None,
            "height": h,
            "width": w,
        }
        write_pgm(root / entry["image"], s.image)
        write_dots(root / entry["dots"], s.dots)
        if s.density is not None:
            entry["density"] = f"density/{s.id}.dgrd"
            write_density(root / entry["density"], s.density)
        entries.append(entry)
    manifest = root / "manifest.json"
    manifest.write_text(
        json.dumps({"sigma": dataset.sigma, "samples": entries}, indent=1) + "\n",
        encoding="utf-8",
    )
    return manifest


