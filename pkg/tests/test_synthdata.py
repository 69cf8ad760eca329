import math

import numpy as np
import pytest

from clipcl.dataio import validate_sample
from clipcl.synthdata import SceneConfig, generate_dataset, generate_scene


def test_empty_scene():
    s = generate_scene(SceneConfig(count_range=(0, 0)), np.random.default_rng(0))
    assert s.count == 0
    assert not s.density.any()
    assert s.image.mean() < 0.05


def test_density_matches_count():
    ds = generate_dataset(50, SceneConfig(count_range=(5, 40)), seed=3)
    for s in ds:
        assert abs(s.density.sum() - s.count) <= 1e-6 * max(1, s.count)


def test_same_seed_same_scene():
    a = generate_scene(SceneConfig(), np.random.default_rng(5))
    b = generate_scene(SceneConfig(), np.random.default_rng(5))
    assert np.array_equal(a.image, b.image) and np.array_equal(a.dots, b.dots)


def test_dataset_of_200():
    ds = generate_dataset(200, seed=7)
    assert len(ds) == 200
    assert ds[0].id == "syn-000000" and ds[199].id == "syn-000199"
    for s in ds:
        validate_sample(s)
        lo, hi = SceneConfig().count_range
        assert lo <= s.count <= hi


def test_seeds_differ():
    a, b = generate_dataset(5, seed=1), generate_dataset(5, seed=2)
    assert any(x.count != y.count or not np.array_equal(x.dots, y.dots) for x, y in zip(a, b))


def test_generation_is_pure():
    a, b = generate_dataset(8, seed=4), generate_dataset(8, seed=4)
    assert all(np.array_equal(x.image, y.image) and np.array_equal(x.density, y.density) for x, y in zip(a, b))


def test_mean_count_near_midpoint():
    lo, hi = 0, 30
    ds = generate_dataset(1000, SceneConfig(count_range=(lo, hi)), seed=21)
    counts = np.array([s.count for s in ds])
    # discrete uniform on lo..hi
    sd = math.sqrt(((hi - lo + 1) ** 2 - 1) / 12)
    assert abs(counts.mean() - (lo + hi) / 2) <= 3 * sd / math.sqrt(len(counts))


def test_min_separation_mostly_respected():
    ds = generate_dataset(20, SceneConfig(count_range=(20, 20)), seed=0)
    for s in ds:
        d = np.hypot(*(s.dots[:, None, :] - s.dots[None, :, :]).transpose(2, 0, 1))
        d[np.diag_indices(len(d))] = np.inf
        assert d.min() >= 2.0


def test_images_are_8bit_exact():
    s = generate_dataset(1, seed=0)[0]
    assert np.array_equal(np.rint(s.image * 255) / 255, s.image)


@pytest.mark.parametrize("kwargs", [{"count_range": (5, 2)}, {"count_range": (-1, 3)}, {"height": 8}])
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        SceneConfig(**kwargs)


def test_n_must_be_positive():
    with pytest.raises(ValueError):
        generate_dataset(0)
