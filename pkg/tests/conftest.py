"""
Shared fixtures: toy datasets, a synthetic IDX "mini-MNIST" and small run configs.
"""
import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root / "src"))

from data import Dataset, write_idx
from network import init_params
from schemas import Architecture, RunConfig

MINI_SIDE = 6
MINI_CLASSES = 10


def make_blobs(n: int = 120, d: int = 5, k: int = 3, seed: int = 0, spread: float = 0.5) -> Dataset:
    """k Gaussian blobs in d dimensions, labels cycling 0..k-1."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 2.0, size=(k, d))
    labels = np.arange(n) % k
    features = centers[labels] + spread * rng.normal(size=(n, d))
    return Dataset(features=features, labels=labels, num_classes=k)


@pytest.fixture
def blobs() -> Dataset:
    return make_blobs()


@pytest.fixture
def small_params():
    return init_params(Architecture(layer_sizes=[5, 7, 4, 3]), seed=3)


def write_mini_mnist(directory: Path, n_train: int = 400, n_test: int = 120, seed: int = 0, noise: float = 40.0) -> Path:
    """Class prototypes plus pixel noise, written as gzip IDX files with the MNIST names."""
    rng = np.random.default_rng(seed)
    prototypes = rng.integers(0, 256, size=(MINI_CLASSES, MINI_SIDE, MINI_SIDE))

    def sample(n):
        labels = np.arange(n) % MINI_CLASSES
        rng.shuffle(labels)
        jitter = rng.normal(0.0, noise, size=(n, MINI_SIDE, MINI_SIDE))
        images = np.clip(prototypes[labels] + jitter, 0, 255).astype(np.uint8)
        return images, labels.astype(np.uint8)

    directory.mkdir(parents=True, exist_ok=True)
    images, labels = sample(n_train)
    write_idx(images, labels, directory / 'train-images-idx3-ubyte.gz', directory / 'train-labels-idx1-ubyte.gz')
    images, labels = sample(n_test)
    write_idx(images, labels, directory / 't10k-images-idx3-ubyte.gz', directory / 't10k-labels-idx1-ubyte.gz')
    return directory


@pytest.fixture
def mini_mnist(tmp_path) -> Path:
    return write_mini_mnist(tmp_path / 'data')


def mini_config(**sampler) -> RunConfig:
    """A run config sized for mini-MNIST; sampler fields override the sgld defaults."""
    sampler_cfg = {'kind': 'sgld', 'scope': 'last-layer', 'n_samples': 5, 'learning_rate': 1e-3, 'batch_size': 32, 'seed': 1}
    sampler_cfg.update(sampler)
    return RunConfig.model_validate({
        'data': {'num_classes': MINI_CLASSES},
        'architecture': {'layer_sizes': [MINI_SIDE * MINI_SIDE, 16, 8, MINI_CLASSES]},
        'train': {'optimizer': 'adam', 'learning_rate': 1e-2, 'batch_size': 32, 'epochs': 5, 'seed': 0},
        'sampler': sampler_cfg,
        'evaluate': {'calibration_bins': 10, 'histogram_bins': 10},
    })


def half_config(**sampler) -> RunConfig:
    cfg = mini_config(**sampler)
    return cfg.model_copy(update={
        'data': cfg.data.model_copy(update={'in_classes': [0, 1, 2, 3, 4]}),
        'architecture': Architecture(layer_sizes=[MINI_SIDE * MINI_SIDE, 16, 8, 5]),
    })


def mnist_dir():
    """Directory with the real MNIST IDX files, or None."""
    value = os.getenv('MNIST_DIR')
    return Path(value) if value else None


def pytest_collection_modifyitems(config, items):
    if mnist_dir() is not None:
        return
    skip = pytest.mark.skip(reason="set MNIST_DIR to run the MNIST acceptance tests")
    for item in items:
        if item.get_closest_marker('mnist') is not None:
            item.add_marker(skip)
