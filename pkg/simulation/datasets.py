"""
Datasets and non-i.i.d. device partitions.

MNIST is read from IDX files (plain or gzip) when a dataset directory is
configured and present; otherwise a seeded synthetic 10-class Gaussian-blob
set stands in so the simulator runs anywhere.
"""
import gzip
import logging
import os
from dataclasses import dataclass

import numpy as np

from simulation.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

IDX_UBYTE = 0x08
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

SYNTHETIC_FEATURES = 64
SYNTHETIC_CLASSES = 10
SYNTHETIC_CENTER_SCALE = 0.35


@dataclass(eq=False)
class Dataset:
    """Train/test split with integer labels."""
    name: str
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    n_classes: int

    @property
    def n_features(self):
        return int(self.X_train.shape[1])


@dataclass(eq=False)
class DevicePartition:
    """
    Disjoint per-device index lists into the training set.

    Attributes:
        indices: One integer array per device
        classes: Labels held by each device
        classes_per_device: Number of distinct labels per device
    """
    indices: list
    classes: list
    classes_per_device: int

    @property
    def sizes(self):
        return [int(len(idx)) for idx in self.indices]

    @property
    def n_devices(self):
        return len(self.indices)

    def shard(self, dataset, device):
        idx = self.indices[device]
        return dataset.X_train[idx], dataset.y_train[idx]


def _open_idx(path):
    if os.path.exists(path):
        return open(path, "rb")
    if os.path.exists(path + ".gz"):
        return gzip.open(path + ".gz", "rb")
    raise FileNotFoundError(path)


def read_idx(path):
    """
    Read an IDX file (big-endian header, unsigned byte payload).

    Args:
        path: File path, with or without a trailing .gz on disk

    Returns:
        numpy array with the dimensions stored in the header
    """
    with _open_idx(path) as handle:
        raw = handle.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise InvalidArgumentError(f"{path}: not an IDX file")
    dtype_code, n_dims = raw[2], raw[3]
    if dtype_code != IDX_UBYTE:
        raise InvalidArgumentError(f"{path}: unsupported IDX element type 0x{dtype_code:02x}")
    dims = np.frombuffer(raw, dtype=">u4", count=n_dims, offset=4).astype(int)
    payload = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * n_dims)
    if payload.size != int(np.prod(dims)):
        raise InvalidArgumentError(f"{path}: payload size {payload.size} does not match header {tuple(dims)}")
    return payload.reshape(tuple(dims))


def mnist_available(directory):
    if not directory:
        return False
    return all(
        os.path.exists(os.path.join(directory, name)) or os.path.exists(os.path.join(directory, name + ".gz"))
        for name in MNIST_FILES.values()
    )


def load_mnist(directory, train_samples, test_samples, rng):
    """Random MNIST subset with pixels scaled to [0, 1]."""
    arrays = {key: read_idx(os.path.join(directory, name)) for key, name in MNIST_FILES.items()}
    train_idx = rng.permutation(arrays["train_labels"].shape[0])[:train_samples]
    test_idx = rng.permutation(arrays["test_labels"].shape[0])[:test_samples]

    def prepare(images, idx):
        return images[idx].reshape(len(idx), -1).astype(float) / 255.0

    logger.info(f"Loaded MNIST subset from {directory}: {len(train_idx)} train / {len(test_idx)} test")
    return Dataset(
        name="mnist",
        X_train=prepare(arrays["train_images"], train_idx),
        y_train=arrays["train_labels"][train_idx].astype(np.int64),
        X_test=prepare(arrays["test_images"], test_idx),
        y_test=arrays["test_labels"][test_idx].astype(np.int64),
        n_classes=10,
    )


def make_synthetic(train_samples, test_samples, rng, n_features=SYNTHETIC_FEATURES,
                   n_classes=SYNTHETIC_CLASSES, center_scale=SYNTHETIC_CENTER_SCALE):
    """
    Gaussian blobs: one random center per class, unit-variance isotropic noise.

    Args:
        train_samples: Training set size
        test_samples: Test set size
        rng: Data stream
        n_features: Input dimension
        n_classes: Number of classes
        center_scale: Standard deviation of the class centers

    Returns:
        Dataset
    """
    centers = rng.standard_normal((n_classes, n_features)) * center_scale

    def draw(n):
        labels = rng.integers(0, n_classes, size=n)
        return centers[labels] + rng.standard_normal((n, n_features)), labels.astype(np.int64)

    X_train, y_train = draw(train_samples)
    X_test, y_test = draw(test_samples)
    return Dataset("synthetic", X_train, y_train, X_test, y_test, n_classes)


def load_dataset(dataset_path, train_samples, test_samples, rng):
    """MNIST when the IDX files are present, the synthetic blobs otherwise."""
    if mnist_available(dataset_path):
        return load_mnist(dataset_path, train_samples, test_samples, rng)
    if dataset_path:
        logger.warning(f"No MNIST IDX files under {dataset_path}; using the synthetic dataset")
    return make_synthetic(train_samples, test_samples, rng)


def partition_by_class(labels, n_devices, rng, classes_per_device=2, alpha=1.0):
    """
    Non-i.i.d. split: each device holds exactly `classes_per_device` labels and
    shard sizes follow a Dirichlet(alpha) split of every class among its holders.

    Args:
        labels: Training labels
        n_devices: K
        rng: Partition stream
        classes_per_device: Distinct labels per device
        alpha: Dirichlet concentration for the size split

    Returns:
        DevicePartition
    """
    labels = np.asarray(labels)
    present = np.unique(labels)
    n_classes = present.shape[0]
    if n_devices < 1:
        raise InvalidArgumentError(f"need at least one device, got {n_devices}")
    if not 1 <= classes_per_device <= n_classes:
        raise InvalidArgumentError(f"classes_per_device must be in [1, {n_classes}], got {classes_per_device}")

    order = present[rng.permutation(n_classes)]
    device_classes = [
        tuple(int(order[(k + j) % n_classes]) for j in range(classes_per_device))
        for k in range(n_devices)
    ]

    buckets = [[] for _ in range(n_devices)]
    for label in present:
        holders = [k for k, held in enumerate(device_classes) if int(label) in held]
        if not holders:
            continue
        idx = rng.permutation(np.flatnonzero(labels == label))
        if idx.shape[0] < len(holders):
            raise InvalidArgumentError(
                f"class {label} has {idx.shape[0]} samples for {len(holders)} devices"
            )
        shares = rng.dirichlet([alpha] * len(holders))
        counts = 1 + rng.multinomial(idx.shape[0] - len(holders), shares)
        for holder, chunk in zip(holders, np.split(idx, np.cumsum(counts)[:-1])):
            buckets[holder].append(chunk)

    indices = [np.sort(np.concatenate(chunks)) for chunks in buckets]
    partition = DevicePartition(indices, device_classes, classes_per_device)
    logger.debug(f"Partition sizes: {partition.sizes}")
    return partition
