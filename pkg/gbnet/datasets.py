"""
Reading MNIST (IDX files) and CIFAR-10 (binary batches), generating Gaussian blobs,
and deterministic batching.

Pixels are scaled to `value / 255` in double precision. IDX headers are big-endian
regardless of the host.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from math import prod
from pathlib import Path
from typing import Iterator, NamedTuple, cast

import numpy as np

from gbnet.gb_logging import get_logger, log_execution
from gbnet.gbutils import (
    ConfigurationError,
    DimensionError,
    DomainError,
    FormatError,
    final_s,
    gb_error_abort,
)

logger = get_logger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR10_RECORD_SIZE = 3073
CIFAR10_IMAGE_SHAPE = (3, 32, 32)
CIFAR10_NUM_CLASSES = 10
MNIST_NUM_CLASSES = 10

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR10_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}

SOURCES = ("mnist", "cifar10", "blobs")
LAYOUTS = ("flat", "image")


@dataclass
class Dataset:
    """
    examples and their labels

    Attributes:
        inputs: `(n, features)` or `(n, C, H, W)`
        labels: `(n)` integer class indices in `[0, num_classes)`
        num_classes: the number of classes
        split: `train`, `test`, ...
    """

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            gb_error_abort(
                f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels",
                DimensionError,
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            gb_error_abort(f"labels must lie in [0, {self.num_classes})", DomainError)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def example_shape(self) -> tuple[int, ...]:
        return cast(tuple[int, ...], self.inputs.shape[1:])


# ----------------------------------------------------------------------------
#  MNIST
# ----------------------------------------------------------------------------


def _parse_idx(data: bytes, magic: int, n_dims: int, name: str) -> np.ndarray:
    """check the header of an IDX file and return its payload with the declared shape"""
    if len(data) < 4:
        raise FormatError(f"{name}: file too short for the magic number at offset 0", offset=0)
    found = int.from_bytes(data[:4], "big")
    if found != magic:
        raise FormatError(
            f"{name}: magic number {found:#010x} at offset 0, expected {magic:#010x}", offset=0
        )
    header_size = 4 + 4 * n_dims
    if len(data) < header_size:
        raise FormatError(
            f"{name}: header truncated at offset {len(data)}, needs {header_size} bytes",
            offset=len(data),
        )
    dims = tuple(int(d) for d in np.frombuffer(data, dtype=">u4", count=n_dims, offset=4))
    for i, d in enumerate(dims[1:], start=1):
        if d == 0:
            raise FormatError(f"{name}: zero dimension at offset {4 + 4 * i}", offset=4 + 4 * i)
    n_payload = prod(dims)
    available = len(data) - header_size
    if available < n_payload:
        raise FormatError(
            f"{name}: truncated payload at offset {len(data)}; header declares {dims}",
            offset=len(data),
        )
    if available > n_payload:
        raise FormatError(
            f"{name}: {available - n_payload} trailing bytes at offset"
            f" {header_size + n_payload}; header declares {dims}",
            offset=header_size + n_payload,
        )
    return np.frombuffer(data, dtype=np.uint8, count=n_payload, offset=header_size).reshape(dims)


def load_mnist_idx(
    images_file: str | Path, labels_file: str | Path, split: str = "train"
) -> Dataset:
    """
    read a pair of MNIST IDX files

    Args:
        images_file: the `idx3-ubyte` images file
        labels_file: the `idx1-ubyte` labels file
        split: the split tag

    Returns:
        a Dataset with `(n, rows * cols)` inputs scaled to `[0, 1]`
    """
    images = _parse_idx(Path(images_file).read_bytes(), IDX_IMAGES_MAGIC, 3, str(images_file))
    labels = _parse_idx(Path(labels_file).read_bytes(), IDX_LABELS_MAGIC, 1, str(labels_file))
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{images_file} holds {images.shape[0]} images but {labels_file} holds"
            f" {labels.shape[0]} labels (count at offset 4)",
            offset=4,
        )
    if labels.size and labels.max() >= MNIST_NUM_CLASSES:
        bad = int(np.argmax(labels >= MNIST_NUM_CLASSES))
        raise FormatError(
            f"{labels_file}: label {labels[bad]} at offset {8 + bad}", offset=8 + bad
        )
    n = images.shape[0]
    inputs = images.reshape(n, -1).astype(np.float64) / 255.0
    logger.info(f"read {final_s(n, 'MNIST image')} from {images_file}")
    return Dataset(inputs=inputs, labels=labels, num_classes=MNIST_NUM_CLASSES, split=split)


def write_mnist_idx(
    images: np.ndarray, labels: np.ndarray, images_file: str | Path, labels_file: str | Path
) -> None:
    """
    write images and labels in the IDX format

    Args:
        images: `(n, rows, cols)` unsigned bytes
        labels: `(n)` unsigned bytes
        images_file: where to write the images
        labels_file: where to write the labels
    """
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        gb_error_abort(
            f"need (n, rows, cols) images and (n) labels, not {images.shape} and {labels.shape}",
            DimensionError,
        )
    img_header = np.array((IDX_IMAGES_MAGIC, *images.shape), dtype=">u4").tobytes()
    lbl_header = np.array((IDX_LABELS_MAGIC, labels.shape[0]), dtype=">u4").tobytes()
    Path(images_file).write_bytes(img_header + images.tobytes())
    Path(labels_file).write_bytes(lbl_header + labels.tobytes())


# ----------------------------------------------------------------------------
#  CIFAR-10
# ----------------------------------------------------------------------------


def _read_cifar10_file(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    n_full, rest = divmod(len(data), CIFAR10_RECORD_SIZE)
    if rest:
        raise FormatError(
            f"{path}: record {n_full} is truncated ({rest} of {CIFAR10_RECORD_SIZE} bytes at"
            f" offset {n_full * CIFAR10_RECORD_SIZE})",
            offset=n_full * CIFAR10_RECORD_SIZE,
            record=n_full,
        )
    records = np.frombuffer(data, dtype=np.uint8).reshape(n_full, CIFAR10_RECORD_SIZE)
    labels = records[:, 0]
    if labels.size and labels.max() >= CIFAR10_NUM_CLASSES:
        bad = int(np.argmax(labels >= CIFAR10_NUM_CLASSES))
        raise FormatError(
            f"{path}: record {bad} has label {labels[bad]}",
            offset=bad * CIFAR10_RECORD_SIZE,
            record=bad,
        )
    pixels = records[:, 1:].reshape((n_full,) + CIFAR10_IMAGE_SHAPE)
    return pixels, labels


def load_cifar10(
    batch_files: list[str | Path], split: str = "train", max_workers: int = 1
) -> Dataset:
    """
    read CIFAR-10 binary batch files

    Args:
        batch_files: the files, concatenated in this order
        split: the split tag
        max_workers: files are read on this many threads; the order is still the file order

    Returns:
        a Dataset with `(n, 3, 32, 32)` inputs scaled to `[0, 1]`
    """
    if not batch_files:
        gb_error_abort("no CIFAR-10 batch files given", ConfigurationError)
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        parts = list(pool.map(_read_cifar10_file, batch_files))
    pixels = np.concatenate([p for p, _ in parts])
    labels = np.concatenate([lab for _, lab in parts])
    logger.info(
        f"read {final_s(len(labels), 'CIFAR-10 image')} from {final_s(len(batch_files), 'file')}"
    )
    return Dataset(
        inputs=pixels.astype(np.float64) / 255.0,
        labels=labels,
        num_classes=CIFAR10_NUM_CLASSES,
        split=split,
    )


def write_cifar10(path: str | Path, images: np.ndarray, labels: np.ndarray) -> None:
    """
    write a CIFAR-10 binary batch: per record, the label byte then 1024 red, 1024 green
    and 1024 blue bytes

    Args:
        path: the file
        images: `(n, 3, 32, 32)` unsigned bytes
        labels: `(n)` labels in `[0, 10)`
    """
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.shape[1:] != CIFAR10_IMAGE_SHAPE or images.shape[0] != labels.shape[0]:
        gb_error_abort(
            f"need (n, 3, 32, 32) images and (n) labels, not {images.shape} and {labels.shape}",
            DimensionError,
        )
    records = np.column_stack((labels, images.reshape(images.shape[0], -1)))
    Path(path).write_bytes(records.astype(np.uint8).tobytes())


# ----------------------------------------------------------------------------
#  synthetic data
# ----------------------------------------------------------------------------


def blob_centers(num_classes: int, dim: int, seed: int, scale: float = 4.0) -> np.ndarray:
    """the `(num_classes, dim)` centers that `synth_blobs` draws around"""
    rng = np.random.default_rng([seed, 0])
    return scale * rng.standard_normal((num_classes, dim))


def synth_blobs(
    num_classes: int,
    per_class: int,
    dim: int,
    spread: float,
    seed: int,
    center_scale: float = 4.0,
) -> Dataset:
    """
    Gaussian clusters around distinct centers

    Args:
        num_classes: the number of clusters
        per_class: points per cluster
        dim: the dimension
        spread: standard deviation around each center
        seed: the same seed gives a bit-identical dataset
        center_scale: standard deviation of the centers

    Returns:
        a Dataset of `num_classes * per_class` shuffled points
    """
    if min(num_classes, per_class, dim) < 1:
        gb_error_abort(
            f"counts must be positive: {num_classes=}, {per_class=}, {dim=}", DomainError
        )
    if spread < 0.0:
        gb_error_abort(f"spread must be non-negative, not {spread}", DomainError)
    centers = blob_centers(num_classes, dim, seed, center_scale)
    rng = np.random.default_rng([seed, 1])
    labels = np.repeat(np.arange(num_classes), per_class)
    noise = rng.standard_normal((labels.size, dim))
    inputs = centers[labels] + spread * noise
    order = rng.permutation(labels.size)
    return Dataset(inputs=inputs[order], labels=labels[order], num_classes=num_classes)


# ----------------------------------------------------------------------------
#  batching and transformations
# ----------------------------------------------------------------------------


class Batch(NamedTuple):
    inputs: np.ndarray
    labels: np.ndarray
    indices: np.ndarray


def epoch_order(n: int, seed: int, epoch: int, shuffle: bool = True) -> np.ndarray:
    """the order in which the examples are visited; depends only on `(seed, epoch)`"""
    if not shuffle:
        return np.arange(n)
    return np.random.default_rng([seed, epoch]).permutation(n)


def batch_iter(
    ds: Dataset, batch_size: int, seed: int = 0, shuffle: bool = True, epoch: int = 0
) -> Iterator[Batch]:
    """
    split a dataset into mini-batches

    Args:
        ds: the dataset
        batch_size: at least 1; the last batch may be smaller
        seed: seeds the permutation
        shuffle: if `False`, the original order is kept
        epoch: the permutation is fixed per `(seed, epoch)`

    Returns:
        an iterator over Batches; every index appears exactly once
    """
    if batch_size < 1:
        gb_error_abort(f"batch_size must be at least 1, not {batch_size}", DomainError)
    order = epoch_order(len(ds), seed, epoch, shuffle)
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        yield Batch(inputs=ds.inputs[idx], labels=ds.labels[idx], indices=idx)


def subset(ds: Dataset, n: int | None, seed: int) -> Dataset:
    """the first `n` examples after a seeded shuffle; all of `ds` if `n` is `None` or too large"""
    if n is None or n >= len(ds):
        return ds
    if n < 1:
        gb_error_abort(f"the subset size must be positive, not {n}", DomainError)
    idx = np.random.default_rng([seed, 2]).permutation(len(ds))[:n]
    return replace(ds, inputs=ds.inputs[idx], labels=ds.labels[idx])


def train_test_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """seeded split into a training and a test set"""
    if not 0.0 < test_fraction < 1.0:
        gb_error_abort(f"test_fraction must be in (0, 1), not {test_fraction}", DomainError)
    order = np.random.default_rng([seed, 3]).permutation(len(ds))
    n_test = max(1, int(round(test_fraction * len(ds))))
    test_idx, train_idx = order[:n_test], order[n_test:]
    train = replace(ds, inputs=ds.inputs[train_idx], labels=ds.labels[train_idx], split="train")
    test = replace(ds, inputs=ds.inputs[test_idx], labels=ds.labels[test_idx], split="test")
    return train, test


def standardize(train: Dataset, test: Dataset) -> tuple[Dataset, Dataset]:
    """per-feature centering and scaling with the training statistics; constant features are only centered"""
    mean = train.inputs.mean(axis=0)
    std = train.inputs.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return (
        replace(train, inputs=(train.inputs - mean) / std),
        replace(test, inputs=(test.inputs - mean) / std),
    )


def flatten(ds: Dataset) -> Dataset:
    return replace(ds, inputs=ds.inputs.reshape(len(ds), -1))


def as_images(ds: Dataset, shape: tuple[int, int, int]) -> Dataset:
    """reshape flat inputs to `(n,) + shape`, e.g. `(1, 28, 28)` for MNIST"""
    if int(np.prod(shape)) != int(np.prod(ds.example_shape)):
        gb_error_abort(f"cannot view examples of shape {ds.example_shape} as {shape}", DimensionError)
    return replace(ds, inputs=ds.inputs.reshape((len(ds),) + tuple(shape)))


@dataclass
class DatasetConfig:
    """
    where the data comes from and how it is prepared

    Attributes:
        source: `mnist`, `cifar10` or `blobs`
        path: the directory holding the standard file names (`mnist`, `cifar10`)
        subset: number of training examples kept (all if `None`)
        test_subset: number of test examples kept (all if `None`)
        seed: seeds the subsets and the blobs
        standardize: per-feature standardization with the training statistics
        layout: `flat` or `image` (`(1, 28, 28)` for MNIST)
        blobs: `num_classes`, `per_class`, `dim`, `spread` and `test_fraction` for `blobs`
        workers: threads used to read CIFAR-10 files
    """

    source: str = "blobs"
    path: str | None = None
    subset: int | None = None
    test_subset: int | None = None
    seed: int = 0
    standardize: bool = False
    layout: str = "flat"
    blobs: dict[str, float] = field(
        default_factory=lambda: {
            "num_classes": 4,
            "per_class": 100,
            "dim": 8,
            "spread": 0.5,
            "test_fraction": 0.25,
        }
    )
    workers: int = 1

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            gb_error_abort(f"unknown source {self.source!r}; use one of {SOURCES}", ConfigurationError)
        if self.layout not in LAYOUTS:
            gb_error_abort(f"unknown layout {self.layout!r}; use one of {LAYOUTS}", ConfigurationError)
        if self.source != "blobs" and self.path is None:
            gb_error_abort(f"source {self.source} needs a path", ConfigurationError)


@log_execution
def load_source(cfg: DatasetConfig) -> tuple[Dataset, Dataset]:
    """
    load, subset and prepare the training and test sets

    Args:
        cfg: the DatasetConfig

    Returns:
        the training and the test Datasets
    """
    if cfg.source == "mnist":
        root = Path(cast(str, cfg.path))
        train = load_mnist_idx(*(root / f for f in MNIST_FILES["train"]), split="train")
        test = load_mnist_idx(*(root / f for f in MNIST_FILES["test"]), split="test")
    elif cfg.source == "cifar10":
        root = Path(cast(str, cfg.path))
        train = load_cifar10(
            [root / f for f in CIFAR10_FILES["train"]], split="train", max_workers=cfg.workers
        )
        test = load_cifar10(
            [root / f for f in CIFAR10_FILES["test"]], split="test", max_workers=cfg.workers
        )
    else:
        b = cfg.blobs
        full = synth_blobs(
            num_classes=int(b.get("num_classes", 4)),
            per_class=int(b.get("per_class", 100)),
            dim=int(b.get("dim", 8)),
            spread=float(b.get("spread", 0.5)),
            seed=cfg.seed,
            center_scale=float(b.get("center_scale", 4.0)),
        )
        train, test = train_test_split(full, float(b.get("test_fraction", 0.25)), cfg.seed)
    train = subset(train, cfg.subset, cfg.seed)
    test = subset(test, cfg.test_subset, cfg.seed + 1)
    if cfg.standardize:
        train, test = standardize(flatten(train), flatten(test))
    if cfg.layout == "flat":
        train, test = flatten(train), flatten(test)
    elif cfg.source == "mnist":
        side = int(round(np.sqrt(train.inputs.shape[1])))
        train, test = as_images(train, (1, side, side)), as_images(test, (1, side, side))
    elif cfg.source == "cifar10" and train.inputs.ndim == 2:
        train, test = as_images(train, CIFAR10_IMAGE_SHAPE), as_images(test, CIFAR10_IMAGE_SHAPE)
    elif cfg.source == "blobs":
        gb_error_abort("blobs only come in the flat layout", ConfigurationError)
    logger.info(
        f"{cfg.source}: {final_s(len(train), 'training example')},"
        f" {final_s(len(test), 'test example')}, example shape {train.example_shape}"
    )
    return train, test
