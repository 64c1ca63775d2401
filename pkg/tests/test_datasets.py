import numpy as np
import pytest

from gbnet.datasets import (
    CIFAR10_RECORD_SIZE,
    MNIST_FILES,
    Dataset,
    DatasetConfig,
    as_images,
    batch_iter,
    blob_centers,
    flatten,
    load_cifar10,
    load_mnist_idx,
    load_source,
    standardize,
    subset,
    synth_blobs,
    train_test_split,
    write_cifar10,
    write_mnist_idx,
)
from gbnet.gbutils import ConfigurationError, DimensionError, DomainError, FormatError


def mnist_fixture(tmp_path, n=6, rows=4, cols=5, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(n, rows, cols), dtype=np.uint8)
    labels = rng.integers(0, 10, size=n, dtype=np.uint8)
    img_file, lbl_file = tmp_path / "images", tmp_path / "labels"
    write_mnist_idx(images, labels, img_file, lbl_file)
    return images, labels, img_file, lbl_file


def cifar_fixture(path, n=3, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(n, 3, 32, 32), dtype=np.uint8)
    labels = rng.integers(0, 10, size=n, dtype=np.uint8)
    write_cifar10(path, images, labels)
    return images, labels


def test_mnist_round_trip(tmp_path):
    images, labels, img_file, lbl_file = mnist_fixture(tmp_path)
    ds = load_mnist_idx(img_file, lbl_file, split="test")
    assert ds.inputs.shape == (6, 20)
    assert np.array_equal(ds.inputs, images.reshape(6, -1) / 255.0)
    assert np.array_equal(ds.labels, labels)
    assert ds.split == "test"
    assert ds.num_classes == 10
    # the header is big-endian
    raw = img_file.read_bytes()
    assert raw[:4] == b"\x00\x00\x08\x03"
    assert raw[4:8] == b"\x00\x00\x00\x06"


def test_mnist_header_corruption(tmp_path):
    _, _, img_file, lbl_file = mnist_fixture(tmp_path)
    for path, header_size in ((img_file, 16), (lbl_file, 8)):
        good = path.read_bytes()
        for i in range(header_size):
            bad = bytearray(good)
            bad[i] ^= 0xFF
            path.write_bytes(bytes(bad))
            with pytest.raises(FormatError):
                load_mnist_idx(img_file, lbl_file)
        path.write_bytes(good)
    load_mnist_idx(img_file, lbl_file)


def test_mnist_truncated_and_mismatched(tmp_path):
    _, _, img_file, lbl_file = mnist_fixture(tmp_path)
    good = img_file.read_bytes()
    img_file.write_bytes(good[:-1])
    with pytest.raises(FormatError) as excinfo:
        load_mnist_idx(img_file, lbl_file)
    assert excinfo.value.offset == len(good) - 1
    img_file.write_bytes(good + b"\x00")
    with pytest.raises(FormatError):
        load_mnist_idx(img_file, lbl_file)
    img_file.write_bytes(good)
    write_mnist_idx(np.zeros((5, 4, 5)), np.zeros(5), tmp_path / "i5", tmp_path / "l5")
    with pytest.raises(FormatError):
        load_mnist_idx(img_file, tmp_path / "l5")
    with pytest.raises(OSError):
        load_mnist_idx(tmp_path / "missing", lbl_file)


def test_cifar10_round_trip(tmp_path):
    images, labels = cifar_fixture(tmp_path / "b1.bin")
    ds = load_cifar10([tmp_path / "b1.bin"])
    assert ds.inputs.shape == (3, 3, 32, 32)
    assert np.array_equal(ds.inputs, images / 255.0)
    assert np.array_equal(ds.labels, labels)
    # red plane right after the label byte
    raw = (tmp_path / "b1.bin").read_bytes()
    assert len(raw) == 3 * CIFAR10_RECORD_SIZE
    assert raw[1:1025] == images[0, 0].tobytes()


def test_cifar10_file_order_with_threads(tmp_path):
    parts = [cifar_fixture(tmp_path / f"b{i}.bin", n=2 + i, seed=i) for i in range(4)]
    files = [tmp_path / f"b{i}.bin" for i in range(4)]
    ds = load_cifar10(files, max_workers=4)
    assert np.array_equal(ds.labels, np.concatenate([lab for _, lab in parts]))
    assert np.array_equal(ds.inputs[2], parts[1][0][0] / 255.0)


def test_cifar10_corruption(tmp_path):
    path = tmp_path / "b.bin"
    cifar_fixture(path)
    good = path.read_bytes()
    path.write_bytes(good[:-10])
    with pytest.raises(FormatError) as excinfo:
        load_cifar10([path])
    assert excinfo.value.record == 2
    bad = bytearray(good)
    bad[CIFAR10_RECORD_SIZE] ^= 0xFF
    path.write_bytes(bytes(bad))
    with pytest.raises(FormatError) as excinfo:
        load_cifar10([path])
    assert excinfo.value.record == 1
    assert excinfo.value.offset == CIFAR10_RECORD_SIZE
    with pytest.raises(ConfigurationError):
        load_cifar10([])


def test_dataset_validation():
    with pytest.raises(DimensionError):
        Dataset(np.zeros((3, 2)), np.zeros(2), 2)
    with pytest.raises(DomainError):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)


def test_synth_blobs():
    a = synth_blobs(3, 20, 4, 0.5, seed=1)
    b = synth_blobs(3, 20, 4, 0.5, seed=1)
    assert len(a) == 60
    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(np.bincount(a.labels), [20, 20, 20])
    tight = synth_blobs(3, 5, 4, 0.0, seed=1)
    assert np.array_equal(tight.inputs, blob_centers(3, 4, seed=1)[tight.labels])
    with pytest.raises(DomainError):
        synth_blobs(3, 5, 4, -1.0, seed=1)


def test_batch_iter():
    ds = synth_blobs(2, 5, 3, 1.0, seed=0)
    batches = list(batch_iter(ds, 4, seed=3, epoch=1))
    assert [len(b.labels) for b in batches] == [4, 4, 2]
    idx = np.concatenate([b.indices for b in batches])
    assert np.array_equal(np.sort(idx), np.arange(10))
    again = np.concatenate([b.indices for b in batch_iter(ds, 4, seed=3, epoch=1)])
    assert np.array_equal(idx, again)
    other = np.concatenate([b.indices for b in batch_iter(ds, 4, seed=3, epoch=2)])
    assert not np.array_equal(idx, other)
    plain = np.concatenate([b.indices for b in batch_iter(ds, 3, shuffle=False)])
    assert np.array_equal(plain, np.arange(10))
    assert np.array_equal(batches[0].inputs, ds.inputs[batches[0].indices])
    with pytest.raises(DomainError):
        list(batch_iter(ds, 0))


def test_subset_split_standardize():
    ds = synth_blobs(4, 25, 3, 1.0, seed=2)
    small = subset(ds, 10, seed=0)
    assert len(small) == 10
    assert subset(ds, None, seed=0) is ds
    assert subset(ds, 1000, seed=0) is ds
    train, test = train_test_split(ds, 0.2, seed=0)
    assert (len(train), len(test)) == (80, 20)
    assert (train.split, test.split) == ("train", "test")
    all_rows = np.concatenate([train.inputs, test.inputs])
    assert np.allclose(np.sort(all_rows, axis=0), np.sort(ds.inputs, axis=0))
    s_train, s_test = standardize(train, test)
    assert np.allclose(s_train.inputs.mean(axis=0), 0.0)
    assert np.allclose(s_train.inputs.std(axis=0), 1.0)
    mean, std = train.inputs.mean(axis=0), train.inputs.std(axis=0)
    assert np.allclose(s_test.inputs, (test.inputs - mean) / std)


def test_layouts():
    ds = Dataset(np.arange(2 * 16.0).reshape(2, 16), np.array([0, 1]), 2)
    img = as_images(ds, (1, 4, 4))
    assert img.example_shape == (1, 4, 4)
    assert np.array_equal(flatten(img).inputs, ds.inputs)
    with pytest.raises(DimensionError):
        as_images(ds, (1, 3, 3))


def test_load_source_mnist(tmp_path):
    rng = np.random.default_rng(0)
    for split, n in (("train", 8), ("test", 4)):
        images = rng.integers(0, 256, size=(n, 28, 28), dtype=np.uint8)
        labels = rng.integers(0, 10, size=n, dtype=np.uint8)
        write_mnist_idx(images, labels, *(tmp_path / f for f in MNIST_FILES[split]))
    cfg = DatasetConfig(source="mnist", path=str(tmp_path), subset=5, layout="image")
    train, test = load_source(cfg)
    assert train.inputs.shape == (5, 1, 28, 28)
    assert test.inputs.shape == (4, 1, 28, 28)
    assert (train.split, test.split) == ("train", "test")


def test_load_source_cifar10(tmp_path):
    for i in range(1, 6):
        cifar_fixture(tmp_path / f"data_batch_{i}.bin", n=2, seed=i)
    cifar_fixture(tmp_path / "test_batch.bin", n=3, seed=9)
    train, test = load_source(
        DatasetConfig(source="cifar10", path=str(tmp_path), layout="image", workers=2)
    )
    assert train.inputs.shape == (10, 3, 32, 32)
    assert len(test) == 3
    flat_train, _ = load_source(DatasetConfig(source="cifar10", path=str(tmp_path)))
    assert flat_train.inputs.shape == (10, 3072)


def test_load_source_blobs():
    train, test = load_source(DatasetConfig())
    assert len(train) + len(test) == 400
    assert train.example_shape == (8,)
    with pytest.raises(ConfigurationError):
        DatasetConfig(source="svhn")
    with pytest.raises(ConfigurationError):
        DatasetConfig(source="mnist")
    with pytest.raises(ConfigurationError):
        load_source(DatasetConfig(layout="image"))
