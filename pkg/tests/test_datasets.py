import struct

import numpy as np
import pytest
from PIL import Image

from medrdf.classifier import SmallNet, TrainConfig, fit
from medrdf.errors import InvalidInputError, ParseError
from medrdf.harness.datasets import (Dataset, load_csv, load_idx, load_image_dir, read_idx,
                                     synthetic_dataset, write_idx)


def idx_bytes(type_code, dims, payload):
    return struct.pack(">HBB", 0, type_code, len(dims)) + struct.pack(f">{len(dims)}I", *dims) + payload


def test_idx_header_arithmetic(tmp_path):
    pixels = np.arange(10 * 28 * 28, dtype=np.uint32) % 256
    images = tmp_path / "img.idx"
    images.write_bytes(idx_bytes(0x08, (10, 28, 28), pixels.astype(np.uint8).tobytes()))
    assert images.read_bytes()[:4] == bytes.fromhex("00000803")
    labels = tmp_path / "lab.idx"
    labels.write_bytes(idx_bytes(0x08, (10,), bytes(range(10))))
    data = load_idx(images, labels, num_classes=10)
    assert data.images.shape == (10, 1, 28, 28)
    assert data.images.max() == 1.0 and data.images.min() == 0.0
    assert data.labels.tolist() == list(range(10))


@pytest.mark.parametrize("dtype", [np.uint8, np.int16, np.int32, np.float32, np.float64])
def test_idx_round_trip(tmp_path, dtype):
    arr = (np.random.default_rng(0).random((3, 4, 5)) * 100).astype(dtype)
    write_idx(tmp_path / "a.idx", arr)
    back = read_idx(tmp_path / "a.idx")
    assert back.shape == arr.shape and np.array_equal(back, arr)


def test_idx_parse_errors_name_offsets(tmp_path):
    cases = {
        "short": (b"\0\0", 0),
        "magic": (b"\x01\x00\x08\x01" + b"\0" * 8, 0),
        "dims": (b"\0\0\x08\x03\0\0\0\x01", 4),
        "payload": (idx_bytes(0x08, (2, 2), b"\0\0\0"), 12),
    }
    for name, (blob, offset) in cases.items():
        p = tmp_path / name
        p.write_bytes(blob)
        with pytest.raises(ParseError) as info:
            read_idx(p)
        assert info.value.offset == offset
        assert f"byte offset {offset}" in str(info.value)


def test_idx_label_out_of_range(tmp_path):
    write_idx(tmp_path / "i.idx", np.zeros((2, 3, 3), np.uint8))
    write_idx(tmp_path / "l.idx", np.array([0, 5], np.uint8))
    with pytest.raises(InvalidInputError):
        load_idx(tmp_path / "i.idx", tmp_path / "l.idx", num_classes=3)


def test_csv_loader(tmp_path):
    p = tmp_path / "d.csv"
    rows = ["label," + ",".join(f"p{i}" for i in range(4)), "1,0,255,51,102", "0,255,255,0,0"]
    p.write_text("\n".join(rows) + "\n")
    data = load_csv(p)
    assert data.images.shape == (2, 1, 2, 2)
    assert np.allclose(data.images[0].ravel(), [0, 1, 0.2, 0.4])
    assert data.labels.tolist() == [1, 0]
    bad = tmp_path / "bad.csv"
    bad.write_text("label,a\n1,x\n")
    with pytest.raises(ParseError):
        load_csv(bad)
    nolabel = tmp_path / "nolabel.csv"
    nolabel.write_text("a,b\n1,2\n")
    with pytest.raises(ParseError):
        load_csv(nolabel)


def test_image_directory(tmp_path):
    rng = np.random.default_rng(0)
    for cls in ("benign", "malignant"):
        (tmp_path / cls).mkdir()
        for i in range(2):
            arr = rng.integers(0, 256, (6, 6), dtype=np.uint8)
            suffix = ".png" if i == 0 else ".pgm"
            Image.fromarray(arr).save(tmp_path / cls / f"{i}{suffix}")
    data = load_image_dir(tmp_path)
    assert data.images.shape == (4, 1, 6, 6)
    assert data.labels.tolist() == [0, 0, 1, 1]
    first = np.asarray(Image.open(tmp_path / "benign" / "0.png"), dtype=np.float64) / 255
    assert np.array_equal(data.images[0, 0], first)


def test_empty_directory_is_an_error(tmp_path):
    with pytest.raises(InvalidInputError):
        load_image_dir(tmp_path)


def test_dataset_validates_labels():
    with pytest.raises(InvalidInputError):
        Dataset(np.zeros((2, 1, 2, 2)), np.array([0, 3]), "test", "x", 3)
    with pytest.raises(InvalidInputError):
        Dataset(np.zeros((2, 1, 2, 2)), np.array([0]), "test", "x", 3)


def test_synthetic_splits_are_seeded_and_balanced():
    a = synthetic_dataset("test", seed=7)
    b = synthetic_dataset("test", seed=7)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    assert a.images.shape == (100, 1, 28, 28)
    assert 0 <= a.images.min() and a.images.max() <= 1
    assert np.bincount(a.labels).min() >= 33
    train = synthetic_dataset("train", seed=7)
    assert len(train) == 600 and not np.array_equal(train.images[:100], a.images)
    rgb = synthetic_dataset("val", channels=3, num_classes=7)
    assert rgb.images.shape == (100, 3, 28, 28) and rgb.labels.max() == 6


def test_synthetic_task_is_learnable():
    train, test = synthetic_dataset("train"), synthetic_dataset("test")
    net = SmallNet((1, 28, 28), 3, (), (64,), seed=0, init_gain=3.0)
    fit(net, train.images, train.labels, TrainConfig(learning_rate=0.003))
    assert np.mean(net.predict_labels(test.images) == test.labels) >= 0.9
