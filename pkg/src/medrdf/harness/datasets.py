"""Dataset ingestion: synthetic generator, IDX, CSV and image directories."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import InvalidInputError, ParseError

SPLITS = ("train", "val", "test")


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    split: str
    name: str
    num_classes: int

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise InvalidInputError("images and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidInputError(
                f"labels must lie in [0, {self.num_classes}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]")

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def head(self, count: int) -> "Dataset":
        return Dataset(self.images[:count], self.labels[:count], self.split, self.name,
                       self.num_classes)


# -- synthetic lesion-like data ------------------------------------------------

def _blob_centres(num_classes: int, size: int) -> np.ndarray:
    # class centres evenly spaced on a ring around the image centre
    angles = 2 * np.pi * np.arange(num_classes) / num_classes + np.pi / 4
    r = size * 0.26
    c = (size - 1) / 2
    return np.stack([c + r * np.sin(angles), c + r * np.cos(angles)], axis=1)


def synthetic_images(num_classes: int, count: int, rng: np.random.Generator, size: int = 28,
                     channels: int = 1, contrast=(0.3, 0.36), grain: float = 0.0,
                     shading: float = 0.05):
    """Draw ``count`` images with balanced labels.

    The class is encoded by where a faint textured blob sits; the background
    is a smooth random shading, with optional per-pixel ``grain``.
    """
    labels = np.arange(count) % num_classes
    rng.shuffle(labels)
    centres = _blob_centres(num_classes, size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images = np.empty((count, channels, size, size))
    for i, k in enumerate(labels):
        cy, cx = centres[k] + rng.uniform(-2.5, 2.5, size=2)
        radius = rng.uniform(3.0, 4.5)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius ** 2))
        # texture: oriented ripple whose angle is class-dependent
        theta = np.pi * k / num_classes + rng.uniform(-0.3, 0.3)
        ripple = 0.5 + 0.5 * np.cos(0.9 * (np.cos(theta) * xx + np.sin(theta) * yy)
                                    + rng.uniform(0, 2 * np.pi))
        # smooth illumination: a few random low-frequency cosine waves
        freqs = rng.uniform(-0.35, 0.35, size=(3, 2))
        phases = rng.uniform(0, 2 * np.pi, size=3)
        waves = np.cos(freqs[:, 0, None, None] * yy + freqs[:, 1, None, None] * xx
                       + phases[:, None, None]).sum(axis=0) / 3
        shade = rng.uniform(0.3, 0.5) + shading * waves
        amp = rng.uniform(*contrast)
        for c in range(channels):
            tint = 1.0 if c == 0 else rng.uniform(0.7, 1.0)
            img = shade + tint * amp * blob * (0.7 + 0.3 * ripple)
            img += rng.normal(0.0, grain, size=img.shape)
            images[i, c] = img
    return np.clip(images, 0.0, 1.0), labels.astype(np.int64)


def synthetic_dataset(split: str, num_classes: int = 3, seed: int = 7,
                      sizes=(600, 100, 100), size: int = 28, channels: int = 1,
                      **kwargs) -> Dataset:
    """One split of the seeded synthetic task; all splits come from one stream."""
    if split not in SPLITS:
        raise InvalidInputError(f"unknown split {split!r}")
    rng = np.random.default_rng(seed)
    out = None
    for name, n in zip(SPLITS, sizes):
        imgs, labels = synthetic_images(num_classes, n, rng, size, channels, **kwargs)
        if name == split:
            out = Dataset(imgs, labels, split, f"synthetic-{num_classes}", num_classes)
    return out


# -- IDX -----------------------------------------------------------------------

_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 4:
        raise ParseError("file too short for an IDX header", path, 0)
    zero, type_code, ndim = struct.unpack_from(">HBB", raw, 0)
    if zero != 0 or type_code not in _IDX_TYPES:
        raise ParseError(f"bad IDX magic 0x{raw[:4].hex()}", path, 0)
    if len(raw) < 4 + 4 * ndim:
        raise ParseError("truncated IDX dimension list", path, 4)
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    offset = 4 + 4 * ndim
    dtype = np.dtype(_IDX_TYPES[type_code])
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - offset != expected:
        raise ParseError(f"IDX payload has {len(raw) - offset} bytes, header implies {expected}",
                         path, offset)
    return np.frombuffer(raw, dtype=dtype, offset=offset).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    codes = {np.dtype(v).newbyteorder("="): k for k, v in _IDX_TYPES.items()}
    native = array.dtype.newbyteorder("=")
    if native not in codes:
        raise InvalidInputError(f"dtype {array.dtype} has no IDX type code")
    code = codes[native]
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, code, array.ndim))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(np.ascontiguousarray(array, dtype=_IDX_TYPES[code]).tobytes())


def _normalise(arr: np.ndarray) -> np.ndarray:
    if arr.dtype == np.uint8 or arr.dtype == np.dtype(">u1"):
        return arr.astype(np.float64) / 255.0
    out = arr.astype(np.float64)
    if out.size and (out.min() < 0 or out.max() > 1):
        raise InvalidInputError("floating-point pixels must already lie in [0, 1]")
    return out


def load_idx(images_path, labels_path, num_classes=None, split="test") -> Dataset:
    imgs = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64).reshape(-1)
    if imgs.ndim == 3:
        imgs = imgs[:, None]
    elif imgs.ndim != 4:
        raise ParseError(f"IDX images must have 3 or 4 dims, got {imgs.ndim}", images_path, 3)
    if len(imgs) != len(labels):
        raise InvalidInputError("IDX image and label counts differ")
    k = num_classes or (int(labels.max()) + 1 if len(labels) else 2)
    return Dataset(_normalise(imgs), labels, split, Path(images_path).stem, max(k, 2))


# -- CSV -----------------------------------------------------------------------

def load_csv(path, shape=None, num_classes=None, split="test", label_column="label",
             pixel_scale=255.0) -> Dataset:
    """Rows of flattened pixels plus a label column; pixels are divided by *pixel_scale*."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"empty CSV file {path}") from None
        if label_column not in header:
            raise ParseError(f"missing {label_column!r} column", path, 0)
        li = header.index(label_column)
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise ParseError(f"non-numeric value on line {lineno}", path) from None
            if len(values) != len(header):
                raise ParseError(f"line {lineno} has {len(values)} fields, expected {len(header)}",
                                 path)
            labels.append(int(values.pop(li)))
            rows.append(values)
    if not rows:
        raise InvalidInputError(f"CSV file {path} has no data rows")
    pixels = np.asarray(rows) / pixel_scale
    if shape is None:
        side = int(round(np.sqrt(pixels.shape[1])))
        if side * side != pixels.shape[1]:
            raise InvalidInputError("cannot infer a square image shape; pass shape")
        shape = (1, side, side)
    images = pixels.reshape((len(rows),) + tuple(shape))
    if images.min() < 0 or images.max() > 1:
        raise InvalidInputError("CSV pixels fall outside [0, 1] after scaling")
    labels = np.asarray(labels, dtype=np.int64)
    k = num_classes or max(int(labels.max()) + 1, 2)
    return Dataset(images, labels, split, path.stem, k)


# -- image directories ---------------------------------------------------------

IMAGE_SUFFIXES = {".png", ".pgm"}


def load_image_dir(root, split="test", channels=None) -> Dataset:
    """``root/<class name>/*.png|*.pgm``; classes are numbered in sorted name order."""
    from PIL import Image

    root = Path(root)
    if not root.is_dir():
        raise InvalidInputError(f"{root} is not a directory")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    files = [(f, k) for k, name in enumerate(classes)
             for f in sorted((root / name).iterdir()) if f.suffix.lower() in IMAGE_SUFFIXES]
    if not files:
        raise InvalidInputError(f"no PNG/PGM images found under {root}")
    images = []
    for f, _ in files:
        try:
            with Image.open(f) as im:
                im.load()
                if channels == 3 or (channels is None and im.mode in ("RGB", "RGBA")):
                    arr = np.asarray(im.convert("RGB"), dtype=np.float64).transpose(2, 0, 1)
                elif im.mode in ("I;16", "I;16B", "I"):
                    arr = np.asarray(im, dtype=np.float64)[None] / 65535.0 * 255.0
                else:
                    arr = np.asarray(im.convert("L"), dtype=np.float64)[None]
        except OSError as exc:
            raise ParseError(f"cannot decode image: {exc}", f) from exc
        images.append(arr / 255.0)
    shapes = {a.shape for a in images}
    if len(shapes) != 1:
        raise InvalidInputError(f"images under {root} have mixed shapes {sorted(shapes)}")
    labels = np.array([k for _, k in files], dtype=np.int64)
    return Dataset(np.stack(images), labels, split, root.name, max(len(classes), 2))
