"""Image datasets: a procedural generator and a raw little-endian binary format.

Raw dataset layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"LGDS"
    4       4     u32 format version (1)
    8       4     u32 count
    12      4     u32 channels
    16      4     u32 height
    20      4     u32 width
    24      4     u32 num_classes
    28      count*channels*height*width   u8 pixels, sample-major, C x H x W
    ...     4*count                       u32 labels

The file must end exactly after the label block.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..numerics import default_dtype

RAW_MAGIC = b"LGDS"
RAW_VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")

# (x/255 - mean) / std, per channel
NORM_MEAN = (0.5, 0.5, 0.5)
NORM_STD = (0.25, 0.25, 0.25)


class DatasetFormatError(ValueError):
    code = 10
    reason = "format"

    def __init__(self, message: str):
        super().__init__(f"[{self.reason}] {message}")


class BadMagicError(DatasetFormatError):
    code = 11
    reason = "bad_magic"


class UnsupportedVersionError(DatasetFormatError):
    code = 12
    reason = "unsupported_version"


class TruncatedFileError(DatasetFormatError):
    code = 13
    reason = "truncated"


class TrailingBytesError(DatasetFormatError):
    code = 14
    reason = "trailing_bytes"


class LabelRangeError(DatasetFormatError):
    code = 15
    reason = "label_out_of_range"


class HeaderError(DatasetFormatError):
    code = 16
    reason = "bad_header"


@dataclass
class Dataset:
    images: np.ndarray  # (count, C, H, W) uint8
    labels: np.ndarray  # (count,) int64
    num_classes: int
    mean: tuple = field(default=NORM_MEAN)
    std: tuple = field(default=NORM_STD)

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.uint8)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (count, C, H, W), got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images vs {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels outside [0, {self.num_classes})")
        if len(self.mean) != self.channels or len(self.std) != self.channels:
            raise ValueError("normalisation constants must have one entry per channel")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def channels(self) -> int:
        return self.images.shape[1]

    @property
    def image_size(self) -> int:
        return self.images.shape[2]

    def normalized(self, index=None, dtype=None) -> np.ndarray:
        x = self.images if index is None else self.images[index]
        dtype = np.dtype(dtype or default_dtype())
        mean = np.asarray(self.mean, dtype=dtype).reshape(1, -1, 1, 1)
        std = np.asarray(self.std, dtype=dtype).reshape(1, -1, 1, 1)
        return (x.astype(dtype) / dtype.type(255.0) - mean) / std

    def subset(self, index) -> "Dataset":
        return Dataset(self.images[index], self.labels[index], self.num_classes, self.mean, self.std)

    def normalization(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    def equals(self, other: "Dataset") -> bool:
        return (self.num_classes == other.num_classes and np.array_equal(self.images, other.images)
                and np.array_equal(self.labels, other.labels))


def gen_synthetic(num_classes: int, samples_per_class: int, image_size: int, seed: int,
                  channels: int = 3, noise: float = 0.08) -> Dataset:
    """Class-conditional coloured gratings with seeded noise.

    Class ``c`` fixes a base colour (hue spread evenly around the colour
    wheel), grating orientation and spatial frequency; phase and pixel noise
    vary per sample. Samples are ordered class by class.
    """
    for name, v in (("num_classes", num_classes), ("samples_per_class", samples_per_class),
                    ("image_size", image_size), ("channels", channels)):
        if v < 1:
            raise ValueError(f"{name} must be positive, got {v}")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(image_size), np.arange(image_size), indexing="ij")
    u = (xx + 0.5) / image_size
    v = (yy + 0.5) / image_size
    images = np.empty((num_classes * samples_per_class, channels, image_size, image_size), dtype=np.uint8)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    for c in range(num_classes):
        hue = 2.0 * np.pi * c / num_classes
        base = 0.5 + 0.25 * np.cos(hue + 2.0 * np.pi * np.arange(channels) / 3.0)
        theta = np.pi * c / num_classes
        freq = 1.5 + 1.0 * (c % 3)
        proj = u * np.cos(theta) + v * np.sin(theta)
        for s in range(samples_per_class):
            phase = rng.uniform(0.0, 2.0 * np.pi)
            wave = 0.2 * np.sin(2.0 * np.pi * freq * proj + phase)
            img = base[:, None, None] + wave[None]
            img = img + rng.normal(0.0, noise, size=img.shape)
            images[c * samples_per_class + s] = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    mean = tuple(NORM_MEAN[i % 3] for i in range(channels))
    std = tuple(NORM_STD[i % 3] for i in range(channels))
    return Dataset(images, labels, num_classes, mean, std)


def dataset_to_bytes(ds: Dataset) -> bytes:
    n, c, h, w = ds.images.shape
    header = _HEADER.pack(RAW_MAGIC, RAW_VERSION, n, c, h, w, ds.num_classes)
    return header + ds.images.tobytes() + ds.labels.astype("<u4").tobytes()


def write_raw_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(ds))


def parse_raw_dataset(buf: bytes) -> Dataset:
    if len(buf) < 4:
        raise TruncatedFileError(f"file has {len(buf)} bytes, header needs {_HEADER.size}")
    if buf[:4] != RAW_MAGIC:
        raise BadMagicError(f"expected magic {RAW_MAGIC!r}, found {bytes(buf[:4])!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedFileError(f"file has {len(buf)} bytes, header needs {_HEADER.size}")
    _, version, n, c, h, w, k = _HEADER.unpack_from(buf)
    if version != RAW_VERSION:
        raise UnsupportedVersionError(f"format version {version}, this reader understands {RAW_VERSION}")
    if c == 0 or h == 0 or w == 0 or k == 0:
        raise HeaderError(f"zero dimension in header (C={c}, H={h}, W={w}, classes={k})")
    n_pix = n * c * h * w
    expected = _HEADER.size + n_pix + 4 * n
    if len(buf) < expected:
        raise TruncatedFileError(f"header promises {expected} bytes, file has {len(buf)}")
    if len(buf) > expected:
        raise TrailingBytesError(f"{len(buf) - expected} unexpected bytes after the label block")
    images = np.frombuffer(buf, dtype=np.uint8, count=n_pix, offset=_HEADER.size).reshape(n, c, h, w)
    labels = np.frombuffer(buf, dtype="<u4", count=n, offset=_HEADER.size + n_pix).astype(np.int64)
    if n and labels.max() >= k:
        bad = int(np.argmax(labels >= k))
        raise LabelRangeError(f"label {int(labels[bad])} at index {bad} outside [0, {k})")
    mean = tuple(NORM_MEAN[i % 3] for i in range(c))
    std = tuple(NORM_STD[i % 3] for i in range(c))
    return Dataset(images.copy(), labels, k, mean, std)


def load_raw_dataset(path) -> Dataset:
    return parse_raw_dataset(Path(path).read_bytes())


def iter_batches(n: int, batch_size: int, order=None):
    order = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
