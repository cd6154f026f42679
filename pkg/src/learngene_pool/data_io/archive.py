"""Named-tensor checkpoint archive.

Byte layout (integers little-endian)::

    magic            4 bytes  b"LGCK"
    format_version   u32      (1)
    manifest_len     u32
    manifest         UTF-8 JSON object, keys sorted, compact separators
    tensor_count     u32
    per tensor:
        name_len     u16
        name         UTF-8
        ndim         u8
        dims         u32 * ndim
        values       float32 little-endian, row-major, prod(dims) values
    crc32            u32 over every preceding byte

Readers reject unknown versions, bad checksums, duplicate names, non-finite
values and trailing bytes.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Iterable

import numpy as np

MAGIC = b"LGCK"
FORMAT_VERSION = 1
_MAX_NDIM = 8


class ArchiveError(ValueError):
    pass


class ArchiveFormatError(ArchiveError):
    pass


class ArchiveVersionError(ArchiveError):
    pass


class ArchiveChecksumError(ArchiveError):
    pass


class ArchiveShapeError(ArchiveError):
    pass


class DuplicateTensorError(ArchiveError):
    pass


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def pack_archive(manifest: dict, tensors: Iterable[tuple[str, np.ndarray]]) -> bytes:
    tensors = list(tensors)
    seen = set()
    for name, _ in tensors:
        if name in seen:
            raise DuplicateTensorError(f"tensor name '{name}' appears more than once")
        seen.add(name)
    manifest = dict(manifest)
    manifest["format_version"] = FORMAT_VERSION
    head = canonical_json(manifest)
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(head)), head, struct.pack("<I", len(tensors))]
    for name, arr in tensors:
        arr = np.asarray(arr)
        if arr.ndim > _MAX_NDIM:
            raise ArchiveFormatError(f"tensor '{name}' has {arr.ndim} dims (max {_MAX_NDIM})")
        if not np.isfinite(arr).all():
            raise ArchiveFormatError(f"tensor '{name}' contains non-finite values")
        raw = name.encode("utf-8")
        if not raw or len(raw) > 0xFFFF:
            raise ArchiveFormatError(f"tensor name '{name}' has invalid length")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes, end: int):
        self.buf = buf
        self.pos = 0
        self.end = end

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise ArchiveFormatError(f"truncated archive while reading {what}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def unpack_archive(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    buf = bytes(buf)
    if len(buf) < 8:
        raise ArchiveFormatError(f"archive too short ({len(buf)} bytes)")
    if buf[:4] != MAGIC:
        raise ArchiveFormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise ArchiveVersionError(
            f"archive format version {version} is not readable by this build (expects {FORMAT_VERSION}); "
            f"load it with the release that wrote it and re-save, or migrate the file")
    if len(buf) < 16:
        raise ArchiveFormatError("truncated archive header")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise ArchiveChecksumError("checksum mismatch: archive is corrupt or truncated")

    r = _Reader(buf, len(buf) - 4)
    r.pos = 8
    (mlen,) = r.unpack("<I", "manifest length")
    try:
        manifest = json.loads(r.take(mlen, "manifest").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveFormatError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict):
        raise ArchiveFormatError("manifest must be a JSON object")
    (count,) = r.unpack("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = r.unpack("<H", f"name length of tensor {i}")
        try:
            name = r.take(nlen, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError:
            raise ArchiveFormatError(f"tensor {i} name is not UTF-8") from None
        if name in tensors:
            raise DuplicateTensorError(f"tensor name '{name}' appears more than once")
        (ndim,) = r.unpack("<B", f"ndim of '{name}'")
        if ndim > _MAX_NDIM:
            raise ArchiveFormatError(f"tensor '{name}' claims {ndim} dims")
        dims = r.unpack(f"<{ndim}I", f"dims of '{name}'")
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        raw = r.take(4 * size, f"values of '{name}'")
        arr = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
        if not np.isfinite(arr).all():
            raise ArchiveFormatError(f"tensor '{name}' contains non-finite values")
        tensors[name] = arr
    if r.pos != r.end:
        raise ArchiveFormatError(f"{r.end - r.pos} trailing bytes after the last tensor")
    return manifest, tensors


def save_archive(path, manifest: dict, tensors: Iterable[tuple[str, np.ndarray]]) -> bytes:
    data = pack_archive(manifest, tensors)
    Path(path).write_bytes(data)
    return data


def load_archive(path) -> tuple[dict, dict[str, np.ndarray]]:
    return unpack_archive(Path(path).read_bytes())


def check_shapes(expected: dict[str, tuple], tensors: dict[str, np.ndarray]) -> None:
    """Raise ArchiveShapeError naming the first tensor that is missing, extra or mis-shaped."""
    for name, shape in expected.items():
        if name not in tensors:
            raise ArchiveShapeError(f"tensor '{name}' missing from archive")
        if tuple(tensors[name].shape) != tuple(shape):
            raise ArchiveShapeError(
                f"tensor '{name}': manifest config implies shape {tuple(shape)}, archive holds {tuple(tensors[name].shape)}")
    extra = sorted(set(tensors) - set(expected))
    if extra:
        raise ArchiveShapeError(f"unexpected tensor '{extra[0]}' in archive")
