import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from learngene_pool.data_io import (
    ArchiveError,
    BadMagicError,
    Dataset,
    DatasetFormatError,
    HeaderError,
    LabelRangeError,
    TrailingBytesError,
    TruncatedFileError,
    UnsupportedVersionError,
    dataset_to_bytes,
    gen_synthetic,
    load_raw_dataset,
    pack_archive,
    parse_raw_dataset,
    unpack_archive,
    write_raw_dataset,
)
from learngene_pool.descendant import evaluate
from learngene_pool.distillation import Hyper, train_supervised
from learngene_pool.vit import ModelConfig, VitModel

# ---------------------------------------------------------------- synthetic generator


def test_generator_is_byte_deterministic():
    a, b = gen_synthetic(5, 4, 16, seed=3), gen_synthetic(5, 4, 16, seed=3)
    assert a.images.tobytes() == b.images.tobytes()
    assert dataset_to_bytes(a) == dataset_to_bytes(b)
    assert gen_synthetic(5, 4, 16, seed=4).images.tobytes() != a.images.tobytes()


@given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_generator_counts_and_label_layout(classes, per_class, seed):
    ds = gen_synthetic(classes, per_class, 8, seed)
    assert len(ds) == classes * per_class
    assert ds.images.shape == (classes * per_class, 3, 8, 8) and ds.images.dtype == np.uint8
    np.testing.assert_array_equal(np.bincount(ds.labels, minlength=classes), per_class)


def test_one_sample_per_class():
    assert len(gen_synthetic(7, 1, 8, seed=0)) == 7


@pytest.mark.parametrize("args", [(0, 1, 8), (2, 0, 8), (2, 1, 0)])
def test_generator_rejects_non_positive_arguments(args):
    with pytest.raises(ValueError):
        gen_synthetic(*args, seed=0)


def test_normalisation_uses_documented_constants():
    ds = gen_synthetic(2, 2, 8, seed=0)
    x = ds.normalized(dtype=np.float64)
    np.testing.assert_allclose(x, (ds.images / 255.0 - 0.5) / 0.25)
    assert ds.normalization() == {"mean": [0.5, 0.5, 0.5], "std": [0.25, 0.25, 0.25]}


@pytest.mark.slow
def test_two_class_set_is_learnable():
    ds = gen_synthetic(2, 100, 32, seed=5)
    model = VitModel(ModelConfig(image_size=32, patch_size=4, dim=16, depth=1, heads=1, num_classes=2), seed=5)
    train_supervised(model, ds, Hyper(lr=2e-3, epochs=20, batch_size=16, seed=5))
    assert evaluate(model, ds) > 0.9


# ---------------------------------------------------------------- raw binary format


def test_raw_round_trip(tmp_path):
    ds = gen_synthetic(4, 3, 8, seed=1)
    path = tmp_path / "d.lgds"
    write_raw_dataset(ds, path)
    back = load_raw_dataset(path)
    assert back.equals(ds)
    assert back.normalization() == ds.normalization()
    assert path.stat().st_size == 28 + 12 * 3 * 8 * 8 + 4 * 12


def test_raw_header_layout():
    buf = dataset_to_bytes(gen_synthetic(2, 1, 4, seed=0))
    assert buf[:4] == b"LGDS"
    assert struct.unpack_from("<6I", buf, 4) == (1, 2, 3, 4, 4, 2)
    assert struct.unpack_from("<2I", buf, len(buf) - 8) == (0, 1)


def test_empty_dataset_is_valid():
    buf = struct.pack("<4s6I", b"LGDS", 1, 0, 3, 8, 8, 10)
    ds = parse_raw_dataset(buf)
    assert len(ds) == 0 and ds.images.shape == (0, 3, 8, 8) and ds.num_classes == 10


def _raw(**kw):
    return bytearray(dataset_to_bytes(gen_synthetic(3, 2, 4, seed=2, **kw)))


@pytest.mark.parametrize("mutate,error,code", [
    (lambda b: b.__setitem__(slice(0, 4), b"XXXX"), BadMagicError, 11),
    (lambda b: b.__setitem__(slice(4, 8), struct.pack("<I", 9)), UnsupportedVersionError, 12),
    (lambda b: b.__delitem__(slice(-3, None)), TruncatedFileError, 13),
    (lambda b: b.extend(b"\0"), TrailingBytesError, 14),
    (lambda b: b.__setitem__(slice(-4, None), struct.pack("<I", 3)), LabelRangeError, 15),
    (lambda b: b.__setitem__(slice(12, 16), struct.pack("<I", 0)), HeaderError, 16),
])
def test_malformed_files_raise_specific_errors(mutate, error, code):
    buf = _raw()
    mutate(buf)
    with pytest.raises(error) as info:
        parse_raw_dataset(bytes(buf))
    assert info.value.code == code
    assert isinstance(info.value, DatasetFormatError)


@settings(max_examples=300)
@given(st.binary(max_size=200))
def test_raw_loader_is_total_over_random_bytes(buf):
    try:
        ds = parse_raw_dataset(buf)
    except DatasetFormatError:
        return
    assert isinstance(ds, Dataset)


@settings(max_examples=300)
@given(st.data())
def test_raw_loader_is_total_over_corrupted_files(data):
    buf = _raw()
    for _ in range(data.draw(st.integers(1, 4))):
        i = data.draw(st.integers(0, len(buf) - 1))
        buf[i] = data.draw(st.integers(0, 255))
    cut = data.draw(st.integers(0, len(buf)))
    try:
        ds = parse_raw_dataset(bytes(buf[:cut]))
    except DatasetFormatError:
        return
    assert ds.labels.max(initial=0) < ds.num_classes


# ---------------------------------------------------------------- archive container


def _archive():
    rng = np.random.default_rng(0)
    return pack_archive({"kind": "test", "n": 2},
                        [("a", rng.normal(size=(2, 3))), ("b.c", rng.normal(size=4)), ("s", np.float32(1.5))])


def test_archive_round_trip_is_little_endian_float32():
    manifest, tensors = unpack_archive(_archive())
    assert manifest["kind"] == "test" and manifest["format_version"] == 1
    assert tensors["a"].dtype == np.float32 and tensors["a"].shape == (2, 3)
    assert tensors["s"].shape == () and tensors["s"] == 1.5
    again = pack_archive({"kind": "test", "n": 2}, list(tensors.items()))
    assert again == _archive()


@settings(max_examples=300)
@given(st.data())
def test_archive_reader_is_total_over_corruption(data):
    buf = bytearray(_archive())
    for _ in range(data.draw(st.integers(0, 4))):
        i = data.draw(st.integers(0, len(buf) - 1))
        buf[i] = data.draw(st.integers(0, 255))
    cut = data.draw(st.integers(0, len(buf)))
    try:
        unpack_archive(bytes(buf[:cut]))
    except ArchiveError:
        pass


@settings(max_examples=300)
@given(st.binary(max_size=300))
def test_archive_reader_is_total_over_random_bytes(buf):
    for candidate in (buf, b"LGCK\x01\x00\x00\x00" + buf):
        try:
            unpack_archive(candidate)
        except ArchiveError:
            pass


@settings(max_examples=500)
@given(st.data())
def test_archive_parser_is_total_behind_a_valid_checksum(data):
    body = bytearray(_archive()[:-4])
    for _ in range(data.draw(st.integers(1, 4))):
        i = data.draw(st.integers(4, len(body) - 1))
        body[i] = data.draw(st.integers(0, 255))
    body = body[:data.draw(st.integers(8, len(body)))]
    try:
        unpack_archive(bytes(body) + struct.pack("<I", zlib.crc32(bytes(body))))
    except ArchiveError:
        pass
