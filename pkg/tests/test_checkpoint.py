import json
import struct
import zlib

import numpy as np
import pytest
from conftest import tiny_config
from hypothesis import given, settings
from hypothesis import strategies as st

from learngene_pool import checkpoint
from learngene_pool.data_io import (
    ArchiveError,
    ArchiveShapeError,
    ArchiveVersionError,
    DuplicateTensorError,
    canonical_json,
    pack_archive,
    unpack_archive,
)
from learngene_pool.descendant import assemble
from learngene_pool.genepool import (
    Path,
    build_pool,
    enumerate_paths,
    init_stitch_random,
)
from learngene_pool.vit import VitModel


def _pool(seed=0):
    low = VitModel(tiny_config(dim=4, depth=2, heads=1), seed=seed)
    high = VitModel(tiny_config(dim=8, depth=2), seed=seed + 1)
    pool = build_pool(low, high, [np.full((8, 4), 0.5), np.full((8, 4), 1.5)])
    init_stitch_random(pool, seed=seed)
    pool.metadata = {"note": "unit"}
    return pool


def _rewrite_manifest(buf: bytes, edit) -> bytes:
    """Re-pack an archive after editing its manifest, keeping tensors and a valid checksum."""
    manifest, tensors = unpack_archive(buf)
    edit(manifest)
    manifest.pop("format_version")
    return pack_archive(manifest, list(tensors.items()))


def test_model_round_trip_is_bitwise():
    model = VitModel(tiny_config(), seed=3)
    back = checkpoint.checkpoint_roundtrip(model)
    assert back.cfg == model.cfg
    for k, v in model.state_dict().items():
        assert back.state_dict()[k].tobytes() == v.tobytes()


def test_pool_save_load_save_is_byte_identical(tmp_path):
    pool = _pool()
    first = checkpoint.save(pool, tmp_path / "p.lgck", seed=11, metadata={"stage": "x"})
    back, manifest = checkpoint.load(tmp_path / "p.lgck")
    assert manifest["seed"] == 11 and manifest["metadata"] == {"stage": "x"}
    assert manifest["depth"] == 2 and manifest["stitch_init"] == ["random", "random"]
    second = checkpoint.to_bytes(back, seed=11, metadata={"stage": "x"})
    assert first == second
    assert back.checksum() == pool.checksum()
    assert back.metadata == {"note": "unit"}
    assert [w.tobytes() for w in back.learned_ws] == [w.astype(np.float32).tobytes() for w in pool.learned_ws]


@pytest.mark.slow
def test_mini_pool_round_trip(mini_run):
    buf = checkpoint.to_bytes(mini_run.pool)
    back = checkpoint.from_bytes(buf)[0]
    assert checkpoint.to_bytes(back) == buf
    assert [s.init_source for s in back.stitches] == ["tm"] * back.depth


def test_distill_result_round_trip(mini_data):
    from learngene_pool.distillation import Hyper, make_dense_plan, train_auxiliary

    anc = VitModel(tiny_config(image_size=32, dim=8, depth=2, num_classes=10), seed=1)
    aux = VitModel(tiny_config(image_size=32, dim=4, depth=1, heads=1, num_classes=10), seed=2)
    res = train_auxiliary(anc, aux, mini_data.subset(np.arange(8)), make_dense_plan(2, 1, False), Hyper(epochs=1))
    buf = checkpoint.to_bytes(res)
    back = checkpoint.from_bytes(buf)[0]
    assert checkpoint.to_bytes(back) == buf
    assert [m.name for m in back.block_matrices] == [m.name for m in res.block_matrices]
    assert back.trace == res.trace


def test_descendant_round_trip():
    pool = _pool()
    for path in enumerate_paths(pool, "general"):
        desc = assemble(pool, path)
        buf = checkpoint.to_bytes(desc)
        back, manifest = checkpoint.from_bytes(buf)
        assert manifest["path"] == path.id
        assert checkpoint.to_bytes(back) == buf
        x = np.random.default_rng(0).normal(size=(2, 3, 8, 8))
        assert back(x).data.tobytes() == desc(x).data.tobytes()


def test_name_collision_is_refused():
    with pytest.raises(DuplicateTensorError, match="'w'"):
        pack_archive({}, [("w", np.zeros(2)), ("w", np.ones(2))])


def test_wrong_dim_in_manifest_names_the_tensor():
    buf = checkpoint.to_bytes(VitModel(tiny_config(dim=8), seed=0))

    def widen(m):
        m["config"]["dim"] = 12
        m["config"]["heads"] = 2

    with pytest.raises(ArchiveShapeError, match="patch_embed.weight"):
        checkpoint.from_bytes(_rewrite_manifest(buf, widen))


def test_future_version_is_refused_with_migration_hint():
    body = bytearray(checkpoint.to_bytes(_pool())[:-4])
    body[4:8] = struct.pack("<I", 2)
    with pytest.raises(ArchiveVersionError, match="re-save|migrate"):
        checkpoint.from_bytes(bytes(body) + struct.pack("<I", zlib.crc32(bytes(body))))


def test_manifest_is_canonical_json():
    buf = checkpoint.to_bytes(_pool())
    (mlen,) = struct.unpack_from("<I", buf, 8)
    raw = buf[12:12 + mlen]
    assert canonical_json(json.loads(raw)) == raw


def test_unknown_object_type():
    with pytest.raises(TypeError):
        checkpoint.to_bytes(object())


@settings(max_examples=500)
@given(st.data())
def test_loader_is_total_over_manifest_corruption(data):
    buf = checkpoint.to_bytes(_pool())
    manifest, tensors = unpack_archive(buf)
    raw = bytearray(canonical_json({k: v for k, v in manifest.items() if k != "format_version"}))
    for _ in range(data.draw(st.integers(1, 3))):
        raw[data.draw(st.integers(0, len(raw) - 1))] = data.draw(st.sampled_from(b'0123456789{}[]":,ax-'))
    try:
        fuzzed = json.loads(raw)
    except ValueError:
        return
    if not isinstance(fuzzed, dict):
        return
    try:
        blob = pack_archive(fuzzed, list(tensors.items()))
        checkpoint.from_bytes(blob)
    except ArchiveError:
        pass


def test_assembled_path_id_in_manifest():
    desc = assemble(_pool(), Path(1, 1))
    assert checkpoint.from_bytes(checkpoint.to_bytes(desc))[1]["path"] == "k1m1"
