"""Save/load models, distillation results, pools and descendants as named-tensor archives."""

from __future__ import annotations

from pathlib import Path as FsPath

import numpy as np

from .data_io import ArchiveFormatError, check_shapes, pack_archive, unpack_archive
from .descendant import DescendantModel, assemble
from .distillation import DistillResult, TransformationMatrix
from .genepool import LearngenePool, Path, PoolError, build_pool
from .numerics import Tensor
from .vit import ModelConfig, VitModel


def _model_from_config(d) -> VitModel:
    try:
        cfg = ModelConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ArchiveFormatError(f"invalid model config in manifest: {exc}") from None
    return VitModel(cfg)


def _matrix_tensors(result: DistillResult):
    return [(m.name, m.matrix.data) for m in result.block_matrices + result.attn_matrices]


def to_bytes(obj, metadata: dict | None = None, seed: int | None = None,
             normalization: dict | None = None) -> bytes:
    manifest = {"metadata": metadata or {}, "seed": seed, "normalization": normalization}
    if isinstance(obj, VitModel):
        manifest.update(kind="vit", config=obj.cfg.to_dict())
        tensors = list(obj.state_dict().items())
    elif isinstance(obj, DistillResult):
        mats = obj.block_matrices + obj.attn_matrices
        manifest.update(kind="aux", config=obj.aux.cfg.to_dict(),
                        matrices=[{"name": m.name, "kind": m.kind, "pair": list(m.source_pair),
                                   "learnable": not m.is_identity} for m in mats],
                        trace=obj.trace)
        tensors = list(obj.aux.state_dict().items()) + _matrix_tensors(obj)
    elif isinstance(obj, LearngenePool):
        learned = getattr(obj, "learned_ws", None) or []
        manifest.update(kind="pool", config={"low": obj.low_cfg.to_dict(), "high": obj.high_cfg.to_dict()},
                        depth=obj.depth, stitch_init=[s.init_source for s in obj.stitches],
                        learned_ws=len(learned), pool_metadata=obj.metadata)
        tensors = list(obj.state_dict().items()) + [(f"learned_W.{i}", w) for i, w in enumerate(learned)]
    elif isinstance(obj, DescendantModel):
        manifest.update(kind="descendant", path=obj.path.id, pool_checksum=obj.pool_checksum,
                        config=obj.cfg.to_dict(), widths=obj.widths(),
                        rows={"low": obj.row_configs[0].to_dict(), "high": obj.row_configs[1].to_dict()},
                        stitch_init=getattr(getattr(obj, "stitch", None), "init_source", None))
        tensors = list(obj.state_dict().items())
    else:
        raise TypeError(f"cannot checkpoint {type(obj).__name__}")
    return pack_archive(manifest, tensors)


def _expected(named) -> dict:
    return {name: p.shape for name, p in named}


def from_bytes(buf: bytes):
    """Returns ``(object, manifest)``."""
    manifest, tensors = unpack_archive(buf)
    kind = manifest.get("kind")
    try:
        if kind == "vit":
            obj = _model_from_config(manifest["config"])
            check_shapes(_expected(obj.named_parameters()), tensors)
            obj.load_state_dict(tensors)
        elif kind == "aux":
            aux = _model_from_config(manifest["config"])
            params = dict(aux.named_parameters())
            mats = []
            for spec in manifest["matrices"]:
                arr = tensors.get(spec["name"])
                shape = arr.shape if arr is not None else (0, 0)
                mats.append(TransformationMatrix(spec["kind"], Tensor(np.zeros(shape), requires_grad=spec["learnable"]),
                                                 tuple(spec["pair"])))
            expected = _expected(params.items())
            expected.update({m.name: m.matrix.shape for m in mats})
            check_shapes(expected, tensors)
            aux.load_state_dict({k: tensors[k] for k in params})
            for m in mats:
                m.matrix.data = tensors[m.name].astype(m.matrix.dtype)
            obj = DistillResult(aux, [m for m in mats if m.kind == "block"], [m for m in mats if m.kind == "attn"],
                                list(manifest.get("trace") or []))
        elif kind == "pool":
            cfg = manifest["config"]
            low, high = _model_from_config(cfg["low"]), _model_from_config(cfg["high"])
            obj = build_pool(low, high)
            obj.metadata = dict(manifest.get("pool_metadata") or {})
            expected = _expected(obj.named_parameters())
            n_learned = int(manifest.get("learned_ws", 0))
            d_anc = tensors.get("learned_W.0", np.zeros((0, 0))).shape[0]
            expected.update({f"learned_W.{i}": (d_anc, low.cfg.dim) for i in range(n_learned)})
            check_shapes(expected, tensors)
            obj.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("learned_W.")})
            if n_learned:
                obj.learned_ws = [tensors[f"learned_W.{i}"].copy() for i in range(n_learned)]
            inits = manifest["stitch_init"]
            if len(inits) != len(obj.stitches):
                raise ArchiveFormatError("stitch_init length does not match the pool depth")
            for st, src in zip(obj.stitches, inits):
                st.init_source = src
        elif kind == "descendant":
            obj = _descendant_skeleton(manifest)
            check_shapes(_expected(obj.named_parameters()), tensors)
            obj.load_state_dict(tensors)
        else:
            raise ArchiveFormatError(f"unknown archive kind {kind!r}")
    except (KeyError, TypeError) as exc:
        raise ArchiveFormatError(f"manifest is missing or has malformed field: {exc}") from None
    except PoolError as exc:
        raise ArchiveFormatError(f"manifest describes an invalid pool: {exc}") from None
    return obj, manifest


def _descendant_skeleton(manifest) -> DescendantModel:
    rows = manifest["rows"]
    low, high = _model_from_config(rows["low"]), _model_from_config(rows["high"])
    pool = build_pool(low, high)
    for st in pool.stitches:
        st.init_source = manifest.get("stitch_init") or "tm"
    obj = assemble(pool, Path.parse(manifest["path"]))
    obj.pool_checksum = manifest["pool_checksum"]
    return obj


def save(obj, path, **kw) -> bytes:
    data = to_bytes(obj, **kw)
    FsPath(path).write_bytes(data)
    return data


def load(path):
    return from_bytes(FsPath(path).read_bytes())


def checkpoint_roundtrip(obj):
    return from_bytes(to_bytes(obj))[0]
