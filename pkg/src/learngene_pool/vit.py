"""Vision transformer with per-block taps, plus exact parameter/FLOP accounting."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, fields
from typing import Iterator

import numpy as np

from .numerics import (
    ShapeError,
    Tensor,
    add,
    broadcast_to,
    concat,
    default_dtype,
    gelu,
    getitem,
    layer_norm,
    linear,
    matmul,
    mean,
    reshape,
    scale,
    softmax,
    swapaxes,
    transpose,
)

LN_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 32
    patch_size: int = 4
    dim: int = 64
    depth: int = 6
    heads: int = 4
    mlp_ratio: float = 4.0
    num_classes: int = 10
    use_cls_token: bool = True
    channels: int = 3

    def __post_init__(self):
        for f in ("image_size", "patch_size", "dim", "heads", "num_classes", "channels"):
            if int(getattr(self, f)) < 1:
                raise ValueError(f"{f} must be positive, got {getattr(self, f)}")
        if self.depth < 0:
            raise ValueError(f"depth must be non-negative, got {self.depth}")
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.mlp_ratio <= 0:
            raise ValueError("mlp_ratio must be positive")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def num_tokens(self) -> int:
        return self.num_patches + (1 if self.use_cls_token else 0)

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size ** 2

    @property
    def mlp_hidden(self) -> int:
        return int(self.dim * self.mlp_ratio)

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """(B, C, H, W) -> (B, num_patches, C*p*p); patches row-major, pixels channel-major."""
    b, c, h, w = images.shape
    p = patch_size
    x = images.reshape(b, c, h // p, p, w // p, p)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, (h // p) * (w // p), c * p * p)


def _init(rng: np.random.Generator, shape, std: float) -> Tensor:
    w = np.clip(rng.normal(0.0, std, size=shape), -2 * std, 2 * std)
    return Tensor(w, requires_grad=True)


def _ones(n: int) -> Tensor:
    return Tensor(np.ones(n), requires_grad=True)


def _zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Module:
    """Parameter container: walks Tensor / Module / list-of-Module attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"tensor '{name}': expected shape {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def requires_grad_(self, flag: bool = True):
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def clone(self):
        return copy.deepcopy(self)


class PatchEmbed(Module):
    """f^PE: patch projection, optional cls token and learned positional embedding."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, init_std: float = 0.02):
        self.weight = _init(rng, (cfg.patch_dim, cfg.dim), init_std)
        self.bias = _zeros(cfg.dim)
        if cfg.use_cls_token:
            self.cls_token = _init(rng, (cfg.dim,), init_std)
        self.pos_embed = _init(rng, (cfg.num_tokens, cfg.dim), init_std)
        self.use_cls_token = cfg.use_cls_token

    def __call__(self, patches: Tensor) -> Tensor:
        b, n, _ = patches.shape
        d = self.weight.shape[1]
        x = linear(patches, self.weight, self.bias)
        if self.use_cls_token:
            cls = broadcast_to(reshape(self.cls_token, (1, 1, d)), (b, 1, d))
            x = concat([cls, x], axis=1)
        return add(x, broadcast_to(self.pos_embed, x.shape))


class Attention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, init_std: float = 0.02):
        self.qkv_weight = _init(rng, (dim, 3 * dim), init_std)
        self.qkv_bias = _zeros(3 * dim)
        self.proj_weight = _init(rng, (dim, dim), init_std)
        self.proj_bias = _zeros(dim)
        self.heads = heads

    def __call__(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        h = self.heads
        hd = d // h
        qkv = linear(x, self.qkv_weight, self.qkv_bias)
        qkv = transpose(reshape(qkv, (b, n, 3, h, hd)), (2, 0, 3, 1, 4))
        q, k, v = getitem(qkv, 0), getitem(qkv, 1), getitem(qkv, 2)
        scores = scale(matmul(q, swapaxes(k, -1, -2)), hd ** -0.5)
        out = matmul(softmax(scores, axis=-1), v)
        out = reshape(transpose(out, (0, 2, 1, 3)), (b, n, d))
        return linear(out, self.proj_weight, self.proj_bias)


class Block(Module):
    """Pre-norm transformer block; returns (block output, attention-sublayer output)."""

    def __init__(self, dim: int, heads: int, mlp_hidden: int, rng: np.random.Generator,
                 init_std: float = 0.02):
        self.norm1_weight = _ones(dim)
        self.norm1_bias = _zeros(dim)
        self.attn = Attention(dim, heads, rng, init_std)
        self.norm2_weight = _ones(dim)
        self.norm2_bias = _zeros(dim)
        self.fc1_weight = _init(rng, (dim, mlp_hidden), init_std)
        self.fc1_bias = _zeros(mlp_hidden)
        self.fc2_weight = _init(rng, (mlp_hidden, dim), init_std)
        self.fc2_bias = _zeros(dim)

    @property
    def dim(self) -> int:
        return self.norm1_weight.shape[0]

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        a = self.attn(layer_norm(x, self.norm1_weight, self.norm1_bias, LN_EPS))
        x = add(x, a)
        h = layer_norm(x, self.norm2_weight, self.norm2_bias, LN_EPS)
        h = linear(gelu(linear(h, self.fc1_weight, self.fc1_bias)), self.fc2_weight, self.fc2_bias)
        return add(x, h), a


class Head(Module):
    """f^H: final norm, token pooling (cls token or mean), linear classifier."""

    def __init__(self, dim: int, num_classes: int, rng: np.random.Generator, use_cls_token: bool = True,
                 init_std: float = 0.02):
        self.norm_weight = _ones(dim)
        self.norm_bias = _zeros(dim)
        self.fc_weight = _init(rng, (dim, num_classes), init_std)
        self.fc_bias = _zeros(num_classes)
        self.use_cls_token = use_cls_token

    def __call__(self, tokens: Tensor) -> Tensor:
        x = layer_norm(tokens, self.norm_weight, self.norm_bias, LN_EPS)
        pooled = getitem(x, (slice(None), 0)) if self.use_cls_token else mean(x, axis=1)
        return linear(pooled, self.fc_weight, self.fc_bias)


@dataclass
class TapRecord:
    logits: Tensor
    block_outputs: list[Tensor]
    attn_outputs: list[Tensor]


def as_patches(batch, cfg: ModelConfig) -> Tensor:
    """Validate an image batch against ``cfg`` and cut it into patch tokens."""
    data = batch.data if isinstance(batch, Tensor) else np.asarray(batch)
    expected = (cfg.channels, cfg.image_size, cfg.image_size)
    if data.ndim != 4 or tuple(data.shape[1:]) != expected:
        raise ShapeError(f"input batch shape {tuple(data.shape)} does not match expected (B, {', '.join(map(str, expected))})")
    return Tensor(patchify(data, cfg.patch_size), dtype=default_dtype())


class VitModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, init_std: float = 0.02):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg, rng, init_std)
        self.blocks = [Block(cfg.dim, cfg.heads, cfg.mlp_hidden, rng, init_std) for _ in range(cfg.depth)]
        self.head = Head(cfg.dim, cfg.num_classes, rng, cfg.use_cls_token, init_std)

    def forward_tokens(self, patches: Tensor) -> TapRecord:
        x = self.patch_embed(patches)
        blocks, attns = [], []
        for blk in self.blocks:
            x, a = blk(x)
            blocks.append(x)
            attns.append(a)
        return TapRecord(self.head(x), blocks, attns)

    def forward_with_taps(self, batch) -> TapRecord:
        return self.forward_tokens(as_patches(batch, self.cfg))

    def __call__(self, batch) -> Tensor:
        return self.forward_with_taps(batch).logits


def forward_with_taps(model: VitModel, batch) -> TapRecord:
    return model.forward_with_taps(batch)


# ---------------------------------------------------------------- accounting
# One multiply-accumulate counts as one FLOP. Norms, softmax, GELU and
# residual adds are not counted.


def embed_params(cfg: ModelConfig) -> int:
    return cfg.patch_dim * cfg.dim + cfg.dim + cfg.num_tokens * cfg.dim + (cfg.dim if cfg.use_cls_token else 0)


def block_params(dim: int, mlp_hidden: int) -> int:
    norms = 4 * dim
    attn = dim * 3 * dim + 3 * dim + dim * dim + dim
    mlp = dim * mlp_hidden + mlp_hidden + mlp_hidden * dim + dim
    return norms + attn + mlp


def head_params(dim: int, num_classes: int) -> int:
    return 2 * dim + dim * num_classes + num_classes


def stitch_params(d_in: int, d_out: int) -> int:
    return d_in * d_out + d_out


def embed_flops(cfg: ModelConfig) -> int:
    return cfg.num_patches * cfg.patch_dim * cfg.dim


def block_flops(tokens: int, dim: int, mlp_hidden: int) -> int:
    projections = tokens * (3 * dim * dim + dim * dim)
    attention = 2 * tokens * tokens * dim
    mlp = 2 * tokens * dim * mlp_hidden
    return projections + attention + mlp


def head_flops(dim: int, num_classes: int) -> int:
    return dim * num_classes


def stitch_flops(tokens: int, d_in: int, d_out: int) -> int:
    return tokens * d_in * d_out


def count_params(model_or_config) -> int:
    """Exact trainable scalar count. Configs use closed forms; objects are enumerated."""
    if isinstance(model_or_config, ModelConfig):
        cfg = model_or_config
        return (embed_params(cfg) + cfg.depth * block_params(cfg.dim, cfg.mlp_hidden)
                + head_params(cfg.dim, cfg.num_classes))
    return int(sum(p.data.size for p in model_or_config.parameters()))


def count_flops(model_or_config, image_size: int | None = None) -> int:
    if not isinstance(model_or_config, (ModelConfig, VitModel)) and hasattr(model_or_config, "flops"):
        if image_size is not None and image_size != model_or_config.cfg.image_size:
            raise ValueError("assembled models are accounted at their native image size")
        return model_or_config.flops()
    cfg = model_or_config if isinstance(model_or_config, ModelConfig) else model_or_config.cfg
    if image_size is not None and image_size != cfg.image_size:
        cfg = cfg.replace(image_size=image_size)
    return (embed_flops(cfg) + cfg.depth * block_flops(cfg.num_tokens, cfg.dim, cfg.mlp_hidden)
            + head_flops(cfg.dim, cfg.num_classes))
