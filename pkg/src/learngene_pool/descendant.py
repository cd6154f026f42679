"""Descendant models assembled from pool paths, their cost, and budgeted selection."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .data_io import Dataset, iter_batches
from .genepool import LearngenePool, Path, PoolError, enumerate_paths, run_layers
from .numerics import Tensor, no_grad
from .profiles import DEIT, MINI, Profile, deit_pool_depth
from .vit import (
    Block,
    Head,
    ModelConfig,
    Module,
    PatchEmbed,
    as_patches,
    block_flops,
    block_params,
    embed_flops,
    embed_params,
    head_flops,
    head_params,
    stitch_flops,
    stitch_params,
)


@dataclass(frozen=True)
class PoolConfig:
    """Architecture of a two-row pool; enough to account any path without weights."""

    low: ModelConfig
    high: ModelConfig

    def __post_init__(self):
        if self.low.depth != self.high.depth:
            raise PoolError(f"row depth mismatch: {self.low.depth} vs {self.high.depth}")

    @property
    def depth(self) -> int:
        return self.low.depth

    @classmethod
    def from_pool(cls, pool: LearngenePool) -> "PoolConfig":
        return cls(pool.low_cfg.replace(depth=pool.depth), pool.high_cfg.replace(depth=pool.depth))

    @classmethod
    def from_profile(cls, profile: Profile, depth: int | None = None) -> "PoolConfig":
        return cls(profile.aux_low(depth), profile.aux_high(depth))

    @classmethod
    def deit(cls, pool_size: int) -> "PoolConfig":
        return cls.from_profile(DEIT, deit_pool_depth(pool_size))

    @classmethod
    def mini(cls) -> "PoolConfig":
        return cls.from_profile(MINI)


class DescendantModel(Module):
    """embed -> low blocks 1..k -> (stitch) -> high blocks m..l -> head, owning copies of pool weights."""

    def __init__(self, embed: PatchEmbed, low_blocks: list[Block], stitch, high_blocks: list[Block],
                 head: Head, cfg: ModelConfig, path: Path, pool_checksum: str,
                 row_configs: tuple[ModelConfig, ModelConfig] | None = None):
        self.embed = embed
        self.low_blocks = low_blocks
        if stitch is not None:
            self.stitch = stitch
        self.high_blocks = high_blocks
        self.head = head
        self.cfg = cfg
        self.path = path
        self.pool_checksum = pool_checksum
        self.row_configs = row_configs

    def layers(self):
        return self.embed, self.low_blocks, getattr(self, "stitch", None), self.high_blocks, self.head

    def __call__(self, batch) -> Tensor:
        return run_layers(*self.layers(), as_patches(batch, self.cfg))

    def flops(self) -> int:
        embed, low, stitch, high, head = self.layers()
        cfg = self.cfg
        n = cfg.num_tokens
        total = embed_flops(cfg) + head_flops(head.fc_weight.shape[0], head.fc_weight.shape[1])
        total += sum(block_flops(n, b.dim, b.fc1_weight.shape[1]) for b in low + high)
        if stitch is not None:
            total += stitch_flops(n, *stitch.weight.shape)
        return total

    def widths(self) -> list[int]:
        """Output width after each layer, embed first, head excluded."""
        out = [self.embed.weight.shape[1]]
        out += [b.dim for b in self.low_blocks]
        if hasattr(self, "stitch"):
            out.append(self.stitch.weight.shape[1])
        out += [b.dim for b in self.high_blocks]
        return out


def assemble(pool: LearngenePool, path: Path) -> DescendantModel:
    embed, low, stitch, high, head = pool.path_modules(path)
    if stitch is not None and stitch.init_source is None:
        raise PoolError(f"path {path.id} traverses stitch {stitch.split_position}, which is uninitialised")
    cfg = pool.low_cfg if path.k >= 1 else pool.high_cfg
    out_cfg = pool.high_cfg if path.m <= pool.depth else pool.low_cfg
    cfg = cfg.replace(depth=path.depth(pool.depth), num_classes=out_cfg.num_classes)
    return DescendantModel(embed.clone(), [b.clone() for b in low], stitch.clone() if stitch else None,
                           [b.clone() for b in high], head.clone(), cfg, path, pool.checksum(),
                           (pool.low_cfg, pool.high_cfg))


@dataclass(frozen=True)
class Cost:
    params: int
    flops: int


def account(pool_config: PoolConfig, path: Path) -> Cost:
    """Parameters and MAC-convention FLOPs of the path's layer list, without materialising weights."""
    l = pool_config.depth
    path.validate(l)
    lo, hi = pool_config.low, pool_config.high
    n_hi = path.high_count(l)
    embed_cfg = lo if path.k >= 1 else hi
    head_cfg = hi if n_hi else lo
    tokens = embed_cfg.num_tokens
    params = embed_params(embed_cfg) + head_params(head_cfg.dim, head_cfg.num_classes)
    flops = embed_flops(embed_cfg) + head_flops(head_cfg.dim, head_cfg.num_classes)
    params += path.k * block_params(lo.dim, lo.mlp_hidden) + n_hi * block_params(hi.dim, hi.mlp_hidden)
    flops += path.k * block_flops(tokens, lo.dim, lo.mlp_hidden) + n_hi * block_flops(tokens, hi.dim, hi.mlp_hidden)
    if path.uses_stitch(l):
        params += stitch_params(lo.dim, hi.dim)
        flops += stitch_flops(tokens, lo.dim, hi.dim)
    return Cost(params, flops)


@dataclass(frozen=True)
class Budget:
    max_params: float | None = None
    max_flops: float | None = None

    def __post_init__(self):
        if self.max_params is None and self.max_flops is None:
            raise ValueError("a budget needs max_params, max_flops or both")

    def admits(self, cost: Cost) -> bool:
        return ((self.max_params is None or cost.params <= self.max_params)
                and (self.max_flops is None or cost.flops <= self.max_flops))


UNBOUNDED = Budget(max_params=math.inf, max_flops=math.inf)


@dataclass
class BudgetPlan:
    ranked: list[tuple[Path, Cost]]
    smallest: tuple[Path, Cost]
    feasible: bool = field(init=False)

    def __post_init__(self):
        self.feasible = bool(self.ranked)

    @property
    def paths(self) -> list[Path]:
        return [p for p, _ in self.ranked]


def plan_under_budget(pool_config: PoolConfig, budget: Budget, mode: str = "table",
                      accuracy: dict | None = None) -> BudgetPlan:
    """Feasible paths, largest first; ties prefer fewer stitches, then smaller k.

    With ``accuracy`` (path id or Path -> measured accuracy) the primary key
    becomes accuracy, descending, and parameter count only breaks ties. When
    nothing fits, ``ranked`` is empty and ``smallest`` reports the cheapest
    path available.
    """
    l = pool_config.depth
    costs = [(p, account(pool_config, p)) for p in enumerate_paths(l, mode)]
    smallest = min(costs, key=lambda pc: (pc[1].params, pc[1].flops, pc[0].k, pc[0].m))
    feasible = [pc for pc in costs if budget.admits(pc[1])]
    if accuracy is not None:
        acc = {(k.id if isinstance(k, Path) else str(k)): float(v) for k, v in accuracy.items()}
        missing = [p.id for p, _ in feasible if p.id not in acc]
        if missing:
            raise PoolError(f"no accuracy recorded for feasible paths {missing}")
        feasible.sort(key=lambda pc: (-acc[pc[0].id], -pc[1].params, int(pc[0].uses_stitch(l)), pc[0].k, pc[0].m))
    else:
        feasible.sort(key=lambda pc: (-pc[1].params, int(pc[0].uses_stitch(l)), pc[0].k, pc[0].m))
    return BudgetPlan(feasible, smallest)


def evaluate(model, data: Dataset, batch_size: int = 64) -> float:
    """Top-1 accuracy; ties in the logits resolve to the lowest class index."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    correct = 0
    with no_grad():
        for idx in iter_batches(len(data), batch_size):
            logits = model(data.normalized(idx)).data
            correct += int((np.argmax(logits, axis=1) == data.labels[idx]).sum())
    return correct / len(data)


COST_COLUMNS = ("path_id", "k", "m", "params", "flops")


def cost_rows(pool_config: PoolConfig, paths) -> list[dict]:
    rows = []
    for p in paths:
        c = account(pool_config, p)
        rows.append({"path_id": p.id, "k": p.k, "m": p.m, "params": c.params, "flops": c.flops})
    return rows


def rows_to_csv(rows: list[dict], columns=COST_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
