"""The learngene pool: two rows of harvested blocks joined by stitch layers.

A path ``(k, m)`` runs the low row's blocks 1..k, then (if ``m <= l``) a
stitch layer and the high row's blocks m..l. Stitching always goes from the
narrow row to the wide row. Stitch layers are indexed by the split position
``k``, so every path with the same low prefix shares one stitch.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data_io import Dataset, iter_batches
from .distillation import Hyper, TrainingDivergedError, TransformationMatrix
from .numerics import (
    NumericError,
    Tensor,
    add,
    cross_entropy,
    least_squares_solve,
    linear,
    no_grad,
    soft_cross_entropy,
)
from .optim import Adam, cosine_lr
from .vit import (
    Block,
    Head,
    ModelConfig,
    Module,
    PatchEmbed,
    VitModel,
    as_patches,
    stitch_params,
)


class PoolError(ValueError):
    pass


class StitchNotInitializedError(RuntimeError):
    pass


class RankDeficiencyWarning(UserWarning):
    pass


INIT_SOURCES = ("tm", "ls", "random")


class StitchLayer(Module):
    """Token-wise (d_low -> d_high) linear map with a zero-initialised bias."""

    def __init__(self, d_low: int, d_high: int, split_position: int):
        self.weight = Tensor(np.zeros((d_low, d_high)), requires_grad=True)
        self.bias = Tensor(np.zeros(d_high), requires_grad=True)
        self.split_position = split_position
        self.init_source: str | None = None

    def set(self, weight: np.ndarray, source: str) -> None:
        weight = np.asarray(weight)
        if weight.shape != self.weight.shape:
            raise PoolError(f"stitch {self.split_position}: expected {self.weight.shape}, got {weight.shape}")
        self.weight.data = weight.astype(self.weight.dtype, copy=True)
        self.bias.data = np.zeros_like(self.bias.data)
        self.init_source = source

    def __call__(self, x: Tensor) -> Tensor:
        if self.init_source is None:
            raise StitchNotInitializedError(f"stitch layer at split {self.split_position} was never initialised")
        return linear(x, self.weight, self.bias)


@dataclass(frozen=True, order=True)
class Path:
    k: int
    m: int

    @property
    def id(self) -> str:
        return f"k{self.k}m{self.m}"

    @classmethod
    def parse(cls, text: str) -> "Path":
        t = text.strip()
        if not t.startswith("k") or "m" not in t:
            raise PoolError(f"path id must look like 'k<k>m<m>', got {text!r}")
        k, m = t[1:].split("m", 1)
        try:
            return cls(int(k), int(m))
        except ValueError:
            raise PoolError(f"path id must look like 'k<k>m<m>', got {text!r}") from None

    def depth(self, l: int) -> int:
        return self.k + max(0, l - self.m + 1)

    def high_count(self, l: int) -> int:
        return max(0, l - self.m + 1)

    def uses_stitch(self, l: int) -> bool:
        return self.k >= 1 and self.m <= l

    def validate(self, l: int) -> None:
        if not (0 <= self.k <= l and 1 <= self.m <= l + 1):
            raise PoolError(f"path {self.id} outside 0<=k<={l}, 1<=m<={l + 1}")
        if self.depth(l) < 1:
            raise PoolError(f"path {self.id} has no blocks")


@dataclass
class Row:
    embed: PatchEmbed
    blocks: list[Block]
    head: Head
    cfg: ModelConfig


class LearngenePool(Module):
    def __init__(self, low: Row, high: Row, stitches: list[StitchLayer], metadata: dict | None = None):
        if len(low.blocks) != len(high.blocks):
            raise PoolError(f"row depth mismatch: low {len(low.blocks)} vs high {len(high.blocks)}")
        if low.cfg.dim > high.cfg.dim:
            raise PoolError(f"low row width {low.cfg.dim} exceeds high row width {high.cfg.dim}")
        self.low_embed = low.embed
        self.low_blocks = low.blocks
        self.low_head = low.head
        self.high_embed = high.embed
        self.high_blocks = high.blocks
        self.high_head = high.head
        self.stitches = stitches
        self.low_cfg = low.cfg
        self.high_cfg = high.cfg
        self.metadata = dict(metadata or {})

    @property
    def depth(self) -> int:
        return len(self.low_blocks)

    @property
    def num_instances(self) -> int:
        return 2 * self.depth

    def stitch_for(self, path: Path) -> StitchLayer | None:
        return self.stitches[path.k - 1] if path.uses_stitch(self.depth) else None

    def path_modules(self, path: Path):
        """(embed, low blocks, stitch or None, high blocks, head), shared with the pool."""
        path.validate(self.depth)
        l = self.depth
        embed = self.low_embed if path.k >= 1 else self.high_embed
        head = self.high_head if path.m <= l else self.low_head
        return (embed, self.low_blocks[:path.k], self.stitch_for(path), self.high_blocks[path.m - 1:], head)

    def path_parameters(self, path: Path, include_instances: bool = True) -> list[Tensor]:
        embed, low, stitch, high, head = self.path_modules(path)
        mods = [embed] + ((low + high) if include_instances else []) + ([stitch] if stitch else []) + [head]
        return [p for mod in mods for p in mod.parameters()]

    def forward_path(self, path: Path, batch) -> Tensor:
        return run_layers(*self.path_modules(path), as_patches(batch, self.low_cfg))

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        return h.hexdigest()[:16]


def run_layers(embed, low_blocks, stitch, high_blocks, head, patches: Tensor) -> Tensor:
    x = embed(patches)
    for blk in low_blocks:
        x, _ = blk(x)
    if stitch is not None:
        x = stitch(x)
    for blk in high_blocks:
        x, _ = blk(x)
    return head(x)


def _row_from(model: VitModel) -> Row:
    m = model.clone()
    return Row(m.patch_embed, m.blocks, m.head, m.cfg)


def build_pool(aux_low: VitModel, aux_high: VitModel, learned_ws=None) -> LearngenePool:
    """Harvest every block of both auxiliary models (copied, in order) and create empty stitch slots.

    ``learned_ws`` is kept on the pool metadata as the TM initialisation
    source; call :func:`init_stitch_tm` (or another init) before use.
    """
    lo, hi = aux_low.cfg, aux_high.cfg
    if lo.depth != hi.depth:
        raise PoolError(f"auxiliary depth mismatch: {lo.depth} vs {hi.depth}")
    if lo.depth < 1:
        raise PoolError("auxiliary models need at least one block")
    same = ("image_size", "patch_size", "num_classes", "use_cls_token", "channels")
    for f in same:
        if getattr(lo, f) != getattr(hi, f):
            raise PoolError(f"auxiliary models disagree on {f}")
    stitches = [StitchLayer(lo.dim, hi.dim, s) for s in range(1, lo.depth + 1)]
    pool = LearngenePool(_row_from(aux_low), _row_from(aux_high), stitches)
    if learned_ws is not None:
        pool.learned_ws = [_as_array(w) for w in learned_ws]
    return pool


def _as_array(w) -> np.ndarray:
    if isinstance(w, TransformationMatrix):
        w = w.matrix
    return np.array(getattr(w, "data", w))


def average_matrices(mats) -> np.ndarray:
    """Elementwise mean, summed left to right in float64 and rounded once to the input dtype.

    The single rounding makes the mean of identical matrices exact.
    """
    arrays = [_as_array(w) for w in mats]
    if not arrays:
        raise PoolError("no transformation matrices to average")
    total = arrays[0].astype(np.float64)
    for a in arrays[1:]:
        if a.shape != total.shape:
            raise PoolError(f"cannot average matrices of shapes {total.shape} and {a.shape}")
        total = total + a
    return (total / len(arrays)).astype(arrays[0].dtype)


def init_stitch_tm(pool: LearngenePool, learned_ws=None, orientation: str = "transpose") -> LearngenePool:
    """Set every stitch to the averaged ancestry->low block matrix, re-oriented to map low->high.

    ``orientation="transpose"`` uses mean(W).T; ``"pinv"`` uses the
    Moore-Penrose pseudo-inverse of mean(W).
    """
    ws = learned_ws if learned_ws is not None else getattr(pool, "learned_ws", None)
    if not ws:
        raise PoolError("TM initialisation needs at least one learned block matrix")
    mean_w = average_matrices(ws)
    if orientation == "transpose":
        stitch_w = mean_w.T
    elif orientation == "pinv":
        stitch_w = np.linalg.pinv(mean_w.astype(np.float64)).astype(mean_w.dtype)
    else:
        raise PoolError(f"orientation must be 'transpose' or 'pinv', got {orientation!r}")
    d_low, d_high = pool.low_cfg.dim, pool.high_cfg.dim
    if stitch_w.shape != (d_low, d_high):
        raise PoolError(f"averaged matrix orients to {stitch_w.shape}, stitch needs ({d_low}, {d_high})")
    for st in pool.stitches:
        st.set(stitch_w, "tm")
    return pool


def init_stitch_ls(pool: LearngenePool, calib_batch) -> LearngenePool:
    """Fit each stitch by least squares from low-row to high-row activations at the same depth."""
    if isinstance(calib_batch, Dataset):
        calib_batch = calib_batch.normalized()
    patches = as_patches(calib_batch, pool.low_cfg)
    with no_grad():
        lo = pool.low_embed(patches)
        hi = pool.high_embed(patches)
        for s, st in enumerate(pool.stitches):
            lo, _ = pool.low_blocks[s](lo)
            hi, _ = pool.high_blocks[s](hi)
            a = lo.data.reshape(-1, lo.shape[-1])
            b = hi.data.reshape(-1, hi.shape[-1])
            res = least_squares_solve(a, b)
            if res.rank_deficient:
                warnings.warn(f"stitch {s + 1}: low-row activations have rank {res.rank} < {a.shape[1]}; "
                              "using the minimum-norm solution", RankDeficiencyWarning, stacklevel=2)
            st.set(res.solution, "ls")
            st.rank_deficient = res.rank_deficient
    return pool


def init_stitch_random(pool: LearngenePool, seed: int = 0, std: float | None = None) -> LearngenePool:
    rng = np.random.default_rng(seed)
    d_low, d_high = pool.low_cfg.dim, pool.high_cfg.dim
    std = std if std is not None else 1.0 / math.sqrt(d_low)
    for st in pool.stitches:
        st.set(rng.normal(0.0, std, size=(d_low, d_high)), "random")
    return pool


def init_stitches(pool: LearngenePool, mode: str, calib_batch=None, learned_ws=None, seed: int = 0,
                  orientation: str = "transpose") -> LearngenePool:
    if mode == "tm":
        return init_stitch_tm(pool, learned_ws, orientation)
    if mode == "ls":
        if calib_batch is None:
            raise PoolError("LS initialisation needs a calibration batch")
        return init_stitch_ls(pool, calib_batch)
    if mode == "random":
        return init_stitch_random(pool, seed)
    raise PoolError(f"unknown stitch init mode {mode!r}; expected one of {INIT_SOURCES}")


def enumerate_paths(pool_or_depth, mode: str = "table") -> list[Path]:
    """``table``: the l+1 split paths (k, k+1). ``general``: every (k, m) with at least one block."""
    l = pool_or_depth if isinstance(pool_or_depth, int) else pool_or_depth.depth
    if mode == "table":
        return [Path(k, k + 1) for k in range(l, -1, -1)]
    if mode == "general":
        return [Path(k, m) for k in range(l, -1, -1) for m in range(l + 1, 0, -1)
                if Path(k, m).depth(l) >= 1]
    raise PoolError(f"mode must be 'table' or 'general', got {mode!r}")


def sample_path(pool_or_depth, rng: np.random.Generator, mode: str = "table") -> Path:
    paths = enumerate_paths(pool_or_depth, mode)
    return paths[int(rng.integers(len(paths)))]


@dataclass
class FinetuneResult:
    pool: LearngenePool
    trace: list[dict] = field(default_factory=list)


def finetune_pool(pool: LearngenePool, data: Dataset, epochs: int, hyper: Hyper | None = None,
                  teacher: VitModel | None = None, freeze_instances: bool = False, mode: str = "table",
                  steps: int | None = None, log=None) -> FinetuneResult:
    """Random single-path training: each step samples a path and takes one Adam step on it.

    Loss is L_cls, plus soft cross-entropy against ``teacher`` when given.
    With ``freeze_instances`` only stitches, embeds and heads move.
    ``steps`` caps the total number of steps (default: epochs * batches).
    """
    hyper = hyper or Hyper()
    n = len(data)
    if n == 0:
        raise PoolError("empty finetuning set")
    steps_per_epoch = math.ceil(n / hyper.batch_size)
    total_steps = epochs * steps_per_epoch if steps is None else steps
    path_seq, order_seq = np.random.SeedSequence(hyper.seed).spawn(2)
    path_rng, order_rng = np.random.default_rng(path_seq), np.random.default_rng(order_seq)
    opt = Adam(pool.parameters(), lr=hyper.lr, weight_decay=hyper.weight_decay)
    trace: list[dict] = []
    step = 0
    epoch = 0
    while step < total_steps:
        epoch += 1
        order = order_rng.permutation(n)
        for idx in iter_batches(n, hyper.batch_size, order):
            if step >= total_steps:
                break
            path = sample_path(pool, path_rng, mode)
            x = data.normalized(idx)
            y = data.labels[idx]
            try:
                logits = pool.forward_path(path, x)
                l_cls = cross_entropy(logits, y)
                loss = l_cls
                l_pred = None
                if teacher is not None:
                    with no_grad():
                        t_logits = teacher(x)
                    l_pred = soft_cross_entropy(t_logits, logits, hyper.tau)
                    loss = add(l_cls, l_pred)
            except NumericError as exc:
                raise TrainingDivergedError(epoch, step, f"loss on path {path.id}", str(exc)) from None
            opt.zero_grad()
            loss.backward()
            if freeze_instances:
                for blk in pool.low_blocks + pool.high_blocks:
                    blk.zero_grad()
            try:
                opt.step(cosine_lr(hyper.lr, step, total_steps))
            except NumericError as exc:
                raise TrainingDivergedError(epoch, step, f"optimizer step on path {path.id}", str(exc)) from None
            trace.append({"step": step, "epoch": epoch, "path": path.id, "L_cls": l_cls.item(),
                          "L_pred": l_pred.item() if l_pred is not None else 0.0, "total": loss.item()})
            if log:
                log(trace[-1])
            step += 1
    opt.zero_grad()
    return FinetuneResult(pool, trace)


def pool_param_count(pool: LearngenePool) -> int:
    return pool.num_parameters()


def stitch_param_count(pool: LearngenePool) -> int:
    return len(pool.stitches) * stitch_params(pool.low_cfg.dim, pool.high_cfg.dim)
