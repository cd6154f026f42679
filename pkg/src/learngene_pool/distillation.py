"""Learngene extraction: distilling a frozen ancestry ViT into auxiliary ViTs.

The auxiliary objective mixes hard-label cross-entropy with three distillation
terms: soft cross-entropy on logits, MSE between transformed ancestry block
outputs and auxiliary block outputs, and the same for attention-sublayer
outputs. Width mismatches are bridged by learnable (d_anc, d_aux) matrices.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .data_io import Dataset, iter_batches
from .numerics import (
    NumericError,
    Tensor,
    add,
    cross_entropy,
    matmul,
    mse,
    no_grad,
    scale,
    soft_cross_entropy,
)
from .optim import Adam, cosine_lr
from .vit import TapRecord, VitModel


class DistillationError(ValueError):
    pass


class TrainingDivergedError(ArithmeticError):
    def __init__(self, epoch: int, batch: int, term: str, detail: str = ""):
        self.epoch, self.batch, self.term = epoch, batch, term
        super().__init__(f"non-finite {term} at epoch {epoch}, batch {batch}" + (f": {detail}" if detail else ""))


@dataclass
class TransformationMatrix:
    kind: str  # "block" (W) or "attn" (M)
    matrix: Tensor
    source_pair: tuple[int, int]

    def __post_init__(self):
        if self.kind not in ("block", "attn"):
            raise DistillationError(f"kind must be 'block' or 'attn', got {self.kind!r}")

    @classmethod
    def create(cls, kind: str, d_anc: int, d_aux: int, pair: tuple[int, int],
               rng: np.random.Generator) -> "TransformationMatrix":
        if d_anc == d_aux:
            return cls(kind, Tensor(np.eye(d_anc), requires_grad=False), tuple(pair))
        w = rng.normal(0.0, 1.0 / math.sqrt(d_anc), size=(d_anc, d_aux))
        return cls(kind, Tensor(w, requires_grad=True), tuple(pair))

    @property
    def name(self) -> str:
        return f"{'W' if self.kind == 'block' else 'M'}.{self.source_pair[0]}.{self.source_pair[1]}"

    @property
    def is_identity(self) -> bool:
        return not self.matrix.requires_grad

    def __call__(self, x: Tensor) -> Tensor:
        if self.is_identity:
            if x.shape[-1] != self.matrix.shape[1]:
                raise DistillationError(f"{self.name}: width {x.shape[-1]} vs identity {self.matrix.shape}")
            return x
        return matmul(x, self.matrix)


@dataclass(frozen=True)
class DistillPlan:
    pairs: tuple[tuple[int, int], ...]
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.pairs:
            raise DistillationError("a distillation plan needs at least one pair")
        prev = (0, 0)
        for a, b in self.pairs:
            if a <= prev[0] or b <= prev[1]:
                raise DistillationError(f"plan indices must be >= 1 and strictly increasing: {self.pairs}")
            prev = (a, b)
        if self.levels and len(self.levels) != len(self.pairs):
            raise DistillationError("one level label per pair")

    def validate(self, anc_depth: int, aux_depth: int) -> None:
        if self.pairs[-1] != (anc_depth, aux_depth):
            raise DistillationError(f"plan must end at ({anc_depth}, {aux_depth}), ends at {self.pairs[-1]}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_dense_plan(anc_depth: int, aux_depth: int, dims_match: bool) -> DistillPlan:
    """Final-block plan for matching widths; otherwise thirds (low / middle / high levels)."""
    if aux_depth < 1:
        raise DistillationError(f"auxiliary depth must be >= 1, got {aux_depth}")
    if aux_depth > anc_depth:
        raise DistillationError(f"auxiliary depth {aux_depth} exceeds ancestry depth {anc_depth}")
    if dims_match:
        return DistillPlan(((anc_depth, aux_depth),), ("high",))
    candidates = [(_round_half_up(j * anc_depth / 3), _round_half_up(j * aux_depth / 3), lvl)
                  for j, lvl in ((1, "low"), (2, "mid"), (3, "high"))]
    pairs, levels = [], []
    # shallow models collapse levels; keep the deeper pair of any collision
    for a, b, lvl in reversed(candidates):
        if a >= 1 and b >= 1 and (not pairs or (a < pairs[0][0] and b < pairs[0][1])):
            pairs.insert(0, (a, b))
            levels.insert(0, lvl)
    return DistillPlan(tuple(pairs), tuple(levels))


@dataclass
class Hyper:
    alpha: float = 0.5
    tau: float = 1.0
    lr: float = 5e-4
    epochs: int = 5
    batch_size: int = 32
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("lr > 0, batch_size >= 1 and epochs >= 0 required")


class DistillLosses(NamedTuple):
    pred: Tensor
    blk: Tensor
    att: Tensor
    dis: Tensor


def make_matrices(plan: DistillPlan, d_anc: int, d_aux: int, rng: np.random.Generator) -> dict[str, TransformationMatrix]:
    mats = {}
    for pair in plan.pairs:
        for kind in ("block", "attn"):
            tm = TransformationMatrix.create(kind, d_anc, d_aux, pair, rng)
            mats[tm.name] = tm
    return mats


def _mean_of(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(terms))


def distill_losses(anc: TapRecord, aux: TapRecord, plan: DistillPlan, mats: dict[str, TransformationMatrix],
                   tau: float = 1.0) -> DistillLosses:
    """Returns (L_pred, L_blk, L_att, L_dis); L_blk / L_att average over the plan pairs."""
    if anc.logits.shape[0] != aux.logits.shape[0]:
        raise DistillationError(f"batch mismatch: ancestry {anc.logits.shape[0]} vs auxiliary {aux.logits.shape[0]}")
    blk, att = [], []
    for a, b in plan.pairs:
        w = mats.get(f"W.{a}.{b}")
        m = mats.get(f"M.{a}.{b}")
        if w is None or m is None:
            raise DistillationError(f"missing transformation matrix for pair ({a}, {b})")
        blk.append(mse(w(anc.block_outputs[a - 1].detach()), aux.block_outputs[b - 1]))
        att.append(mse(m(anc.attn_outputs[a - 1].detach()), aux.attn_outputs[b - 1]))
    l_pred = soft_cross_entropy(anc.logits, aux.logits, tau)
    l_blk = _mean_of(blk)
    l_att = _mean_of(att)
    l_dis = add(add(l_att, l_blk), l_pred)
    return DistillLosses(l_pred, l_blk, l_att, l_dis)


def total_training_loss(l_cls, l_dis, alpha: float):
    """alpha * L_cls + (1 - alpha) * L_dis."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if isinstance(l_cls, Tensor):
        return add(scale(l_cls, alpha), scale(l_dis, 1.0 - alpha))
    return alpha * l_cls + (1.0 - alpha) * l_dis


TRACE_COLUMNS = ("epoch", "L_cls", "L_pred", "L_blk", "L_att", "L_dis", "total")


@dataclass
class DistillResult:
    aux: VitModel
    block_matrices: list[TransformationMatrix]
    attn_matrices: list[TransformationMatrix]
    trace: list[dict] = field(default_factory=list)

    @property
    def matrices(self) -> dict[str, TransformationMatrix]:
        return {m.name: m for m in self.block_matrices + self.attn_matrices}


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    mat_seq, order_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(mat_seq), np.random.default_rng(order_seq)


def _objective(ancestry, aux, mats, plan, hyper, x, y, step_info):
    epoch, batch = step_info
    term = "ancestry forward"
    try:
        with no_grad():
            anc = ancestry.forward_with_taps(x)
        term = "auxiliary forward"
        taps = aux.forward_with_taps(x)
        term = "L_cls"
        l_cls = cross_entropy(taps.logits, y)
        term = "L_dis"
        losses = distill_losses(anc, taps, plan, mats, hyper.tau)
        term = "total"
        total = total_training_loss(l_cls, losses.dis, hyper.alpha)
    except NumericError as exc:
        raise TrainingDivergedError(epoch, batch, term, str(exc)) from None
    return l_cls, losses, total


def _guarded_step(opt: Adam, lr: float, epoch: int, batch: int) -> None:
    try:
        opt.step(lr)
    except NumericError as exc:
        raise TrainingDivergedError(epoch, batch, "optimizer step", str(exc)) from None


def _row(epoch: int, sums: dict, count: int) -> dict:
    row = {"epoch": epoch}
    row.update({k: v / max(count, 1) for k, v in sums.items()})
    return row


def train_auxiliary(ancestry: VitModel, aux: VitModel, data: Dataset, plan: DistillPlan, hyper: Hyper,
                    matrices: dict[str, TransformationMatrix] | None = None, log=None) -> DistillResult:
    """Minimise alpha*L_cls + (1-alpha)*L_dis over ``aux`` (and W, M) with Adam + cosine decay.

    ``ancestry`` is never updated. Trace row 0 holds the losses of the
    untrained auxiliary model over the whole dataset; rows 1..epochs are
    per-epoch means of the training-batch losses.
    """
    plan.validate(ancestry.cfg.depth, aux.cfg.depth)
    mat_rng, order_rng = _streams(hyper.seed)
    mats = matrices if matrices is not None else make_matrices(plan, ancestry.cfg.dim, aux.cfg.dim, mat_rng)
    learnable = [m.matrix for m in mats.values() if m.matrix.requires_grad]
    opt = Adam(aux.parameters() + learnable, lr=hyper.lr, weight_decay=hyper.weight_decay)
    n = len(data)
    if n == 0:
        raise DistillationError("empty training set")
    steps_per_epoch = math.ceil(n / hyper.batch_size)
    total_steps = steps_per_epoch * hyper.epochs

    trace = []
    sums = dict.fromkeys(("L_cls", "L_pred", "L_blk", "L_att", "L_dis", "total"), 0.0)
    with no_grad():
        for bi, idx in enumerate(iter_batches(n, hyper.batch_size)):
            l_cls, losses, total = _objective(ancestry, aux, mats, plan, hyper, data.normalized(idx),
                                              data.labels[idx], (0, bi))
            _accumulate(sums, l_cls, losses, total)
    trace.append(_row(0, sums, steps_per_epoch))

    step = 0
    for epoch in range(1, hyper.epochs + 1):
        order = order_rng.permutation(n)
        sums = dict.fromkeys(sums, 0.0)
        for bi, idx in enumerate(iter_batches(n, hyper.batch_size, order)):
            l_cls, losses, total = _objective(ancestry, aux, mats, plan, hyper, data.normalized(idx),
                                              data.labels[idx], (epoch, bi))
            opt.zero_grad()
            total.backward()
            _guarded_step(opt, cosine_lr(hyper.lr, step, total_steps), epoch, bi)
            step += 1
            _accumulate(sums, l_cls, losses, total)
        trace.append(_row(epoch, sums, steps_per_epoch))
        if log:
            log(trace[-1])
    blocks = [m for m in mats.values() if m.kind == "block"]
    attns = [m for m in mats.values() if m.kind == "attn"]
    return DistillResult(aux, blocks, attns, trace)


def _accumulate(sums, l_cls, losses, total):
    sums["L_cls"] += l_cls.item()
    sums["L_pred"] += losses.pred.item()
    sums["L_blk"] += losses.blk.item()
    sums["L_att"] += losses.att.item()
    sums["L_dis"] += losses.dis.item()
    sums["total"] += total.item()


def train_supervised(model: VitModel, data: Dataset, hyper: Hyper, log=None) -> list[dict]:
    """Plain cross-entropy training with the same optimiser, schedule and batch order as train_auxiliary."""
    _, order_rng = _streams(hyper.seed)
    opt = Adam(model.parameters(), lr=hyper.lr, weight_decay=hyper.weight_decay)
    n = len(data)
    if n == 0:
        raise DistillationError("empty training set")
    total_steps = math.ceil(n / hyper.batch_size) * hyper.epochs
    trace, step = [], 0
    for epoch in range(1, hyper.epochs + 1):
        order = order_rng.permutation(n)
        losses = []
        for bi, idx in enumerate(iter_batches(n, hyper.batch_size, order)):
            try:
                loss = cross_entropy(model(data.normalized(idx)), data.labels[idx])
            except NumericError as exc:
                raise TrainingDivergedError(epoch, bi, "L_cls", str(exc)) from None
            opt.zero_grad()
            loss.backward()
            _guarded_step(opt, cosine_lr(hyper.lr, step, total_steps), epoch, bi)
            step += 1
            losses.append(loss.item())
        trace.append({"epoch": epoch, "L_cls": float(np.mean(losses))})
        if log:
            log(trace[-1])
    return trace


def write_trace_csv(trace: list[dict], path, columns=TRACE_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in trace:
            w.writerow([row.get(c, "") if c == "epoch" else repr(float(row.get(c, float("nan")))) for c in columns])


def hyper_dict(hyper: Hyper) -> dict:
    return asdict(hyper)
