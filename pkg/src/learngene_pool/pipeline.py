"""Stage functions shared by the CLI, the test fixtures and the ablation scripts.

Each takes a :class:`RunConfig` so every caller derives seeds and
hyperparameters the same way, which keeps CLI artifacts and in-process runs
bitwise interchangeable.
"""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .data_io import Dataset
from .distillation import (
    DistillPlan,
    DistillResult,
    Hyper,
    make_dense_plan,
    train_auxiliary,
    train_supervised,
)
from .genepool import (
    FinetuneResult,
    LearngenePool,
    build_pool,
    finetune_pool,
    init_stitches,
)
from .vit import VitModel

ROWS = ("low", "high")


def aux_seed(cfg: RunConfig, row: str) -> int:
    return cfg.seed + 1 + ROWS.index(row)


def distill_plan(cfg: RunConfig, anc_depth: int, aux_depth: int, dims_match: bool) -> DistillPlan:
    if cfg.plan == "last":
        return DistillPlan(((anc_depth, aux_depth),), ("high",))
    return make_dense_plan(anc_depth, aux_depth, dims_match)


def train_ancestry(cfg: RunConfig, data: Dataset, log=None) -> tuple[VitModel, list[dict]]:
    model = VitModel(cfg.profile_obj().ancestry(), seed=cfg.seed)
    hyper = Hyper(lr=cfg.ancestry_lr, epochs=cfg.ancestry_epochs, batch_size=cfg.ancestry_batch, seed=cfg.seed,
                  weight_decay=cfg.weight_decay)
    trace = train_supervised(model, data, hyper, log=log)
    return model, trace


def distill_row(cfg: RunConfig, ancestry: VitModel, data: Dataset, row: str, log=None) -> DistillResult:
    prof = cfg.profile_obj()
    aux_cfg = prof.aux_low() if row == "low" else prof.aux_high()
    seed = aux_seed(cfg, row)
    plan = distill_plan(cfg, ancestry.cfg.depth, aux_cfg.depth, aux_cfg.dim == ancestry.cfg.dim)
    hyper = Hyper(alpha=cfg.alpha, tau=cfg.tau, lr=cfg.distill_lr, epochs=cfg.distill_epochs,
                  batch_size=cfg.distill_batch, seed=seed, weight_decay=cfg.weight_decay)
    return train_auxiliary(ancestry, VitModel(aux_cfg, seed=seed), data, plan, hyper, log=log)


def calibration_batch(cfg: RunConfig, data: Dataset) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    idx = np.sort(rng.permutation(len(data))[:cfg.calib_batch])
    return data.normalized(idx)


def make_pool(cfg: RunConfig, low: DistillResult, high: DistillResult, data: Dataset | None = None) -> LearngenePool:
    pool = build_pool(low.aux, high.aux, [m.matrix for m in low.block_matrices])
    calib = calibration_batch(cfg, data) if cfg.stitch_init == "ls" else None
    init_stitches(pool, cfg.stitch_init, calib_batch=calib, seed=cfg.seed, orientation=cfg.tm_orientation)
    pool.metadata = {"stitch_init": cfg.stitch_init, "tm_orientation": cfg.tm_orientation}
    return pool


def finetune(cfg: RunConfig, pool: LearngenePool, data: Dataset, teacher: VitModel | None = None,
             log=None) -> FinetuneResult:
    hyper = Hyper(tau=cfg.tau, lr=cfg.finetune_lr, epochs=cfg.finetune_epochs, batch_size=cfg.finetune_batch,
                  seed=cfg.seed, weight_decay=cfg.weight_decay)
    return finetune_pool(pool, data, cfg.finetune_epochs, hyper, teacher=teacher if cfg.teacher else None,
                         freeze_instances=cfg.freeze_instances, mode=cfg.path_mode, steps=cfg.finetune_steps,
                         log=log)
