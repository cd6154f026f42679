from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from learngene_pool import pipeline
from learngene_pool.config import RunConfig
from learngene_pool.data_io import Dataset, gen_synthetic
from learngene_pool.distillation import DistillResult
from learngene_pool.genepool import LearngenePool
from learngene_pool.vit import ModelConfig, VitModel

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@dataclass
class MiniRun:
    cfg: RunConfig
    data: Dataset
    ancestry: VitModel
    ancestry_before: dict
    low: DistillResult
    high: DistillResult
    pool: LearngenePool


@pytest.fixture(scope="session")
def mini_data() -> Dataset:
    return make_mini_data()


def build_mini_run(data: Dataset, cfg: RunConfig | None = None) -> MiniRun:
    """Ancestry -> two distilled auxiliaries -> TM-initialised pool, exactly as the CLI stages run them."""
    cfg = cfg or RunConfig()
    ancestry, _ = pipeline.train_ancestry(cfg, data)
    before = {k: v.copy() for k, v in ancestry.state_dict().items()}
    low, high = (pipeline.distill_row(cfg, ancestry, data, row) for row in pipeline.ROWS)
    pool = pipeline.make_pool(cfg, low, high, data)
    return MiniRun(cfg, data, ancestry, before, low, high, pool)


def make_mini_data() -> Dataset:
    return gen_synthetic(10, 20, 32, seed=0)


@pytest.fixture(scope="session")
def mini_run(mini_data) -> MiniRun:
    return build_mini_run(mini_data)


def tiny_config(**kw) -> ModelConfig:
    base = dict(image_size=8, patch_size=4, dim=8, depth=2, heads=2, num_classes=3)
    base.update(kw)
    return ModelConfig(**base)


def random_images(rng: np.random.Generator, n: int, cfg: ModelConfig) -> np.ndarray:
    return rng.normal(size=(n, cfg.channels, cfg.image_size, cfg.image_size))
