"""Architecture presets.

``deit`` replicates the DeiT-Base ancestry / DeiT-Tiny-width auxiliary frame at
224x224 and is only used for accounting. ``mini`` keeps the same structural
ratios (half depth, 4x narrower low row, 64-wide heads scaled to 16) at a size
that trains on a CPU in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass

from .vit import ModelConfig


@dataclass(frozen=True)
class Profile:
    name: str
    image_size: int
    patch_size: int
    num_classes: int
    ancestry_dim: int
    ancestry_depth: int
    ancestry_heads: int
    low_dim: int
    low_heads: int
    aux_depth: int

    def ancestry(self) -> ModelConfig:
        return ModelConfig(self.image_size, self.patch_size, self.ancestry_dim, self.ancestry_depth,
                           self.ancestry_heads, num_classes=self.num_classes)

    def aux_low(self, depth: int | None = None) -> ModelConfig:
        return ModelConfig(self.image_size, self.patch_size, self.low_dim, depth or self.aux_depth,
                           self.low_heads, num_classes=self.num_classes)

    def aux_high(self, depth: int | None = None) -> ModelConfig:
        return ModelConfig(self.image_size, self.patch_size, self.ancestry_dim, depth or self.aux_depth,
                           self.ancestry_heads, num_classes=self.num_classes)


MINI = Profile("mini", image_size=32, patch_size=4, num_classes=10, ancestry_dim=64, ancestry_depth=6,
               ancestry_heads=4, low_dim=16, low_heads=1, aux_depth=3)

DEIT = Profile("deit", image_size=224, patch_size=16, num_classes=1000, ancestry_dim=768, ancestry_depth=12,
               ancestry_heads=12, low_dim=192, low_heads=3, aux_depth=6)

PROFILES = {"mini": MINI, "deit": DEIT}


def deit_pool_depth(pool_size: int) -> int:
    """Pool (12) holds two 6-block rows, pool (18) two 9-block rows."""
    if pool_size % 2 or pool_size < 2:
        raise ValueError(f"pool size must be a positive even number, got {pool_size}")
    return pool_size // 2
