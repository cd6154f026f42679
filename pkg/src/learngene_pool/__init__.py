"""Learngene Pool: distil one large ViT into small auxiliary ViTs, pool their blocks,
and stitch variable-size descendants under resource budgets."""

__version__ = "0.1.0"
