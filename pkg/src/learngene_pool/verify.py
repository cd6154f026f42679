"""Finite-difference checks for every differentiable op and the full distillation objective.

Each case builds float64 leaves from a seeded generator and returns
``(loss_fn, leaves)``; the loss contracts the op output against a fixed
random weighting so every output coordinate contributes.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import numerics as nx
from .numerics import Tensor, check_params, precision

TOLERANCE = 1e-4
# Whole-model checks mix coordinates with an exactly zero gradient (the attention key
# bias: softmax is shift invariant, so the numeric side is roundoff ~ eps*|f|/h) and
# coordinates on sharply curved directions (LayerNorm of a low-variance cls row).
# A per-coordinate step ladder with the five-point stencil handles both.
MODEL_STEP = (1e-2, 1e-3, 1e-4, 1e-5)
MODEL_ORDER = 4
MODEL_INIT_STD = 0.2


def _leaf(rng, shape, positive=False) -> Tensor:
    x = rng.normal(size=shape)
    if positive:
        x = np.abs(x) + 0.5
    return Tensor(x, requires_grad=True, dtype=np.float64)


def _contract(out: Tensor, weights: np.ndarray) -> Tensor:
    return nx.sum_(nx.mul(out, Tensor(weights, dtype=np.float64)))


def _unary(op, shape=(3, 4), positive=False):
    def build(rng):
        x = _leaf(rng, shape, positive)
        w = rng.normal(size=op(Tensor(x.data)).shape)
        return (lambda: _contract(op(x), w)), [x]
    return build


def _binary(op, shape_a=(3, 4), shape_b=(3, 4)):
    def build(rng):
        a, b = _leaf(rng, shape_a), _leaf(rng, shape_b)
        w = rng.normal(size=op(Tensor(a.data), Tensor(b.data)).shape)
        return (lambda: _contract(op(a, b), w)), [a, b]
    return build


def _layer_norm(rng):
    x, g, b = _leaf(rng, (2, 3, 5)), _leaf(rng, (5,)), _leaf(rng, (5,))
    w = rng.normal(size=(2, 3, 5))
    return (lambda: _contract(nx.layer_norm(x, g, b, 1e-6), w)), [x, g, b]


def _linear(rng):
    x, W, b = _leaf(rng, (2, 3, 4)), _leaf(rng, (4, 5)), _leaf(rng, (5,))
    w = rng.normal(size=(2, 3, 5))
    return (lambda: _contract(nx.linear(x, W, b), w)), [x, W, b]


def _concat(rng):
    a, b = _leaf(rng, (2, 3)), _leaf(rng, (2, 2))
    w = rng.normal(size=(2, 5))
    return (lambda: _contract(nx.concat([a, b], axis=1), w)), [a, b]


def _cross_entropy(rng):
    logits = _leaf(rng, (4, 5))
    labels = rng.integers(0, 5, size=4)
    return (lambda: nx.cross_entropy(logits, labels)), [logits]


def _soft_cross_entropy(rng):
    teacher = Tensor(rng.normal(size=(4, 5)), dtype=np.float64)
    student = _leaf(rng, (4, 5))
    tau = float(rng.uniform(0.5, 2.0))
    return (lambda: nx.soft_cross_entropy(teacher, student, tau)), [student]


def _mse(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    return (lambda: nx.mse(a, b)), [a, b]


OP_CASES: dict[str, Callable] = {
    "add": _binary(nx.add),
    "sub": _binary(nx.sub),
    "mul": _binary(nx.mul),
    "neg": _unary(nx.neg),
    "scale": _unary(lambda x: nx.scale(x, 1.7)),
    "add_scalar": _unary(lambda x: nx.add_scalar(x, -0.3)),
    "square": _unary(nx.square),
    "exp": _unary(nx.exp),
    "log": _unary(nx.log, positive=True),
    "tanh": _unary(nx.tanh),
    "gelu": _unary(nx.gelu),
    "reshape": _unary(lambda x: nx.reshape(x, (2, 6))),
    "transpose": _unary(lambda x: nx.transpose(x, (2, 0, 1)), shape=(2, 3, 4)),
    "swapaxes": _unary(lambda x: nx.swapaxes(x, 0, 2), shape=(2, 3, 4)),
    "getitem": _unary(lambda x: nx.getitem(x, (slice(None), slice(1, 3))), shape=(3, 4)),
    "concat": _concat,
    "broadcast_to": _unary(lambda x: nx.broadcast_to(x, (2, 3, 4)), shape=(3, 1)),
    "sum": _unary(lambda x: nx.sum_(x, axis=1, keepdims=True)),
    "mean": _unary(lambda x: nx.mean(x, axis=0)),
    "matmul": _binary(nx.matmul, (2, 3, 4), (4, 5)),
    "matmul_batched": _binary(nx.matmul, (2, 3, 4), (2, 4, 2)),
    "softmax": _unary(nx.softmax, shape=(3, 5)),
    "log_softmax": _unary(nx.log_softmax, shape=(3, 5)),
    "layer_norm": _layer_norm,
    "linear": _linear,
    "cross_entropy": _cross_entropy,
    "soft_cross_entropy": _soft_cross_entropy,
    "mse": _mse,
}


def check_op(name: str, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        loss_fn, leaves = OP_CASES[name](rng)
        errs = check_params(loss_fn, leaves)
    return max(errs.values())


def _tiny_configs():
    from .vit import ModelConfig

    anc = ModelConfig(image_size=8, patch_size=4, dim=8, depth=2, heads=2, num_classes=3)
    aux = ModelConfig(image_size=8, patch_size=4, dim=4, depth=1, heads=1, num_classes=3)
    return anc, aux


def _mini_configs():
    from .profiles import MINI

    return MINI.ancestry(), MINI.aux_low()


def check_objective(seed: int = 0, alpha: float = 0.5, tau: float = 1.0, max_coords: int | None = 12,
                    configs=None, batch: int = 3) -> float:
    """Gradient check of alpha * L_cls + (1 - alpha) * L_dis for a distilled auxiliary.

    ``configs`` is an (ancestry, auxiliary) config pair; the default is a
    two-block toy; :func:`check_objective_mini` uses the desk-scale profile.
    """
    from .distillation import (
        distill_losses,
        make_dense_plan,
        make_matrices,
        total_training_loss,
    )
    from .vit import VitModel

    rng = np.random.default_rng(seed)
    anc_cfg, aux_cfg = configs or _tiny_configs()
    with precision(np.float64):
        ancestry = VitModel(anc_cfg, seed=seed, init_std=MODEL_INIT_STD)
        aux = VitModel(aux_cfg, seed=seed + 1, init_std=MODEL_INIT_STD)
        plan = make_dense_plan(anc_cfg.depth, aux_cfg.depth, anc_cfg.dim == aux_cfg.dim)
        mats = make_matrices(plan, anc_cfg.dim, aux_cfg.dim, rng)
        x = rng.normal(size=(batch, anc_cfg.channels, anc_cfg.image_size, anc_cfg.image_size))
        y = rng.integers(0, anc_cfg.num_classes, size=batch)
        with nx.no_grad():
            anc_taps = ancestry.forward_with_taps(x)

        def loss_fn():
            taps = aux.forward_with_taps(x)
            losses = distill_losses(anc_taps, taps, plan, mats, tau)
            return total_training_loss(nx.cross_entropy(taps.logits, y), losses.dis, alpha)

        leaves = aux.parameters() + [m.matrix for m in mats.values() if m.matrix.requires_grad]
        errs = check_params(loss_fn, leaves, h=MODEL_STEP, max_coords=max_coords, rng=rng, order=MODEL_ORDER)
    return max(errs.values())


def check_objective_mini(seed: int = 0, max_coords: int = 2) -> float:
    """The same objective on the mini-profile ancestry and low auxiliary (three-pair dense plan)."""
    return check_objective(seed, max_coords=max_coords, configs=_mini_configs(), batch=2)


def check_vit_cross_entropy(seed: int = 0, max_coords: int | None = 12) -> float:
    """Full 4-wide mini-ViT forward plus cross-entropy."""
    from .vit import ModelConfig, VitModel

    rng = np.random.default_rng(seed)
    cfg = ModelConfig(image_size=8, patch_size=4, dim=4, depth=2, heads=2, num_classes=3)
    with precision(np.float64):
        model = VitModel(cfg, seed=seed, init_std=MODEL_INIT_STD)
        x = rng.normal(size=(2, 3, 8, 8))
        y = rng.integers(0, 3, size=2)
        errs = check_params(lambda: nx.cross_entropy(model(x), y), model.parameters(), h=MODEL_STEP,
                            max_coords=max_coords, rng=rng, order=MODEL_ORDER)
    return max(errs.values())


def run_all(seed: int = 0) -> dict[str, float]:
    """Max relative error per check; all should be below TOLERANCE."""
    out = {name: check_op(name, seed) for name in OP_CASES}
    out["vit_cross_entropy"] = check_vit_cross_entropy(seed)
    out["distill_objective"] = check_objective(seed)
    out["distill_objective_mini"] = check_objective_mini(seed)
    return out
