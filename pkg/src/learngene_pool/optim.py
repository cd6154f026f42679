from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .numerics import NumericError, Tensor


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    if total_steps <= 0:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * min(step, total_steps) / total_steps))


class Adam:
    """Adam(W) that only touches parameters holding a gradient this step.

    Parameters with ``grad is None`` keep their values and moment estimates,
    so a step on one sampled path leaves the rest of a shared pool untouched.
    Bias correction uses each parameter's own update count.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 5e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state: dict[int, list] = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        """One update. All-or-nothing: a non-finite gradient, moment or new value raises
        NumericError before any parameter or state changes."""
        lr = self.lr if lr is None else lr
        b1, b2 = self.beta1, self.beta2
        pending = []
        with np.errstate(over="ignore", invalid="ignore"):
            for i, p in enumerate(self.params):
                g = p.grad
                if g is None:
                    continue
                t, m, v = self.state.get(id(p)) or (0, np.zeros_like(p.data), np.zeros_like(p.data))
                t += 1
                m = b1 * m + (1.0 - b1) * g
                v = b2 * v + (1.0 - b2) * (g * g)
                m_hat = m / (1.0 - b1 ** t)
                v_hat = v / (1.0 - b2 ** t)
                new = p.data * (1.0 - lr * self.weight_decay) if self.weight_decay else p.data
                new = new - lr * m_hat / (np.sqrt(v_hat) + self.eps)
                if not (np.isfinite(v).all() and np.isfinite(new).all()):
                    raise NumericError(f"optimizer step produced non-finite values for parameter {i} "
                                       f"(shape {p.shape})")
                pending.append((p, [t, m, v], new))
        for p, st, new in pending:
            self.state[id(p)] = st
            p.data = new.astype(p.data.dtype, copy=False)
