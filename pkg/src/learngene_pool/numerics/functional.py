"""Loss functions composed from the primitive ops."""

from __future__ import annotations

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    log_softmax,
    mean,
    mul,
    scale,
    softmax,
    square,
    sub,
    sum_,
)


def one_hot(labels, num_classes: int, dtype) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ShapeError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean hard-label cross-entropy for logits of shape (B, C)."""
    b, c = logits.shape
    target = Tensor(one_hot(labels, c, logits.dtype), dtype=logits.dtype)
    if target.shape[0] != b:
        raise ShapeError(f"cross_entropy: {b} logits rows vs {target.shape[0]} labels")
    return scale(sum_(mul(log_softmax(logits), target)), -1.0 / b)


def soft_cross_entropy(teacher_logits: Tensor, student_logits: Tensor, tau: float = 1.0) -> Tensor:
    """-sum softmax(teacher/tau) * log softmax(student/tau), averaged over the batch.

    The teacher side is treated as a constant target. No tau**2 factor.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if teacher_logits.shape != student_logits.shape:
        raise ShapeError(f"soft_cross_entropy: {teacher_logits.shape} vs {student_logits.shape}")
    t = teacher_logits.detach()
    target = softmax(scale(t, 1.0 / tau)).detach()
    logp = log_softmax(scale(student_logits, 1.0 / tau))
    return scale(sum_(mul(target, logp)), -1.0 / student_logits.shape[0])


def mse(a: Tensor, b: Tensor) -> Tensor:
    return mean(square(sub(a, b)))
