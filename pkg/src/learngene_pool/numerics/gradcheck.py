"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import GradientError, Tensor, no_grad


class NonDeterministicError(RuntimeError):
    pass


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def _coords(size: int, max_coords: int | None, rng) -> np.ndarray:
    if max_coords is None or size <= max_coords:
        return np.arange(size)
    rng = rng if rng is not None else np.random.default_rng(0)
    return np.sort(rng.choice(size, size=max_coords, replace=False))


# central-difference stencils: (offsets in units of h, weights); derivative = sum(w * f(x + o*h)) / h
STENCILS = {
    2: ((1.0, -1.0), (0.5, -0.5)),
    4: ((2.0, 1.0, -1.0, -2.0), (-1.0 / 12.0, 8.0 / 12.0, -8.0 / 12.0, 1.0 / 12.0)),
}


def _derivative(loss_fn, flat, c, h, offsets, weights) -> float:
    old = flat[c]
    acc = 0.0
    for o, w in zip(offsets, weights):
        flat[c] = old + o * h
        acc += w * loss_fn().item()
    flat[c] = old
    return acc / h


def _adaptive_derivative(loss_fn, flat, c, steps, offsets, weights, f_scale: float) -> float:
    """Estimate at each step and keep the one with the smallest error bound.

    The bound for step i is the gap to the next (smaller) step, standing in
    for truncation error, plus the roundoff bound of that smaller step.
    """
    est = [_derivative(loss_fn, flat, c, h, offsets, weights) for h in steps]
    noise = np.finfo(np.float64).eps * f_scale * sum(abs(w) for w in weights)
    bounds = [abs(est[i] - est[i + 1]) + noise / steps[i + 1] for i in range(len(est) - 1)]
    return est[int(np.argmin(bounds))]


def check_params(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float | Sequence[float] = 1e-5,
                 max_coords: int | None = None, rng=None, order: int = 2) -> dict[int, float]:
    """Compare backward() against central differences for each tensor in ``params``.

    ``loss_fn`` rebuilds the graph from the current parameter values. Returns
    the max relative error per parameter index. ``order=4`` uses the
    five-point stencil. Passing a decreasing sequence for ``h`` picks the step
    per coordinate, which matters when some gradients are exactly zero (large
    steps keep roundoff down) and others sit on sharply curved directions
    (small steps keep truncation down).
    """
    if order not in STENCILS:
        raise ValueError(f"order must be one of {sorted(STENCILS)}")
    offsets, weights = STENCILS[order]
    steps = tuple(h) if isinstance(h, (tuple, list)) else None
    if steps is not None and len(steps) < 2:
        raise ValueError("an adaptive step ladder needs at least two steps")
    for p in params:
        if p.dtype != np.float64:
            raise GradientError("finite-difference checks need float64 tensors")
    with no_grad():
        v1 = loss_fn().item()
        v2 = loss_fn().item()
    if v1 != v2:
        raise NonDeterministicError(f"loss changed between identical calls: {v1!r} vs {v2!r}")

    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if loss.requires_grad:
        loss.backward()
    errors = {}
    for i, p in enumerate(params):
        analytic = p.grad_or_zeros().reshape(-1)
        flat = p.data.reshape(-1)
        idx = _coords(flat.size, max_coords, rng)
        numeric = np.empty(idx.size)
        with no_grad():
            for j, c in enumerate(idx):
                if steps is None:
                    numeric[j] = _derivative(loss_fn, flat, c, h, offsets, weights)
                else:
                    numeric[j] = _adaptive_derivative(loss_fn, flat, c, steps, offsets, weights, max(abs(v1), 1.0))
        errors[i] = relative_error(analytic[idx], numeric)
    return errors


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float | Sequence[float] = 1e-5,
                      max_coords: int | None = None, rng=None, order: int = 2) -> float:
    """Max relative error between the analytic and numeric gradient of scalar ``f`` at ``x``."""
    leaf = Tensor(x.data, requires_grad=True, dtype=np.float64)
    return check_params(lambda: f(leaf), [leaf], h=h, max_coords=max_coords, rng=rng, order=order)[0]
