from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .tensor import ShapeError


class LstsqResult(NamedTuple):
    solution: np.ndarray
    rank: int
    rank_deficient: bool


def least_squares_solve(a, b, rcond: float | None = None) -> LstsqResult:
    """Minimise ||a @ x - b||_F via SVD (LAPACK gelsd).

    Rank-deficient ``a`` yields the minimum-norm solution with
    ``rank_deficient=True``. Inputs are solved in float64 and the solution is
    returned in the dtype of ``a``.
    """
    a = np.asarray(getattr(a, "data", a))
    b = np.asarray(getattr(b, "data", b))
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"least_squares_solve wants 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"least_squares_solve: row mismatch {a.shape} vs {b.shape}")
    out_dtype = a.dtype if a.dtype.kind == "f" else np.float64
    x, _, rank, _ = np.linalg.lstsq(a.astype(np.float64), b.astype(np.float64), rcond=rcond)
    rank = int(rank)
    return LstsqResult(x.astype(out_dtype), rank, rank < a.shape[1])
