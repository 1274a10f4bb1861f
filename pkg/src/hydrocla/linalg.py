"""Dense linear algebra used by the solver and estimator.

Matrices are plain ``numpy.ndarray`` (2-D, float64, row-major) and vectors are
1-D float64 arrays.  Both fixture networks stay below ~100 unknowns, so dense
factorizations from LAPACK (via scipy/numpy) are used throughout.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import RankDeficient, SingularMatrix

# A pivot smaller than PIVOT_RTOL times the largest row norm means the matrix
# is treated as singular; effective least-squares rank is cut at RANK_RTOL
# times the largest singular value.
PIVOT_RTOL = 1e-12
RANK_RTOL = 1e-10


def solve_dense_linear(a: np.ndarray, b: np.ndarray, *, pivot_rtol: float = PIVOT_RTOL) -> np.ndarray:
    """Solve the square system ``a @ x = b`` by LU with row pivoting.

    Raises SingularMatrix when any pivot magnitude falls below
    ``pivot_rtol`` times the largest row norm of ``a``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if b.shape != (a.shape[0],):
        raise ValueError(f"rhs length {b.shape} does not match matrix {a.shape}")
    if not np.isfinite(a).all() or not np.isfinite(b).all():
        raise ValueError("non-finite entries in linear system")
    if a.shape[0] == 0:
        return np.zeros(0)

    lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    row_scale = np.abs(a).sum(axis=1).max()
    pivots = np.abs(np.diag(lu))
    if row_scale == 0.0 or pivots.min() < pivot_rtol * row_scale:
        raise SingularMatrix(
            f"pivot {pivots.min():.3e} below threshold {pivot_rtol * row_scale:.3e}"
        )
    return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


def solve_linear_least_squares(a: np.ndarray, b: np.ndarray, *, rank_rtol: float = RANK_RTOL) -> np.ndarray:
    """Return ``x`` minimizing ``||a @ x - b||_2`` for ``rows >= cols``.

    Solved through an SVD of the column-equilibrated matrix; equilibration
    does not change the minimizer but keeps mixed-unit systems (rows weighted
    over several orders of magnitude) away from spurious rank cutoffs.

    Raises RankDeficient when the effective rank at ``rank_rtol`` is below
    the column count.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] < a.shape[1]:
        raise ValueError(f"expected rows >= cols, got shape {a.shape}")
    if b.shape != (a.shape[0],):
        raise ValueError(f"rhs length {b.shape} does not match matrix {a.shape}")
    if not np.isfinite(a).all() or not np.isfinite(b).all():
        raise ValueError("non-finite entries in least-squares system")
    if a.shape[1] == 0:
        return np.zeros(0)

    col_norms = np.linalg.norm(a, axis=0)
    if np.any(col_norms == 0.0):
        raise RankDeficient("zero column in least-squares matrix")
    x_scaled, _, rank, _ = np.linalg.lstsq(a / col_norms, b, rcond=rank_rtol)
    if rank < a.shape[1]:
        raise RankDeficient(
            f"effective rank {rank} below column count {a.shape[1]}"
        )
    return x_scaled / col_norms
