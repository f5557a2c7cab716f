"""Symmetric positive definite solves with residual verification.

Explicit matrix inversion is deliberately avoided everywhere; callers get a
factorization-based solve plus a relative residual check.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve


def solve_spd(a: np.ndarray, b: np.ndarray, rtol: float) -> np.ndarray:
    """Solve ``a x = b`` for symmetric positive definite ``a`` via Cholesky.

    Raises ``np.linalg.LinAlgError`` when ``a`` is not positive definite and
    ``ArithmeticError`` when the relative residual exceeds ``rtol``.  Callers
    translate these into their module-specific error types.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    factor = cho_factor(a, lower=True, check_finite=False)
    x = cho_solve(factor, b, check_finite=False)
    residual = np.linalg.norm(a @ x - b)
    scale = np.linalg.norm(b)
    rel = residual / scale if scale > 0 else residual
    if not rel <= rtol:
        raise ArithmeticError(f"solve residual {rel:.3e} exceeds tolerance {rtol:.3e}")
    return x


def min_eigenvalue(a: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    return float(np.linalg.eigvalsh(np.asarray(a, dtype=float))[0])


def trace_of_inverse(a: np.ndarray) -> float:
    """Trace of the inverse of an SPD matrix, via factored solves."""
    a = np.asarray(a, dtype=float)
    factor = cho_factor(a, lower=True, check_finite=False)
    return float(np.trace(cho_solve(factor, np.eye(a.shape[0]), check_finite=False)))
