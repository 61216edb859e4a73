"""Dense double-precision linear algebra used throughout the package.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 with two
dimensions. Activations are stored one sample per row.
"""

import numpy as np
from scipy.linalg import solve_triangular

SYMMETRY_RTOL = 1e-10


class ShapeError(ValueError):
    pass


class NotPositiveDefiniteError(ArithmeticError):
    pass


class NumericError(ArithmeticError):
    pass


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def check_finite(a, name="matrix"):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite entries")
    return a


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return check_finite(a @ b, "product")


def frobenius_norm(a):
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


def p_norm(a, p):
    """sqrt(tr(a^T p a)), the norm induced by an SPD matrix ``p``."""
    a = as_matrix(a, "a")
    p = as_matrix(p, "p")
    if p.shape[0] != p.shape[1]:
        raise ShapeError(f"p must be square, got {p.shape}")
    if p.shape[0] != a.shape[0]:
        raise ShapeError(f"p {p.shape} incompatible with a {a.shape}")
    q = float(np.sum(a * (p @ a)))
    # tiny negative values can only come from rounding
    return float(np.sqrt(max(q, 0.0)))


def is_symmetric(p, rtol=SYMMETRY_RTOL):
    scale = max(frobenius_norm(p), 1.0)
    return frobenius_norm(p - p.T) <= rtol * scale


def cholesky(p):
    """Lower Cholesky factor of an SPD matrix.

    Raises NotPositiveDefiniteError on a non-positive pivot.
    """
    p = as_matrix(p, "p")
    if p.shape[0] != p.shape[1]:
        raise ShapeError(f"expected a square matrix, got {p.shape}")
    check_finite(p, "p")
    if not is_symmetric(p):
        raise ShapeError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(p)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc


def spd_inverse(p):
    """Inverse of a symmetric positive definite matrix via its Cholesky factor.

    The returned matrix is exactly symmetric.
    """
    lower = cholesky(p)
    n = lower.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    lower_inv = solve_triangular(lower, np.eye(n), lower=True)
    inv = lower_inv.T @ lower_inv
    inv = 0.5 * (inv + inv.T)
    return check_finite(inv, "inverse")


def spd_solve(p, b):
    """Solve p x = b for SPD p using the Cholesky factor."""
    lower = cholesky(p)
    b = np.asarray(b, dtype=np.float64)
    y = solve_triangular(lower, b, lower=True)
    return solve_triangular(lower.T, y, lower=False)
