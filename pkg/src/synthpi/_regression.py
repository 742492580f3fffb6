"""Polynomial bases and rank-revealing least squares shared by the residual models."""

import warnings

import numpy as np
from scipy.linalg import qr, solve_triangular

from .errors import ConfigError


def polynomial_basis(X, degree: int, n: int | None = None) -> np.ndarray:
    """Columns ``1, X, X**2, ..., X**degree`` (powers of each regressor, no interactions)."""
    if degree not in (0, 1, 2, 3):
        raise ConfigError(f"polynomial degree must be 0..3, got {degree}")
    if X is None or degree == 0:
        if n is None:
            n = 0 if X is None else np.atleast_2d(np.asarray(X)).shape[0]
        return np.ones((n, 1))
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    cols = [np.ones((X.shape[0], 1))]
    for k in range(1, degree + 1):
        cols.append(X**k)
    return np.hstack(cols)


def least_squares(basis: np.ndarray, y: np.ndarray, rtol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares coefficients with collinear columns dropped by pivoted QR.

    Returns ``(coef, kept)``; dropped columns get coefficient 0.
    """
    n, k = basis.shape
    q, r, piv = qr(basis, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > rtol * max(diag[0] if diag.size else 0.0, 1e-300)))
    kept = np.zeros(k, dtype=bool)
    kept[piv[:rank]] = True
    if rank < k:
        warnings.warn(f"dropping {k - rank} collinear regressor column(s)", RuntimeWarning, stacklevel=3)
    coef = np.zeros(k)
    if rank:
        coef[piv[:rank]] = solve_triangular(r[:rank, :rank], q[:, :rank].T @ y)
    return coef, kept
