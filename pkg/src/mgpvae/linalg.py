"""Dense float64 linear algebra for prior covariances and KL terms."""
import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite

DEFAULT_JITTER = (1e-10, 1e-4)
JITTER_FACTOR = 10.0


def as_symmetric(m):
    """Validate ``m`` as a square symmetric matrix and return it as float64."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {m.shape}")
    if not np.array_equal(m, m.T):
        raise ValueError("matrix is not symmetric")
    return m


def jitter_ladder(start, max_jitter, factor=JITTER_FACTOR):
    levels = []
    level = start
    while level <= max_jitter * (1 + 1e-12):
        levels.append(level)
        level *= factor
    return levels


def cholesky(m, jitter=DEFAULT_JITTER):
    """Lower Cholesky factor of a symmetric matrix, with optional diagonal jitter.

    ``jitter`` is ``None`` (plain factorization) or a ``(start, max)`` pair
    defining the ladder ``start, 10*start, ... <= max``. The plain
    factorization is tried first; jitter is only added when it fails.

    Returns ``(L, delta)`` with ``L @ L.T == m + delta * I``.
    """
    m = as_symmetric(m)
    levels = [0.0] + ([] if jitter is None else jitter_ladder(*jitter))
    eye = np.eye(m.shape[0])
    for delta in levels:
        try:
            L = np.linalg.cholesky(m + delta * eye if delta else m)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.diag(L) > 0):
            return L, delta
    raise NotPositiveDefinite(
        f"cholesky failed up to jitter {levels[-1]:g} (dim={m.shape[0]})"
    )


def _check_vector(L, b):
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1 or b.shape[0] != L.shape[0]:
        raise DimensionMismatch(f"vector of shape {b.shape} vs factor of dim {L.shape[0]}")
    return b


def solve_lower(L, b):
    """Solve ``L x = b`` by forward substitution."""
    L = np.asarray(L, dtype=np.float64)
    b = _check_vector(L, b)
    return solve_triangular(L, b, lower=True, check_finite=False)


def log_det_from_chol(L):
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def quad_form_inv(L, v):
    """``v^T S^{-1} v`` where ``L`` is the Cholesky factor of ``S``."""
    L = np.asarray(L, dtype=np.float64)
    w = solve_lower(L, v)
    return float(w @ w)


def inv_lower(L):
    """Inverse of a lower-triangular factor (itself lower triangular)."""
    L = np.asarray(L, dtype=np.float64)
    return solve_triangular(L, np.eye(L.shape[0]), lower=True, check_finite=False)
