"""Dense complex linear-algebra kernel.

Matrices are plain two-dimensional ``complex128`` numpy arrays.  Every
function here is pure; inputs are never modified.

The ``vec`` operator stacks *rows* (row-major order), so for conformable
matrices ``vec(A @ X @ B) == kron(A, B.T) @ vec(X)``.
"""

import numpy as np

from .errors import EmptyMatrixError, NotSquareError

DEFAULT_TOL = 1e-8


def as_matrix(m, readonly=False):
    """Return ``m`` as a 2-D complex array (scalars become 1x1, vectors rows)."""
    a = np.array(m, dtype=complex)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ValueError(f"expected a matrix, got an array with {a.ndim} dims")
    if readonly:
        a.setflags(write=False)
    return a


def _nonempty(m):
    a = as_matrix(m)
    if a.size == 0:
        raise EmptyMatrixError("matrix has no entries")
    return a


def _square(m):
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise NotSquareError(f"expected a square matrix, got {a.shape[0]}x{a.shape[1]}")
    return a


def singular_values(m):
    return np.linalg.svd(_nonempty(m), compute_uv=False)


def svd_extremes(m):
    """Smallest and largest singular value of ``m``.

    For a non-square matrix only ``min(rows, cols)`` singular values exist,
    so the smallest one is the square root of the smallest eigenvalue of
    the smaller Gram product ``M M*`` or ``M* M``.

    Returns
    -------
    (sigma_min, sigma_max) : tuple of float
    """
    s = singular_values(m)
    return float(s[-1]), float(s[0])


def eigenvalues(m):
    """Eigenvalues of a square matrix, with multiplicity."""
    a = _square(m)
    if a.size == 0:
        return np.zeros(0, dtype=complex)
    return np.linalg.eigvals(a).astype(complex)


def determinant(m):
    a = _square(m)
    return complex(np.linalg.det(a)) if a.size else 1.0 + 0j


def rank_threshold(m, tol_rel=DEFAULT_TOL):
    """The value a singular value must exceed to count towards the rank."""
    _, smax = svd_extremes(m)
    return tol_rel * max(1.0, smax)


def numerical_rank(m, tol_rel=DEFAULT_TOL):
    """Number of singular values above ``tol_rel * max(1, sigma_max)``."""
    if tol_rel <= 0:
        raise ValueError("tol_rel must be positive")
    s = singular_values(m)
    return int(np.count_nonzero(s > tol_rel * max(1.0, float(s[0]))))


def kron(a, b):
    a = _nonempty(a)
    b = _nonempty(b)
    return np.kron(a, b)


def vec(a):
    """Stack the rows of ``a`` into a single column."""
    a = _nonempty(a)
    return a.reshape(-1, 1).copy()


def unvec(v, rows, cols):
    """Inverse of :func:`vec`."""
    return np.asarray(v, dtype=complex).reshape(rows, cols)


def gram(m):
    """Hermitian product ``M M*``."""
    a = as_matrix(m)
    return a @ a.conj().T


def is_finite(m):
    return bool(np.all(np.isfinite(as_matrix(m))))
