"""Small dense symmetric matrix kernels.

Every matrix in play (one-point information matrices, design information
matrices) is symmetric and at most ~12x12. Candidate tables store them as
packed lower triangles, row-major, i.e. in ``np.tril_indices`` order::

    (0,0), (1,0), (1,1), (2,0), (2,1), (2,2), ...

Functions accept dense ``(d, d)`` arrays unless their name says ``packed``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_triangular

from .errors import SingularMatrixError

#: pivot <= SINGULAR_RTOL * (matching diagonal entry) counts as singular
SINGULAR_RTOL = 1e-13
#: eigenvalue >= -PSD_RTOL * (1 + max diag) counts as PSD
PSD_RTOL = 1e-12


def packed_size(dim: int) -> int:
    return dim * (dim + 1) // 2


def dim_from_packed(size: int) -> int:
    dim = int(round((math.sqrt(8 * size + 1) - 1) / 2))
    if packed_size(dim) != size:
        raise ValueError(f"{size} is not a triangular number")
    return dim


def pack(A: np.ndarray) -> np.ndarray:
    """Packed lower triangle of ``A``; works on stacks of shape ``(..., d, d)``."""
    A = np.asarray(A, dtype=float)
    rows, cols = np.tril_indices(A.shape[-1])
    return A[..., rows, cols]


def unpack(v: np.ndarray, dim: int | None = None) -> np.ndarray:
    """Inverse of :func:`pack`; works on stacks of shape ``(..., p)``."""
    v = np.asarray(v, dtype=float)
    if dim is None:
        dim = dim_from_packed(v.shape[-1])
    rows, cols = np.tril_indices(dim)
    out = np.zeros(v.shape[:-1] + (dim, dim))
    out[..., rows, cols] = v
    out[..., cols, rows] = v
    return out


def packed_trace_weights(G: np.ndarray) -> np.ndarray:
    """Vector ``c`` with ``c @ pack(H) == tr(G @ H)`` for every symmetric ``H``."""
    G = np.asarray(G, dtype=float)
    G = 0.5 * (G + G.T)
    rows, cols = np.tril_indices(G.shape[0])
    return np.where(rows == cols, 1.0, 2.0) * G[rows, cols]


def cholesky(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    The singularity test compares each pivot ``L_ii**2`` with the diagonal
    entry ``A_ii`` it was reduced from, which makes it invariant under
    rescaling of individual parameters (kinetics information matrices mix
    entries of order 1e2 and 1e-7).

    Raises
    ------
    SingularMatrixError
        If any pivot is at or below ``1e-13 * A_ii``; callers map this to an
        infinite criterion value.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValueError("expected a non-empty square matrix")
    diag = np.diag(A)
    if not np.all(np.isfinite(diag)) or np.any(diag <= 0):
        raise SingularMatrixError("non-positive diagonal entry")
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("matrix is not positive definite") from exc
    pivots = np.diag(L) ** 2
    ratio = pivots / diag
    if not np.all(np.isfinite(pivots)) or np.min(ratio) <= SINGULAR_RTOL:
        raise SingularMatrixError(f"relative pivot {np.min(ratio):.3e} <= {SINGULAR_RTOL:.0e}")
    return L


def is_nonsingular(A: np.ndarray) -> bool:
    try:
        cholesky(A)
    except SingularMatrixError:
        return False
    return True


def logdet(A: np.ndarray) -> float:
    """``log det A`` via Cholesky; ``-inf`` when ``A`` is singular."""
    try:
        L = cholesky(A)
    except SingularMatrixError:
        return -math.inf
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def cho_solve(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``L L^T X = B`` given the lower Cholesky factor."""
    Y = solve_triangular(L, B, lower=True)
    return solve_triangular(L.T, Y, lower=False)


def solve_spd(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``A X = B`` for positive definite ``A``."""
    return cho_solve(cholesky(A), np.asarray(B, dtype=float))


def inverse_spd(A: np.ndarray) -> np.ndarray:
    Ainv = solve_spd(A, np.eye(np.asarray(A).shape[0]))
    return 0.5 * (Ainv + Ainv.T)


def scaled_condition(A: np.ndarray) -> float:
    """2-norm condition number of ``D^-1/2 A D^-1/2`` with ``D = diag(A)``.

    This is the conditioning that limits the accuracy of ``tr(A^-1 B)``
    once diagonal scaling is factored out; ``inf`` for singular ``A``.
    """
    A = np.asarray(A, dtype=float)
    d = np.diag(A)
    if np.any(d <= 0):
        return np.inf
    h = 1.0 / np.sqrt(d)
    eig = np.linalg.eigvalsh(A * h[:, None] * h[None, :])
    return float(eig[-1] / eig[0]) if eig[0] > 0 else np.inf


def trace_product(X: np.ndarray, B: np.ndarray) -> float:
    """``tr(X @ B)`` without forming the product."""
    X = np.asarray(X, dtype=float)
    B = np.asarray(B, dtype=float)
    if X.ndim == 0:
        return float(X * B)
    return float(np.einsum("ij,ji->", X, B))


def is_psd(A: np.ndarray) -> np.ndarray | bool:
    """PSD test with a scale-aware tolerance; vectorised over leading axes."""
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    eig_min = np.linalg.eigvalsh(A)[..., 0]
    scale = 1.0 + np.max(np.abs(np.diagonal(A, axis1=-2, axis2=-1)), axis=-1)
    ok = eig_min >= -PSD_RTOL * scale
    return bool(ok) if np.ndim(ok) == 0 else ok
