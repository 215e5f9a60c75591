"""Dense real matrix kernels.

Everything works on 2-D ``float64`` numpy arrays.  The decompositions are
thin wrappers over LAPACK (via numpy) that enforce the contracts the rest of
the package relies on: descending singular values, relative truncation in the
pseudo-inverse, ascending symmetric spectra and a reverse-mode rule for the
least-squares solve.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ContractError, NumericalFailure, SingularEmbeddingError

DEFAULT_RCOND = 1e-10


class SvdFactors(NamedTuple):
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as a finite 2-D float64 array or raise ContractError."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} has non-finite entries")
    return a


def svd(m) -> SvdFactors:
    """Thin SVD ``m = u @ diag(s) @ vt`` with ``s`` sorted descending."""
    a = as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    return SvdFactors(u, s, vt)


def _retained(s: np.ndarray, rcond: float) -> np.ndarray:
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(s.shape, dtype=bool)
    return s > rcond * s[0]


def pinv(m, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Moore-Penrose pseudo-inverse.

    Singular values at or below ``rcond * s_max`` are treated as zero.
    """
    if rcond < 0:
        raise ContractError(f"rcond must be >= 0, got {rcond}")
    u, s, vt = svd(m)
    keep = _retained(s, rcond)
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vt.T * s_inv) @ u.T


def matrix_rank(m, rcond: float = DEFAULT_RCOND) -> int:
    return int(np.count_nonzero(_retained(svd(m).s, rcond)))


def lstsq(a, b, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Minimum-norm ``X`` minimizing ``||a X - b||_F``."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ContractError(f"lstsq row mismatch: a is {a.shape}, b is {b.shape}")
    if rcond < 0:
        raise ContractError(f"rcond must be >= 0, got {rcond}")
    if a.size == 0 or b.size == 0:
        return np.zeros((a.shape[1], b.shape[1]))
    try:
        x, *_ = np.linalg.lstsq(a, b, rcond=rcond)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"least-squares solve failed: {exc}") from exc
    return x


def sym_eig(m, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix, eigenvalues ascending.

    Returns ``(values, vectors)`` with eigenvectors stored as columns.
    """
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise ContractError(f"sym_eig needs a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > tol * scale:
        raise ContractError("sym_eig input is not symmetric")
    try:
        w, v = np.linalg.eigh(0.5 * (a + a.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigendecomposition did not converge: {exc}") from exc
    return w, v


def require_full_column_rank(a: np.ndarray, what: str = "matrix", rcond: float = DEFAULT_RCOND) -> float:
    """Raise SingularEmbeddingError unless ``a`` has full column rank.

    Returns the smallest singular value (useful as a diagnostic).
    """
    s = svd(a).s
    if a.shape[1] > a.shape[0] or s.size == 0 or not np.all(_retained(s, rcond)):
        smin = float(s[-1]) if s.size else 0.0
        raise SingularEmbeddingError(
            f"{what} of shape {a.shape} is not full column rank "
            f"(smallest singular value {smin:.3e})"
        )
    return float(s[-1])


def lstsq_vjp(a, b, x, grad_x) -> tuple[np.ndarray, np.ndarray]:
    """Vector-Jacobian product of ``x = lstsq(a, b)``.

    Uses the normal-equations form, valid for full-column-rank ``a``:
    with ``z = (a^T a)^{-1} grad_x`` and residual ``r = b - a x``,
    ``grad_a = r z^T - a z x^T`` and ``grad_b = a z``.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    x = as_matrix(x, "x")
    g = as_matrix(grad_x, "grad_x")
    m, n = a.shape
    if b.shape[0] != m or x.shape != (n, b.shape[1]) or g.shape != x.shape:
        raise ContractError(
            f"lstsq_vjp shape mismatch: a {a.shape}, b {b.shape}, x {x.shape}, grad_x {g.shape}"
        )
    require_full_column_rank(a, "least-squares design matrix")
    # (a^T a)^{-1} g via the thin QR factor of a: a^T a = R^T R
    r_fac = np.linalg.qr(a, mode="r")
    z = np.linalg.solve(r_fac, np.linalg.solve(r_fac.T, g))
    resid = b - a @ x
    grad_a = resid @ z.T - a @ (z @ x.T)
    grad_b = a @ z
    return grad_a, grad_b


def pairwise_dist(a: np.ndarray, b: np.ndarray, squared: bool = False, chunk: int = 256) -> np.ndarray:
    """Euclidean distances between the rows of ``a`` and ``b``.

    Differences are formed explicitly (no Gram-matrix expansion) so that
    identical rows give exactly zero and equal distances compare equal.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.empty((a.shape[0], b.shape[0]))
    for start in range(0, a.shape[0], chunk):
        diff = a[start:start + chunk, None, :] - b[None, :, :]
        out[start:start + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out if squared else np.sqrt(out)
