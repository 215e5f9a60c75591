"""Functional maps, their adjoints and point-to-point map extraction.

Conventions: an embedding ``phi`` is an ``n x k`` array whose rows embed the
points of a shape.  A correspondence is an integer array ``corr`` of length
``n_x`` with ``corr[i]`` the index in ``y`` matched to point ``i`` of ``x``;
it stands for the 0/1 matrix ``Pi`` with ``Pi[i, corr[i]] = 1`` so that
``Pi @ m == m[corr]``.

The adjoint ``A`` (map ``x -> y``) aligns embeddings as
``phi_x @ A.T ~= Pi @ phi_y``; it is the transpose of the functional map
``C_yx = pinv(phi_x) @ Pi @ phi_y``.
"""
from __future__ import annotations

import warnings

import numpy as np

from .errors import ContractError, DisconnectedGraphWarning, RankWarning
from .geometry import PointCloud, knn
from .linalg import (
    DEFAULT_RCOND,
    as_matrix,
    lstsq,
    matrix_rank,
    pairwise_dist,
    pinv,
    require_full_column_rank,
    svd,
    sym_eig,
)


def check_correspondence(corr, n_x: int, n_y: int) -> np.ndarray:
    c = np.asarray(corr)
    if c.ndim != 1 or c.shape[0] != n_x:
        raise ContractError(f"correspondence must have length {n_x}, got shape {c.shape}")
    if not np.issubdtype(c.dtype, np.integer):
        raise ContractError("correspondence indices must be integers")
    if c.size and (c.min() < 0 or c.max() >= n_y):
        raise ContractError(f"correspondence indices must lie in [0, {n_y})")
    return c.astype(np.int64, copy=False)


def perm_matrix(corr, n_y: int) -> np.ndarray:
    """Dense 0/1 matrix with exactly one 1 per row."""
    c = np.asarray(corr, dtype=np.int64)
    pi = np.zeros((c.shape[0], n_y))
    pi[np.arange(c.shape[0]), c] = 1.0
    return pi


def smallest_singular_value(phi) -> float:
    s = svd(phi).s
    return float(s[-1]) if s.size else 0.0


def _pair(phi_x, phi_y):
    phi_x = as_matrix(phi_x, "phi_x")
    phi_y = as_matrix(phi_y, "phi_y")
    if phi_x.shape[1] != phi_y.shape[1]:
        raise ContractError(f"embedding widths differ: {phi_x.shape[1]} vs {phi_y.shape[1]}")
    if phi_x.shape[1] < 1:
        raise ContractError("embeddings need width k >= 1")
    return phi_x, phi_y


def gt_adjoint(phi_x, phi_y, corr, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Closed-form adjoint ``(pinv(phi_x) @ Pi @ phi_y).T`` from a known map.

    Raises SingularEmbeddingError when ``phi_x`` is rank deficient.
    """
    phi_x, phi_y = _pair(phi_x, phi_y)
    corr = check_correspondence(corr, phi_x.shape[0], phi_y.shape[0])
    require_full_column_rank(phi_x, "source embedding", rcond)
    return lstsq(phi_x, phi_y[corr], rcond).T


def fmap_from_pi(phi_x, phi_y, corr, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Functional map ``C_yx = pinv(phi_x) @ Pi @ phi_y`` induced by ``corr``.

    Computed through the explicit pseudo-inverse and a dense ``Pi`` so that it
    is an independent route to the transpose of :func:`gt_adjoint`.
    """
    phi_x, phi_y = _pair(phi_x, phi_y)
    corr = check_correspondence(corr, phi_x.shape[0], phi_y.shape[0])
    require_full_column_rank(phi_x, "source embedding", rcond)
    return pinv(phi_x, rcond) @ (perm_matrix(corr, phi_y.shape[0]) @ phi_y)


def probe_coefficients(phi, g, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Coefficients ``pinv(phi) @ g`` of probe functions in an embedding."""
    phi = as_matrix(phi, "phi")
    g = as_matrix(g, "probes")
    if g.shape[0] != phi.shape[0]:
        raise ContractError(f"probe rows {g.shape[0]} != embedding rows {phi.shape[0]}")
    return pinv(phi, rcond) @ g


def estimate_adjoint(phi_x, phi_y, g_x, g_y, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Adjoint estimated from corresponding probe functions.

    Solves ``(pinv(phi_y) g_y).T @ A = (pinv(phi_x) g_x).T`` in the
    least-squares sense, i.e. ``A = pinv((pinv(phi_y) g_y).T) @ (pinv(phi_x) g_x).T``.
    A rank-deficient coefficient system emits :class:`RankWarning` and the
    minimum-norm solution is returned.
    """
    phi_x, phi_y = _pair(phi_x, phi_y)
    k = phi_x.shape[1]
    g_x = as_matrix(g_x, "g_x")
    g_y = as_matrix(g_y, "g_y")
    if g_x.shape[1] != g_y.shape[1] or g_x.shape[1] < 1:
        raise ContractError(f"probe sets must have equal width p >= 1, got {g_x.shape[1]} and {g_y.shape[1]}")
    p = g_x.shape[1]
    if p < k:
        warnings.warn(f"only {p} probes for a {k}-dimensional embedding", RankWarning, stacklevel=2)
    coef_x = probe_coefficients(phi_x, g_x, rcond)
    coef_y = probe_coefficients(phi_y, g_y, rcond)
    rank = matrix_rank(coef_y, rcond)
    if rank < k:
        warnings.warn(
            f"probe coefficient system has rank {rank} < k={k}; using the minimum-norm adjoint",
            RankWarning,
            stacklevel=2,
        )
    return pinv(coef_y.T, rcond) @ coef_x.T


def fmap_estimate(
    phi_x,
    phi_y,
    g_x,
    g_y,
    reg_weight: float = 0.0,
    eigvals_x=None,
    eigvals_y=None,
    rcond: float = DEFAULT_RCOND,
) -> np.ndarray:
    """Functional map ``C_xy`` from probes with optional commutativity term.

    Minimizes ``||C F_x - F_y||^2 + w ||C diag(lx) - diag(ly) C||^2`` where
    ``F = pinv(phi) @ g``.  With diagonal operators the problem decouples by
    rows: row ``i`` penalizes ``C[i, j]`` by ``w * (lx[j] - ly[i])**2``, so each
    row is an independent (minimum-norm) least-squares solve.
    """
    phi_x, phi_y = _pair(phi_x, phi_y)
    k = phi_x.shape[1]
    if reg_weight < 0:
        raise ContractError(f"reg_weight must be >= 0, got {reg_weight}")
    f_x = probe_coefficients(phi_x, g_x, rcond)
    f_y = probe_coefficients(phi_y, g_y, rcond)
    if f_x.shape[1] != f_y.shape[1]:
        raise ContractError("probe sets must have equal width")
    if reg_weight == 0:
        return lstsq(f_x.T, f_y.T, rcond).T
    lx = np.zeros(k) if eigvals_x is None else np.asarray(eigvals_x, dtype=np.float64)
    ly = np.zeros(k) if eigvals_y is None else np.asarray(eigvals_y, dtype=np.float64)
    if lx.shape != (k,) or ly.shape != (k,):
        raise ContractError(f"eigenvalue vectors must have length k={k}")
    c = np.empty((k, k))
    rhs = np.zeros(f_x.shape[1] + k)
    for i in range(k):
        penalty = np.sqrt(reg_weight) * np.abs(lx - ly[i])
        design = np.vstack([f_x.T, np.diag(penalty)])
        rhs[: f_x.shape[1]] = f_y[i]
        c[i] = lstsq(design, rhs[:, None], rcond)[:, 0]
    return c


def extract_map(phi_x, a, phi_y, chunk: int = 256) -> np.ndarray:
    """Nearest row of ``phi_y`` for every row of ``phi_x @ a.T``.

    Ties go to the lowest index in ``phi_y``.
    """
    phi_x, phi_y = _pair(phi_x, phi_y)
    a = as_matrix(a, "adjoint")
    k = phi_x.shape[1]
    if a.shape != (k, k):
        raise ContractError(f"adjoint must be {k} x {k}, got {a.shape}")
    aligned = phi_x @ a.T
    out = np.empty(aligned.shape[0], dtype=np.int64)
    for start in range(0, aligned.shape[0], chunk):
        d2 = pairwise_dist(aligned[start:start + chunk], phi_y, squared=True)
        out[start:start + chunk] = np.argmin(d2, axis=1)
    return out


def graph_laplacian(cloud: PointCloud, k_neighbors: int) -> np.ndarray:
    """Unnormalized Laplacian ``D - W`` of the symmetrized k-NN graph.

    ``k_neighbors`` counts the point itself, matching :func:`knn` on the cloud
    against itself.  Edge weights are ``exp(-d^2 / sigma^2)`` with ``sigma`` the
    mean edge length.
    """
    if k_neighbors < 2:
        raise ContractError(f"k_neighbors must be >= 2, got {k_neighbors}")
    pts = cloud.points
    n = pts.shape[0]
    nbrs = knn(cloud, cloud, min(k_neighbors, n))
    adj = np.zeros((n, n), dtype=bool)
    rows = np.repeat(np.arange(n), nbrs.shape[1])
    adj[rows, nbrs.ravel()] = True
    np.fill_diagonal(adj, False)
    adj |= adj.T
    i, j = np.nonzero(np.triu(adj))
    lengths = np.linalg.norm(pts[i] - pts[j], axis=1)
    sigma = float(lengths.mean()) if lengths.size else 1.0
    if sigma == 0.0:
        sigma = 1.0
    w = np.zeros((n, n))
    vals = np.exp(-(lengths / sigma) ** 2)
    w[i, j] = vals
    w[j, i] = vals
    return np.diag(w.sum(axis=1)) - w


def graph_laplacian_basis(cloud: PointCloud, k_neighbors: int = 8, k_basis: int = 20):
    """Eigenvectors of the ``k_basis`` smallest graph-Laplacian eigenvalues.

    Returns ``(phi, eigenvalues)``; eigenvalues ascending, eigenvectors as unit
    columns with sign fixed so their largest-magnitude entry is positive.
    """
    n = cloud.n
    if not 1 <= k_basis <= n:
        raise ContractError(f"k_basis must be in [1, {n}], got {k_basis}")
    lap = graph_laplacian(cloud, k_neighbors)
    vals, vecs = sym_eig(lap)
    zero_tol = 1e-8 * max(1.0, float(vals[-1]))
    n_zero = int(np.count_nonzero(vals < zero_tol))
    if n_zero > 1:
        warnings.warn(
            f"neighborhood graph of {cloud.id!r} has {n_zero} connected components",
            DisconnectedGraphWarning,
            stacklevel=2,
        )
    vals = vals[:k_basis].copy()
    phi = vecs[:, :k_basis].copy()
    pivot = np.argmax(np.abs(phi), axis=0)
    signs = np.sign(phi[pivot, np.arange(k_basis)])
    signs[signs == 0] = 1.0
    return phi * signs, vals
