"""Soft correspondences and the training losses, with their reverse-mode rules."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .fmaps import check_correspondence
from .linalg import as_matrix, pairwise_dist


@dataclass(frozen=True)
class SoftMap:
    s: np.ndarray
    temperature: float
    dist: np.ndarray  # row-to-row embedding distances the softmax was built from


def soft_correspondence(aligned_x, phi_y, temperature: float = 1.0) -> SoftMap:
    """Row-stochastic soft map ``S[i, j] ~ exp(-||aligned_x[i] - phi_y[j]|| / t)``.

    Rows index source points, columns target points.  ``t = 1`` is the plain
    softmax over negative distances.
    """
    aligned_x = as_matrix(aligned_x, "aligned embedding")
    phi_y = as_matrix(phi_y, "phi_y")
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    if aligned_x.shape[1] != phi_y.shape[1] or aligned_x.shape[1] < 1:
        raise ContractError(f"embedding widths differ: {aligned_x.shape[1]} vs {phi_y.shape[1]}")
    dist = pairwise_dist(aligned_x, phi_y)
    logits = -dist / temperature
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    s = e / e.sum(axis=1, keepdims=True)
    return SoftMap(s, float(temperature), dist)


def soft_correspondence_vjp(aligned_x, phi_y, soft: SoftMap, grad_s):
    """Gradients of a scalar through ``soft_correspondence``.

    Returns ``(grad_aligned_x, grad_phi_y)``.  The distance is not
    differentiable where two rows coincide; the gradient there is taken as 0.
    """
    s = soft.s
    grad_logits = s * (grad_s - np.sum(grad_s * s, axis=1, keepdims=True))
    grad_dist = -grad_logits / soft.temperature
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(soft.dist > 0, grad_dist / soft.dist, 0.0)
    grad_x = w.sum(axis=1)[:, None] * aligned_x - w @ phi_y
    grad_y = w.sum(axis=0)[:, None] * phi_y - w.T @ aligned_x
    return grad_x, grad_y


def embedding_loss(soft, corr, points) -> float:
    """Mean squared distance between soft-mapped and true positions.

    ``(1 / n_x) * sum_i ||(S @ P)[i] - P[corr[i]]||^2``; the rows of ``points``
    are indexed like the columns of ``S``.
    """
    s = soft.s if isinstance(soft, SoftMap) else as_matrix(soft, "soft map")
    p = as_matrix(points, "points")
    if p.shape[0] != s.shape[1]:
        raise ContractError(f"points have {p.shape[0]} rows, soft map has {s.shape[1]} columns")
    corr = check_correspondence(corr, s.shape[0], s.shape[1])
    resid = s @ p - p[corr]
    return float(np.sum(resid * resid) / s.shape[0])


def embedding_loss_vjp(soft, corr, points, grad_loss: float = 1.0) -> np.ndarray:
    """Gradient of :func:`embedding_loss` with respect to ``S``."""
    s = soft.s if isinstance(soft, SoftMap) else np.asarray(soft)
    p = np.asarray(points, dtype=np.float64)
    resid = s @ p - p[np.asarray(corr)]
    return (2.0 * grad_loss / s.shape[0]) * resid @ p.T


def descriptor_loss(a_gt, a_hat) -> float:
    """Frobenius distance between the true and estimated adjoints."""
    a_gt = as_matrix(a_gt, "a_gt")
    a_hat = as_matrix(a_hat, "a_hat")
    if a_gt.shape != a_hat.shape:
        raise ContractError(f"adjoint shapes differ: {a_gt.shape} vs {a_hat.shape}")
    return float(np.linalg.norm(a_gt - a_hat))


def descriptor_loss_vjp(a_gt, a_hat, grad_loss: float = 1.0) -> np.ndarray:
    """Gradient of :func:`descriptor_loss` with respect to ``a_hat`` (0 at equality)."""
    diff = np.asarray(a_hat) - np.asarray(a_gt)
    norm = np.linalg.norm(diff)
    if norm == 0.0:
        return np.zeros_like(diff)
    return grad_loss * diff / norm


def universal_loss(phi_x, phi_y, corr, points, temperature: float = 1.0) -> float:
    """Embedding loss with the aligning transform fixed to the identity."""
    return embedding_loss(soft_correspondence(phi_x, phi_y, temperature), corr, points)
