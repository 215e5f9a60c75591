import numpy as np
import pytest

from linvmap.errors import ContractError
from linvmap.fmaps import extract_map, gt_adjoint, perm_matrix
from linvmap.softmap import (
    descriptor_loss,
    descriptor_loss_vjp,
    embedding_loss,
    embedding_loss_vjp,
    soft_correspondence,
    soft_correspondence_vjp,
    universal_loss,
)


def central_diff(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        hi = f()
        x[idx] = old - eps
        lo = f()
        x[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


class TestSoftCorrespondence:
    def test_single_target(self):
        s = soft_correspondence(np.random.default_rng(0).normal(size=(5, 3)), np.zeros((1, 3))).s
        assert np.array_equal(s, np.ones((5, 1)))

    def test_equidistant(self):
        s = soft_correspondence(np.zeros((1, 2)), np.array([[1.0, 0.0], [-1.0, 0.0]])).s
        assert np.allclose(s, 0.5, atol=1e-15)

    def test_rows_stochastic(self):
        rng = np.random.default_rng(1)
        s = soft_correspondence(rng.normal(size=(20, 4)), rng.normal(size=(30, 4)), 0.3).s
        assert np.allclose(s.sum(axis=1), 1.0, atol=1e-12) and np.all(s >= 0)

    def test_formula(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(6, 3))
        d = np.linalg.norm(a[:, None] - b[None], axis=-1)
        e = np.exp(-d / 0.7)
        assert np.allclose(soft_correspondence(a, b, 0.7).s, e / e.sum(axis=1, keepdims=True), atol=1e-14)

    def test_sharp_limit_matches_hard_map(self):
        rng = np.random.default_rng(3)
        phi_y = rng.normal(size=(12, 3)) * 5
        corr = rng.permutation(12)
        phi_x = phi_y[corr] + rng.normal(size=(12, 3)) * 0.01
        s = soft_correspondence(phi_x, phi_y, 0.01).s
        hard = perm_matrix(extract_map(phi_x, np.eye(3), phi_y), 12)
        assert np.abs(s - hard).max() < 1e-8

    def test_no_overflow_far_rows(self):
        s = soft_correspondence(np.zeros((1, 1)), np.array([[1e6], [1e6 + 1]]), 1e-3).s
        assert np.all(np.isfinite(s))

    def test_contract(self):
        with pytest.raises(ContractError):
            soft_correspondence(np.zeros((2, 2)), np.zeros((2, 2)), 0.0)
        with pytest.raises(ContractError):
            soft_correspondence(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_vjp(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=(5, 3)), rng.normal(size=(7, 3))
        w = rng.normal(size=(5, 7))
        soft = soft_correspondence(a, b, 0.8)
        ga, gb = soft_correspondence_vjp(a, b, soft, w)

        def f():
            return float(np.sum(w * soft_correspondence(a, b, 0.8).s))

        assert np.allclose(ga, central_diff(f, a), atol=1e-7)
        assert np.allclose(gb, central_diff(f, b), atol=1e-7)


class TestEmbeddingLoss:
    def test_hard_map_zero(self):
        rng = np.random.default_rng(5)
        p = rng.normal(size=(8, 3))
        corr = rng.permutation(8)
        assert embedding_loss(perm_matrix(corr, 8), corr, p) == 0.0

    def test_uniform_map(self):
        p = np.array([[0.0, 0, 0], [3.0, 0, 0], [0, 6.0, 0]])
        s = np.full((3, 3), 1 / 3)
        corr = np.array([2, 0, 1])
        centroid = p.mean(axis=0)
        expected = np.mean(np.sum((centroid - p[corr]) ** 2, axis=1))
        assert embedding_loss(s, corr, p) == pytest.approx(expected, rel=1e-14)

    def test_homogeneous_degree_two(self):
        rng = np.random.default_rng(6)
        s = soft_correspondence(rng.normal(size=(9, 2)), rng.normal(size=(9, 2))).s
        p = rng.normal(size=(9, 3))
        corr = rng.permutation(9)
        assert embedding_loss(s, corr, 2 * p) == pytest.approx(4 * embedding_loss(s, corr, p), rel=1e-12)

    def test_vjp(self):
        rng = np.random.default_rng(7)
        s = rng.random(size=(6, 6))
        p = rng.normal(size=(6, 3))
        corr = rng.permutation(6)
        assert np.allclose(embedding_loss_vjp(s, corr, p), central_diff(lambda: embedding_loss(s, corr, p), s), atol=1e-7)

    def test_row_mismatch(self):
        with pytest.raises(ContractError):
            embedding_loss(np.ones((3, 4)) / 4, np.arange(3), np.zeros((3, 3)))


class TestDescriptorLoss:
    def test_zero(self):
        a = np.random.default_rng(8).normal(size=(4, 4))
        assert descriptor_loss(a, a) == 0.0
        assert not descriptor_loss_vjp(a, a).any()

    def test_single_entry(self):
        a = np.random.default_rng(9).normal(size=(4, 4))
        b = a.copy()
        b[1, 2] += 0.37
        assert descriptor_loss(a, b) == pytest.approx(0.37, rel=1e-12)

    def test_elementwise(self):
        rng = np.random.default_rng(10)
        a, b = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
        manual = sum((a[i, j] - b[i, j]) ** 2 for i in range(5) for j in range(5)) ** 0.5
        assert descriptor_loss(a, b) == pytest.approx(manual, rel=1e-12)

    def test_vjp(self):
        rng = np.random.default_rng(11)
        a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        assert np.allclose(descriptor_loss_vjp(a, b), central_diff(lambda: descriptor_loss(a, b), b), atol=1e-8)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            descriptor_loss(np.eye(2), np.eye(3))


class TestUniversalLoss:
    def test_permuted_copy_near_zero(self):
        rng = np.random.default_rng(12)
        phi_y = rng.normal(size=(10, 3)) * 10
        corr = rng.permutation(10)
        p = rng.normal(size=(10, 3))
        assert universal_loss(phi_y[corr], phi_y, corr, p, temperature=0.01) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_not_below_aligned_pipeline(self, seed):
        rng = np.random.default_rng(seed)
        n = 15
        phi_y = rng.normal(size=(n, 3)) * 3
        corr = rng.permutation(n)
        m = rng.normal(size=(3, 3)) + 2 * np.eye(3)
        phi_x = phi_y[corr] @ np.linalg.inv(m).T
        p = rng.normal(size=(n, 3))
        a = gt_adjoint(phi_x, phi_y, corr)
        aligned = embedding_loss(soft_correspondence(phi_x @ a.T, phi_y, 0.1), corr, p)
        assert universal_loss(phi_x, phi_y, corr, p, 0.1) >= aligned

    def test_zero_width(self):
        with pytest.raises(ContractError):
            universal_loss(np.zeros((3, 0)), np.zeros((3, 0)), np.arange(3), np.zeros((3, 3)))
