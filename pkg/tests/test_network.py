import numpy as np
import pytest

from gradcheck import max_rel_err, numeric_grads
from linvmap.errors import ContractError
from linvmap.geometry import DeformationRanges, make_template, normalize, sample_deformation, synth_pair
from linvmap.network import (
    AdamState,
    PointNetLite,
    adam_step,
    aligning_transform,
    backward_stage1,
    backward_stage2,
    descriptor_objective,
    load_checkpoint,
    save_checkpoint,
    stage1_loss,
    stage2_loss,
)


def tiny_pair(seed, n=16):
    rng = np.random.default_rng(seed)
    x, y, _ = synth_pair(make_template("stick_figure", n, seed), sample_deformation(DeformationRanges(), seed))
    perm = rng.permutation(n)
    return x, y.with_points(y.points[perm]), np.argsort(perm)


class TestForward:
    def test_shapes_and_param_count(self):
        net = PointNetLite(5, (8, 16), (12,), seed=0)
        assert net.forward(np.zeros((7, 3))).shape == (7, 5)
        expected = (3 * 8 + 8) + (8 * 16 + 16) + (32 * 12 + 12) + (12 * 5 + 5)
        assert net.n_params == expected

    def test_permutation_equivariant(self):
        net = PointNetLite(4, seed=1)
        pts = normalize(make_template("bumpy_sphere", 64)).points
        perm = np.random.default_rng(0).permutation(64)
        assert np.array_equal(net.forward(pts[perm]), net.forward(pts)[perm])

    def test_zero_weights(self):
        net = PointNetLite.zeros_like(PointNetLite(4, seed=2))
        assert not net.forward(np.random.default_rng(1).normal(size=(10, 3))).any()

    def test_duplicated_point(self):
        out = PointNetLite(4, seed=3).forward(np.tile([0.3, -0.2, 0.5], (9, 1)))
        assert np.all(out == out[0])

    def test_deterministic_init(self):
        a, b = PointNetLite(3, seed=4), PointNetLite(3, seed=4)
        assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))

    def test_bad_input_width(self):
        with pytest.raises(ContractError):
            PointNetLite(3).forward(np.zeros((5, 2)))


class TestStage1:
    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_stop_transform(self, seed):
        x, y, c = tiny_pair(seed)
        net = PointNetLite(3, (6,), (6,), seed=seed)
        assert net.n_params <= 500
        loss, grads = backward_stage1(net, x, y, c)
        t0 = aligning_transform(net.forward(x), net.forward(y), c)
        assert loss == pytest.approx(stage1_loss(net, x, y, c), rel=1e-12)
        assert max_rel_err(grads, numeric_grads(net, lambda: stage1_loss(net, x, y, c, transform_t=t0))) < 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_through_transform(self, seed):
        x, y, c = tiny_pair(seed)
        net = PointNetLite(3, (6,), (6,), seed=seed)
        _, grads = backward_stage1(net, x, y, c, through_adjoint=True)
        assert max_rel_err(grads, numeric_grads(net, lambda: stage1_loss(net, x, y, c))) < 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_universal(self, seed):
        x, y, c = tiny_pair(seed)
        net = PointNetLite(3, (6,), (6,), seed=seed)
        _, grads = backward_stage1(net, x, y, c, universal=True)
        assert max_rel_err(grads, numeric_grads(net, lambda: stage1_loss(net, x, y, c, universal=True))) < 1e-4

    def test_loss_nonnegative(self):
        for seed in range(20):
            x, y, c = tiny_pair(seed)
            assert backward_stage1(PointNetLite(3, (6,), (6,), seed=seed), x, y, c)[0] >= 0

    def test_gradient_vanishes_at_sharp_optimum(self):
        # identical clouds, near-hard soft map: the loss and its gradient go to zero
        x, _, _ = tiny_pair(0)
        net = PointNetLite(3, (6,), (6,), seed=0)
        net.params[-2] = net.params[-2] * 100.0
        net.params[-1] = net.params[-1] * 100.0
        loss, grads = backward_stage1(net, x, x, np.arange(x.n), temperature=0.01)
        assert loss < 1e-12
        assert np.sqrt(sum(float(np.sum(g * g)) for g in grads)) < 1e-6


class TestStage2:
    @pytest.mark.parametrize("seed", range(10))
    def test_gradient(self, seed):
        x, y, c = tiny_pair(seed)
        basis = PointNetLite(3, (6,), (6,), seed=seed)
        probe = PointNetLite(5, (6,), (6,), seed=seed + 100)
        assert probe.n_params <= 500
        loss, grads = backward_stage2(probe, basis, x, y, c)
        assert loss == pytest.approx(stage2_loss(probe, basis, x, y, c), rel=1e-10)
        assert max_rel_err(grads, numeric_grads(probe, lambda: stage2_loss(probe, basis, x, y, c))) < 1e-4

    def test_probes_equal_basis(self):
        x, y, c = tiny_pair(1)
        basis = PointNetLite(3, (6,), (6,), seed=1)
        phi_y = basis.forward(y)
        # consistent embeddings (phi_x == Pi phi_y), so the probes correspond too
        phi_x = phi_y[c]
        loss, gx, gy = descriptor_objective(phi_x, phi_y, phi_x, phi_y, np.eye(3))
        assert loss < 1e-10

    def test_frozen_basis_untouched(self):
        x, y, c = tiny_pair(2)
        basis = PointNetLite(3, (6,), (6,), seed=2)
        before = [p.copy() for p in basis.params]
        probe = PointNetLite(5, (6,), (6,), seed=3)
        _, grads = backward_stage2(probe, basis, x, y, c)
        probe.params, _ = adam_step(probe.params, grads, AdamState())
        assert all(np.array_equal(p, q) for p, q in zip(before, basis.params))


class TestAdam:
    def test_zero_gradient(self):
        params = [np.array([1.0, -2.0])]
        out, state = adam_step(params, [np.zeros(2)], AdamState())
        assert np.array_equal(out[0], params[0]) and state.step == 1

    def test_first_step(self):
        g = np.array([0.5, -3.0, 1e-9])
        out, _ = adam_step([np.zeros(3)], [g], AdamState(lr=0.1))
        # bias-corrected moments equal g and g^2 after one step
        assert np.allclose(out[0], -0.1 * g / (np.abs(g) + 1e-8), rtol=1e-12, atol=0)

    def test_constant_gradient_sign_update(self):
        p = [np.array([0.0, 0.0])]
        state = AdamState(lr=0.01)
        g = [np.array([4.0, -0.25])]
        for _ in range(200):
            prev = p[0].copy()
            p, state = adam_step(p, g, state)
        assert np.allclose(p[0] - prev, [-0.01, 0.01], rtol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            adam_step([np.zeros(2)], [np.zeros(3)], AdamState())


class TestCheckpoint:
    @pytest.mark.parametrize("suffix", [".json", ".npz"])
    def test_round_trip(self, tmp_path, suffix):
        net = PointNetLite(4, (5,), (7,), seed=9)
        path = tmp_path / f"net{suffix}"
        save_checkpoint(path, net, "basis", {"k": 4})
        back, meta = load_checkpoint(path)
        assert meta["role"] == "basis" and meta["config"] == {"k": 4}
        assert all(np.array_equal(p, q) for p, q in zip(net.params, back.params))
        assert back.arch() == net.arch()

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nope.json"):
            load_checkpoint(tmp_path / "nope.json")

    def test_wrong_format(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"format": "other", "version": 1, "params": []}')
        with pytest.raises(ContractError):
            load_checkpoint(p)
