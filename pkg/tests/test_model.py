"""Embedding model, Adam, schedule and checkpoint tests."""

import numpy as np
import pytest

from metasim.autodiff import DimensionError, GradTape, Tensor, euclidean_distance, row
from metasim.model import (
    AdamState,
    EmbeddingModel,
    LrSchedule,
    adam_step,
    load_checkpoint,
    lr_at,
    save_checkpoint,
)


class TestForward:
    def test_zero_weight_model_gives_zero_matrix(self):
        m = EmbeddingModel([3, 4, 2], normalize_output=False, seed=0)
        m.weights = [Tensor(np.zeros_like(w.data)) for w in m.weights]
        m.biases = [Tensor(np.zeros_like(b.data)) for b in m.biases]
        out = m.forward(Tensor(np.ones((5, 3))))
        np.testing.assert_array_equal(out.data, np.zeros((5, 2)))

    def test_identity_single_layer(self):
        m = EmbeddingModel([3, 3], normalize_output=False, seed=0)
        m.weights = [Tensor(np.eye(3))]
        m.biases = [Tensor(np.zeros(3))]
        x = np.arange(12, dtype=float).reshape(4, 3)
        np.testing.assert_array_equal(m.forward(Tensor(x)).data, x)

    def test_two_layer_matches_hand_rolled_numpy(self):
        m = EmbeddingModel([4, 6, 3], normalize_output=True, seed=9)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((7, 4))
        w1, w2 = m.weights[0].data, m.weights[1].data
        b1, b2 = m.biases[0].data, m.biases[1].data
        h = np.maximum(x @ w1 + b1, 0.0) @ w2 + b2
        want = h / np.maximum(np.linalg.norm(h, axis=1, keepdims=True), 1e-12)
        np.testing.assert_allclose(m.forward(Tensor(x)).data, want, atol=1e-12)

    def test_width_mismatch(self):
        m = EmbeddingModel([4, 2], seed=0)
        with pytest.raises(DimensionError):
            m.forward(Tensor(np.ones((3, 5))))

    def test_batch_permutation_equivariance(self):
        m = EmbeddingModel.default(5, seed=3)
        rng = np.random.default_rng(2)
        x = rng.standard_normal((8, 5))
        perm = rng.permutation(8)
        out = m.forward(Tensor(x)).data
        out_perm = m.forward(Tensor(x[perm])).data
        np.testing.assert_array_equal(out[perm], out_perm)

    def test_normalized_outputs_on_unit_sphere(self):
        m = EmbeddingModel.default(6, normalize_output=True, seed=4)
        rng = np.random.default_rng(5)
        out = m.forward(Tensor(rng.standard_normal((20, 6)))).data
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-9)

    def test_deterministic_init_per_seed(self):
        a = EmbeddingModel.default(4, seed=11)
        b = EmbeddingModel.default(4, seed=11)
        for wa, wb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(wa.data, wb.data)


class TestAdam:
    def test_zero_gradients_leave_parameters_unchanged(self):
        m = EmbeddingModel([2, 3], seed=0)
        state = AdamState.for_model(m)
        before = [p.data.copy() for p in m.parameters()]
        adam_step(m, [np.zeros_like(p.data) for p in m.parameters()], state, 0.1)
        assert state.step == 1
        for b, p in zip(before, m.parameters()):
            np.testing.assert_array_equal(b, p.data)

    def test_single_scalar_first_step_moves_by_lr(self):
        # bias-corrected first step: delta = lr * g/|g| / (1 + eps) ~ lr
        m = EmbeddingModel([1, 1], normalize_output=False, seed=0)
        m.weights = [Tensor([[1.0]])]
        m.biases = [Tensor([0.0])]
        state = AdamState.for_model(m)
        adam_step(m, [np.array([[1.0]]), np.array([0.0])], state, 0.1)
        moved = 1.0 - m.weights[0].data[0, 0]
        assert moved == pytest.approx(0.1, abs=1e-6)
        assert moved > 0

    def test_identical_models_stay_identical(self):
        a = EmbeddingModel([3, 4, 2], seed=7)
        b = EmbeddingModel([3, 4, 2], seed=7)
        sa, sb = AdamState.for_model(a), AdamState.for_model(b)
        rng = np.random.default_rng(0)
        for _ in range(5):
            grads = [rng.standard_normal(p.data.shape) for p in a.parameters()]
            adam_step(a, grads, sa, 0.01)
            adam_step(b, grads, sb, 0.01)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_shape_mismatch_rejected(self):
        m = EmbeddingModel([2, 2], seed=0)
        state = AdamState.for_model(m)
        bad = [np.zeros((2, 3)), np.zeros(2)]
        with pytest.raises(DimensionError):
            adam_step(m, bad, state, 0.1)

    def test_moment_shapes_mirror_parameters(self):
        m = EmbeddingModel([4, 8, 3], seed=0)
        state = AdamState.for_model(m)
        for acc, p in zip(state.m, m.parameters()):
            assert acc.shape == p.data.shape


class TestLrSchedule:
    def test_epoch_zero(self):
        s = LrSchedule(2e-3, 0.1, 150)
        assert lr_at(s, 0) == 2e-3

    def test_one_decay(self):
        s = LrSchedule(2e-3, 0.1, 150)
        assert lr_at(s, 150) == pytest.approx(2e-4)

    def test_floor_boundary(self):
        s = LrSchedule(2e-3, 0.1, 150)
        assert lr_at(s, 149) == 2e-3

    def test_always_positive(self):
        s = LrSchedule(1e-2, 0.1, 3)
        for epoch in range(50):
            assert lr_at(s, epoch) > 0

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            LrSchedule(0.0)
        with pytest.raises(ValueError):
            LrSchedule(1e-3, decay_every=0)
        with pytest.raises(ValueError):
            LrSchedule(1e-3).lr_at(-1)


class TestTrainingStepGeometry:
    def test_positive_pair_distance_decreases(self):
        # one Adam step on a positive-pair pull with small lr
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            m = EmbeddingModel.default(6, normalize_output=False, seed=seed)
            state = AdamState.for_model(m)
            x = Tensor(rng.standard_normal((2, 6)))
            tape = GradTape()
            for p in m.parameters():
                tape.watch(p)
            f = m.forward(x)
            d0 = euclidean_distance(row(f, 0), row(f, 1))
            tape.backward(d0)
            grads = [tape.grad(p) for p in m.parameters()]
            tape.release()
            adam_step(m, grads, state, 1e-4)
            f2 = m.forward(x)
            d1 = float(euclidean_distance(row(f2, 0), row(f2, 1)))
            assert d1 < float(d0), f"seed {seed}"


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        m = EmbeddingModel([5, 8, 4], normalize_output=True, seed=21)
        state = AdamState.for_model(m)
        rng = np.random.default_rng(3)
        adam_step(m, [rng.standard_normal(p.data.shape) for p in m.parameters()],
                  state, 0.01)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, m, state, epoch=17)
        m2, state2, epoch = load_checkpoint(path)
        assert epoch == 17
        assert m2.layer_sizes == m.layer_sizes
        assert m2.normalize_output == m.normalize_output
        assert m2.seed == m.seed
        for a, b in zip(m.parameters(), m2.parameters()):
            np.testing.assert_array_equal(a.data, b.data)
        assert state2.step == state.step
        for a, b in zip(state.m + state.v, state2.m + state2.v):
            np.testing.assert_array_equal(a, b)
        # saving the reloaded model reproduces the file byte for byte
        path2 = tmp_path / "ckpt2.json"
        save_checkpoint(path2, m2, state2, epoch=17)
        assert path.read_bytes() == path2.read_bytes()

    def test_wrong_format_rejected(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"format": "other"}\n')
        with pytest.raises(ValueError, match="metasim-checkpoint"):
            load_checkpoint(p)
