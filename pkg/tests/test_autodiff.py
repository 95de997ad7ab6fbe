"""Gradient engine checks: oracles first, then tape-vs-finite-difference."""

import numpy as np
import pytest

from metasim.autodiff import (
    DimensionError,
    GradTape,
    Tensor,
    add,
    backward,
    cosine_similarity,
    euclidean_distance,
    finite_diff_check,
    hinge,
    l2_normalize,
    matmul,
    mean,
    mul,
    pair_diff_norms,
    pairwise_distances,
    relu,
    row,
    scale,
    stack,
    sub,
    total,
    transpose,
)


def triple_loop_matmul(a, b):
    """Independent O(mkn) oracle for the matrix product."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = matmul(Tensor(np.eye(2)), a)
        np.testing.assert_array_equal(out.data, a.data)

    def test_projection(self):
        p = Tensor([[1.0, 0.0], [0.0, 0.0]])
        v = Tensor([[5.0], [7.0]])
        np.testing.assert_array_equal(matmul(p, v).data, [[5.0], [0.0]])

    def test_random_3x4_by_4x2_vs_triple_loop(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        got = matmul(Tensor(a), Tensor(b)).data
        np.testing.assert_allclose(got, triple_loop_matmul(a, b), atol=1e-12)

    def test_sizes_up_to_16(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            m, k, n = rng.integers(1, 17, size=3)
            a = rng.standard_normal((m, k))
            b = rng.standard_normal((k, n))
            got = matmul(Tensor(a), Tensor(b)).data
            np.testing.assert_allclose(got, triple_loop_matmul(a, b), atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestRelu:
    def test_basic(self):
        np.testing.assert_array_equal(
            relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_all_negative(self):
        np.testing.assert_array_equal(
            relu(Tensor([-5.0, -0.1])).data, [0.0, 0.0])

    def test_gradient_of_sum(self):
        tape = GradTape()
        x = tape.watch(Tensor([-1.0, 2.0]))
        tape.backward(total(relu(x)))
        np.testing.assert_array_equal(tape.grad(x), [0.0, 1.0])


class TestL2Normalize:
    def test_3_4_5(self):
        np.testing.assert_allclose(
            l2_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8], atol=1e-15)

    def test_unit_vector_unchanged(self):
        v = np.array([1.0, 0.0, 0.0])
        np.testing.assert_allclose(l2_normalize(Tensor(v)).data, v, atol=1e-15)

    def test_zero_vector_guard(self):
        out = l2_normalize(Tensor([0.0, 0.0]), eps=1e-12)
        np.testing.assert_array_equal(out.data, [0.0, 0.0])

    def test_norm_property(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = rng.standard_normal(rng.integers(1, 9)) * 10.0 ** rng.integers(-3, 3)
            n = np.linalg.norm(l2_normalize(Tensor(x)).data)
            assert n == 0.0 or abs(n - 1.0) < 1e-9

    def test_rowwise_matches_vector_form(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((5, 3))
        got = l2_normalize(Tensor(x)).data
        for i in range(5):
            np.testing.assert_allclose(
                got[i], l2_normalize(Tensor(x[i])).data, atol=1e-15)

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            l2_normalize(Tensor([1.0]), eps=0.0)


class TestEuclideanDistance:
    def test_coincident(self):
        v = Tensor([1.0, 2.0])
        assert float(euclidean_distance(v, Tensor([1.0, 2.0]))) == 0.0

    def test_3_4_5(self):
        assert float(euclidean_distance(Tensor([0.0, 0.0]), Tensor([3.0, 4.0]))) == 5.0

    def test_random_vs_direct_sum(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a = rng.standard_normal(6)
            b = rng.standard_normal(6)
            want = sum((ai - bi) ** 2 for ai, bi in zip(a, b)) ** 0.5
            got = float(euclidean_distance(Tensor(a), Tensor(b)))
            assert abs(got - want) < 1e-12

    def test_symmetry_and_triangle_inequality(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            a, b, c = (Tensor(rng.standard_normal(4)) for _ in range(3))
            dab = float(euclidean_distance(a, b))
            assert dab == float(euclidean_distance(b, a))
            assert dab <= float(euclidean_distance(a, c)) + float(
                euclidean_distance(c, b)) + 1e-9

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            euclidean_distance(Tensor([1.0]), Tensor([1.0, 2.0]))


class TestCosineSimilarity:
    def test_self(self):
        v = Tensor([1.0, 2.0, 3.0])
        assert float(cosine_similarity(v, v)) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert float(cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 2.0]))) == 0.0

    def test_antiparallel(self):
        v = np.array([0.3, -0.7, 2.0])
        assert float(cosine_similarity(Tensor(v), Tensor(-v))) == pytest.approx(
            -1.0, abs=1e-12)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            a = Tensor(rng.standard_normal(5))
            b = Tensor(rng.standard_normal(5))
            cab = float(cosine_similarity(a, b))
            assert cab == float(cosine_similarity(b, a))
            assert -1.0 - 1e-12 <= cab <= 1.0 + 1e-12

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError, match="zero-norm"):
            cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))


class TestBackward:
    def test_x_squared(self):
        tape = GradTape()
        x = tape.watch(Tensor(3.0))
        backward(tape, mul(x, x))
        assert float(tape.grad(x)) == 6.0

    def test_gradient_of_constant_is_zero(self):
        tape = GradTape()
        x = tape.watch(Tensor([1.0, 2.0]))
        tape.backward(Tensor(5.0))
        np.testing.assert_array_equal(tape.grad(x), [0.0, 0.0])

    def test_untouched_parameter_gets_zeros(self):
        tape = GradTape()
        x = tape.watch(Tensor([1.0, 2.0]))
        y = tape.watch(Tensor([3.0]))
        tape.backward(total(mul(x, x)))
        np.testing.assert_array_equal(tape.grad(y), [0.0])

    def test_non_scalar_output_rejected(self):
        tape = GradTape()
        x = tape.watch(Tensor([1.0, 2.0]))
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(mul(x, x))

    def test_mixing_tapes_rejected(self):
        t1, t2 = GradTape(), GradTape()
        a = t1.watch(Tensor([1.0]))
        b = t2.watch(Tensor([2.0]))
        with pytest.raises(ValueError, match="tapes"):
            add(a, b)

    def test_fan_out_accumulates(self):
        # y = x*x + 3x  =>  dy/dx = 2x + 3
        tape = GradTape()
        x = tape.watch(Tensor(2.0))
        tape.backward(add(mul(x, x), scale(x, 3.0)))
        assert float(tape.grad(x)) == 7.0


class TestFiniteDiffCheck:
    def test_quadratic(self):
        def fn(params):
            (x,) = params
            return total(mul(x, x))

        err = finite_diff_check(fn, [Tensor([1.0, -2.0, 0.5])], h=1e-5)
        assert err < 1e-6

    def test_linear(self):
        w = Tensor([2.0, -3.0, 0.25])

        def fn(params):
            (x,) = params
            return total(mul(x, w))

        err = finite_diff_check(fn, [Tensor([1.0, 1.0, 1.0])], h=1e-5)
        assert err < 1e-9

    def test_h_must_be_positive(self):
        with pytest.raises(ValueError):
            finite_diff_check(lambda p: total(p[0]), [Tensor([1.0])], h=0.0)


def _fd_sweep(make_fn, n_params, seed_base, n_seeds=100, tol=1e-4):
    for s in range(n_seeds):
        rng = np.random.default_rng(seed_base + s)
        fn, params = make_fn(rng)
        assert finite_diff_check(fn, params) < tol, f"seed {seed_base + s}"


class TestGradientsVsFiniteDifferences:
    """Every differentiable primitive against central differences, 100 seeds."""

    def test_add_sub_mul_broadcast(self):
        def make(rng):
            a = Tensor(rng.standard_normal((3, 4)))
            b = Tensor(rng.standard_normal(4))

            def fn(params):
                x, y = params
                return total(mul(add(x, y), sub(x, y)))

            return fn, [a, b]

        _fd_sweep(make, 2, 1000)

    def test_matmul_transpose(self):
        def make(rng):
            a = Tensor(rng.standard_normal((3, 4)))
            b = Tensor(rng.standard_normal((2, 4)))

            def fn(params):
                x, y = params
                return total(matmul(x, transpose(y)))

            return fn, [a, b]

        _fd_sweep(make, 2, 2000)

    def test_relu_hinge(self):
        def make(rng):
            # entries kept away from the kinks so central diffs are clean
            a = Tensor(rng.uniform(0.05, 1.0, size=6) * rng.choice([-1.0, 1.0], 6))

            def fn(params):
                (x,) = params
                return total(add(relu(x), hinge(relu(x), 0.3)))

            return fn, [a]

        _fd_sweep(make, 1, 3000)

    def test_l2_normalize_vector_and_rows(self):
        def make(rng):
            a = Tensor(rng.standard_normal(5) + 0.1)
            m = Tensor(rng.standard_normal((3, 5)) + 0.1)

            def fn(params):
                x, y = params
                return add(total(l2_normalize(x)), total(l2_normalize(y)))

            return fn, [a, m]

        _fd_sweep(make, 2, 4000)

    def test_distance_and_cosine(self):
        def make(rng):
            a = Tensor(rng.standard_normal(4))
            b = Tensor(rng.standard_normal(4))

            def fn(params):
                x, y = params
                return add(euclidean_distance(x, y), cosine_similarity(x, y))

            return fn, [a, b]

        _fd_sweep(make, 2, 5000)

    def test_stack_row_mean(self):
        def make(rng):
            m = Tensor(rng.standard_normal((4, 3)))

            def fn(params):
                (x,) = params
                s = stack([row(x, 0), row(x, 2), row(x, 1)])
                return mean(mul(s, s))

            return fn, [m]

        _fd_sweep(make, 1, 6000)

    def test_pair_diff_norms(self):
        i_idx = np.array([0, 0, 1, 2])
        j_idx = np.array([1, 2, 3, 3])

        def make(rng):
            f = Tensor(rng.standard_normal((4, 3)))

            def fn(params):
                (x,) = params
                return mean(pair_diff_norms(x, i_idx, j_idx))

            return fn, [f]

        _fd_sweep(make, 1, 7000)

    def test_pairwise_distances(self):
        def make(rng):
            a = Tensor(rng.standard_normal((3, 4)))
            b = Tensor(rng.standard_normal((2, 4)))

            def fn(params):
                x, y = params
                return mean(pairwise_distances(x, y))

            return fn, [a, b]

        _fd_sweep(make, 2, 8000)


class TestFusedOpsMatchScalarOps:
    def test_pair_diff_norms_vs_euclidean(self):
        rng = np.random.default_rng(42)
        f = rng.standard_normal((6, 5))
        i_idx, j_idx = np.triu_indices(6, k=1)
        fused = pair_diff_norms(Tensor(f), i_idx, j_idx).data
        for p, (i, j) in enumerate(zip(i_idx, j_idx)):
            want = float(euclidean_distance(Tensor(f[i]), Tensor(f[j])))
            assert abs(fused[p] - want) < 1e-12

    def test_pairwise_distances_vs_euclidean(self):
        rng = np.random.default_rng(43)
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((5, 3))
        fused = pairwise_distances(Tensor(a), Tensor(b)).data
        for i in range(4):
            for j in range(5):
                want = float(euclidean_distance(Tensor(a[i]), Tensor(b[j])))
                assert abs(fused[i, j] - want) < 1e-12
