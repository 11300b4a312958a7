"""Tensor primitives: forward values against hand-computed results, and
every backward rule against central finite differences."""

import math

import numpy as np
import pytest

from interconnect import tensor as T
from interconnect.errors import ContractError, LengthError, ShapeError
from interconnect.gradcheck import finite_diff_check
from interconnect.rng import generator
from interconnect.tensor import Tape, Tensor, backward


def t64(data, requires_grad=False):
    return Tensor(data, dtype=np.float64, requires_grad=requires_grad)


class TestMatmul:
    def test_identity(self):
        eye = t64(np.eye(2))
        b = t64([[5.0, 6.0], [7.0, 8.0]])
        assert np.array_equal(T.matmul(eye, b).data, b.data)

    def test_hand_computed_product(self):
        a = t64([[1.0, 2.0], [3.0, 4.0]])
        b = t64([[5.0, 6.0], [7.0, 8.0]])
        assert np.array_equal(T.matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]])

    def test_zero_case(self):
        a = t64(np.zeros((2, 3)))
        b = t64(generator("mm0").normal(size=(3, 2)))
        assert np.array_equal(T.matmul(a, b).data, np.zeros((2, 2)))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            T.matmul(t64(np.zeros((2, 3))), t64(np.zeros((2, 2))))

    def test_batched_matches_loop(self):
        gen = generator("mmb")
        a = gen.normal(size=(3, 4, 5))
        b = gen.normal(size=(3, 5, 2))
        out = T.matmul(t64(a), t64(b)).data
        for i in range(3):
            np.testing.assert_allclose(out[i], a[i] @ b[i], rtol=1e-12)


class TestLayerNorm:
    def test_hand_computed(self):
        # mean 2, population std 1 -> [-1, 1] up to the eps guard
        x = t64([[1.0, 3.0]])
        out = T.layer_norm(x, t64([1.0, 1.0]), t64([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-4)

    def test_zero_variance_returns_bias(self):
        x = t64([[7.0, 7.0]])
        out = T.layer_norm(x, t64([1.0, 1.0]), t64([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [[0.0, 0.0]], atol=1e-12)

    def test_scale_invariance(self):
        gen = generator("ln-scale")
        x = gen.normal(size=(4, 16)) * 5.0
        g = t64(np.ones(16))
        b = t64(np.zeros(16))
        base = T.layer_norm(t64(x), g, b).data
        scaled = T.layer_norm(t64(3.5 * x), g, b).data
        np.testing.assert_allclose(scaled, base, atol=1e-6)

    def test_moment_contract(self):
        gen = generator("ln-mom")
        x = gen.normal(size=(8, 32)) * 3.0
        out = T.layer_norm(t64(x), t64(np.ones(32)), t64(np.zeros(32))).data
        assert np.all(np.abs(out.mean(axis=-1)) < 1e-6)
        assert np.all(np.abs(out.var(axis=-1) - 1.0) < 1e-4)


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax(t64([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-12)

    def test_shift_invariance(self):
        gen = generator("sm-shift")
        x = gen.normal(size=(3, 7))
        np.testing.assert_allclose(
            T.softmax(t64(x + 11.25)).data, T.softmax(t64(x)).data, atol=1e-12
        )

    def test_hand_computed(self):
        out = T.softmax(t64([math.log(1.0), math.log(3.0)]))
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)

    def test_rows_sum_to_one_and_nonnegative(self):
        for seed in range(20):
            x = generator("sm-rows", seed).normal(size=(5, 9)) * 10.0
            y = T.softmax(t64(x)).data
            assert np.all(y >= 0.0)
            np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)


class TestConv1d:
    def test_kernel1_stride2_subsamples(self):
        x = t64([[1.0, 2.0, 3.0, 4.0, 5.0]])
        kern = t64(np.ones((1, 1, 1)))
        out = T.conv1d(x, kern, t64([0.0]), stride=2, padding=0)
        assert np.array_equal(out.data, [[1.0, 3.0, 5.0]])

    def test_length_formula_49_to_25(self):
        x = t64(generator("c49").normal(size=(2, 49)))
        kern = t64(generator("c49k").normal(size=(3, 2, 3)))
        out = T.conv1d(x, kern, t64(np.zeros(3)), stride=2, padding=1)
        assert out.shape == (3, 25)

    def test_zero_kernels_broadcast_bias(self):
        x = t64(generator("c0").normal(size=(2, 6)))
        out = T.conv1d(x, t64(np.zeros((3, 2, 2))), t64([1.0, 2.0, 3.0]), stride=1, padding=0)
        expected = np.tile(np.array([[1.0], [2.0], [3.0]]), (1, 5))
        np.testing.assert_allclose(out.data, expected, atol=1e-15)

    def test_too_short_raises_length_error(self):
        with pytest.raises(LengthError):
            T.conv1d(t64(np.zeros((1, 2))), t64(np.zeros((1, 1, 4))), t64([0.0]))

    @pytest.mark.parametrize("seed", range(20))
    def test_output_length_matches_formula(self, seed):
        gen = generator("convlen", seed)
        t = int(gen.integers(1, 40))
        k = int(gen.integers(1, 8))
        stride = int(gen.integers(1, 4))
        padding = int(gen.integers(0, 4))
        if t + 2 * padding < k:
            return
        x = t64(gen.normal(size=(2, t)))
        kern = t64(gen.normal(size=(3, 2, k)))
        out = T.conv1d(x, kern, t64(np.zeros(3)), stride=stride, padding=padding)
        assert out.shape[1] == (t + 2 * padding - k) // stride + 1


class TestGlu:
    def test_zero_gate_halves(self):
        x = t64([[2.0, 4.0], [0.0, 0.0]])
        np.testing.assert_allclose(T.glu(x).data, [[1.0, 2.0]], atol=1e-12)

    def test_zero_value_half(self):
        x = t64([[0.0], [3.0]])
        np.testing.assert_allclose(T.glu(x).data, [[0.0]], atol=1e-15)

    def test_hand_computed(self):
        # sigmoid(ln 3) = 3/4, so 2 * 0.75 = 1.5
        x = t64([[2.0], [math.log(3.0)]])
        np.testing.assert_allclose(T.glu(x).data, [[1.5]], atol=1e-12)

    def test_odd_channels_rejected(self):
        with pytest.raises(ShapeError):
            T.glu(t64(np.zeros((3, 4))))


class TestElementwiseAndLookup:
    def test_dropout_p0_is_identity_object(self):
        x = t64([[1.0, -2.0]])
        assert T.dropout(x, 0.0, train=True, gen=generator("d0")) is x

    def test_dropout_eval_is_identity(self):
        x = t64([[1.0, -2.0]])
        assert T.dropout(x, 0.5, train=False) is x

    def test_dropout_scales_survivors(self):
        x = t64(np.ones((100, 100)))
        out = T.dropout(x, 0.25, train=True, gen=generator("dsc")).data
        assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}
        assert abs((out == 0).mean() - 0.25) < 0.02

    def test_relu(self):
        assert np.array_equal(T.relu(t64([-1.0, 2.0])).data, [0.0, 2.0])

    def test_embedding_row0(self):
        table = t64([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(T.embedding(table, [0]).data, [[1.0, 2.0]])

    def test_embedding_out_of_range(self):
        table = t64(np.zeros((4, 2)))
        with pytest.raises(IndexError):
            T.embedding(table, [4])

    def test_embedding_backward_scatters(self):
        table = t64(np.zeros((3, 2)), requires_grad=True)
        with Tape() as tp:
            loss = T.sum_all(T.embedding(table, [1, 1, 0]))
        backward(loss, tp)
        assert np.array_equal(table.grad, [[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]])


class TestBackwardContract:
    def test_sum_gives_ones(self):
        x = t64(generator("bw1").normal(size=(3, 4)), requires_grad=True)
        with Tape() as tp:
            loss = T.sum_all(x)
        backward(loss, tp)
        assert np.array_equal(x.grad, np.ones((3, 4)))

    def test_square_gradient(self):
        x = t64([1.0, 2.0], requires_grad=True)
        with Tape() as tp:
            loss = T.sum_all(T.mul(x, x))
        backward(loss, tp)
        assert np.array_equal(x.grad, [2.0, 4.0])

    def test_reuse_accumulates(self):
        x = t64([1.0, 1.0], requires_grad=True)
        with Tape() as tp:
            loss = T.add(T.sum_all(x), T.sum_all(x))
        backward(loss, tp)
        assert np.array_equal(x.grad, [2.0, 2.0])

    def test_non_scalar_loss_rejected(self):
        x = t64([1.0, 2.0], requires_grad=True)
        with Tape() as tp:
            y = T.mul(x, x)
            with pytest.raises(ContractError):
                backward(y, tp)

    def test_empty_tape_rejected(self):
        with Tape() as tp:
            with pytest.raises(ContractError):
                backward(t64(1.0), tp)


def _fd_case(name, builder):
    """builder(gen) -> (params, forward) for a randomized gradient check."""
    failures = []
    for seed in range(20):
        gen = generator("fd", name, seed)
        params, forward = builder(gen)
        report = finite_diff_check(forward, params, h=1e-5, tol=1e-4)
        if not report.passed:
            failures.append((seed, report.max_rel_err))
    assert not failures, f"{name}: finite differences disagree: {failures}"


class TestFiniteDifferencesPerPrimitive:
    """Every primitive's backward rule vs central differences, 20 seeds."""

    def test_matmul(self):
        def build(gen):
            a = t64(gen.normal(size=(3, 4)), requires_grad=True)
            b = t64(gen.normal(size=(4, 2)), requires_grad=True)
            return [("a", a), ("b", b)], lambda: T.sum_all(T.mul(c := T.matmul(a, b), c))
        _fd_case("matmul", build)

    def test_batched_matmul(self):
        def build(gen):
            a = t64(gen.normal(size=(2, 3, 4)), requires_grad=True)
            b = t64(gen.normal(size=(2, 4, 3)), requires_grad=True)
            return [("a", a), ("b", b)], lambda: T.sum_all(T.mul(c := T.matmul(a, b), c))
        _fd_case("batched_matmul", build)

    def test_layer_norm(self):
        def build(gen):
            x = t64(gen.normal(size=(3, 8)) * 2.0, requires_grad=True)
            g = t64(gen.normal(size=8), requires_grad=True)
            b = t64(gen.normal(size=8), requires_grad=True)
            def fwd():
                y = T.layer_norm(x, g, b)
                return T.sum_all(T.mul(y, y))
            return [("x", x), ("g", g), ("b", b)], fwd
        _fd_case("layer_norm", build)

    def test_softmax(self):
        def build(gen):
            x = t64(gen.normal(size=(4, 6)), requires_grad=True)
            w = T.const(gen.normal(size=(4, 6)).astype(np.float64))
            return [("x", x)], lambda: T.sum_all(T.mul(T.softmax(x), w))
        _fd_case("softmax", build)

    def test_log_softmax(self):
        def build(gen):
            x = t64(gen.normal(size=(4, 6)), requires_grad=True)
            w = T.const(gen.normal(size=(4, 6)).astype(np.float64))
            return [("x", x)], lambda: T.sum_all(T.mul(T.log_softmax(x), w))
        _fd_case("log_softmax", build)

    def test_conv1d(self):
        def build(gen):
            x = t64(gen.normal(size=(2, 11)), requires_grad=True)
            k = t64(gen.normal(size=(3, 2, 3)), requires_grad=True)
            b = t64(gen.normal(size=3), requires_grad=True)
            def fwd():
                y = T.conv1d(x, k, b, stride=2, padding=1)
                return T.sum_all(T.mul(y, y))
            return [("x", x), ("k", k), ("b", b)], fwd
        _fd_case("conv1d", build)

    def test_glu(self):
        def build(gen):
            x = t64(gen.normal(size=(6, 5)), requires_grad=True)
            w = T.const(gen.uniform(0.5, 1.5, size=(3, 5)))
            def fwd():
                return T.sum_all(T.mul(T.glu(x), w))
            return [("x", x)], fwd
        _fd_case("glu", build)

    def test_relu(self):
        def build(gen):
            # keep entries away from the kink at 0
            data = gen.normal(size=(4, 5))
            data = np.where(np.abs(data) < 0.05, 0.5, data)
            x = t64(data, requires_grad=True)
            return [("x", x)], lambda: T.sum_all(T.mul(T.relu(x), T.relu(x)))
        _fd_case("relu", build)

    def test_add_mul_broadcast(self):
        def build(gen):
            x = t64(gen.normal(size=(3, 4)), requires_grad=True)
            b = t64(gen.normal(size=4), requires_grad=True)
            def fwd():
                y = T.mul(T.add(x, b), T.add(x, b))
                return T.sum_all(y)
            return [("x", x), ("b", b)], fwd
        _fd_case("add_mul", build)

    def test_embedding_take_rows(self):
        def build(gen):
            table = t64(gen.normal(size=(5, 4)), requires_grad=True)
            ids = gen.integers(0, 5, size=6)
            cols = gen.integers(0, 4, size=6)
            w = T.const(gen.uniform(0.5, 1.5, size=6))
            def fwd():
                e = T.embedding(table, ids)
                return T.sum_all(T.mul(T.take_rows(e, cols), w))
            return [("table", table)], fwd
        _fd_case("embedding", build)

    def test_masked_fill_rows(self):
        def build(gen):
            x = t64(gen.normal(size=(6, 4)), requires_grad=True)
            fill = t64(gen.normal(size=4), requires_grad=True)
            mask = gen.random(6) < 0.4
            w = T.const(gen.uniform(0.5, 1.5, size=(6, 4)))
            def fwd():
                return T.sum_all(T.mul(T.masked_fill_rows(x, mask, fill), w))
            return [("x", x), ("fill", fill)], fwd
        _fd_case("masked_fill", build)

    def test_reshape_transpose_sum_axis(self):
        def build(gen):
            x = t64(gen.normal(size=(3, 4, 2)), requires_grad=True)
            def fwd():
                y = T.transpose(x, (1, 0, 2))
                y = T.reshape(y, (4, 6))
                s = T.sum_axis(y, axis=1)
                return T.sum_all(T.mul(s, s))
            return [("x", x)], fwd
        _fd_case("reshape_transpose", build)

    def test_take_index_scale(self):
        def build(gen):
            w = t64(gen.normal(size=5), requires_grad=True)
            def fwd():
                picked = T.take_index(w, 2)
                return T.mul(T.scale(picked, 3.0), picked)
            return [("w", w)], fwd
        _fd_case("take_index", build)


class TestFiniteDiffChecker:
    def test_quadratic_is_tight(self):
        x = t64(generator("quad").normal(size=6), requires_grad=True)
        report = finite_diff_check(
            lambda: T.sum_all(T.mul(x, x)), [("x", x)], h=1e-5, tol=1e-7
        )
        assert report.passed
        assert report.max_rel_err < 1e-7

    def test_constant_function_zero_error(self):
        x = t64([1.0, 2.0], requires_grad=True)
        c = t64([3.0], requires_grad=True)
        # loss touches x but not c: both sides of c's check are exactly zero
        report = finite_diff_check(lambda: T.sum_all(T.mul(x, x)), [("c", c)], tol=1e-7)
        assert report.entries[0].max_rel_err == 0.0

    def test_detects_wrong_gradient(self):
        x = t64([1.0, 2.0], requires_grad=True)

        def forward():
            y = T.mul(x, x)
            return T.scale(T.sum_all(y), 0.5)  # true gradient is x

        report = finite_diff_check(forward, [("x", x)], tol=1e-4)
        assert report.passed
        # now sabotage: pretend the gradient is 2x by scaling loss without FD knowing
        with Tape() as tp:
            loss = T.sum_all(T.mul(x, x))
        backward(loss, tp)
        assert not np.allclose(x.grad, x.data)  # 2x != x


class TestDebugFiniteMode:
    def test_flags_nan(self):
        T.set_debug_finite(True)
        try:
            with pytest.raises(ContractError):
                Tensor([np.nan, 1.0])
        finally:
            T.set_debug_finite(False)
