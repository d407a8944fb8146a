import numpy as np
import pytest

from mhdasr import tensor as T
from mhdasr.gradcheck import check_gradients, relative_error
from mhdasr.tensor import (
    ComputationTape,
    RngState,
    Tensor,
    backward,
    clip_grad_norm,
    concat,
    conv1d,
    init_lstm_params,
    log_softmax,
    lstm_cell,
    lstm_cell_from_gates,
    matmul,
    pick,
    reshape,
    row,
    softmax,
    stack_rows,
    sum_all,
    take_rows,
    tanh,
    transpose,
    uniform_init,
)


def rand_tensor(rng, shape, requires_grad=True):
    return Tensor(rng.uniform(-1.0, 1.0, shape), requires_grad=requires_grad)


class TestUniformInit:
    def test_bounds_at_paper_shape(self):
        t = uniform_init((320, 320), -0.1, 0.1, RngState(1))
        assert t.requires_grad
        assert t.data.min() >= -0.1
        assert t.data.max() < 0.1

    def test_single_element_nonnegative(self):
        t = uniform_init((1,), 0.0, 2.0, RngState(2))
        assert t.data[0] >= 0.0

    def test_fixed_seed_bitwise_identical(self):
        a = uniform_init((7, 3), -0.1, 0.1, RngState(42))
        b = uniform_init((7, 3), -0.1, 0.1, RngState(42))
        assert np.array_equal(a.data, b.data)

    def test_rejects_empty_shape_and_bad_bounds(self):
        with pytest.raises(ValueError):
            uniform_init((), -0.1, 0.1, RngState(0))
        with pytest.raises(ValueError):
            uniform_init((2,), 0.5, 0.5, RngState(0))


class TestMatmul:
    def test_identity(self):
        rng = RngState(3)
        a = Tensor(rng.uniform(-1, 1, (3, 4)))
        eye = Tensor(np.eye(3))
        assert np.array_equal(matmul(eye, a).data, a.data)

    def test_zeros_annihilate(self):
        a = Tensor(np.random.default_rng(0).uniform(-1, 1, (3, 4)))
        z = Tensor(np.zeros((2, 3)))
        assert np.array_equal(matmul(z, a).data, np.zeros((2, 4)))

    def test_matches_triple_loop_oracle(self):
        rng = RngState(4)
        a = rng.uniform(-1, 1, (4, 5))
        b = rng.uniform(-1, 1, (5, 3))
        want = np.zeros((4, 3))
        for i in range(4):
            for j in range(3):
                for k in range(5):
                    want[i, j] += a[i, k] * b[k, j]
        got = matmul(Tensor(a), Tensor(b)).data
        assert np.abs(got - want).max() < 1e-12

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    @pytest.mark.parametrize(
        "sa,sb",
        [((4, 5), (5, 3)), ((5,), (5, 3)), ((4, 5), (5,)), ((5,), (5,))],
    )
    def test_gradients_all_shape_combos(self, sa, sb):
        rng = RngState(5)
        a, b = rand_tensor(rng, sa), rand_tensor(rng, sb)
        r = Tensor(rng.uniform(-1, 1, np.matmul(a.data, b.data).shape))

        def loss():
            return sum_all(matmul(a, b) * r)

        errs = check_gradients(loss, [("a", a), ("b", b)])
        assert max(errs.values()) < 1e-6


class TestSoftmax:
    def test_constant_input_is_uniform(self):
        w = softmax(Tensor([0.0, 0.0, 0.0]))
        assert np.allclose(w.data, np.full(3, 1 / 3), atol=1e-15)

    def test_max_subtraction_keeps_large_inputs_finite(self):
        w = softmax(Tensor([1000.0, 0.0]))
        assert np.isfinite(w.data).all()
        assert w.data[0] == pytest.approx(1.0)

    def test_matches_exp_normalize_oracle(self):
        x = np.array([1.0, 2.0, 3.0])
        want = np.exp(x) / np.exp(x).sum()
        got = softmax(Tensor(x)).data
        assert np.abs(got - want).max() < 1e-12

    def test_normalized_over_random_lengths(self):
        rng = RngState(6)
        for _ in range(1000):
            n = int(rng.integers(1, 513))
            w = softmax(Tensor(rng.uniform(-50, 50, (n,)))).data
            assert w.min() >= 0.0
            assert abs(w.sum() - 1.0) < 1e-6

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            softmax(Tensor([np.inf, 0.0]))

    def test_mask_zeroes_invalid_positions(self):
        rng = RngState(7)
        x = Tensor(rng.uniform(-5, 5, (8,)))
        mask = np.array([1, 1, 1, 0, 0, 1, 0, 1], dtype=bool)
        w = softmax(x, mask=mask).data
        assert (w[~mask] == 0.0).all()
        assert abs(w.sum() - 1.0) < 1e-12

    def test_all_masked_raises(self):
        with pytest.raises(ValueError):
            softmax(Tensor([1.0, 2.0]), mask=np.array([False, False]))

    def test_gradient(self):
        rng = RngState(8)
        x = rand_tensor(rng, (6,))
        r = Tensor(rng.uniform(-1, 1, (6,)))

        def loss():
            return sum_all(softmax(x) * r)

        assert check_gradients(loss, [("x", x)])["x"] < 1e-6


class TestLogSoftmax:
    def test_agrees_with_log_of_softmax(self):
        rng = RngState(9)
        x = rng.uniform(-5, 5, (11,))
        assert np.allclose(log_softmax(Tensor(x)).data, np.log(softmax(Tensor(x)).data), atol=1e-12)

    def test_gradient(self):
        rng = RngState(10)
        x = rand_tensor(rng, (5,))
        r = Tensor(rng.uniform(-1, 1, (5,)))

        def loss():
            return sum_all(log_softmax(x) * r)

        assert check_gradients(loss, [("x", x)])["x"] < 1e-6


class TestConv1d:
    def test_delta_kernel_is_identity(self):
        rng = RngState(11)
        for n in range(1, 65):
            x = rng.uniform(-1, 1, (n,))
            y = conv1d(Tensor([[0.0, 1.0, 0.0]]), Tensor(x)).data
            assert np.array_equal(y[:, 0], x)

    def test_zero_signal_gives_zero_output(self):
        y = conv1d(Tensor([[1.0, 2.0, 3.0]]), Tensor(np.zeros(6))).data
        assert np.array_equal(y, np.zeros((6, 1)))

    def test_matches_sliding_window_oracle(self):
        x = np.array([1.0, 0.0, 0.0, 0.0])
        k = np.ones((1, 3))
        got = conv1d(Tensor(k), Tensor(x)).data[:, 0]
        xp = np.pad(x, 1)
        want = np.array([sum(k[0, j] * xp[t + j] for j in range(3)) for t in range(4)])
        assert np.array_equal(got, want)
        assert np.array_equal(want, [1.0, 1.0, 0.0, 0.0])

    def test_even_width_rejected(self):
        with pytest.raises(ValueError):
            conv1d(Tensor(np.ones((1, 4))), Tensor(np.ones(5)))

    def test_gradients(self):
        rng = RngState(12)
        k = rand_tensor(rng, (3, 5))
        x = rand_tensor(rng, (9,))
        r = Tensor(rng.uniform(-1, 1, (9, 3)))

        def loss():
            return sum_all(conv1d(k, x) * r)

        errs = check_gradients(loss, [("k", k), ("x", x)])
        assert max(errs.values()) < 1e-6


class TestBackward:
    def test_square_at_3(self):
        x = Tensor(3.0, requires_grad=True)
        with ComputationTape() as tape:
            loss = x * x
        backward(loss, tape)
        assert x.grad == pytest.approx(6.0)

    def test_unreached_parameter_gets_zero(self):
        x = Tensor(2.0, requires_grad=True)
        p = Tensor(np.ones(4), requires_grad=True)
        with ComputationTape() as tape:
            loss = x * x
        backward(loss, tape, params=[x, p])
        assert np.array_equal(p.grad, np.zeros(4))

    def test_nonscalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with ComputationTape() as tape:
            y = x * x
        with pytest.raises(ValueError):
            backward(y, tape)

    def test_reused_operand_accumulates(self):
        x = Tensor(np.array(1.5), requires_grad=True)
        with ComputationTape() as tape:
            loss = x * x + x * x
        backward(loss, tape)
        assert x.grad == pytest.approx(6.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_randomized_composite_graph_matches_finite_differences(self, seed):
        rng = RngState(100 + seed)
        w = rand_tensor(rng, (4, 6))
        v = rand_tensor(rng, (4,))
        b = rand_tensor(rng, (4,))
        x = Tensor(rng.uniform(-1, 1, (6,)))

        def loss():
            h = tanh(matmul(w, x) + b)
            s = softmax(h * v)
            return sum_all(s * s) + pick(log_softmax(h), 2)

        errs = check_gradients(loss, [("w", w), ("v", v), ("b", b)])
        assert max(errs.values()) < 1e-4


class TestShapingOps:
    def test_row_pick_take_concat_stack_reshape_transpose_grads(self):
        rng = RngState(13)
        m = rand_tensor(rng, (5, 4))
        v = rand_tensor(rng, (6,))

        def loss():
            a = row(m, 2)
            b = take_rows(m, [0, 0, 3])
            c = concat([a, v], axis=0)
            d = stack_rows([a, a])
            e = reshape(transpose(b), (12,))
            return sum_all(c) + sum_all(d) + pick(e, 5) + pick(v, 0)

        errs = check_gradients(loss, [("m", m), ("v", v)])
        assert max(errs.values()) < 1e-6


class TestLSTMCell:
    def zero_params(self, in_dim, units):
        return T.LSTMParams(
            w_x=Tensor(np.zeros((4 * units, in_dim)), requires_grad=True),
            w_h=Tensor(np.zeros((4 * units, units)), requires_grad=True),
            b=Tensor(np.zeros(4 * units), requires_grad=True),
        )

    def test_all_zero_everything_stays_zero(self):
        p = self.zero_params(3, 2)
        h, c = lstm_cell(Tensor(np.zeros(3)), Tensor(np.zeros(2)), Tensor(np.zeros(2)), p)
        assert np.array_equal(h.data, np.zeros(2))
        assert np.array_equal(c.data, np.zeros(2))

    def test_zero_input_gate_halves_candidate(self):
        # with w_x=w_h=0 and only the candidate-gate bias set, the input gate
        # sits at sigmoid(0)=0.5 so c' = 0.5*tanh(b_g)
        units = 2
        p = self.zero_params(1, units)
        p.b.data[2 * units : 3 * units] = 0.7
        h, c = lstm_cell(Tensor(np.zeros(1)), Tensor(np.zeros(units)), Tensor(np.zeros(units)), p)
        want_c = 0.5 * np.tanh(0.7)
        assert np.allclose(c.data, want_c, atol=1e-15)
        assert np.allclose(h.data, 0.5 * np.tanh(want_c), atol=1e-15)

    def scalar_loop_oracle(self, x, h, c, p):
        units = p.w_h.data.shape[1]
        z = np.zeros(4 * units)
        for r in range(4 * units):
            for j in range(x.size):
                z[r] += p.w_x.data[r, j] * x[j]
            for j in range(units):
                z[r] += p.w_h.data[r, j] * h[j]
            z[r] += p.b.data[r]
        sig = lambda t: 1.0 / (1.0 + np.exp(-t))
        h2 = np.zeros(units)
        c2 = np.zeros(units)
        for u in range(units):
            i_, f_ = sig(z[u]), sig(z[units + u])
            g_, o_ = np.tanh(z[2 * units + u]), sig(z[3 * units + u])
            c2[u] = f_ * c[u] + i_ * g_
            h2[u] = o_ * np.tanh(c2[u])
        return h2, c2

    def test_matches_scalar_loop_oracle(self):
        rng = RngState(14)
        p = init_lstm_params(3, 4, rng)
        x, h, c = rng.uniform(-1, 1, (3,)), rng.uniform(-1, 1, (4,)), rng.uniform(-1, 1, (4,))
        got_h, got_c = lstm_cell(Tensor(x), Tensor(h), Tensor(c), p)
        want_h, want_c = self.scalar_loop_oracle(x, h, c, p)
        assert np.abs(got_h.data - want_h).max() < 1e-12
        assert np.abs(got_c.data - want_c).max() < 1e-12

    def test_gradients_full_and_precomputed(self):
        rng = RngState(15)
        p = init_lstm_params(3, 4, rng)
        x = rand_tensor(rng, (3,))
        h0 = rand_tensor(rng, (4,))
        c0 = rand_tensor(rng, (4,))
        r = Tensor(rng.uniform(-1, 1, (4,)))

        def loss():
            h1, c1 = lstm_cell(x, h0, c0, p)
            h2, c2 = lstm_cell(x, h1, c1, p)
            return sum_all(h2 * r) + sum_all(c2)

        named = [("x", x), ("h0", h0), ("c0", c0)] + [(f"p.{n}", t) for n, t in p.tensors()]
        assert max(check_gradients(loss, named).values()) < 1e-4

        def loss_pre():
            xg = matmul(p.w_x, x) + p.b
            h1, c1 = lstm_cell_from_gates(xg, h0, c0, p.w_h)
            return sum_all(h1 * r) + sum_all(c1)

        assert max(check_gradients(loss_pre, named).values()) < 1e-4

    def test_precomputed_variant_matches_full(self):
        rng = RngState(16)
        p = init_lstm_params(5, 3, rng)
        x, h, c = rand_tensor(rng, (5,)), rand_tensor(rng, (3,)), rand_tensor(rng, (3,))
        h_a, c_a = lstm_cell(x, h, c, p)
        xg = matmul(p.w_x, x) + p.b
        h_b, c_b = lstm_cell_from_gates(xg, h, c, p.w_h)
        assert np.array_equal(h_a.data, h_b.data)
        assert np.array_equal(c_a.data, c_b.data)


class TestClipGradNorm:
    def test_below_threshold_unchanged(self):
        g = [np.array([3.0, 0.0]), np.array([0.0])]
        before = [x.copy() for x in g]
        norm = clip_grad_norm(g, 5.0)
        assert norm == pytest.approx(3.0)
        assert all(np.array_equal(a, b) for a, b in zip(g, before))

    def test_above_threshold_halved(self):
        g = [np.array([6.0, 8.0])]  # norm 10
        clip_grad_norm(g, 5.0)
        assert np.allclose(g[0], [3.0, 4.0], atol=1e-15)

    def test_matches_flattened_vector_oracle(self):
        rng = RngState(17)
        g = [rng.uniform(-2, 2, (3, 4)), rng.uniform(-2, 2, (7,)), rng.uniform(-2, 2, (2, 2))]
        flat = np.concatenate([x.ravel() for x in g])
        norm = np.sqrt((flat**2).sum())
        want = flat * (1.5 / norm) if norm > 1.5 else flat
        clip_grad_norm(g, 1.5)
        got = np.concatenate([x.ravel() for x in g])
        assert np.array_equal(got, want)

    def test_norm_bound_and_direction_preserved(self):
        rng = RngState(18)
        for _ in range(200):
            g = [rng.uniform(-3, 3, (int(rng.integers(1, 6)),)) for _ in range(3)]
            flat_before = np.concatenate([x.ravel() for x in g])
            clip_grad_norm(g, 2.0)
            flat_after = np.concatenate([x.ravel() for x in g])
            assert np.linalg.norm(flat_after) <= 2.0 + 1e-9
            na, nb = np.linalg.norm(flat_after), np.linalg.norm(flat_before)
            if nb > 0:
                cos = float(flat_after @ flat_before / (na * nb))
                assert abs(cos - 1.0) < 1e-9

    def test_rejects_nonpositive_max_norm(self):
        with pytest.raises(ValueError):
            clip_grad_norm([np.ones(2)], 0.0)


class TestRngState:
    def test_state_roundtrip_resumes_stream(self):
        rng = RngState(123, stream=4)
        rng.uniform(-1, 1, (10,))
        saved = rng.state_dict()
        want = rng.uniform(-1, 1, (5,))
        fresh = RngState(0)
        fresh.load_state_dict(saved)
        assert np.array_equal(fresh.uniform(-1, 1, (5,)), want)

    def test_streams_differ(self):
        a = RngState(9, stream=0).uniform(0, 1, (4,))
        b = RngState(9, stream=1).uniform(0, 1, (4,))
        assert not np.array_equal(a, b)


def test_relative_error_is_zero_for_zero_pair():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
