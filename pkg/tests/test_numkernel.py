import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from genkt.numkernel import (
    DimensionError,
    LstmCellParams,
    LstmCellState,
    finite_diff_grad,
    log_softmax,
    lstm_cell_backward,
    lstm_cell_forward,
    lstm_layer_backward,
    lstm_layer_forward,
    matmul,
    relative_error,
    softmax,
)


def triple_loop(a, b):
    out = [[0.0] * len(b[0]) for _ in a]
    for i in range(len(a)):
        for j in range(len(b[0])):
            for k in range(len(b)):
                out[i][j] += a[i][k] * b[k][j]
    return np.array(out)


def scalar_lstm_step(p, x, c, h):
    """Plain-python LSTM step, one cell at a time."""
    n = p.cells
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))  # noqa: E731
    c_new, h_new = [], []
    for j in range(n):
        pre = []
        for k in range(4):
            row = k * n + j
            z = p.bias[row]
            z += sum(p.w_in[row, q] * x[q] for q in range(len(x)))
            z += sum(p.w_rec[row, q] * h[q] for q in range(n))
            pre.append(z)
        i, f, o, g = sig(pre[0]), sig(pre[1]), sig(pre[2]), math.tanh(pre[3])
        cj = f * c[j] + i * g
        c_new.append(cj)
        h_new.append(o * math.tanh(cj))
    return np.array(c_new), np.array(h_new)


def random_cell(rng, cells=3, input_dim=4, scale=0.5):
    return LstmCellParams(
        rng.uniform(-scale, scale, (4 * cells, input_dim)),
        rng.uniform(-scale, scale, (4 * cells, cells)),
        rng.uniform(-scale, scale, 4 * cells),
    )


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), m), m)

    def test_hand_computed(self):
        assert matmul([[1, 2]], [[3], [4]]).tolist() == [[11.0]]

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
        np.testing.assert_allclose(matmul(a, b), triple_loop(a.tolist(), b.tolist()), atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(np.zeros(30)), np.full(30, 1 / 30))

    def test_large_logits_do_not_overflow(self):
        p = softmax(np.array([1000.0, 0.0]))
        assert np.all(np.isfinite(p))
        np.testing.assert_allclose(p, [1.0, 0.0], atol=1e-9)

    @given(arrays(np.float64, 30, elements=st.floats(-50, 50)))
    def test_valid_and_shift_invariant(self, z):
        p = softmax(z)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) < 1e-9
        np.testing.assert_allclose(softmax(z + 5.0), p, atol=1e-12)

    @given(arrays(np.float64, 30, elements=st.floats(-50, 50)))
    def test_log_softmax_consistent(self, z):
        np.testing.assert_allclose(np.exp(log_softmax(z)), softmax(z), atol=1e-12)


class TestCellForward:
    def test_zero_params_give_zero_state(self):
        p = LstmCellParams.zeros(5, 3)
        h, s = lstm_cell_forward(p, np.array([1.0, -2.0, 3.0]), LstmCellState.zeros(5))
        np.testing.assert_array_equal(h, 0.0)
        np.testing.assert_array_equal(s.c, 0.0)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(7)
        p = random_cell(rng)
        x = rng.normal(size=4)
        c0, h0 = rng.normal(size=3), rng.uniform(-1, 1, 3)
        h, s = lstm_cell_forward(p, x, LstmCellState(c0, h0))
        c_ref, h_ref = scalar_lstm_step(p, x, c0, h0)
        np.testing.assert_allclose(s.c, c_ref, atol=1e-12)
        np.testing.assert_allclose(h, h_ref, atol=1e-12)
        np.testing.assert_array_equal(h, s.h)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        p = random_cell(rng)
        x, s = rng.normal(size=4), LstmCellState.zeros(3)
        a = lstm_cell_forward(p, x, s)[0]
        b = lstm_cell_forward(p, x, s)[0]
        assert a.tobytes() == b.tobytes()

    def test_hidden_bounded(self):
        rng = np.random.default_rng(2)
        p = random_cell(rng, scale=5.0)
        h, s = lstm_cell_forward(p, rng.normal(size=4) * 10, LstmCellState(rng.normal(size=3) * 10, np.zeros(3)))
        assert np.all(np.abs(h) <= 1.0)

    def test_dimension_errors(self):
        p = LstmCellParams.zeros(3, 4)
        with pytest.raises(DimensionError):
            lstm_cell_forward(p, np.zeros(5), LstmCellState.zeros(3))
        with pytest.raises(DimensionError):
            lstm_cell_forward(p, np.zeros(4), LstmCellState.zeros(2))

    def test_inconsistent_params_rejected(self):
        with pytest.raises(DimensionError):
            LstmCellParams(np.zeros((12, 4)), np.zeros((12, 4)), np.zeros(12))
        with pytest.raises(DimensionError):
            LstmCellParams(np.zeros((12, 4)), np.zeros((12, 3)), np.zeros(8))


class TestCellBackward:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        p = random_cell(rng)
        x = rng.normal(size=4)
        s0 = LstmCellState(rng.normal(size=3), rng.uniform(-1, 1, 3))
        wh, wc = rng.normal(size=3), rng.normal(size=3)

        def loss(p_):
            h, s = lstm_cell_forward(p_, x, s0)
            return float(wh @ h + wc @ s.c)

        _, _, tape = lstm_cell_forward(p, x, s0, return_tape=True)
        grads, dx, dstate = lstm_cell_backward(p, tape, wh, wc)
        for name in ("w_in", "w_rec", "bias"):
            arr = getattr(p, name)

            def f(v, name=name):
                q = LstmCellParams(p.w_in.copy(), p.w_rec.copy(), p.bias.copy())
                setattr(q, name, v.reshape(arr.shape))
                return loss(q)

            num = finite_diff_grad(f, arr.reshape(-1)).reshape(arr.shape)
            assert relative_error(getattr(grads, name), num).max() < 1e-6

        def at(x_, s_):
            h, s = lstm_cell_forward(p, x_, s_)
            return float(wh @ h + wc @ s.c)

        num_x = finite_diff_grad(lambda v: at(v, s0), x)
        assert relative_error(dx, num_x).max() < 1e-6
        num_h = finite_diff_grad(lambda v: at(x, LstmCellState(s0.c, v)), s0.h)
        num_c = finite_diff_grad(lambda v: at(x, LstmCellState(v, s0.h)), s0.c)
        assert relative_error(dstate.c, num_c).max() < 1e-6
        assert relative_error(dstate.h, num_h).max() < 1e-6

    def test_tape_mismatch(self):
        rng = np.random.default_rng(0)
        p = random_cell(rng)
        _, _, tape = lstm_cell_forward(p, np.zeros(4), LstmCellState.zeros(3), return_tape=True)
        with pytest.raises(DimensionError):
            lstm_cell_backward(p, tape, np.zeros(2), np.zeros(2))


class TestLayer:
    def test_layer_equals_repeated_cell(self):
        rng = np.random.default_rng(4)
        p = random_cell(rng)
        xs = rng.normal(size=(6, 2, 4))
        hs, final, _ = lstm_layer_forward(p, xs, LstmCellState.zeros(3, 2))
        s = LstmCellState.zeros(3, 2)
        for t in range(6):
            h, s = lstm_cell_forward(p, xs[t], s)
            np.testing.assert_allclose(hs[t], h, atol=1e-14)
        np.testing.assert_allclose(final.c, s.c, atol=1e-14)

    def test_layer_backward_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        p = random_cell(rng, cells=2, input_dim=3)
        xs = rng.normal(size=(5, 2, 3))
        w = rng.normal(size=(5, 2, 2))
        s0 = LstmCellState(rng.normal(size=(2, 2)), rng.uniform(-1, 1, (2, 2)))

        def loss_of(flat):
            q = LstmCellParams(
                flat[:24].reshape(8, 3), flat[24:40].reshape(8, 2), flat[40:].reshape(8)
            )
            return float(np.sum(w * lstm_layer_forward(q, xs, s0)[0]))

        theta = np.concatenate([p.w_in.ravel(), p.w_rec.ravel(), p.bias])
        hs, _, tape = lstm_layer_forward(p, xs, s0)
        grads, dxs, _ = lstm_layer_backward(p, tape, w)
        analytic = np.concatenate([grads.w_in.ravel(), grads.w_rec.ravel(), grads.bias])
        assert relative_error(analytic, finite_diff_grad(loss_of, theta)).max() < 1e-6


class TestFiniteDiff:
    def test_quadratic(self):
        g = finite_diff_grad(lambda v: float(v @ v), np.array([1.0, -2.0, 3.0]))
        np.testing.assert_allclose(g, [2.0, -4.0, 6.0], atol=1e-8)

    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda v: 0.0, np.zeros(2), step=0.0)

    @settings(max_examples=25)
    @given(arrays(np.float64, 4, elements=st.floats(-3, 3)))
    def test_relative_error_symmetric(self, a):
        b = a * 1.01 + 0.001
        np.testing.assert_array_equal(relative_error(a, b), relative_error(b, a))
