"""Tensor engine: forward values, analytic gradients, tape semantics."""

import math

import numpy as np
import pytest

from cmrl import tensor as T
from cmrl.tensor import NumericsError, ShapeError, Tape, Tensor, gradcheck


def t(data, rg=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=rg)


class TestForwardValues:
    def test_matmul_all_ones_contraction(self):
        a = t(np.ones((2, 3)))
        b = t(np.ones((3, 2)))
        assert np.array_equal(T.matmul(a, b).data, np.full((2, 2), 3.0))

    def test_softmax_symmetry(self):
        out = T.softmax(t([[0.0, 0.0, 0.0]]))
        assert np.allclose(out.data, 1.0 / 3.0, rtol=0, atol=1e-15)

    def test_sigmoid_gradient_at_zero(self):
        x = t(np.zeros((2, 3)), rg=True)
        with Tape() as tape:
            y = T.sum(T.sigmoid(x))
            tape.backward(y)
        assert np.allclose(x.grad, 0.25, rtol=0, atol=1e-15)

    def test_concat_then_split_is_identity(self):
        rng = np.random.default_rng(3)
        parts = [t(rng.normal(size=(2, k))) for k in (1, 3, 2)]
        merged = T.concat(parts, axis=-1)
        back = [
            T.narrow(merged, -1, 0, 1),
            T.narrow(merged, -1, 1, 3),
            T.narrow(merged, -1, 4, 2),
        ]
        for orig, piece in zip(parts, back):
            assert np.array_equal(orig.data, piece.data)

    def test_split_equal_parts(self):
        x = t(np.arange(8.0).reshape(2, 4))
        a, b = T.split(x, 2, axis=-1)
        assert np.array_equal(np.concatenate([a.data, b.data], axis=-1), x.data)


class TestGradcheck:
    def test_sum_of_squares(self):
        rng = np.random.default_rng(0)
        x = t(rng.normal(size=4), rg=True)
        err = gradcheck(lambda v: T.sum(v * v), x)
        assert err < 1e-6

    def test_constant_function(self):
        x = t([1.0, 2.0], rg=True)
        c = t([[5.0]])
        err = gradcheck(lambda v: T.sum(v * 0.0) + T.sum(c), x)
        assert err == 0.0

    def test_eps_domain_validated(self):
        x = t([1.0], rg=True)
        with pytest.raises(ValueError):
            gradcheck(lambda v: T.sum(v), x, eps=1e-2)

    def test_non_scalar_rejected(self):
        x = t([1.0, 2.0], rg=True)
        with pytest.raises(ShapeError):
            gradcheck(lambda v: v * 2.0, x)


def _op_cases(rng):
    """(name, f, x) triples covering the whole forward-op set, |x| <= 2."""
    u = lambda *s: rng.uniform(-2.0, 2.0, size=s)
    pos = lambda *s: rng.uniform(0.1, 2.0, size=s)
    w1 = Tensor(u(3, 2))
    m = Tensor(u(2, 3))
    v3 = Tensor(u(1, 3))
    b2 = Tensor(u(1, 2))
    denom = Tensor(pos(2, 3))
    query = Tensor(u(2, 3))
    lstm_args = (
        Tensor(u(2, 2)), Tensor(u(2, 2)),
        Tensor(u(4, 8)), Tensor(u(2, 8)), Tensor(u(1, 8)),
    )
    idx = np.array([[0, 2], [1, 1], [2, 0]])
    return [
        ("add", lambda x: T.sum(x + m), u(2, 3)),
        ("add_broadcast", lambda x: T.sum(x + m), u(1, 3)),
        ("sub", lambda x: T.sum(m - x), u(2, 3)),
        ("mul", lambda x: T.sum(x * m), u(2, 3)),
        ("div", lambda x: T.sum(x / denom), u(2, 3)),
        ("rdiv", lambda x: T.sum(2.0 / x), pos(2, 3)),
        ("scalar_ops", lambda x: T.sum(1.5 * x - 0.5 + x / 2.0), u(2, 3)),
        ("neg", lambda x: T.sum(-x), u(2, 3)),
        ("matmul", lambda x: T.sum(T.matmul(x, w1)), u(2, 3)),
        ("transpose", lambda x: T.sum(T.transpose(x) * w1), u(2, 3)),
        ("reshape", lambda x: T.sum(T.reshape(x, (3, 2)) * w1), u(2, 3)),
        ("concat", lambda x: T.sum(T.concat([x, m], axis=-1)), u(2, 3)),
        ("narrow", lambda x: T.sum(T.narrow(x, -1, 1, 2)), u(2, 4)),
        ("take_rows", lambda x: T.sum(T.take_rows(x, idx)), u(3, 2)),
        ("exp", lambda x: T.sum(T.exp(x)), u(2, 3)),
        ("log", lambda x: T.sum(T.log(x)), pos(2, 3)),
        ("sqrt", lambda x: T.sum(T.sqrt(x)), pos(2, 3)),
        ("softplus", lambda x: T.sum(T.softplus(x)), u(2, 3)),
        ("sigmoid", lambda x: T.sum(T.sigmoid(x) * m), u(2, 3)),
        ("tanh", lambda x: T.sum(T.tanh(x) * m), u(2, 3)),
        ("relu", lambda x: T.sum(T.relu(x)), pos(2, 3)),
        ("softmax", lambda x: T.sum(T.softmax(x) * m), u(2, 3)),
        ("row_l2norm", lambda x: T.sum(T.row_l2norm(x)), pos(2, 3)),
        ("sum_global", lambda x: T.sum(x), u(2, 3)),
        ("sum_axis", lambda x: T.sum(T.sum(x, axis=0, keepdims=True) * v3), u(2, 3)),
        ("mean_global", lambda x: T.mean(x), u(2, 3)),
        ("mean_axis", lambda x: T.sum(T.mean(x, axis=1, keepdims=True)), u(2, 3)),
        ("variance_global", lambda x: T.variance(x), u(5,)),
        ("variance_axis", lambda x: T.sum(T.variance(x, axis=0, keepdims=True) * v3), u(4, 3)),
        ("canonical_sum", lambda x: T.sum(T.canonical_sum(x, axis=0, keepdims=True) * v3), u(4, 3)),
        ("clip", lambda x: T.sum(T.clip(x, lo=-1.0, hi=1.0) * m), u(2, 3)),
        ("affine", lambda x: T.sum(T.affine(x, w1, b2, activation="tanh")), u(2, 3)),
        ("affine_relu", lambda x: T.sum(T.affine(x, w1, b2, activation="relu")), pos(2, 3)),
        ("attend_read", lambda x: T.sum(T.attend_read(x, query)), u(2, 4, 3)),
        ("lstm_h", lambda x: T.sum(T.lstm_cell(x, *lstm_args)[0]), u(2, 4)),
        ("lstm_c", lambda x: T.sum(T.lstm_cell(x, *lstm_args)[1]), u(2, 4)),
    ]


@pytest.mark.parametrize("seed", range(100))
def test_every_op_gradcheck(seed):
    """Analytic gradients match central differences for every forward op."""
    rng = np.random.default_rng(seed)
    for name, f, x in _op_cases(rng):
        # constants inside each case are frozen at construction, so f is pure
        err = gradcheck(f, Tensor(x, requires_grad=True))
        assert err < 1e-5, f"{name} (seed {seed}): gradcheck error {err}"


class TestTapeSemantics:
    def test_backward_twice_doubles_gradients(self):
        x = t([[1.0, -2.0], [0.5, 3.0]], rg=True)
        w = t([[2.0], [1.0]], rg=True)
        with Tape() as tape:
            y = T.sum(T.matmul(x, w))
            tape.backward(y)
            once_x = x.grad.copy()
            once_w = w.grad.copy()
            tape.backward(y)
        assert np.array_equal(x.grad, 2.0 * once_x)
        assert np.array_equal(w.grad, 2.0 * once_w)

    def test_all_leaves_populated(self):
        a = t([[1.0, 2.0]], rg=True)
        b = t([[3.0], [4.0]], rg=True)
        c = t([[1.0]], rg=True)
        with Tape() as tape:
            y = T.sum(T.matmul(a, b) + c)
            tape.backward(y)
        assert a.grad is not None and b.grad is not None and c.grad is not None

    def test_no_recording_without_tape(self):
        x = t([1.0], rg=True)
        y = x * 2.0
        assert y.requires_grad and x.grad is None

    def test_shared_subexpression(self):
        x = t([2.0], rg=True)
        with Tape() as tape:
            h = x * 3.0
            y = T.sum(h * h)
            tape.backward(y)
        assert np.allclose(x.grad, 2.0 * 3.0 * 6.0 * 2.0 / 2.0)  # d(9x^2)/dx = 18x = 36


class TestErrors:
    def test_matmul_shape_error_names_op(self):
        with pytest.raises(ShapeError, match="matmul"):
            T.matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))

    def test_add_shape_error(self):
        with pytest.raises(ShapeError, match="add"):
            t(np.ones((2, 3))) + t(np.ones((4, 5)))

    def test_division_by_zero(self):
        with pytest.raises(NumericsError, match="div"):
            t([1.0]) / t([0.0])

    def test_log_domain(self):
        with pytest.raises(NumericsError, match="log"):
            T.log(t([-1.0]))

    def test_exp_overflow_surfaced(self):
        with pytest.raises(NumericsError, match="exp"):
            T.exp(t([1000.0]))

    def test_non_finite_input_rejected(self):
        with pytest.raises(NumericsError):
            Tensor(np.array([np.nan]))

    def test_narrow_out_of_range(self):
        with pytest.raises(ShapeError, match="narrow"):
            T.narrow(t(np.ones((2, 3))), -1, 2, 5)


class TestLstmCell:
    def _params(self, rng, n_in, n_hidden, zero=False):
        if zero:
            make = lambda *s: np.zeros(s)
        else:
            make = lambda *s: rng.normal(size=s, scale=0.5)
        return (
            Tensor(make(n_in, 4 * n_hidden)),
            Tensor(make(n_hidden, 4 * n_hidden)),
            Tensor(make(1, 4 * n_hidden)),
        )

    def test_zero_params_zero_state(self):
        rng = np.random.default_rng(0)
        wx, wh, b = self._params(rng, 3, 2, zero=True)
        h, c = T.lstm_cell(t(np.ones((1, 3))), t(np.zeros((1, 2))), t(np.zeros((1, 2))), wx, wh, b)
        assert np.array_equal(h.data, np.zeros((1, 2)))
        assert np.array_equal(c.data, np.zeros((1, 2)))

    def test_saturated_gates_preserve_cell(self):
        # forget gate driven to exactly 1, input gate to exactly 0
        b = np.zeros((1, 8))
        b[0, 0:2] = -500.0  # input gate -> 0
        b[0, 2:4] = 500.0  # forget gate -> 1
        wx, wh = Tensor(np.zeros((3, 8))), Tensor(np.zeros((2, 8)))
        c0 = t([[0.7, -1.3]])
        _, c1 = T.lstm_cell(t(np.ones((1, 3))), t(np.zeros((1, 2))), c0, wx, wh, Tensor(b))
        assert np.array_equal(c1.data, c0.data)

    def test_matches_scalar_reimplementation(self):
        rng = np.random.default_rng(7)
        n_in, n_h = 3, 2
        wx, wh, b = self._params(rng, n_in, n_h)
        x, h0, c0 = rng.normal(size=(1, n_in)), rng.normal(size=(1, n_h)), rng.normal(size=(1, n_h))
        h1, c1 = T.lstm_cell(t(x), t(h0), t(c0), wx, wh, b)

        def sig(v):
            return 1.0 / (1.0 + math.exp(-v))

        for j in range(n_h):
            gates = [
                sum(x[0, k] * wx.data[k, g * n_h + j] for k in range(n_in))
                + sum(h0[0, k] * wh.data[k, g * n_h + j] for k in range(n_h))
                + b.data[0, g * n_h + j]
                for g in range(4)
            ]
            c_ref = sig(gates[1]) * c0[0, j] + sig(gates[0]) * math.tanh(gates[2])
            h_ref = sig(gates[3]) * math.tanh(c_ref)
            assert abs(c1.data[0, j] - c_ref) < 1e-10
            assert abs(h1.data[0, j] - h_ref) < 1e-10

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(0)
        wx, wh, b = self._params(rng, 3, 2)
        with pytest.raises(ShapeError):
            T.lstm_cell(t(np.ones((2, 3))), t(np.ones((1, 2))), t(np.ones((1, 2))), wx, wh, b)


class TestCanonicalSum:
    def test_permutation_bitwise_invariant(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(40, 8))
        base = T.canonical_sum(t(x), axis=0).data
        for _ in range(20):
            perm = rng.permutation(40)
            assert np.array_equal(T.canonical_sum(t(x[perm]), axis=0).data, base)

    def test_plain_sum_may_drift_canonical_does_not(self):
        # the motivating case: reordering addends changes rounding of np.sum
        rng = np.random.default_rng(5)
        x = rng.normal(size=(1000, 3))
        perm = rng.permutation(1000)
        canonical = T.canonical_sum(t(x), axis=0).data
        canonical_p = T.canonical_sum(t(x[perm]), axis=0).data
        assert np.array_equal(canonical, canonical_p)
