import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import central_difference, conv2d_loops, conv_transpose2d_loops, scalar_adam
from ocgan import ops
from ocgan.gradcheck import TOLERANCE, run_suite
from ocgan.optim import AdamState, adam_step
from ocgan.tensor import FLOAT64, Tape, Tensor, backward, no_grad


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad, dtype=FLOAT64)


def rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = t64(rng.standard_normal((1, 1, 4, 4)))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        out = ops.conv2d(x, t64(k), t64([0.0]), stride=1, padding=1)
        np.testing.assert_array_equal(out.data, x.data)

    def test_stride_two_shape(self, rng):
        x = t64(rng.standard_normal((1, 1, 4, 4)))
        out = ops.conv2d(x, t64(rng.standard_normal((1, 1, 3, 3))), t64([0.0]), stride=2, padding=1)
        assert out.shape == (1, 1, 2, 2)

    def test_matches_loop_oracle(self, rng):
        x = rng.standard_normal((1, 2, 5, 5))
        k = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        out = ops.conv2d(t64(x), t64(k), t64(b), 1, 0).data
        assert rel(out, conv2d_loops(x, k, b, 1, 0)) <= 1e-6

    def test_channel_mismatch_names_both_shapes(self):
        x = t64(np.zeros((1, 2, 4, 4)))
        k = t64(np.zeros((1, 3, 3, 3)))
        with pytest.raises(ValueError) as err:
            ops.conv2d(x, k, None, 1, 1)
        assert "(1, 2, 4, 4)" in str(err.value) and "(1, 3, 3, 3)" in str(err.value)

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(ValueError):
            ops.conv2d(t64(np.zeros((1, 1, 2, 2))), t64(np.zeros((1, 1, 5, 5))), None, 1, 1)

    def test_f32_stays_f32(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 4, 4)).astype(np.float32))
        k = Tensor(rng.standard_normal((2, 1, 3, 3)).astype(np.float32))
        assert ops.conv2d(x, k, None, 1, 1).dtype == np.float32


class TestConvTranspose2d:
    def test_shape(self, rng):
        out = ops.conv_transpose2d(t64(rng.standard_normal((1, 1, 2, 2))), t64(rng.standard_normal((1, 1, 2, 2))),
                                   t64([0.0]), stride=2, padding=0)
        assert out.shape == (1, 1, 4, 4)

    def test_zero_input_gives_bias(self, rng):
        b = np.array([0.5, -2.0])
        out = ops.conv_transpose2d(t64(np.zeros((1, 3, 3, 3))), t64(rng.standard_normal((3, 2, 4, 4))), t64(b), 2, 1)
        np.testing.assert_array_equal(out.data, np.broadcast_to(b.reshape(1, 2, 1, 1), out.shape))

    def test_matches_loop_oracle(self, rng):
        x = rng.standard_normal((2, 3, 3, 4))
        k = rng.standard_normal((3, 2, 4, 4))
        b = rng.standard_normal(2)
        out = ops.conv_transpose2d(t64(x), t64(k), t64(b), 2, 1).data
        assert rel(out, conv_transpose2d_loops(x, k, b, 2, 1)) <= 1e-6

    def test_adjoint_identity_with_oracle(self, rng):
        # inner products both computed with the loop oracles
        k = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal((1, 3, 3, 3))
        a = rng.standard_normal((1, 2, 5, 5))
        lhs = np.sum(conv2d_loops(a, k, None, 2, 1) * b)
        rhs = np.sum(a * conv_transpose2d_loops(b, k, None, 2, 1))
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))
        lib_lhs = np.sum(ops.conv2d(t64(a), t64(k), None, 2, 1).data * b)
        lib_rhs = np.sum(a * ops.conv_transpose2d(t64(b), t64(k), None, 2, 1).data)
        assert abs(lib_lhs - lib_rhs) <= 1e-6 * max(1.0, abs(lib_lhs))
        assert abs(lib_lhs - lhs) <= 1e-6 * max(1.0, abs(lhs))

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            ops.conv_transpose2d(t64(np.zeros((1, 2, 2, 2))), t64(np.zeros((3, 1, 2, 2))), None, 2, 0)


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    stride=st.integers(1, 3),
    padding=st.integers(0, 2),
    kernel=st.integers(1, 4),
    cin=st.integers(1, 3),
    cout=st.integers(1, 3),
    hb=st.integers(1, 4),
    wb=st.integers(1, 4),
)
def test_adjoint_identity_random_configs(seed, stride, padding, kernel, cin, cout, hb, wb):
    rng = np.random.default_rng(seed)
    ha = (hb - 1) * stride - 2 * padding + kernel
    wa = (wb - 1) * stride - 2 * padding + kernel
    if ha < 1 or wa < 1 or ha + 2 * padding < kernel or wa + 2 * padding < kernel:
        return
    k = rng.standard_normal((cout, cin, kernel, kernel))
    a = rng.standard_normal((2, cin, ha, wa))
    b = rng.standard_normal((2, cout, hb, wb))
    conv = ops.conv2d(t64(a), t64(k), None, stride, padding).data
    assert conv.shape == b.shape
    lhs = np.sum(conv * b)
    rhs = np.sum(a * ops.conv_transpose2d(t64(b), t64(k), None, stride, padding).data)
    assert abs(lhs - rhs) <= 1e-6 * max(1.0, abs(lhs))
    assert rel(conv, conv2d_loops(a, k, None, stride, padding)) <= 1e-6


class TestElementwise:
    def test_sigmoid_zero(self):
        assert ops.sigmoid(t64([0.0])).data[0] == 0.5

    def test_leaky_relu(self):
        assert ops.elementwise("leaky_relu", t64([-1.0]), slope=0.2).data[0] == pytest.approx(-0.2)

    def test_dropout_rate_zero_is_identity(self, rng):
        x = t64(rng.standard_normal((3, 4)))
        np.testing.assert_array_equal(ops.dropout(x, 0.0, seed=5).data, x.data)

    def test_dropout_deterministic_and_scaled(self, rng):
        x = t64(np.ones((50, 50)))
        a = ops.dropout(x, 0.4, seed=[1, 2]).data
        np.testing.assert_array_equal(a, ops.dropout(x, 0.4, seed=[1, 2]).data)
        assert set(np.unique(a)) <= {0.0, 1.0 / 0.6}
        assert not np.array_equal(a, ops.dropout(x, 0.4, seed=[1, 3]).data)

    @pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
    def test_dropout_rate_precondition(self, rate):
        with pytest.raises(ValueError):
            ops.dropout(t64([1.0]), rate, seed=0)

    def test_ranges(self, rng):
        x = t64(rng.standard_normal(1000) * 10)
        s, t = ops.sigmoid(x).data, ops.tanh(x).data
        assert np.all((s >= 0) & (s <= 1)) and np.all((t >= -1) & (t <= 1))
        moderate = t64(rng.uniform(-5, 5, 100))
        assert np.all((ops.sigmoid(moderate).data > 0) & (ops.sigmoid(moderate).data < 1))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ops.elementwise("softplus", t64([1.0]))


class TestInstanceNorm:
    def test_constant_channel_is_zero(self):
        out = ops.instance_norm(t64(np.full((1, 1, 3, 3), 7.0)), t64([1.0]), t64([0.0]), 1e-5)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_two_point_symmetry(self):
        x = t64(np.array([1.0, 3.0]).reshape(1, 1, 1, 2))
        out = ops.instance_norm(x, t64([1.0]), t64([0.0]), 1e-5).data.ravel()
        # variance 1, so epsilon shrinks the result by 1/sqrt(1 + eps)
        np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-5)

    def test_moments_recomputed(self, rng):
        out = ops.instance_norm(t64(rng.standard_normal((1, 2, 4, 4)) * 3 + 1), t64([1.0, 1.0]), t64([0.0, 0.0]))
        assert np.max(np.abs(out.data.mean(axis=(2, 3)))) <= 1e-5
        np.testing.assert_allclose(out.data.var(axis=(2, 3)), 1.0, atol=1e-4)


class TestConcat:
    def test_shape(self):
        out = ops.concat_channels(t64(np.zeros((1, 1, 2, 2))), t64(np.zeros((1, 2, 2, 2))))
        assert out.shape == (1, 3, 2, 2)

    def test_round_trip(self, rng):
        x = t64(rng.standard_normal((1, 2, 3, 3)))
        back = ops.slice_channels(ops.concat_channels(x, t64(np.zeros((1, 4, 3, 3)))), 0, 2)
        np.testing.assert_array_equal(back.data, x.data)

    def test_spatial_mismatch(self):
        with pytest.raises(ValueError):
            ops.concat_channels(t64(np.zeros((1, 1, 2, 2))), t64(np.zeros((1, 1, 3, 2))))

    def test_backward_of_sum_is_ones(self, rng):
        a = t64(rng.standard_normal((1, 1, 2, 2)), grad=True)
        b = t64(rng.standard_normal((1, 2, 2, 2)), grad=True)
        backward(ops.sum(ops.concat_channels(a, b)))
        for t in (a, b):
            fd = central_difference(lambda: ops.sum(ops.concat_channels(a, b)).item(), t.data, (0, 0, 1, 1))
            assert fd == pytest.approx(1.0, abs=1e-8)
            np.testing.assert_array_equal(t.grad, 1.0)


class TestBackward:
    def test_square_sum(self):
        x = t64([1.0, 2.0, 3.0], grad=True)
        backward(ops.sum(ops.mul(x, x)))
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_disconnected_leaf_is_zero(self):
        x = t64([1.0, 2.0], grad=True)
        unused = t64([5.0], grad=True)
        backward(ops.sum(x))
        np.testing.assert_array_equal(unused.grad, 0.0)

    def test_non_scalar_rejected(self):
        x = t64([1.0, 2.0], grad=True)
        with pytest.raises(ValueError):
            backward(ops.mul(x, 2.0))

    def test_composed_pipeline_matches_finite_differences(self, rng):
        x = t64(rng.standard_normal((1, 2, 5, 5)), grad=True)
        k = t64(rng.standard_normal((3, 2, 3, 3)), grad=True)
        b = t64(rng.standard_normal(3), grad=True)
        g, s = t64(rng.uniform(0.5, 1.5, 3), grad=True), t64(rng.standard_normal(3), grad=True)

        def loss():
            return ops.mean(ops.leaky_relu(ops.instance_norm(ops.conv2d(x, k, b, 1, 1), g, s), 0.2))

        backward(loss())
        for t in (x, k, g, s):
            for _ in range(5):
                idx = tuple(int(rng.integers(n)) for n in t.shape)
                fd = central_difference(lambda: loss().item(), t.data, idx)
                a = t.grad[idx]
                assert abs(a - fd) / max(abs(a), abs(fd), 1e-6) <= 1e-5

    def test_accumulates_twice(self, rng):
        x = t64(rng.standard_normal(4), grad=True)
        with Tape() as tape:
            loss = ops.sum(ops.mul(ops.tanh(x), x))
        backward(loss, tape)
        once = x.grad.copy()
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, 2 * once)

    def test_tape_matches_graph_walk(self, rng):
        w = t64(rng.standard_normal(3), grad=True)
        with Tape() as tape:
            h = ops.mul(w, w)
            loss = ops.sum(ops.add(h, h))
        assert [n.name for n in tape.nodes] == ["mul", "add", "sum"]
        backward(loss, tape)
        via_tape = w.grad.copy()
        w.zero_grad()
        backward(loss)
        np.testing.assert_array_equal(w.grad, via_tape)

    def test_no_grad_records_nothing(self):
        x = t64([1.0], grad=True)
        with Tape() as tape, no_grad():
            y = ops.mul(x, 3.0)
        assert len(tape) == 0 and y.node is None

    def test_deterministic_outputs(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 8, 8)).astype(np.float32))
        k = Tensor(rng.standard_normal((4, 3, 4, 4)).astype(np.float32))
        a = ops.conv2d(x, k, None, 2, 1).data
        b = ops.conv2d(x, k, None, 2, 1).data
        assert a.tobytes() == b.tobytes()


class TestAdam:
    def _param(self, value, grad):
        p = t64(value, grad=True)
        p.grad = np.asarray(grad, dtype=np.float64)
        return {"w": p}

    def test_zero_gradient_leaves_params(self):
        params = self._param([1.0, -2.0], [0.0, 0.0])
        state = AdamState.for_params(params, learning_rate=0.1)
        adam_step(params, state)
        np.testing.assert_array_equal(params["w"].data, [1.0, -2.0])
        assert state.step_count == 1

    @pytest.mark.parametrize("g", [1e-3, -0.5, 7.0])
    def test_first_step_magnitude_is_learning_rate(self, g):
        params = self._param([0.0], [g])
        state = AdamState.for_params(params, learning_rate=0.01, epsilon=1e-8)
        adam_step(params, state)
        assert abs(params["w"].data[0]) == pytest.approx(0.01, rel=0.01)
        assert math.copysign(1, params["w"].data[0]) == -math.copysign(1, g)

    def test_ten_step_trajectory_matches_scalar_oracle(self):
        # f(theta) = 1.5 * (theta - 2)^2
        lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
        expected = scalar_adam(0.3, lambda th: 3.0 * (th - 2.0), 10, lr, b1, b2, eps)
        p = t64([0.3], grad=True)
        params = {"w": p}
        state = AdamState.for_params(params, learning_rate=lr, beta1=b1, beta2=b2, epsilon=eps)
        for want in expected:
            p.zero_grad()
            backward(ops.mul(ops.mul(ops.sub(p, 2.0), ops.sub(p, 2.0)), 1.5).sum())
            adam_step(params, state)
            assert abs(p.data[0] - want) <= 1e-10
            assert np.all(state.second_moment["w"] >= 0)

    def test_gradients_untouched(self):
        params = self._param([1.0], [0.25])
        adam_step(params, AdamState.for_params(params))
        np.testing.assert_array_equal(params["w"].grad, [0.25])

    def test_shape_mismatch(self):
        params = self._param([1.0, 2.0], [0.1, 0.1])
        state = AdamState.for_params(params)
        state.first_moment["w"] = np.zeros(3)
        with pytest.raises(ValueError):
            adam_step(params, state)


def test_every_op_passes_finite_difference_check():
    results = run_suite(seed=0)
    assert len(results) >= 15
    for r in results:
        assert r.probes >= 20
        assert r.max_rel_error <= TOLERANCE, (r.name, r.max_rel_error)
