import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streetcross import autodiff as ad
from streetcross.autodiff import Tensor


class TestCausalConv:
    x = np.array([[1.0, 2.0, 3.0, 4.0]])

    def test_identity_kernel(self):
        y = ad.causal_conv1d(self.x, np.array([[[1.0, 0.0]]]), 1)
        np.testing.assert_array_equal(y.data, [[1, 2, 3, 4]])

    def test_sum_kernel(self):
        y = ad.causal_conv1d(self.x, np.array([[[1.0, 1.0]]]), 1)
        np.testing.assert_array_equal(y.data, [[1, 3, 5, 7]])

    def test_dilated_kernel(self):
        y = ad.causal_conv1d(self.x, np.array([[[1.0, 1.0]]]), 2)
        np.testing.assert_array_equal(y.data, [[1, 2, 4, 6]])

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            ad.causal_conv1d(self.x, np.ones((1, 2, 2)), 1)

    def test_bad_dilation(self):
        with pytest.raises(ValueError):
            ad.causal_conv1d(self.x, np.ones((1, 1, 2)), 0)

    def test_causality(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.standard_normal((3, 12))
            k1 = rng.standard_normal((4, 3, 3))
            k2 = rng.standard_normal((2, 4, 2))
            t_prime = int(rng.integers(1, 12))
            y0 = ad.causal_conv1d(ad.tanh(ad.causal_conv1d(x, k1, 2)), k2, 3).data
            x2 = x.copy()
            x2[:, t_prime:] += rng.standard_normal((3, 12 - t_prime))
            y1 = ad.causal_conv1d(ad.tanh(ad.causal_conv1d(x2, k1, 2)), k2, 3).data
            assert np.max(np.abs(y0[:, :t_prime] - y1[:, :t_prime])) < 1e-12

    def test_matches_direct_sum(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 3, 9))
        k = rng.standard_normal((4, 3, 5))
        y = ad.causal_conv1d(x, k, 2).data
        ref = np.zeros((2, 4, 9))
        for b in range(2):
            for c in range(4):
                for t in range(9):
                    for ci in range(3):
                        for j in range(5):
                            s = t - j * 2
                            if s >= 0:
                                ref[b, c, t] += k[c, ci, j] * x[b, ci, s]
        np.testing.assert_allclose(y, ref, atol=1e-12)


class TestPointwise:
    def test_tanh_zero(self):
        assert ad.tanh(np.array(0.0)).item() == 0.0

    def test_elu(self):
        assert ad.elu(np.array(1.0)).item() == 1.0
        assert ad.elu(np.array(-50.0)).item() == pytest.approx(-1.0)

    def test_uniform_cross_entropy(self):
        loss = ad.softmax_cross_entropy(np.zeros(4), 2)
        assert loss.item() == pytest.approx(np.log(4.0), abs=1e-12)

    def test_cross_entropy_bad_label(self):
        with pytest.raises(ValueError):
            ad.softmax_cross_entropy(np.zeros(4), 4)

    def test_global_avg_pool(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        assert ad.global_avg_pool(x).data[0] == 2.5

    def test_dense_shape_mismatch(self):
        with pytest.raises(ValueError):
            ad.dense(np.ones((2, 3)), np.ones((4, 1)))

    def test_dropout_bad_probability(self):
        with pytest.raises(ValueError):
            ad.dropout(np.ones(3), 1.0, 0, True)

    def test_dropout_infer_identity(self):
        x = np.random.default_rng(0).standard_normal((5, 6))
        np.testing.assert_array_equal(ad.dropout(x, 0.2, 0, train=False).data, x)

    def test_batchnorm_infer_affine(self):
        rng = np.random.default_rng(0)
        state = ad.BatchNormState(rng.standard_normal(3), rng.uniform(0.5, 2.0, 3))
        gamma, beta = rng.standard_normal(3), rng.standard_normal(3)
        x = rng.standard_normal((4, 3, 2, 2))
        a = ad.batchnorm(x, gamma, beta, state, train=False).data
        b = ad.batchnorm(x, gamma, beta, state, train=False).data
        np.testing.assert_array_equal(a, b)
        scale = gamma / np.sqrt(state.running_var + state.eps)
        ref = (x - state.running_mean[None, :, None, None]) * scale[None, :, None, None] + beta[None, :, None, None]
        np.testing.assert_allclose(a, ref, atol=1e-12)

    def test_concat_channels_mismatch(self):
        with pytest.raises(ValueError):
            ad.concat_channels(np.ones((1, 2, 3, 3)), np.ones((1, 2, 4, 3)))


class TestBackward:
    def test_square(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        (x * x).backward()
        assert x.grad == 6.0

    def test_tanh_slope(self):
        x = Tensor(np.array(0.0), requires_grad=True)
        ad.tanh(x).backward()
        assert x.grad == 1.0

    def test_non_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (x * 2.0).backward()

    def test_unreachable_gets_zero(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = Tensor(np.ones(2), requires_grad=True)
        g = ad.grad((x * x).sum(), [x, y])
        np.testing.assert_array_equal(g[1], np.zeros(2))

    def test_conv_net_finite_differences(self):
        rng = np.random.default_rng(0)
        arrays = [rng.standard_normal((2, 3, 10)), rng.standard_normal((4, 3, 3)) * 0.5,
                  rng.standard_normal((4, 4, 3)) * 0.5, rng.standard_normal((1, 4, 3)) * 0.5]

        def build(t):
            h = ad.tanh(ad.causal_conv1d(t[0], t[1], 1))
            h = ad.tanh(ad.causal_conv1d(h, t[2], 2))
            return ad.causal_conv1d(h, t[3], 4).sum()

        assert ad.check_function(build, arrays) < 1e-4

    def test_linearity(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            w = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
            x = rng.standard_normal((5, 3))
            a, b = rng.standard_normal(2)

            def l1():
                return ad.tanh(ad.dense(x, w)).sum()

            def l2():
                return ad.elu(ad.dense(x, w) * 2.0).mean()

            g1 = ad.grad(l1(), [w])[0]
            g2 = ad.grad(l2(), [w])[0]
            gc = ad.grad(l1() * a + l2() * b, [w])[0]
            np.testing.assert_allclose(gc, a * g1 + b * g2, atol=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 3), st.integers(2, 8), st.integers(1, 3), st.integers(0, 10**6))
    def test_conv_gradcheck_property(self, c_in, k, t, d, seed):
        rng = np.random.default_rng(seed)
        arrays = [rng.standard_normal((c_in, t)), rng.standard_normal((2, c_in, k))]
        w = rng.standard_normal((2, t))
        err = ad.check_function(lambda ts: (ad.causal_conv1d(ts[0], ts[1], d) * w).sum(), arrays)
        assert err < 1e-4

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=1, max_size=8))
    def test_finite_outputs(self, values):
        x = np.array(values)
        for f in (ad.tanh, ad.elu, ad.relu, ad.sigmoid, ad.softmax):
            assert np.all(np.isfinite(f(x).data))


class TestClip:
    def test_halves(self):
        g = [np.full(4, 10.0)]  # norm 20
        np.testing.assert_array_equal(ad.clip_global_norm(g, 10.0)[0], np.full(4, 5.0))

    def test_unchanged(self):
        g = [np.array([3.0, 4.0])]
        np.testing.assert_array_equal(ad.clip_global_norm(g, 10.0)[0], g[0])

    def test_random_norm(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            g = [rng.standard_normal(s) * rng.uniform(0.1, 10) for s in [(3,), (2, 4), (5,)]]
            pre = ad.global_norm(g)
            post = ad.global_norm(ad.clip_global_norm(g, 10.0))
            assert abs(post - min(pre, 10.0)) < 1e-12

    def test_invalid_norm(self):
        with pytest.raises(ValueError):
            ad.clip_global_norm([np.ones(2)], 0.0)


class TestOptimizers:
    def test_adam_first_step(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        ad.optimizer_step(ad.adam(5e-4), [p], [np.array([1.0])])
        np.testing.assert_allclose(p.data, [-5e-4 / (1 + 1e-8)], rtol=1e-12)

    def test_sgd_plain_step(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        ad.optimizer_step(ad.sgd(0.1, momentum=0.0, decay_end_factor=None), [p], [np.array([2.0])])
        np.testing.assert_allclose(p.data, [-0.2], rtol=1e-15)

    def test_poly_decay_reaches_end_factor(self):
        state = ad.sgd(4e-3, decay_steps=10)
        state.step = 10
        assert state.current_lr() == pytest.approx(2e-4)

    def test_step_counter_and_shapes(self):
        p = Tensor(np.zeros((2, 3)), requires_grad=True)
        state = ad.adam()
        for _ in range(3):
            ad.optimizer_step(state, [p], [np.ones((2, 3))])
        assert state.step == 3
        assert state.m[0].shape == (2, 3) and state.v[0].shape == (2, 3)
        with pytest.raises(ValueError):
            ad.optimizer_step(state, [p], [np.ones(3)])

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(7)
            w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
            x = rng.standard_normal((6, 3))
            state = ad.adam(1e-2)
            traj = []
            for _ in range(5):
                g = ad.grad(ad.tanh(ad.dense(x, w)).sum(), [w])
                ad.optimizer_step(state, [w], ad.clip_global_norm(g))
                traj.append(w.data.copy())
            return np.stack(traj)

        assert run().tobytes() == run().tobytes()
