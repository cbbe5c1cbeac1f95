import numpy as np
import pytest

from oracles import disc_dataset, randomize_bn_stats, skip_only_logits, zero_residual_branches
from streetcross import attenet as tl
from streetcross.autodiff import Tensor, softmax
from streetcross.autodiff.ops import log_softmax
from streetcross.labels import TrafficLightState

TINY = dict(widths=(4, 4, 8, 8, 8), units=(1, 1, 1, 1, 1), se_reduction=4, input_size=16, dropout=0.0)


def _se_params(rng, c, r, scale=1.0):
    return (Tensor(rng.standard_normal((r, c, 1, 1)) * scale), Tensor(rng.standard_normal(r) * scale),
            Tensor(rng.standard_normal((c, r, 1, 1)) * scale), Tensor(rng.standard_normal(c) * scale))


class TestSEBlock:
    def test_zero_weights_halve(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((8, 5, 5))
        zeros = (Tensor(np.zeros((2, 8, 1, 1))), Tensor(np.zeros(2)), Tensor(np.zeros((8, 2, 1, 1))),
                 Tensor(np.zeros(8)))
        out = tl.se_block(x, *zeros).data
        np.testing.assert_array_equal(out, 0.5 * x)

    def test_constant_channel_squeeze(self):
        rng = np.random.default_rng(1)
        w1, b1, w2, b2 = _se_params(rng, 4, 1)
        v = rng.standard_normal(4)
        x = np.broadcast_to(v[:, None, None], (4, 3, 3)).copy()
        z = v.reshape(1, 4, 1, 1)
        h = np.einsum("rc,bcij->brij", w1.data[:, :, 0, 0], z) + b1.data.reshape(1, -1, 1, 1)
        h = np.where(h > 0, h, np.expm1(np.minimum(h, 0)))
        g = np.einsum("cr,brij->bcij", w2.data[:, :, 0, 0], h) + b2.data.reshape(1, -1, 1, 1)
        gates = 1 / (1 + np.exp(-g))
        np.testing.assert_allclose(tl.se_block(x, w1, b1, w2, b2).data, x * gates[0], atol=1e-12)

    def test_gates_bounded(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            x = rng.standard_normal((8, 4, 4)) * 2
            out = tl.se_block(x, *_se_params(rng, 8, 2)).data
            ratio = out / x
            assert np.all((ratio > 0) & (ratio < 1))
            assert np.all(np.abs(out).max(axis=(1, 2)) <= np.abs(x).max(axis=(1, 2)))

    def test_shape_mismatch(self):
        rng = np.random.default_rng(3)
        with pytest.raises(ValueError):
            tl.se_block(np.ones((6, 2, 2)), *_se_params(rng, 8, 2))


class TestNetwork:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            tl.AtteNetConfig(widths=(4, 4, 4, 4))
        with pytest.raises(ValueError):
            tl.AtteNetConfig(widths=(6, 8, 8, 8, 8))
        with pytest.raises(ValueError):
            tl.AtteNetConfig(n_classes=5)

    def test_three_class_head(self):
        model = tl.build(tl.AtteNetConfig(n_classes=3, **TINY))
        assert model.params["fc.w"].shape == (8, 3)
        assert forward_shape(model) == (3,)

    def test_simplex(self):
        rng = np.random.default_rng(4)
        model = tl.build(tl.AtteNetConfig(**TINY), seed=1)
        p = tl.forward_classify(model, rng.random((5, 16, 16, 3)))
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_zeroed_head_uniform(self):
        model = tl.build(tl.AtteNetConfig(**TINY))
        model.params["fc.w"].data[...] = 0.0
        p = tl.forward_classify(model, np.random.default_rng(5).random((16, 16, 3)))
        np.testing.assert_array_equal(p, np.full(4, 0.25))

    def test_probabilities_from_features(self):
        rng = np.random.default_rng(6)
        model = tl.build(tl.AtteNetConfig(**TINY), seed=2)
        img = rng.random((2, 16, 16, 3))
        feats = tl.features(model, img).data
        z = feats.mean(axis=(2, 3)) @ model.params["fc.w"].data + model.params["fc.b"].data
        np.testing.assert_allclose(tl.forward_classify(model, img), softmax(z).data, atol=1e-12)

    def test_wrong_size(self):
        model = tl.build(tl.AtteNetConfig(**TINY))
        with pytest.raises(ValueError):
            tl.forward_classify(model, np.zeros((12, 12, 3)))

    def test_infer_deterministic(self):
        rng = np.random.default_rng(7)
        model = randomize_bn_stats(tl.build(tl.AtteNetConfig(**TINY)), rng)
        img = rng.random((16, 16, 3))
        np.testing.assert_array_equal(tl.forward_classify(model, img), tl.forward_classify(model, img))

    def test_zero_conv_unit_is_identity(self):
        rng = np.random.default_rng(8)
        model = tl.build(tl.AtteNetConfig(widths=(4, 4, 8, 8, 8), units=(2, 1, 1, 1, 1), se_reduction=4,
                                          input_size=16), seed=0)
        zero_residual_branches(model)
        x = Tensor(rng.standard_normal((2, 4, 8, 8)))
        out = tl.preact_unit(model, "stage0.unit1", x, 1, train=False)
        np.testing.assert_array_equal(out.data, x.data)

    def test_skip_only_reference(self):
        rng = np.random.default_rng(9)
        model = randomize_bn_stats(tl.build(tl.AtteNetConfig(**TINY), seed=3), rng)
        zero_residual_branches(model)
        img = rng.random((3, 16, 16, 3))
        np.testing.assert_array_equal(tl.logits(model, img).data, skip_only_logits(model, img))
        # branch-internal parameters no longer matter
        for name, p in model.params.items():
            if ".bn2." in name or ".bn3." in name:
                p.data = p.data + 1.0
        np.testing.assert_array_equal(tl.logits(model, img).data, skip_only_logits(model, img))


def forward_shape(model):
    size = model.config.input_size
    return tl.forward_classify(model, np.zeros((size, size, 3))).shape


class TestData:
    def test_crop_window(self):
        rng = np.random.default_rng(0)
        img = rng.random((40, 40, 3))
        crop = tl.random_crop(img, 32, np.random.default_rng(1))
        assert crop.shape == (32, 32, 3)
        i, j = np.random.default_rng(1).integers(0, 9, 2)
        np.testing.assert_array_equal(crop, img[i:i + 32, j:j + 32])
        np.testing.assert_array_equal(tl.center_crop(img, 32), img[4:36, 4:36])

    def test_crop_too_large(self):
        with pytest.raises(ValueError):
            tl.center_crop(np.zeros((8, 8, 3)), 16)

    def test_label_outside_class_set(self):
        with pytest.raises(ValueError):
            tl.label_indices([TrafficLightState.YELLOW], 3)


class TestTraining:
    def test_empty(self):
        with pytest.raises(ValueError):
            tl.train_classifier(tl.build(tl.AtteNetConfig(**TINY)), [], [])

    def test_deterministic_history(self):
        images, labels = disc_dataset(16, seed=0, size=24, margin=4)

        def run():
            model = tl.build(tl.AtteNetConfig(**TINY), seed=0)
            return tl.train_classifier(model, images, labels, tl.ClassifierTrainConfig(epochs=2, batch_size=8))

        assert run() == run()

    def test_constant_predictor_report(self):
        images, labels = disc_dataset(8, seed=1, size=24, margin=4)
        model = tl.build(tl.AtteNetConfig(**TINY))
        model.params["fc.w"].data[...] = 0.0
        model.params["fc.b"].data[...] = [5.0, 0.0, 0.0, 0.0]
        report = tl.eval_classifier(model, images, labels)
        assert report.accuracy == 0.25
        assert report.confusion[0] == [2, 2, 2, 2]


def test_log_softmax_consistency():
    z = np.random.default_rng(0).standard_normal((3, 4))
    np.testing.assert_allclose(np.exp(log_softmax(z)).sum(axis=1), 1.0, atol=1e-12)
