import numpy as np
import pytest

from oracles import ade_loop, classification_loop, fde_loop, orientation_velocity_loop, pr_curve_loop
from streetcross import metrics


def _random_case(rng, shape=(3, 4, 6)):
    pred = rng.standard_normal(shape + (4,))
    gt = rng.standard_normal(shape + (4,))
    pred[..., 3] = rng.uniform(-180, 180, shape)
    gt[..., 3] = rng.uniform(-180, 180, shape)
    mask = (rng.random(shape) < 0.7).astype(float)
    mask.reshape(-1)[0] = 1.0
    return pred, gt, mask


class TestDisplacement:
    def test_identical(self):
        pred, _, mask = _random_case(np.random.default_rng(0))
        assert metrics.ade(pred, pred, mask) == 0.0
        assert metrics.fde(pred, pred, mask) == 0.0

    def test_constant_offset(self):
        gt = np.zeros((2, 5, 4))
        pred = gt.copy()
        pred[..., :2] = [0.3, 0.4]
        assert metrics.ade(pred, gt, np.ones((2, 5))) == pytest.approx(0.5, abs=1e-15)

    def test_fde_only_final(self):
        gt = np.zeros((1, 5, 4))
        pred = gt.copy()
        pred[0, :4, :2] = 100.0
        pred[0, 4, :2] = [0.0, 1.0]
        assert metrics.fde(pred, gt, np.ones((1, 5))) == 1.0

    def test_fde_masked_tail(self):
        gt = np.zeros((1, 12, 4))
        pred = gt.copy()
        pred[0, :, 0] = np.arange(12)
        mask = np.zeros((1, 12))
        mask[0, :6] = 1.0
        assert metrics.fde(pred, gt, mask) == 5.0

    def test_empty_mask(self):
        with pytest.raises(ValueError):
            metrics.ade(np.zeros((2, 3, 4)), np.zeros((2, 3, 4)), np.zeros((2, 3)))
        with pytest.raises(ValueError):
            metrics.fde(np.zeros((2, 3, 4)), np.zeros((2, 3, 4)), np.zeros((2, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            metrics.ade(np.zeros((2, 3, 4)), np.zeros((2, 4, 4)), np.ones((2, 3)))

    def test_translation_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            pred, gt, mask = _random_case(rng)
            shift = np.zeros(4)
            shift[:2] = rng.standard_normal(2) * 10
            assert abs(metrics.ade(pred + shift, gt + shift, mask) - metrics.ade(pred, gt, mask)) < 1e-12
            assert abs(metrics.fde(pred + shift, gt + shift, mask) - metrics.fde(pred, gt, mask)) < 1e-12

    def test_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            pred, gt, mask = _random_case(rng)
            assert metrics.ade(pred, gt, mask) == pytest.approx(ade_loop(pred, gt, mask), rel=1e-14)
            assert metrics.fde(pred, gt, mask) == pytest.approx(fde_loop(pred, gt, mask), rel=1e-14)


class TestOrientation:
    def test_identical(self):
        pred, _, mask = _random_case(np.random.default_rng(3))
        assert metrics.orientation_velocity_error(pred, pred, mask) == (0.0, 0.0)

    def test_wrap(self):
        pred = np.array([[[0.0, 0.0, 1.0, 10.0]]])
        gt = np.array([[[0.0, 0.0, 1.0, 350.0]]])
        yaw, _ = metrics.orientation_velocity_error(pred, gt, np.ones((1, 1)))
        assert yaw == pytest.approx(20.0)

    def test_states_converted(self):
        states = np.array([[[0.0, 0.0, 1.0, np.sqrt(0.5), np.sqrt(0.5)]]])
        np.testing.assert_allclose(metrics.to_points(states)[..., 3], 90.0)

    def test_brute_force(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            pred, gt, mask = _random_case(rng)
            yaw, vel = metrics.orientation_velocity_error(pred, gt, mask)
            ry, rv = orientation_velocity_loop(pred, gt, mask)
            assert yaw == pytest.approx(ry, rel=1e-12)
            assert vel == pytest.approx(rv, rel=1e-14)


class TestClassification:
    def test_perfect(self):
        y = np.array([0, 1, 2, 3, 1, 2])
        r = metrics.classification_report(y, y, 4)
        assert r.accuracy == 1.0 and r.precision == [1.0] * 4 and r.recall == [1.0] * 4
        np.testing.assert_array_equal(np.array(r.confusion), np.diag([1, 2, 2, 1]))

    def test_constant_predictor(self):
        y = np.repeat(np.arange(4), 5)
        assert metrics.classification_report(np.zeros(20, int), y, 4).accuracy == 0.25

    def test_rows_are_predictions(self):
        r = metrics.classification_report([1], [0], 2)
        assert r.confusion == [[0, 0], [1, 0]]

    def test_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            k = int(rng.integers(2, 5))
            p, t = rng.integers(0, k, 30), rng.integers(0, k, 30)
            r = metrics.classification_report(p, t, k)
            acc, prec, rec, cm = classification_loop(p, t, k)
            assert (r.accuracy, r.precision, r.recall, r.confusion) == (acc, prec, rec, cm)

    def test_positive_class(self):
        r = metrics.positive_class_report([0, 0, 1, 1], [0, 1, 1, 0], positive=0)
        assert (r.precision, r.recall, r.accuracy) == (0.5, 0.5, 0.5)


class TestPRCurve:
    def test_separable(self):
        curve = metrics.pr_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert (0.8, 1.0, 1.0) in curve

    def test_all_equal(self):
        assert metrics.pr_curve([0.5] * 4, [1, 0, 0, 0]) == [(0.5, 0.25, 1.0)]

    def test_errors(self):
        with pytest.raises(ValueError):
            metrics.pr_curve([], [])
        with pytest.raises(ValueError):
            metrics.pr_curve([1.5], [1])

    def test_brute_force(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            s = np.round(rng.random(25), 1)
            l = rng.random(25) < 0.4
            assert metrics.pr_curve(s, l) == pr_curve_loop(list(s), list(l))

    def test_csv(self, tmp_path):
        path = tmp_path / "pr.csv"
        metrics.write_pr_curve(path, metrics.pr_curve([0.9, 0.1], [1, 0]))
        assert path.read_text().splitlines() == ["threshold,precision,recall", "0.9,1.0,1.0", "0.1,0.5,1.0"]
