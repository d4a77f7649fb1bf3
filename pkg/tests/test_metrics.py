"""Evaluation metrics and the aggregate multi-task score."""

import numpy as np
import pytest

from partal_lab.metrics import (
    MetricsReport,
    MetricValue,
    delta_mtl,
    mean_angle_error,
    miou,
    rmse,
)


class TestRmse:
    def test_identical_is_zero(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 4))
        assert rmse(x, x) == 0.0

    def test_hand_computed(self):
        assert abs(rmse(np.zeros(2), np.array([3.0, 4.0])) - np.sqrt(12.5)) < 1e-12

    def test_homogeneous(self):
        gen = np.random.default_rng(1)
        a, b = gen.normal(size=10), gen.normal(size=10)
        np.testing.assert_allclose(rmse(2.5 * a, 2.5 * b), 2.5 * rmse(a, b), rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rmse(np.zeros(2), np.zeros(3))


def _unit_field(vec, H=4, W=4):
    f = np.zeros((3, H, W))
    for c in range(3):
        f[c] = vec[c]
    return f


class TestMeanAngleError:
    def test_identical_fields(self):
        f = _unit_field(np.array([0.0, 0.0, 1.0]))
        assert mean_angle_error(f, f) == 0.0

    def test_orthogonal_fields(self):
        a = _unit_field(np.array([1.0, 0.0, 0.0]))
        b = _unit_field(np.array([0.0, 1.0, 0.0]))
        assert abs(mean_angle_error(a, b) - 90.0) < 1e-9

    def test_antipodal_fields(self):
        a = _unit_field(np.array([0.0, 0.0, 1.0]))
        assert abs(mean_angle_error(-a, a) - 180.0) < 1e-9

    def test_prediction_normalized_internally(self):
        a = 7.3 * _unit_field(np.array([0.0, 1.0, 0.0]))
        b = _unit_field(np.array([0.0, 1.0, 0.0]))
        assert abs(mean_angle_error(a, b)) < 1e-9

    def test_zero_vector_warns_and_uses_up(self):
        pred = np.zeros((3, 2, 2))
        target = _unit_field(np.array([0.0, 0.0, 1.0]), 2, 2)
        with pytest.warns(UserWarning, match="zero-length"):
            assert abs(mean_angle_error(pred, target)) < 1e-9

    def test_symmetric_after_normalization(self):
        gen = np.random.default_rng(2)
        a = gen.normal(size=(3, 5, 5))
        b = gen.normal(size=(3, 5, 5))
        an = a / np.linalg.norm(a, axis=0, keepdims=True)
        bn = b / np.linalg.norm(b, axis=0, keepdims=True)
        assert abs(mean_angle_error(an, bn) - mean_angle_error(bn, an)) < 1e-9


class TestMiou:
    def test_perfect(self):
        t = np.random.default_rng(0).integers(0, 4, size=(6, 6))
        assert miou(t, t, 4) == 1.0

    def test_half_half_all_zero(self):
        """Target half 0 / half 1, prediction all 0: IoUs 0.5 and 0 -> 0.25."""
        target = np.array([0] * 8 + [1] * 8)
        pred = np.zeros(16, dtype=int)
        assert abs(miou(pred, target, 2) - 0.25) < 1e-12

    def test_disjoint_single_classes(self):
        assert miou(np.zeros(4, int), np.ones(4, int), 2) == 0.0

    def test_skips_absent_classes(self):
        pred = np.array([0, 0, 1, 1])
        target = np.array([0, 0, 1, 1])
        assert miou(pred, target, 10) == 1.0

    def test_relabeling_equivariance(self):
        gen = np.random.default_rng(3)
        for _ in range(20):
            pred = gen.integers(0, 5, size=40)
            target = gen.integers(0, 5, size=40)
            perm = gen.permutation(5)
            assert abs(miou(pred, target, 5) - miou(perm[pred], perm[target], 5)) < 1e-12

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            miou(np.array([0, 5]), np.array([0, 1]), 4)


def _report(**values):
    directions = {"err": False, "iou": True}
    vals = [MetricValue(name, "rmse" if not directions.get(name[:3], False) else "miou",
                        v, directions.get(name[:3], False))
            for name, v in values.items()]
    return MetricsReport(values=vals)


class TestDeltaMtl:
    def test_equal_reports_zero(self):
        r = _report(err_a=0.5, iou_b=0.7)
        assert delta_mtl(r, r) == 0.0

    def test_worked_example(self):
        """+20% RMSE and -20% mIoU average to +0.20."""
        ref = _report(err_a=0.25, iou_b=0.75)
        got = _report(err_a=0.30, iou_b=0.60)
        assert abs(delta_mtl(got, ref) - 0.20) < 1e-12

    def test_improvement_is_monotone(self):
        ref = _report(err_a=0.25, iou_b=0.75)
        worse = _report(err_a=0.30, iou_b=0.60)
        better = _report(err_a=0.28, iou_b=0.65)
        assert delta_mtl(better, ref) < delta_mtl(worse, ref)

    def test_modality_order_invariant(self):
        ref = _report(err_a=0.25, iou_b=0.75)
        got = _report(err_a=0.30, iou_b=0.60)
        ref_r = MetricsReport(values=list(reversed(ref.values)))
        assert abs(delta_mtl(got, ref) - delta_mtl(got, ref_r)) < 1e-15

    def test_zero_reference_rejected(self):
        with pytest.raises(ValueError):
            delta_mtl(_report(err_a=0.1), _report(err_a=0.0))
