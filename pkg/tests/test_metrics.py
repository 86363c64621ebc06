"""Metrics vs a from-scratch reimplementation plus the handcrafted cases.

The brute-force twin (tests/metrics_oracle.py) shares no code with
lightfcx.metrics: plain Python loops, its own IoU and center math.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lightfcx.errors import ContractError
from lightfcx.metrics import (evaluate_longterm, evaluate_ope, f_score,
                              normalized_precision, precision_rate,
                              success_rate)
from metrics_oracle import (bf_f_score, bf_norm_precision, bf_precision,
                            bf_success, random_tracks)


class TestBruteForceAgreement:
    def test_fifty_random_tracks(self):
        rng = np.random.default_rng(0)
        for i in range(50):
            pred, gt = random_tracks(rng, absent_frames=(i % 3 == 0))
            curve, auc = success_rate(pred, gt)
            bf_curve, bf_auc = bf_success(pred, gt)
            assert np.abs(curve - bf_curve).max() < 1e-12
            assert abs(auc - bf_auc) < 1e-12
            curve, pr20 = precision_rate(pred, gt)
            bf_curve, bf_pr = bf_precision(pred, gt)
            assert np.abs(curve - bf_curve).max() < 1e-12
            assert abs(pr20 - bf_pr) < 1e-12
            curve, npr = normalized_precision(pred, gt)
            bf_curve, bf_npr = bf_norm_precision(pred, gt)
            assert np.abs(curve - bf_curve).max() < 1e-12
            assert abs(npr - bf_npr) < 1e-12
            conf = rng.random(len(pred))
            got = f_score(pred, conf, gt)
            f, pr, re = bf_f_score(pred, conf, gt)
            assert abs(got["f"] - f) < 1e-12
            assert abs(got["pr"] - pr) < 1e-12
            assert abs(got["re"] - re) < 1e-12


class TestSuccessRate:
    def test_perfect_track_auc(self):
        gt = np.array([[10.0, 10, 20, 20]] * 5)
        curve, auc = success_rate(gt.copy(), gt)
        # strict '>' leaves the t=1.0 bin empty: 20 of 21 thresholds count
        assert auc == pytest.approx(20.0 / 21.0)
        assert curve[-1] == 0.0 and curve[0] == 1.0

    def test_fully_disjoint_track(self):
        gt = np.array([[0.0, 0, 10, 10]] * 4)
        pred = np.array([[100.0, 100, 10, 10]] * 4)
        curve, auc = success_rate(pred, gt)
        assert auc == 0.0  # IoU 0 is not > 0

    def test_handcrafted_iou_ladder(self):
        # four frames engineered to IoUs 1.0, 0.5, 1/7, 0.0
        gt = np.array([[0.0, 0, 10, 10]] * 4)
        pred = np.array([[0.0, 0, 10, 10],      # IoU 1
                         [0.0, 0, 5, 10],       # IoU 0.5 (half width, nested)
                         [7.5, 0, 10, 10],      # inter 25, union 175 -> 1/7
                         [50.0, 50, 10, 10]])   # disjoint
        curve, auc = success_rate(pred, gt)
        ious = [1.0, 0.5, 1.0 / 7.0, 0.0]
        for i, t in enumerate(np.linspace(0, 1, 21)):
            assert curve[i] == pytest.approx(
                sum(1 for v in ious if v > t) / 4.0)

    def test_absent_frames_excluded(self):
        gt = np.array([[10.0, 10, 20, 20], [0, 0, 0, 0], [10, 10, 20, 20]])
        pred = np.array([[10.0, 10, 20, 20]] * 3)
        _, auc = success_rate(pred, gt)
        assert auc == pytest.approx(20.0 / 21.0)  # the absent frame is ignored

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            success_rate(np.zeros((3, 4)), np.zeros((4, 4)))


class TestPrecision:
    def test_identical_tracks(self):
        gt = np.array([[5.0, 5, 10, 10]] * 3)
        _, pr = precision_rate(gt.copy(), gt)
        assert pr == 1.0

    def test_constant_offset_thresholds(self):
        gt = np.array([[0.0, 0, 10, 10]] * 3)
        pred = gt + np.array([25.0, 0, 0, 0])  # 25 px center error
        curve, pr20 = precision_rate(pred, gt)
        assert pr20 == 0.0
        assert curve[30] == 1.0  # PR at 30 px
        assert curve[25] == 1.0  # inclusive <=
        assert curve[24] == 0.0

    def test_curve_monotone(self):
        rng = np.random.default_rng(1)
        pred, gt = random_tracks(rng)
        curve, _ = precision_rate(pred, gt)
        assert np.all(np.diff(curve) >= 0)


class TestNormalizedPrecision:
    def test_identical_tracks(self):
        gt = np.array([[5.0, 5, 10, 20]] * 3)
        _, npr = normalized_precision(gt.copy(), gt)
        assert npr == 1.0

    def test_half_width_offset_hand_count(self):
        gt = np.array([[0.0, 0, 10, 10]] * 2)
        pred = gt + np.array([5.0, 0, 0, 0])  # error = half the gt width
        curve, npr = normalized_precision(pred, gt)
        # normalized error is exactly 0.5: only the final threshold catches it
        assert curve[-1] == 1.0
        assert np.all(curve[:-1] == 0.0)
        assert npr == pytest.approx(1.0 / 51.0)

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        pred, gt = random_tracks(rng)
        _, npr1 = normalized_precision(pred, gt)
        _, npr2 = normalized_precision(pred * 2.0, gt * 2.0)
        assert npr1 == pytest.approx(npr2, abs=1e-12)


class TestFScore:
    def test_perfect_always_reporting(self):
        gt = np.array([[5.0, 5, 10, 10]] * 4)
        r = f_score(gt.copy(), np.ones(4), gt)
        assert r["f"] == r["pr"] == r["re"] == 1.0

    def test_reporting_during_absence_hurts_precision_only(self):
        gt = np.array([[5.0, 5, 10, 10]] * 4)
        gt[2] = 0.0  # absent frame
        pred = np.array([[5.0, 5, 10, 10]] * 4)
        always = f_score(pred, np.ones(4), gt)
        # drop the report on the absent frame only
        conf = np.array([1.0, 1.0, 0.0, 1.0])
        gated = f_score(pred, conf, gt)
        assert gated["pr"] > always["pr"]
        assert gated["re"] == always["re"] == 1.0

    def test_five_frame_hand_case(self):
        gt = np.array([[0.0, 0, 10, 10]] * 5)
        gt[3] = 0.0
        pred = np.array([[0.0, 0, 10, 10],
                         [5.0, 0, 10, 10],   # IoU 1/3
                         [0.0, 0, 10, 10],
                         [0.0, 0, 10, 10],   # gt absent -> counts 0
                         [50.0, 50, 10, 10]])  # IoU 0
        conf = np.array([0.9, 0.8, 0.7, 0.6, 0.1])
        r = f_score(pred, conf, gt)
        f, pr, re = bf_f_score(pred, conf, gt)
        assert r["f"] == pytest.approx(f)
        # best threshold excludes the two bad frames: pr = (1+1/3+1)/3
        assert r["pr"] == pytest.approx((2 + 1 / 3) / 3)
        assert r["re"] == pytest.approx((2 + 1 / 3) / 4)

    def test_missing_confidences_rejected(self):
        gt = np.array([[0.0, 0, 10, 10]] * 3)
        with pytest.raises(ContractError):
            f_score(gt.copy(), np.ones(2), gt)


class TestAggregation:
    def test_ope_permutation_equivariant(self):
        rng = np.random.default_rng(3)
        tracks = [(f"s{i}",) + random_tracks(rng) for i in range(4)]
        fwd = evaluate_ope(tracks)
        rev = evaluate_ope(tracks[::-1])
        assert fwd["aggregate"] == rev["aggregate"]

    def test_longterm_report_shape(self):
        rng = np.random.default_rng(4)
        pred, gt = random_tracks(rng, n=10)
        out = evaluate_longterm([("a", pred, rng.random(10), gt)])
        assert set(out["aggregate"]) == {"F", "Pr", "Re"}

    @given(st.integers(min_value=0, max_value=2 ** 31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_all_metrics_in_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        pred, gt = random_tracks(rng, absent_frames=True)
        if np.all(gt == 0):
            return
        _, auc = success_rate(pred, gt)
        _, pr = precision_rate(pred, gt)
        _, npr = normalized_precision(pred, gt)
        r = f_score(pred, rng.random(len(pred)), gt)
        for v in (auc, pr, npr, r["f"], r["pr"], r["re"]):
            assert 0.0 <= v <= 1.0
