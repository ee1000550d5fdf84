"""
Tests for metrics.py against brute-force enumeration oracles.
"""
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from metrics import (
    EmptySelectionError,
    aupr,
    auroc,
    aurc,
    calibration,
    coverage_and_risk,
    ood_evaluate,
    risk_coverage,
)
from schemas import PredictionRecord


def rec(correct: bool, kappa: float, p_max: float = None) -> PredictionRecord:
    """Two-class record; kappa is used for all three confidence fields."""
    p = kappa if p_max is None else p_max
    return PredictionRecord(
        index=0,
        label=0 if correct else 1,
        predicted=0,
        posterior=[p, 1.0 - p],
        sr=kappa,
        std_kappa=kappa,
        q_entropy_kappa=kappa,
    )


def brute_aurc(kappa, errors):
    n = len(kappa)
    total = 0.0
    for threshold in kappa:
        selected = [e for k, e in zip(kappa, errors) if k >= threshold]
        total += sum(selected) / len(selected)
    return total / n


def brute_calibration(confidence, correct, m):
    edges = [j / m for j in range(m + 1)]
    n = len(confidence)
    ece, mce = 0.0, 0.0
    for j in range(m):
        last = j == m - 1
        members = [
            (c, a) for c, a in zip(confidence, correct)
            if edges[j] <= c and (c < edges[j + 1] or (last and c <= edges[j + 1]))
        ]
        if not members:
            continue
        accuracy = sum(a for _, a in members) / len(members)
        mean_conf = sum(c for c, _ in members) / len(members)
        gap = abs(accuracy - mean_conf)
        ece += len(members) / n * gap
        mce = max(mce, gap)
    return ece, mce


def brute_auroc(pos, neg):
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def brute_aupr(pos, neg):
    area, previous_recall = 0.0, 0.0
    for threshold in sorted(set(pos) | set(neg), reverse=True):
        tp = sum(p >= threshold for p in pos)
        fp = sum(q >= threshold for q in neg)
        recall = tp / len(pos)
        if tp:
            area += (recall - previous_recall) * tp / (tp + fp)
        previous_recall = recall
    return area


kappas = st.integers(0, 6).map(lambda v: v / 6)
record_lists = st.lists(st.tuples(st.booleans(), kappas), min_size=1, max_size=30)
# p_max values that sit exactly on bin edges j / m for every m dividing 60
confidences = st.one_of(st.floats(0.0, 1.0), st.integers(0, 60).map(lambda v: v / 60))
score_lists = st.lists(st.integers(-4, 4).map(float), min_size=1, max_size=20)


class TestCoverageAndRisk:
    RECORDS = [rec(True, 0.9), rec(False, 0.8), rec(True, 0.7), rec(False, 0.6)]

    def test_full_coverage(self):
        coverage, risk = coverage_and_risk(self.RECORDS, 'sr', -math.inf)
        assert coverage == 1.0
        assert risk == 0.5

    def test_top_threshold_only_correct(self):
        assert coverage_and_risk(self.RECORDS, 'sr', 0.9) == (0.25, 0.0)

    def test_hand_enumeration(self):
        expected = {0.9: 0.0, 0.8: 1 / 2, 0.7: 1 / 3, 0.6: 1 / 2}
        for threshold, risk in expected.items():
            assert coverage_and_risk(self.RECORDS, 'sr', threshold)[1] == pytest.approx(risk)

    def test_empty_selection(self):
        with pytest.raises(EmptySelectionError):
            coverage_and_risk(self.RECORDS, 'sr', 0.95)


class TestAurc:
    def test_all_correct(self):
        value, curve = aurc([rec(True, k) for k in (0.2, 0.5, 0.5, 0.9)], 'sr')
        assert value == 0.0
        assert all(p.selective_risk == 0.0 for p in curve)

    def test_four_points(self):
        value, curve = aurc(TestCoverageAndRisk.RECORDS, 'sr')
        assert value == pytest.approx(1 / 3, abs=1e-12)
        assert [p.threshold for p in curve] == [0.9, 0.8, 0.7, 0.6]
        assert [p.coverage for p in curve] == [0.25, 0.5, 0.75, 1.0]
        np.testing.assert_allclose([p.selective_risk for p in curve], [0, 1 / 2, 1 / 3, 1 / 2])

    def test_ties_are_replicated(self):
        # both tied points see risk 1/2; the top point sees 0
        value, curve = aurc([rec(True, 0.9), rec(False, 0.5), rec(True, 0.5)], 'std')
        assert value == pytest.approx((0 + 2 * (1 / 3)) / 3)
        assert len(curve) == 2

    def test_empty(self):
        with pytest.raises(ValueError):
            aurc([], 'sr')

    @settings(max_examples=1000, deadline=None)
    @given(points=record_lists)
    def test_matches_threshold_enumeration(self, points):
        kappa = [k for _, k in points]
        errors = [0.0 if c else 1.0 for c, _ in points]
        value, curve = risk_coverage(np.array(kappa), np.array(errors))
        assert value == pytest.approx(brute_aurc(kappa, errors), abs=1e-12)
        assert [p.threshold for p in curve] == sorted(set(kappa), reverse=True)
        assert curve[-1].coverage == 1.0
        for point in curve:
            selected = [e for k, e in zip(kappa, errors) if k >= point.threshold]
            assert point.coverage == pytest.approx(len(selected) / len(kappa))
            assert point.selective_risk == pytest.approx(sum(selected) / len(selected))

    @settings(max_examples=500, deadline=None)
    @given(
        points=record_lists,
        levels=st.lists(st.floats(-1e3, 1e3), min_size=7, max_size=7, unique=True).map(sorted),
    )
    def test_invariant_under_increasing_transforms(self, points, levels):
        assume(all(a < b for a, b in zip(levels, levels[1:])))
        # kappa = v / 6 maps to levels[v], an arbitrary strictly increasing transform
        steps = np.array([round(k * 6) for _, k in points])
        errors = np.array([0.0 if c else 1.0 for c, _ in points])
        value, curve = risk_coverage(steps / 6, errors)
        moved_value, moved_curve = risk_coverage(np.array(levels)[steps], errors)
        assert moved_value == pytest.approx(value, abs=1e-12)
        assert [p.coverage for p in moved_curve] == [p.coverage for p in curve]
        assert [p.selective_risk for p in moved_curve] == [p.selective_risk for p in curve]

    @settings(max_examples=500, deadline=None)
    @given(
        kappa=st.lists(st.floats(-50.0, 50.0), min_size=1, max_size=40),
        seed=st.integers(0, 2 ** 16),
    )
    def test_coverage_grows_as_the_threshold_falls(self, kappa, seed):
        errors = np.random.default_rng(seed).integers(0, 2, size=len(kappa)).astype(float)
        _, curve = risk_coverage(np.array(kappa), errors)
        thresholds = [p.threshold for p in curve]
        coverages = [p.coverage for p in curve]
        assert all(a > b for a, b in zip(thresholds, thresholds[1:]))
        assert all(a <= b for a, b in zip(coverages, coverages[1:]))
        assert all(0.0 <= p.selective_risk <= 1.0 for p in curve)


class TestCalibration:
    def test_two_records(self):
        report = calibration([rec(True, 0.95), rec(False, 0.55)], m=10)
        assert report.ece == pytest.approx(0.30, abs=1e-12)
        assert report.mce == pytest.approx(0.55, abs=1e-12)
        assert [b.count for b in report.bins] == [0, 0, 0, 0, 0, 1, 0, 0, 0, 1]

    def test_calibrated_construction(self):
        records = [rec(i < 3, 0.75) for i in range(4)] + [rec(i < 9, 0.9) for i in range(10)]
        report = calibration(records, m=10)
        assert report.ece == pytest.approx(0.0, abs=1e-12)
        assert report.mce == pytest.approx(0.0, abs=1e-12)

    def test_one_is_in_the_last_bin(self):
        report = calibration([rec(True, 1.0)], m=4)
        assert report.bins[-1].count == 1
        assert report.ece == 0.0

    def test_confidence_on_an_edge_opens_the_next_bin(self):
        report = calibration([rec(True, 0.5, p_max=0.6), rec(False, 0.5, p_max=0.7)], m=10)
        assert [b.count for b in report.bins] == [0, 0, 0, 0, 0, 0, 1, 1, 0, 0]
        assert report.bins[6].lower == 0.6 and report.bins[7].lower == 0.7
        assert report.bins[6].accuracy == 1.0 and report.bins[7].accuracy == 0.0

    @settings(max_examples=500, deadline=None)
    @given(
        points=st.lists(st.tuples(st.booleans(), st.floats(0.0, 1.0)), min_size=1, max_size=40),
        m=st.integers(1, 20),
    )
    def test_errors_are_bounded(self, points, m):
        report = calibration([rec(c, 0.5, p_max=p) for c, p in points], m=m)
        assert 0.0 <= report.ece <= 1.0
        assert 0.0 <= report.mce <= 1.0
        assert report.ece <= report.mce + 1e-12

    @settings(max_examples=1000, deadline=None)
    @given(
        points=st.lists(st.tuples(st.booleans(), confidences), min_size=1, max_size=40),
        m=st.integers(1, 20),
    )
    def test_matches_bin_enumeration(self, points, m):
        records = [rec(c, 0.5, p_max=p) for c, p in points]
        report = calibration(records, m=m)
        confidence = [max(r.posterior) for r in records]
        ece, mce = brute_calibration(confidence, [1.0 if c else 0.0 for c, _ in points], m)
        assert sum(b.count for b in report.bins) == len(records)
        assert report.ece == pytest.approx(ece, abs=1e-12)
        assert report.mce == pytest.approx(mce, abs=1e-12)


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([0.9, 0.8], [0.1, 0.2]) == 1.0

    def test_constant_scores(self):
        assert auroc([0.3] * 5, [0.3] * 7) == 0.5

    def test_pairwise_example(self):
        assert auroc([0.9, 0.7], [0.8, 0.1]) == pytest.approx(0.75)

    def test_empty(self):
        with pytest.raises(ValueError):
            auroc([], [0.1])

    @settings(max_examples=1000, deadline=None)
    @given(pos=score_lists, neg=score_lists)
    def test_matches_pairwise_oracle(self, pos, neg):
        assert auroc(pos, neg) == pytest.approx(brute_auroc(pos, neg), abs=1e-12)

    @settings(max_examples=500, deadline=None)
    @given(scores=st.lists(st.floats(-100.0, 100.0), min_size=2, max_size=40, unique=True), data=st.data())
    def test_swapping_the_classes_complements(self, scores, data):
        assume(len(set(scores)) == len(scores))
        cut = data.draw(st.integers(1, len(scores) - 1))
        first, second = scores[:cut], scores[cut:]
        assert auroc(first, second) + auroc(second, first) == pytest.approx(1.0, abs=1e-12)


class TestAupr:
    def test_perfect_separation(self):
        assert aupr([0.9, 0.8], [0.1, 0.2]) == 1.0

    def test_four_points(self):
        assert aupr([0.9, 0.4], [0.6, 0.2]) == pytest.approx(5 / 6, abs=1e-12)

    def test_constant_scores_give_base_rate(self):
        assert aupr([0.5] * 3, [0.5] * 9) == pytest.approx(0.25)

    def test_random_detector_is_near_base_rate(self):
        rng = np.random.default_rng(0)
        values = [aupr(rng.random(200), rng.random(600)) for _ in range(200)]
        assert np.mean(values) == pytest.approx(0.25, abs=0.02)

    @settings(max_examples=1000, deadline=None)
    @given(pos=score_lists, neg=score_lists)
    def test_matches_enumeration_oracle(self, pos, neg):
        assert aupr(pos, neg) == pytest.approx(brute_aupr(pos, neg), abs=1e-12)


class TestOod:
    def test_identical_scores(self):
        records = [rec(True, k) for k in (0.2, 0.4, 0.9)]
        report = ood_evaluate(records, list(records), 'sr')
        assert report.auroc == pytest.approx(0.5)
        assert report.n_in == 3 and report.n_out == 3

    def test_out_scores_are_negated_for_aupr_out(self):
        records_in = [rec(True, k) for k in (0.9, 0.4)]
        records_out = [rec(True, k) for k in (0.6, 0.2)]
        report = ood_evaluate(records_in, records_out, 'q-entropy')
        assert report.confidence == 'q-entropy'
        assert report.auroc == pytest.approx(0.75)
        assert report.aupr_in == pytest.approx(5 / 6)
        assert report.aupr_out == pytest.approx(brute_aupr([-0.6, -0.2], [-0.9, -0.4]))
