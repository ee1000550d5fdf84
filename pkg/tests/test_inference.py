"""
Tests for inference.py: predictive posterior, classification and the three confidence functions.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from inference import (
    classify,
    confidence_histogram,
    confidence_values,
    predict_dataset,
    predictive_posterior,
    q_entropy_confidence,
    sr_confidence,
    std_confidence,
)
from network import extract_features, predict_proba
from samplers import build_ensemble, draw_predictive_samples
from schemas import PredictionRecord, SamplerConfig


def simplex_samples(n, k, seed):
    return np.random.default_rng(seed).dirichlet(np.ones(k), size=n)


sample_sets = st.builds(
    simplex_samples,
    n=st.integers(1, 12),
    k=st.integers(2, 6),
    seed=st.integers(0, 2**32 - 1),
)


class TestPredictivePosterior:
    def test_two_samples(self):
        np.testing.assert_allclose(predictive_posterior([[0.9, 0.1], [0.7, 0.3]]), [0.8, 0.2])

    def test_identical_samples(self):
        p = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(predictive_posterior([p, p, p]), p, rtol=0, atol=1e-15)

    def test_matches_brute_force_mean(self):
        samples = simplex_samples(50, 4, seed=9)
        expected = [sum(s[k] for s in samples) / 50 for k in range(4)]
        np.testing.assert_allclose(predictive_posterior(samples), expected, rtol=0, atol=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            predictive_posterior(np.zeros((0, 3)))


class TestClassify:
    def test_argmax(self):
        assert classify(np.array([0.2, 0.5, 0.3])) == 1

    def test_tie_goes_to_lowest_index(self):
        assert classify(np.array([0.5, 0.5])) == 0
        np.testing.assert_array_equal(classify(np.array([[0.1, 0.45, 0.45], [1 / 3, 1 / 3, 1 / 3]])), [1, 0])

    @settings(max_examples=500, deadline=None)
    @given(p=arrays(np.float64, st.integers(2, 8), elements=st.floats(0.0, 1.0)), scale=st.sampled_from([1.0, 2.0, 8.0, 1024.0, 2.0 ** 20]))
    def test_positive_rescaling(self, p, scale):
        assert classify(p * scale) == classify(p)


class TestSrConfidence:
    def test_uniform_is_one_over_k(self):
        assert sr_confidence(np.full(4, 0.25)) == 0.25

    def test_one_hot(self):
        assert sr_confidence(np.array([0.0, 1.0, 0.0])) == 1.0

    def test_concentrated_ensemble(self):
        samples = np.array([[0.9999, 0.0001], [0.99985, 0.00015], [0.99995, 0.00005]])
        assert sr_confidence(predictive_posterior(samples)) > 0.999


class TestStdConfidence:
    def test_identical_samples(self):
        p = np.array([0.1, 0.6, 0.3])
        assert std_confidence([p] * 7, 1) == 0.0

    def test_two_point_moments(self):
        kappa = std_confidence([[0.8, 0.2], [0.6, 0.4]], 0)
        assert kappa == pytest.approx(-0.1, abs=1e-12)

    def test_batch_form(self):
        samples = np.stack([
            [[0.8, 0.2], [0.5, 0.5]],
            [[0.6, 0.4], [0.5, 0.5]],
        ])
        np.testing.assert_allclose(std_confidence(samples, np.array([0, 1])), [-0.1, 0.0], atol=1e-12)

    @settings(max_examples=500, deadline=None)
    @given(samples=sample_sets, perm_seed=st.integers(0, 2**32 - 1))
    def test_permutation_invariant_and_nonpositive(self, samples, perm_seed):
        predicted = classify(predictive_posterior(samples))
        kappa = std_confidence(samples, predicted)
        shuffled = samples[np.random.default_rng(perm_seed).permutation(len(samples))]
        assert kappa <= 0.0
        assert std_confidence(shuffled, predicted) == pytest.approx(kappa, abs=1e-12)


class TestQEntropyConfidence:
    def test_unanimous(self):
        assert q_entropy_confidence([[0.6, 0.4], [0.9, 0.1], [0.51, 0.49]]) == 0.0

    def test_even_split(self):
        samples = [[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.1, 0.9]]
        assert q_entropy_confidence(samples) == pytest.approx(-math.log(2), abs=1e-12)

    def test_tied_member_votes_lowest_index(self):
        assert q_entropy_confidence([[0.5, 0.5], [0.7, 0.3]]) == 0.0

    @settings(max_examples=500, deadline=None)
    @given(samples=sample_sets)
    def test_bounded_by_log_k(self, samples):
        k = samples.shape[1]
        kappa = q_entropy_confidence(samples)
        assert -math.log(k) - 1e-12 <= kappa <= 0.0
        votes = np.argmax(samples, axis=1)
        q = np.bincount(votes, minlength=k) / len(samples)
        expected = sum(v * math.log(v) for v in q if v > 0)
        assert kappa == pytest.approx(expected, abs=1e-12)


@pytest.fixture
def head_features(blobs, small_params):
    return extract_features(small_params, blobs)


class TestPredictDataset:
    def test_point_estimate_sr_is_softmax_max(self, blobs, small_params, head_features):
        cfg = SamplerConfig(kind='sgd-pe', n_samples=1)
        records = predict_dataset(build_ensemble(head_features, small_params, cfg), head_features)
        assert len(records) == blobs.size
        probs = predict_proba(small_params, blobs.features)
        np.testing.assert_allclose([r.sr for r in records], probs.max(axis=1), rtol=0, atol=1e-15)
        assert all(r.single_member and r.std_kappa == 0.0 and r.q_entropy_kappa == 0.0 for r in records)

    def test_record_is_the_composition_of_the_operations(self, small_params, head_features):
        cfg = SamplerConfig(kind='sgld', n_samples=5, learning_rate=0.05, batch_size=16, seed=2)
        ens = build_ensemble(head_features, small_params, cfg)
        records = predict_dataset(ens, head_features, chunk_size=7)
        assert [r.index for r in records] == list(range(head_features.size))

        i = 11
        samples = draw_predictive_samples(ens, head_features.features[i], index=i)
        np.testing.assert_allclose(samples.sum(axis=1), 1.0, atol=1e-12)
        p_hat = predictive_posterior(samples)
        f_hat = classify(p_hat)
        record = records[i]
        assert record.predicted == f_hat
        assert record.label == head_features.labels[i]
        np.testing.assert_allclose(record.posterior, p_hat, rtol=0, atol=1e-14)
        assert record.sr == pytest.approx(sr_confidence(p_hat), abs=1e-14)
        assert record.std_kappa == pytest.approx(std_confidence(samples, f_hat), abs=1e-14)
        assert record.q_entropy_kappa == pytest.approx(q_entropy_confidence(samples), abs=1e-14)

    def test_identical_members_give_identical_samples(self, small_params, head_features):
        cfg = SamplerConfig(kind='sgd', n_samples=3, learning_rate=0.0, batch_size=16)
        ens = build_ensemble(head_features, small_params, cfg)
        samples = draw_predictive_samples(ens, head_features.features[0])
        assert samples.shape == (3, 3)
        np.testing.assert_array_equal(samples[0], samples[1])
        records = predict_dataset(ens, head_features)
        assert all(r.std_kappa == 0.0 and r.q_entropy_kappa == 0.0 for r in records)


def _record(label, predicted, sr, std=0.0, q=0.0, k=2):
    posterior = [0.0] * k
    posterior[predicted] = sr
    posterior[(predicted + 1) % k] = 1.0 - sr
    return PredictionRecord(index=0, label=label, predicted=predicted, posterior=posterior,
                            sr=sr, std_kappa=std, q_entropy_kappa=q)


class TestHistogram:
    def test_counts_split_by_correctness(self):
        records = [_record(0, 0, 0.95), _record(1, 0, 0.55), _record(1, 1, 0.96), _record(0, 1, 1.0)]
        hist = confidence_histogram(records, 'sr', bins=10)
        assert len(hist.edges) == 11
        assert sum(hist.correct) == 2 and sum(hist.incorrect) == 2
        assert hist.correct[9] == 2
        assert hist.incorrect[5] == 1 and hist.incorrect[9] == 1

    def test_q_entropy_range(self):
        records = [_record(0, 0, 0.9, q=-math.log(3), k=3), _record(0, 0, 0.9, q=0.0, k=3)]
        hist = confidence_histogram(records, 'q-entropy', bins=4)
        assert hist.edges[0] == pytest.approx(-math.log(3))
        assert hist.correct[0] == 1 and hist.correct[-1] == 1

    def test_confidence_values_by_name(self):
        records = [_record(0, 0, 0.7, std=-0.2, q=-0.1)]
        assert confidence_values(records, 'std')[0] == -0.2
        assert confidence_values(records, 'q-entropy')[0] == -0.1
        assert confidence_values(records, 'sr')[0] == 0.7
