"""
Predictions and confidence scores from an ensemble.

Sample arrays have the member axis first: (n_samples, K) for one input or
(n_samples, B, K) for a batch. Every function here accepts either form.
"""
import logging
import math
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.stats import entropy

from config import DEFAULT_HISTOGRAM_BINS, DEFAULT_PREDICTION_CHUNK
from data import Dataset
from samplers import Ensemble, predictive_samples
from schemas import CONFIDENCE_FIELDS, HistogramReport, PredictionRecord

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence[Sequence[float]]]


def _as_samples(samples: ArrayLike) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim < 2 or samples.shape[0] == 0:
        raise ValueError("need a nonempty list of probability vectors")
    return samples


def predictive_posterior(samples: ArrayLike) -> np.ndarray:
    """p_hat(k|x) = mean over members of p(k|x, theta_i)."""
    return _as_samples(samples).mean(axis=0)


def classify(p_hat: np.ndarray) -> Union[int, np.ndarray]:
    """argmax with the lowest index winning ties."""
    p_hat = np.asarray(p_hat)
    labels = np.argmax(p_hat, axis=-1)
    return int(labels) if p_hat.ndim == 1 else labels


def sr_confidence(p_hat: np.ndarray) -> Union[float, np.ndarray]:
    """Softmax response: the largest entry of p_hat."""
    p_hat = np.asarray(p_hat, dtype=np.float64)
    sr = p_hat.max(axis=-1)
    return float(sr) if p_hat.ndim == 1 else sr


def std_confidence(samples: ArrayLike, predicted: Union[int, np.ndarray]) -> Union[float, np.ndarray]:
    """
    kappa = -(population standard deviation of p(f_hat(x)|x, theta_i) over members).

    Identical member values give exactly 0.
    """
    samples = _as_samples(samples)
    predicted = np.asarray(predicted, dtype=np.int64)
    index = np.broadcast_to(predicted, samples.shape[1:-1])[None, ..., None]
    values = np.take_along_axis(samples, np.broadcast_to(index, samples.shape[:-1] + (1,)), axis=-1)[..., 0]
    variance = np.var(values, axis=0)
    variance = np.where(np.ptp(values, axis=0) == 0.0, 0.0, np.maximum(variance, 0.0))
    kappa = -np.sqrt(variance)
    return float(kappa) if kappa.ndim == 0 else kappa


def q_entropy_confidence(samples: ArrayLike) -> Union[float, np.ndarray]:
    """
    kappa = -H(q_hat), q_hat the distribution of member votes argmax_k p(k|x, theta_i).

    Natural log, 0 log 0 = 0, so kappa lies in [-ln K, 0].
    """
    samples = _as_samples(samples)
    n, k = samples.shape[0], samples.shape[-1]
    votes = np.argmax(samples, axis=-1)
    counts = np.stack([(votes == c).sum(axis=0) for c in range(k)], axis=-1)
    kappa = -entropy(counts / n, axis=-1)
    kappa = np.where(counts.max(axis=-1) == n, 0.0, kappa)
    return float(kappa) if kappa.ndim == 0 else kappa


def predict_dataset(ens: Ensemble, ds: Dataset, chunk_size: int = DEFAULT_PREDICTION_CHUNK) -> List[PredictionRecord]:
    """
    One PredictionRecord per example of ds, in order.

    ds must match the ensemble scope: R for last-layer, D for full-network. Labels are
    copied as-is, so out-of-distribution records keep their original class index.
    A size-1 ensemble (SGD-PE) gets std_kappa = q_entropy_kappa = 0 and single_member=True.
    """
    single = ens.single_member
    records: List[PredictionRecord] = []
    for start in range(0, ds.size, chunk_size):
        stop = min(start + chunk_size, ds.size)
        samples = predictive_samples(ens, ds.features[start:stop], start_index=start, chunk_size=chunk_size)
        p_hat = predictive_posterior(samples)
        predicted = classify(p_hat)
        sr = sr_confidence(p_hat)
        if single:
            std_kappa = q_kappa = np.zeros(stop - start)
        else:
            std_kappa = std_confidence(samples, predicted)
            q_kappa = q_entropy_confidence(samples)
        for i in range(stop - start):
            records.append(PredictionRecord(
                index=start + i,
                label=int(ds.labels[start + i]),
                predicted=int(predicted[i]),
                posterior=p_hat[i].tolist(),
                sr=float(sr[i]),
                std_kappa=float(std_kappa[i]),
                q_entropy_kappa=float(q_kappa[i]),
                single_member=single,
            ))
    logger.info(f"Predicted {len(records)} examples with {ens.n_samples} sample(s) per input")
    return records


def confidence_values(records: Sequence[PredictionRecord], confidence: str) -> np.ndarray:
    """kappa values of one confidence function ('sr', 'std', 'q-entropy' or a record field name)."""
    field = CONFIDENCE_FIELDS.get(confidence, confidence)
    return np.array([getattr(r, field) for r in records], dtype=np.float64)


def _histogram_range(confidence: str, num_classes: int):
    if confidence == 'sr':
        return 0.0, 1.0
    if confidence == 'std':
        return -0.5, 0.0
    return -math.log(num_classes), 0.0


def confidence_histogram(
    records: Sequence[PredictionRecord],
    confidence: str = 'sr',
    bins: int = DEFAULT_HISTOGRAM_BINS,
    num_classes: Optional[int] = None,
) -> HistogramReport:
    """Counts of kappa per bin, split by correctly and incorrectly classified records."""
    if not records:
        raise ValueError("cannot histogram an empty record list")
    num_classes = num_classes or len(records[0].posterior)
    lower, upper = _histogram_range(confidence, num_classes)
    edges = np.linspace(lower, upper, bins + 1)
    kappa = np.clip(confidence_values(records, confidence), lower, upper)
    correct = np.array([r.correct for r in records])
    hit, _ = np.histogram(kappa[correct], bins=edges)
    miss, _ = np.histogram(kappa[~correct], bins=edges)
    return HistogramReport(
        confidence=confidence,
        edges=edges.tolist(),
        correct=hit.astype(int).tolist(),
        incorrect=miss.astype(int).tolist(),
    )
