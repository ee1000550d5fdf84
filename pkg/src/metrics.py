"""
Evaluation of prediction records: selective classification, calibration and OOD detection.

Confidence functions are addressed by name ('sr', 'std', 'q-entropy') or by the
record field they live in. Everything here is a pure function of the records.
"""
import logging
from typing import List, Sequence, Tuple

import numpy as np
from sklearn.metrics import average_precision_score, roc_auc_score

from config import DEFAULT_CALIBRATION_BINS
from inference import confidence_values
from schemas import (
    CalibrationBin,
    CalibrationReport,
    OODReport,
    PredictionRecord,
    RiskCoveragePoint,
)

logger = logging.getLogger(__name__)


class EmptySelectionError(ValueError):
    """No record reaches the requested threshold, so selective risk is undefined."""


def _errors(records: Sequence[PredictionRecord]) -> np.ndarray:
    return np.array([r.label != r.predicted for r in records], dtype=np.float64)


def _require_records(records: Sequence[PredictionRecord]) -> None:
    if not records:
        raise ValueError("records must be nonempty")


def coverage_and_risk(records: Sequence[PredictionRecord], confidence: str, threshold: float) -> Tuple[float, float]:
    """
    Empirical coverage and selective risk of the selector kappa(x) >= threshold.

    Raises:
        EmptySelectionError: no record has kappa >= threshold
    """
    _require_records(records)
    kappa = confidence_values(records, confidence)
    selected = kappa >= threshold
    n_selected = int(selected.sum())
    if n_selected == 0:
        raise EmptySelectionError(f"no record has {confidence} >= {threshold}")
    return n_selected / len(records), float(_errors(records)[selected].sum() / n_selected)


def risk_coverage(kappa: np.ndarray, errors: np.ndarray) -> Tuple[float, List[RiskCoveragePoint]]:
    """
    AURC over the multiset of achieved thresholds, plus the curve (one point per distinct threshold).

    Every record contributes srisk(kappa >= kappa_i) once, so tied values are replicated and
    the sum has n_test terms. The curve is sorted by decreasing threshold.
    """
    kappa = np.asarray(kappa, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    n = kappa.shape[0]
    order = np.argsort(-kappa, kind='stable')
    ordered = kappa[order]
    cumulative_errors = np.cumsum(errors[order])

    # Last position of each run of equal kappa; everything up to it passes kappa >= value.
    group_ends = np.flatnonzero(np.append(ordered[1:] != ordered[:-1], True))
    end_of = group_ends[np.searchsorted(group_ends, np.arange(n))]
    risks = cumulative_errors[end_of] / (end_of + 1)
    aurc_value = float(risks.sum() / n)

    curve = [
        RiskCoveragePoint(
            threshold=float(ordered[e]),
            coverage=(e + 1) / n,
            selective_risk=float(cumulative_errors[e] / (e + 1)),
        )
        for e in group_ends
    ]
    return aurc_value, curve


def aurc(records: Sequence[PredictionRecord], confidence: str) -> Tuple[float, List[RiskCoveragePoint]]:
    """Area under the risk-coverage curve for one confidence function (lower is better)."""
    _require_records(records)
    return risk_coverage(confidence_values(records, confidence), _errors(records))


def calibration(records: Sequence[PredictionRecord], m: int = DEFAULT_CALIBRATION_BINS) -> CalibrationReport:
    """
    Reliability bins on p_hat_max with equal-width bins [a_j, a_j+1) (the last closed at 1).

    ECE = sum_j (n_j / n) |A_j - C_j|; MCE = max over nonempty bins of |A_j - C_j|.
    """
    if m < 1:
        raise ValueError("calibration needs at least one bin")
    _require_records(records)
    confidence = np.array([max(r.posterior) for r in records], dtype=np.float64)
    correct = 1.0 - _errors(records)
    # nearest floats to j / m; linspace lands some edges one ulp above
    edges = np.arange(m + 1) / m
    bin_index = np.clip(np.searchsorted(edges, confidence, side='right') - 1, 0, m - 1)

    counts = np.bincount(bin_index, minlength=m)
    hits = np.bincount(bin_index, weights=correct, minlength=m)
    conf_sums = np.bincount(bin_index, weights=confidence, minlength=m)
    filled = counts > 0
    acc = np.divide(hits, counts, out=np.zeros(m), where=filled)
    conf = np.divide(conf_sums, counts, out=np.zeros(m), where=filled)
    gaps = np.abs(acc - conf)

    n = len(records)
    ece = float(np.sum(counts / n * gaps))
    mce = float(gaps[filled].max())
    bins = [
        CalibrationBin(lower=float(edges[j]), upper=float(edges[j + 1]), count=int(counts[j]),
                       accuracy=float(acc[j]), confidence=float(conf[j]))
        for j in range(m)
    ]
    return CalibrationReport(bins=bins, ece=ece, mce=mce, m=m)


def _binary_problem(scores_pos: Sequence[float], scores_neg: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    scores_pos = np.asarray(scores_pos, dtype=np.float64)
    scores_neg = np.asarray(scores_neg, dtype=np.float64)
    if scores_pos.size == 0 or scores_neg.size == 0:
        raise ValueError("both score lists must be nonempty")
    labels = np.concatenate([np.ones(scores_pos.size), np.zeros(scores_neg.size)])
    return labels, np.concatenate([scores_pos, scores_neg])


def auroc(scores_in: Sequence[float], scores_out: Sequence[float]) -> float:
    """P(score_in > score_out) + 0.5 P(tie), in-distribution as the positive class."""
    labels, scores = _binary_problem(scores_in, scores_out)
    return float(roc_auc_score(labels, scores))


def aupr(scores_pos: Sequence[float], scores_neg: Sequence[float]) -> float:
    """Average precision: step-wise PR area over a descending score sweep with tied scores grouped."""
    labels, scores = _binary_problem(scores_pos, scores_neg)
    return float(average_precision_score(labels, scores))


def ood_evaluate(
    records_in: Sequence[PredictionRecord],
    records_out: Sequence[PredictionRecord],
    confidence: str,
) -> OODReport:
    """AUROC, AUPR-in and AUPR-out of kappa as an in-distribution detector."""
    kappa_in = confidence_values(records_in, confidence)
    kappa_out = confidence_values(records_out, confidence)
    report = OODReport(
        auroc=auroc(kappa_in, kappa_out),
        aupr_in=aupr(kappa_in, kappa_out),
        aupr_out=aupr(-kappa_out, -kappa_in),
        n_in=len(records_in),
        n_out=len(records_out),
        confidence=confidence,
    )
    logger.debug(f"OOD {confidence}: auroc={report.auroc:.4f} aupr_in={report.aupr_in:.4f} aupr_out={report.aupr_out:.4f}")
    return report
