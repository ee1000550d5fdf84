"""
Evaluate node for LangGraph - scores the ensemble on the in-distribution test set.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from export import (
    write_curve_csv,
    write_histogram_csv,
    write_json_report,
    write_records_csv,
    write_reliability_csv,
)
from inference import confidence_histogram, predict_dataset
from manifest import build_manifest, require_equal, write_manifest
from metrics import aurc, calibration
from nodes.common import load_scope_data, report_progress, resolve_artifacts, verify_manifest
from samplers import load_ensemble
from schemas import MetricReport
from utils import ArtifactMismatchError, ConfigError

logger = logging.getLogger(__name__)

# The only meaningful confidence for a single-member ensemble
_SINGLE_MEMBER_CONFIDENCES = ('sr',)


def load_baseline_report(path: Optional[str]) -> Optional[MetricReport]:
    """The SGD-PE report the min-AURC is normalised by, if one was supplied."""
    if not path:
        return None
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Baseline report not found: {path}")
    try:
        baseline = MetricReport.model_validate_json(path.read_text(encoding='utf-8'))
    except ValueError as e:
        raise ConfigError(f"Unreadable baseline report {path}: {e}") from e
    if baseline.kind != 'sgd-pe':
        logger.warning(f"Baseline report {path} comes from {baseline.kind}, not sgd-pe")
    return baseline


def evaluate_node(state: Dict[str, Any]) -> Dict[str, Any]:
    """
    LangGraph node: predict the test set, compute AURC per confidence function,
    calibration, histograms and the optional ratio to an SGD-PE baseline.

    Args:
        state: Current pipeline state

    Returns:
        Updated state with the report artifact, evaluate manifest hash and MetricReport
    """
    try:
        cfg = state['config']
        eval_cfg = cfg.evaluate
        artifacts = resolve_artifacts(state)
        report_progress(state, 'evaluate', 0, 'Loading ensemble...')

        ensemble, ens_header = load_ensemble(artifacts['ensemble'])
        verify_manifest(artifacts['ensemble'], ens_header)
        if ensemble.partial:
            raise ArtifactMismatchError(f"{artifacts['ensemble']} is a partial ensemble from a diverged run")
        require_equal('ensemble kind', cfg.sampler.kind, ensemble.kind)
        require_equal('ensemble scope', cfg.sampler.scope, ensemble.scope)

        provenance = ensemble.provenance
        expected_split = {k: provenance[k] for k in ('in_classes', 'out_classes') if k in provenance}
        test_ds, data_manifest = load_scope_data(state, 'test', provenance.get('theta_hash', ''), expected_split)
        baseline = load_baseline_report(eval_cfg.baseline_report)

        manifest = build_manifest(
            'evaluate',
            config={'evaluate': eval_cfg.model_dump(exclude={'baseline_ood_report'})},
            inputs={'ensemble': ens_header.get('manifest_hash', ''), 'test_data': test_ds.content_hash()},
            parents=[ens_header.get('manifest_hash', ''), data_manifest, baseline.manifest_hash if baseline else ''],
        )
        report_progress(state, 'evaluate', 20, f'Predicting {test_ds.size} test examples...')
        records = predict_dataset(ensemble, test_ds)

        confidences = [c for c in eval_cfg.confidences
                       if not ensemble.single_member or c in _SINGLE_MEMBER_CONFIDENCES]
        if not confidences:
            raise ConfigError("no confidence function is meaningful for a single-member ensemble except sr")
        aurc_values: Dict[str, Optional[float]] = {c: None for c in eval_cfg.confidences}
        curves = {}
        for confidence in confidences:
            aurc_values[confidence], curves[confidence] = aurc(records, confidence)
            logger.info(f"AURC ({confidence}): {aurc_values[confidence]:.6e}")
        best_confidence = min(confidences, key=lambda c: aurc_values[c])
        min_aurc = aurc_values[best_confidence]

        aurc_ratio = None
        if baseline is not None and baseline.min_aurc > 0:
            aurc_ratio = min_aurc / baseline.min_aurc
            logger.info(f"min AURC / baseline AURC = {aurc_ratio:.4f}")

        calibration_report = calibration(records, eval_cfg.calibration_bins)
        report = MetricReport(
            manifest_hash=manifest.manifest_hash,
            kind=ensemble.kind,
            scope=ensemble.scope,
            n_members=ensemble.n_samples,
            single_member=ensemble.single_member,
            n_test=len(records),
            accuracy=sum(r.correct for r in records) / len(records),
            aurc=aurc_values,
            min_aurc=min_aurc,
            best_confidence=best_confidence,
            aurc_ratio=aurc_ratio,
            baseline_manifest_hash=baseline.manifest_hash if baseline else None,
            calibration=calibration_report,
        )
        logger.info(
            f"Accuracy {report.accuracy:.4f}, min AURC {min_aurc:.6e} ({best_confidence}), "
            f"ECE {calibration_report.ece:.4f}, MCE {calibration_report.mce:.4f}"
        )

        report_path = Path(artifacts['report'])
        out_dir = report_path.parent
        h = manifest.manifest_hash
        outputs = [
            write_json_report(report, report_path),
            write_records_csv(records, out_dir / 'records.csv', h, include_posterior=eval_cfg.include_posterior),
            write_reliability_csv(calibration_report, out_dir / 'reliability.csv', h),
        ]
        for confidence in confidences:
            outputs.append(write_curve_csv(curves[confidence], out_dir / f'risk_coverage_{confidence}.csv', h))
            histogram = confidence_histogram(records, confidence, eval_cfg.histogram_bins, ensemble.num_classes)
            outputs.append(write_histogram_csv(histogram, out_dir / f'histogram_{confidence}.csv', h))
        write_manifest(manifest, out_dir / 'manifest.json', outputs=outputs)

        report_progress(state, 'evaluate', 100, f'Evaluation complete (min AURC {min_aurc:.3e})')
        return {
            'artifacts': {**(state.get('artifacts') or {}), 'report': str(report_path)},
            'manifests': {**(state.get('manifests') or {}), 'evaluate': manifest.manifest_hash},
            'results': {**(state.get('results') or {}), 'evaluate': report},
        }

    except Exception as e:
        logger.error(f"Error in evaluate_node: {e}", exc_info=True)
        raise
