"""
OOD node for LangGraph - out-of-distribution detection on the held-out classes.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from export import write_json_report, write_records_csv
from inference import predict_dataset
from manifest import build_manifest, require_equal, write_manifest
from metrics import ood_evaluate
from nodes.common import load_scope_data, report_progress, resolve_artifacts, verify_manifest
from samplers import load_ensemble
from schemas import OODSummary
from utils import ArtifactMismatchError, ConfigError

logger = logging.getLogger(__name__)


def load_baseline_ood(path: Optional[str]) -> Optional[OODSummary]:
    if not path:
        return None
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Baseline OOD report not found: {path}")
    try:
        return OODSummary.model_validate_json(path.read_text(encoding='utf-8'))
    except ValueError as e:
        raise ConfigError(f"Unreadable baseline OOD report {path}: {e}") from e


def ood_node(state: Dict[str, Any]) -> Dict[str, Any]:
    """
    LangGraph node: score in-distribution and out-of-distribution test examples and
    report AUROC, AUPR-in and AUPR-out per confidence function.

    The ensemble must have been built on the in-distribution classes of a class split;
    every artifact involved must carry that same split.

    Args:
        state: Current pipeline state

    Returns:
        Updated state with the OOD report artifact, manifest hash and OODSummary
    """
    try:
        cfg = state['config']
        eval_cfg = cfg.evaluate
        artifacts = resolve_artifacts(state)
        report_progress(state, 'ood', 0, 'Loading ensemble...')

        ensemble, ens_header = load_ensemble(artifacts['ensemble'])
        verify_manifest(artifacts['ensemble'], ens_header)
        if ensemble.partial:
            raise ArtifactMismatchError(f"{artifacts['ensemble']} is a partial ensemble from a diverged run")
        provenance = ensemble.provenance
        if 'in_classes' not in provenance:
            raise ArtifactMismatchError("ensemble was not built on a class split; ood needs data.in_classes")
        split = {'in_classes': provenance['in_classes'], 'out_classes': provenance['out_classes']}
        if cfg.data.in_classes is not None:
            require_equal('in_classes of config vs ensemble', sorted(set(cfg.data.in_classes)), split['in_classes'])

        theta_hash = provenance.get('theta_hash', '')
        in_ds, in_manifest = load_scope_data(state, 'test', theta_hash, split)
        out_ds, out_manifest = load_scope_data(state, 'test_out', theta_hash, split)
        baseline = load_baseline_ood(eval_cfg.baseline_ood_report)

        manifest = build_manifest(
            'ood',
            config={'confidences': list(eval_cfg.confidences), 'split': split},
            inputs={
                'ensemble': ens_header.get('manifest_hash', ''),
                'test_in': in_ds.content_hash(),
                'test_out': out_ds.content_hash(),
            },
            parents=[ens_header.get('manifest_hash', ''), in_manifest, baseline.manifest_hash if baseline else ''],
        )

        report_progress(state, 'ood', 20, f'Predicting {in_ds.size} in / {out_ds.size} out examples...')
        records_in = predict_dataset(ensemble, in_ds)
        records_out = predict_dataset(ensemble, out_ds)

        confidences = [c for c in eval_cfg.confidences if not ensemble.single_member or c == 'sr']
        if not confidences:
            raise ConfigError("only sr is meaningful for a single-member ensemble")
        reports = {c: ood_evaluate(records_in, records_out, c) for c in confidences}
        for c, r in reports.items():
            logger.info(f"OOD ({c}): AUROC {r.auroc:.4f}, AUPR-in {r.aupr_in:.4f}, AUPR-out {r.aupr_out:.4f}")

        max_auroc = max(r.auroc for r in reports.values())
        max_aupr_in = max(r.aupr_in for r in reports.values())
        max_aupr_out = max(r.aupr_out for r in reports.values())
        increase = None
        if baseline is not None:
            increase = {
                'auroc': max_auroc / baseline.max_auroc,
                'aupr_in': max_aupr_in / baseline.max_aupr_in,
                'aupr_out': max_aupr_out / baseline.max_aupr_out,
            }

        summary = OODSummary(
            manifest_hash=manifest.manifest_hash,
            kind=ensemble.kind,
            scope=ensemble.scope,
            in_classes=split['in_classes'],
            out_classes=split['out_classes'],
            reports=reports,
            max_auroc=max_auroc,
            max_aupr_in=max_aupr_in,
            max_aupr_out=max_aupr_out,
            increase=increase,
            baseline_manifest_hash=baseline.manifest_hash if baseline else None,
        )

        report_path = Path(artifacts['ood_report'])
        h = manifest.manifest_hash
        outputs = [
            write_json_report(summary, report_path),
            write_records_csv(records_in, report_path.parent / 'records_in.csv', h),
            write_records_csv(records_out, report_path.parent / 'records_out.csv', h),
        ]
        write_manifest(manifest, report_path.parent / 'manifest.json', outputs=outputs)

        report_progress(state, 'ood', 100, f'OOD complete (max AUROC {max_auroc:.4f})')
        return {
            'artifacts': {**(state.get('artifacts') or {}), 'ood_report': str(report_path)},
            'manifests': {**(state.get('manifests') or {}), 'ood': manifest.manifest_hash},
            'results': {**(state.get('results') or {}), 'ood': summary},
        }

    except Exception as e:
        logger.error(f"Error in ood_node: {e}", exc_info=True)
        raise
