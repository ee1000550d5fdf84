"""
Sample node for LangGraph - builds the posterior ensemble around theta*.
"""
import logging
from pathlib import Path
from typing import Any, Dict

from config import worker_count
from manifest import build_manifest, write_manifest
from network import load_params
from nodes.common import load_scope_data, report_progress, resolve_artifacts, verify_manifest
from samplers import ChainDivergenceError, build_ensemble, save_ensemble

logger = logging.getLogger(__name__)


def sample_node(state: Dict[str, Any]) -> Dict[str, Any]:
    """
    LangGraph node: run the configured sampler from theta* and save the ensemble.

    On divergence the completed members are saved with partial=true before the
    error propagates.

    Args:
        state: Current pipeline state

    Returns:
        Updated state with the ensemble artifact and sample manifest hash
    """
    try:
        cfg = state['config']
        sampler_cfg = cfg.sampler
        artifacts = resolve_artifacts(state)
        report_progress(state, 'sample', 0, f'Preparing {sampler_cfg.kind} ({sampler_cfg.scope})...')

        theta_star, params_header = load_params(artifacts['params'])
        verify_manifest(artifacts['params'], params_header)
        ds, data_manifest = load_scope_data(state, 'train', theta_star.content_hash(), params_header)

        manifest = build_manifest(
            'sample',
            config={'sampler': sampler_cfg.model_dump()},
            seeds={'sampler': sampler_cfg.seed},
            inputs={'theta_star': theta_star.content_hash(), 'data': ds.content_hash()},
            parents=[params_header.get('manifest_hash', ''), data_manifest],
        )

        ensemble_path = Path(artifacts['ensemble'])
        callback = (state.get('metadata') or {}).get('progress_callback')
        try:
            workers = worker_count(sampler_cfg.max_workers)
            ensemble = build_ensemble(ds, theta_star, sampler_cfg.model_copy(update={'max_workers': workers}), progress_callback=callback)
        except ChainDivergenceError as e:
            if e.ensemble is not None:
                save_ensemble(e.ensemble, ensemble_path, manifest.manifest_hash)
                write_manifest(manifest, ensemble_path.parent / 'manifest.json', outputs=[ensemble_path])
                logger.error(f"Saved partial ensemble with {len(e.ensemble.members)} member(s) to {ensemble_path}")
            raise

        save_ensemble(ensemble, ensemble_path, manifest.manifest_hash)
        write_manifest(manifest, ensemble_path.parent / 'manifest.json', outputs=[ensemble_path])
        logger.info(f"Saved {sampler_cfg.kind} ensemble ({ensemble.n_samples} samples per input) to {ensemble_path}")

        report_progress(state, 'sample', 100, 'Ensemble saved')
        return {
            'artifacts': {**(state.get('artifacts') or {}), 'ensemble': str(ensemble_path)},
            'manifests': {**(state.get('manifests') or {}), 'sample': manifest.manifest_hash},
        }

    except Exception as e:
        logger.error(f"Error in sample_node: {e}", exc_info=True)
        raise
