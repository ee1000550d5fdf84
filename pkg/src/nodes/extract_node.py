"""
Extract node for LangGraph - builds the representation datasets R from theta*.
"""
import logging
from pathlib import Path
from typing import Dict, Any

from data import save_feature_file
from manifest import build_manifest, check_class_split, write_manifest
from network import extract_features, load_params
from nodes.common import load_raw_datasets, report_progress, resolve_artifacts, split_meta, verify_manifest

logger = logging.getLogger(__name__)

# dataset role -> artifact name
_OUTPUTS = {
    'train': 'features_train',
    'test': 'features_test',
    'test_out': 'features_test_out',
}


def extract_node(state: Dict[str, Any]) -> Dict[str, Any]:
    """
    LangGraph node: forward every example through theta* and store the penultimate activations.

    Writes R for the training set, the test set and (with a class split) the
    out-of-distribution test set. Each feature file records the hash of the theta*
    that produced it so later stages can refuse mismatched artifacts.

    Args:
        state: Current pipeline state

    Returns:
        Updated state with feature-file artifacts and the extract manifest hash
    """
    try:
        cfg = state['config']
        artifacts = resolve_artifacts(state)
        report_progress(state, 'extract', 0, 'Loading theta* and data...')

        params, params_header = load_params(artifacts['params'])
        verify_manifest(artifacts['params'], params_header)
        datasets = load_raw_datasets(cfg, Path(state['data_dir']))
        check_class_split(params_header, split_meta(datasets['train']), 'parameter file vs data config')

        params_hash = params.content_hash()
        manifest = build_manifest(
            'extract',
            config={'data': cfg.data.model_dump()},
            inputs={
                'params': params_hash,
                **{f'{role}_data': ds.content_hash() for role, ds in datasets.items()},
            },
            parents=[params_header.get('manifest_hash', '')],
        )

        written = {}
        for i, (role, ds) in enumerate(datasets.items()):
            features = extract_features(params, ds)
            path = Path(artifacts[_OUTPUTS[role]])
            save_feature_file(
                features,
                path,
                manifest_hash=manifest.manifest_hash,
                extra={
                    'role': role,
                    'params_hash': params_hash,
                    'params_manifest_hash': params_header.get('manifest_hash', ''),
                    **split_meta(ds),
                },
            )
            written[_OUTPUTS[role]] = str(path)
            logger.info(f"Extracted {features.size} x {features.feature_dim} features for {role} -> {path}")
            report_progress(state, 'extract', 100.0 * (i + 1) / len(datasets), f'Extracted {role} features')

        write_manifest(manifest, Path(artifacts['features_train']).parent / 'manifest.json', outputs=list(written.values()))
        return {
            'artifacts': {**(state.get('artifacts') or {}), **written},
            'manifests': {**(state.get('manifests') or {}), 'extract': manifest.manifest_hash},
        }

    except Exception as e:
        logger.error(f"Error in extract_node: {e}", exc_info=True)
        raise
