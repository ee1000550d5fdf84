"""
Train node for LangGraph - trains the representation network theta* on the raw inputs D.
"""
import logging
from pathlib import Path
from typing import Dict, Any

from export import write_json_report
from manifest import build_manifest, write_manifest
from network import accuracy, save_params, train
from schemas import TrainReport
from nodes.common import load_raw_datasets, report_progress, resolve_artifacts, split_meta

logger = logging.getLogger(__name__)


def train_node(state: Dict[str, Any]) -> Dict[str, Any]:
    """
    LangGraph node: train theta* and write the parameter file, train report and manifest.

    Args:
        state: Current pipeline state

    Returns:
        Updated state with the params artifact, train manifest hash and TrainReport
    """
    try:
        cfg = state['config']
        artifacts = resolve_artifacts(state)
        report_progress(state, 'train', 0, 'Loading training data...')

        datasets = load_raw_datasets(cfg, Path(state['data_dir']))
        train_ds, test_ds = datasets['train'], datasets['test']

        manifest = build_manifest(
            'train',
            config={
                'data': cfg.data.model_dump(),
                'preprocessing': train_ds.meta.get('preprocessing', ''),
                'architecture': cfg.architecture.model_dump(),
                'train': cfg.train.model_dump(),
            },
            seeds={'train': cfg.train.seed},
            inputs={'train_data': train_ds.content_hash(), 'test_data': test_ds.content_hash()},
        )
        logger.info(
            f"Training {cfg.architecture.layer_sizes} with {cfg.train.optimizer} "
            f"(lr={cfg.train.learning_rate}, batch={cfg.train.batch_size}, epochs={cfg.train.epochs})"
        )

        callback = (state.get('metadata') or {}).get('progress_callback')
        result = train(train_ds, cfg.architecture, cfg.train, progress_callback=callback)

        report = TrainReport(
            manifest_hash=manifest.manifest_hash,
            final_train_loss=result.final_loss,
            train_accuracy=accuracy(result.params, train_ds),
            test_accuracy=accuracy(result.params, test_ds),
            epoch_losses=result.epoch_losses,
        )
        logger.info(
            f"Train accuracy {report.train_accuracy:.4f}, test accuracy {report.test_accuracy:.4f}, "
            f"final loss {report.final_train_loss:.6f}"
        )

        params_path = Path(artifacts['params'])
        save_params(result.params, params_path, manifest.manifest_hash, extra=split_meta(train_ds))
        report_path = write_json_report(report, artifacts['train_report'])
        write_manifest(manifest, params_path.parent / 'manifest.json', outputs=[params_path, report_path])

        report_progress(state, 'train', 100, f'Training complete (test accuracy {report.test_accuracy:.4f})')
        return {
            'artifacts': {**(state.get('artifacts') or {}), 'params': str(params_path), 'train_report': str(report_path)},
            'manifests': {**(state.get('manifests') or {}), 'train': manifest.manifest_hash},
            'results': {**(state.get('results') or {}), 'train': report},
        }

    except Exception as e:
        logger.error(f"Error in train_node: {e}", exc_info=True)
        raise
