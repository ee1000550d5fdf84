"""
Helpers shared by the stage nodes: artifact layout, raw data loading and split handling.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from data import Dataset, load_feature_file, load_idx, split_by_class
from manifest import check_class_split, load_manifest, require_equal
from schemas import ClassSplit, RunConfig, RunManifest
from utils import ArtifactMismatchError, ConfigError

logger = logging.getLogger(__name__)


def run_tag(cfg: RunConfig) -> str:
    return f"{cfg.sampler.kind}-{cfg.sampler.scope}"


def default_artifacts(out_dir: Path, cfg: RunConfig) -> Dict[str, str]:
    """Where each stage writes (and the next stage looks) unless the state overrides it."""
    out_dir = Path(out_dir)
    tag = run_tag(cfg)
    return {
        'params': str(out_dir / 'train' / 'params.bin'),
        'train_report': str(out_dir / 'train' / 'train_report.json'),
        'features_train': str(out_dir / 'extract' / 'R_train.feat'),
        'features_test': str(out_dir / 'extract' / 'R_test.feat'),
        'features_test_out': str(out_dir / 'extract' / 'R_test_out.feat'),
        'ensemble': str(out_dir / 'sample' / tag / 'ensemble.bin'),
        'report': str(out_dir / 'evaluate' / tag / 'report.json'),
        'ood_report': str(out_dir / 'ood' / tag / 'ood_report.json'),
    }


def resolve_artifacts(state: Dict[str, Any]) -> Dict[str, str]:
    return {**default_artifacts(Path(state['out_dir']), state['config']), **(state.get('artifacts') or {})}


def class_split(cfg: RunConfig, num_classes: int) -> Optional[ClassSplit]:
    if cfg.data.in_classes is None:
        return None
    return ClassSplit.from_in_classes(cfg.data.in_classes, num_classes)


def split_meta(ds: Dataset) -> Dict[str, Any]:
    """The in/out class split a dataset was cut with (empty when unsplit)."""
    return {key: ds.meta[key] for key in ('in_classes', 'out_classes') if key in ds.meta}


def load_raw_datasets(cfg: RunConfig, data_dir: Path) -> Dict[str, Dataset]:
    """
    Load the IDX train/test pair and apply the class split when one is configured.

    Returns:
        {'train', 'test'} (in-distribution, relabeled when split) plus 'test_out'
        (original labels) when data.in_classes is set.
    """
    data_dir = Path(data_dir)
    d = cfg.data
    train = load_idx(data_dir / d.train_images, data_dir / d.train_labels, d.num_classes)
    test = load_idx(data_dir / d.test_images, data_dir / d.test_labels, d.num_classes or train.num_classes)
    if test.num_classes != train.num_classes:
        raise ConfigError(f"train has {train.num_classes} classes but test has {test.num_classes}; set data.num_classes")

    split = class_split(cfg, train.num_classes)
    if split is None:
        return {'train': train, 'test': test}
    train_in, _ = split_by_class(train, split)
    test_in, test_out = split_by_class(test, split)
    logger.info(
        f"Class split in={split.in_classes} out={split.out_classes}: "
        f"{train_in.size} train, {test_in.size} test-in, {test_out.size} test-out examples"
    )
    return {'train': train_in, 'test': test_in, 'test_out': test_out}


def report_progress(state: Dict[str, Any], stage: str, percent: float, message: str) -> None:
    callback = (state.get('metadata') or {}).get('progress_callback')
    if callback:
        callback(stage, percent, message)


def verify_manifest(artifact_path: str, header: Dict[str, Any]) -> RunManifest:
    """
    Load the manifest.json written next to an artifact and check that it produced it.

    Raises:
        ArtifactMismatchError: manifest missing, edited, or naming another run
    """
    path = Path(artifact_path).parent / 'manifest.json'
    if not path.exists():
        raise ArtifactMismatchError(f"{artifact_path} has no manifest.json next to it")
    manifest = load_manifest(path)
    require_equal(f'manifest hash of {Path(artifact_path).name}', manifest.manifest_hash, header.get('manifest_hash', ''))
    return manifest


def load_scope_data(state: Dict[str, Any], role: str, theta_hash: str, expected_split: Dict[str, Any]) -> Tuple[Dataset, str]:
    """
    The dataset a scope works on: R from the feature files (last-layer) or raw D (full-network).

    Args:
        role: 'train', 'test' or 'test_out'
        theta_hash: content hash of the theta* the artifacts must descend from
        expected_split: in/out classes the data must have been cut with

    Returns:
        (dataset, manifest hash of the stage that produced it)
    """
    cfg = state['config']
    configured = sorted(set(cfg.data.in_classes)) if cfg.data.in_classes is not None else None
    require_equal('in_classes of config vs artifacts', configured, expected_split.get('in_classes'))
    artifacts = resolve_artifacts(state)
    if cfg.sampler.scope == 'last-layer':
        ds = load_feature_file(artifacts[f'features_{role}'])
        verify_manifest(artifacts[f'features_{role}'], ds.meta)
        require_equal('theta* hash of the feature file', theta_hash, ds.meta.get('params_hash'))
        check_class_split(expected_split, split_meta(ds), 'feature file class split')
        return ds, ds.meta.get('manifest_hash', '')
    ds = load_raw_datasets(cfg, Path(state['data_dir']))[role]
    check_class_split(expected_split, split_meta(ds), 'data config class split')
    return ds, ''
