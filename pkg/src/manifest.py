"""
Run manifests: provenance of one stage run and the checks that tie stages together.

manifest_hash covers stage, config, seeds, inputs, parents and versions. It leaves
out created_at and outputs, so identical reruns get identical hashes.
"""
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from artifacts import file_sha256
from config import (
    ENSEMBLE_FILE_VERSION,
    FEATURE_FILE_VERSION,
    PACKAGE_VERSION,
    PARAMS_FILE_VERSION,
    REPORT_SCHEMA_VERSION,
)
from schemas import RunManifest
from utils import ArtifactMismatchError, ConfigError, sha256_json

logger = logging.getLogger(__name__)

_HASHED_FIELDS = {'stage', 'config', 'seeds', 'inputs', 'parents', 'versions'}


def artifact_versions() -> Dict[str, Any]:
    return {
        'package': PACKAGE_VERSION,
        'feature_file': FEATURE_FILE_VERSION,
        'params_file': PARAMS_FILE_VERSION,
        'ensemble_file': ENSEMBLE_FILE_VERSION,
        'report_schema': REPORT_SCHEMA_VERSION,
    }


def compute_manifest_hash(manifest: RunManifest) -> str:
    return sha256_json(manifest.model_dump(include=_HASHED_FIELDS))


def build_manifest(
    stage: str,
    config: Dict[str, Any],
    seeds: Optional[Dict[str, int]] = None,
    inputs: Optional[Dict[str, str]] = None,
    parents: Optional[Sequence[str]] = None,
) -> RunManifest:
    """
    Create a manifest for one stage run and fill in its hash.

    Args:
        stage: train, extract, sample, evaluate, ood or sweep
        config: config snapshot (plain JSON values)
        seeds: named seeds used by the stage
        inputs: input name -> content hash
        parents: manifest hashes of the stages whose artifacts were consumed
    """
    manifest = RunManifest(
        stage=stage,
        config=json.loads(json.dumps(config, default=str)),
        seeds=dict(seeds or {}),
        inputs=dict(inputs or {}),
        parents=[p for p in (parents or []) if p],
        versions=artifact_versions(),
    )
    manifest.manifest_hash = compute_manifest_hash(manifest)
    return manifest


def write_manifest(manifest: RunManifest, path: Union[str, Path], outputs: Optional[List[Union[str, Path]]] = None) -> Path:
    """Stamp created_at, record output file hashes and write the manifest as JSON."""
    path = Path(path)
    manifest.created_at = datetime.now(timezone.utc).isoformat()
    for output in outputs or []:
        output = Path(output)
        if output.exists():
            manifest.outputs[output.name] = file_sha256(output)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(manifest.model_dump_json(indent=2))
    logger.info(f"Wrote {manifest.stage} manifest {manifest.manifest_hash[:12]} to {path}")
    return path


def load_manifest(path: Union[str, Path]) -> RunManifest:
    """
    Read a manifest and check that its hash still matches its contents.

    Raises:
        ConfigError: file missing or unreadable
        ArtifactMismatchError: stored hash does not match the recorded fields
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Manifest not found: {path}")
    try:
        manifest = RunManifest.model_validate_json(path.read_text(encoding='utf-8'))
    except ValueError as e:
        raise ConfigError(f"Unreadable manifest {path}: {e}") from e
    expected = compute_manifest_hash(manifest)
    if manifest.manifest_hash != expected:
        raise ArtifactMismatchError(f"manifest {path} was modified: hash {manifest.manifest_hash[:12]} != {expected[:12]}")
    return manifest


def require_equal(what: str, expected: Any, found: Any) -> None:
    """Fail loudly when two stages disagree about a shared value."""
    if expected != found:
        raise ArtifactMismatchError(f"{what} mismatch: expected {expected}, found {found}")


def check_class_split(first: Dict[str, Any], second: Dict[str, Any], what: str) -> None:
    """Two artifacts must carry the same (possibly absent) in/out class split."""
    for key in ('in_classes', 'out_classes'):
        require_equal(f"{what} {key}", first.get(key), second.get(key))
