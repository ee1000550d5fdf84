"""
Configuration module for the Last-Layer Uncertainty pipeline.
Loads path/runtime settings from environment variables (.env file) and
run configurations from JSON files.
"""
import os
import json
import logging
from pathlib import Path
from typing import Dict, Any, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from utils import ConfigError

logger = logging.getLogger(__name__)

# Adam defaults ("default Adam optimizer" for stage-one training)
ADAM_LEARNING_RATE = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

DEFAULT_PRIOR_VARIANCE = 1.0
DEFAULT_CALIBRATION_BINS = 10
DEFAULT_HISTOGRAM_BINS = 20
DEFAULT_PREDICTION_CHUNK = 1024

PACKAGE_VERSION = "1.0.0"

# Binary container versions
FEATURE_FILE_VERSION = 1
PARAMS_FILE_VERSION = 1
ENSEMBLE_FILE_VERSION = 1
REPORT_SCHEMA_VERSION = 1

# Load environment variables from .env file
_env_loaded = False


def _ensure_env_loaded():
    """Ensure .env file is loaded. Supports .env.dev for development and .env otherwise."""
    global _env_loaded
    if not _env_loaded:
        project_root = Path(__file__).parent.parent

        env_mode = os.getenv('ENV', '').lower()

        if env_mode == 'dev':
            env_path = project_root / '.env.dev'
            if not env_path.exists():
                env_path = project_root / '.env'
                logger.warning(".env.dev not found, falling back to .env")
        else:
            env_path = project_root / '.env'

        if env_path.exists():
            load_dotenv(env_path)
            logger.info(f"Loaded environment variables from {env_path} (mode: {env_mode or 'default'})")
        else:
            logger.debug(f".env file not found at {env_path}, using system environment variables")
        _env_loaded = True


def get_path_config() -> Dict[str, Any]:
    """
    Get data/output directories from environment variables.

    Returns:
        Dictionary with 'data_dir' and 'out_dir' paths
    """
    _ensure_env_loaded()
    return {
        'data_dir': Path(os.getenv('DATA_DIR', 'data')),
        'out_dir': Path(os.getenv('OUT_DIR', 'output')),
    }


def get_runtime_config() -> Dict[str, Any]:
    """
    Get logging and worker settings from environment variables.

    Returns:
        Dictionary with 'log_level' and 'max_workers' (an upper bound on worker
        threads, None when MAX_WORKERS is unset)
    """
    _ensure_env_loaded()
    max_workers = os.getenv('MAX_WORKERS')
    return {
        'log_level': os.getenv('LOG_LEVEL', 'INFO').upper(),
        'max_workers': max(1, int(max_workers)) if max_workers else None,
    }


def worker_count(requested: int) -> int:
    """requested, capped by MAX_WORKERS when it is set."""
    cap = get_runtime_config()['max_workers']
    return min(requested, cap) if cap else requested


def _read_config_file(path: Optional[Path]) -> Dict[str, Any]:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Error parsing config file {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    return raw


def _apply_overrides(raw: Dict[str, Any], overrides: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section = raw
        *parents, leaf = dotted.split('.')
        for key in parents:
            section = section.setdefault(key, {})
        section[leaf] = value
    return raw


def load_run_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> "RunConfig":
    """
    Load a run configuration file and apply command-line overrides.

    Overrides use dotted keys ("sampler.kind", "train.seed"); None values are ignored
    so that unset flags never clobber file values.

    Args:
        path: JSON run-config file, or None for an all-defaults config
        overrides: Dotted-key overrides coming from CLI flags

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: missing file, malformed JSON or invalid values
    """
    from schemas import RunConfig

    raw = _apply_overrides(_read_config_file(path), overrides)
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration: {e}") from e


def load_sweep_spec(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> "SweepSpec":
    """Same as load_run_config for a sweep file; run-config overrides go under "base."."""
    from schemas import SweepSpec

    raw = _apply_overrides(_read_config_file(path), overrides)
    try:
        return SweepSpec.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid sweep specification: {e}") from e
