"""
Utility functions for the Last-Layer Uncertainty pipeline:
exception hierarchy, seed derivation and content hashing.
"""
import json
import hashlib
import logging
from typing import Any, List, Optional

import numpy as np

logger = logging.getLogger(__name__)


class PipelineError(Exception):
    """Base class for pipeline failures. exit_code is what the CLI returns."""
    exit_code = 1


class ConfigError(PipelineError):
    """Invalid configuration, sweep grid or missing input file."""
    exit_code = 2


class DatasetError(PipelineError, ValueError):
    """A Dataset or ClassSplit invariant does not hold."""
    exit_code = 2


class DataFormatError(PipelineError, ValueError):
    """A file on disk does not follow its documented layout."""
    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class IdxFormatError(DataFormatError):
    """Malformed IDX (MNIST) file."""


class FeatureFormatError(DataFormatError):
    """Malformed feature file."""


class ArtifactFormatError(DataFormatError):
    """Malformed parameter or ensemble container."""


class DivergenceError(PipelineError, ArithmeticError):
    """Exception raised when training or sampling produces non-finite values."""
    exit_code = 3

    def __init__(self, diagnostic: str, step: Optional[int] = None, partial: Optional[List[Any]] = None):
        super().__init__(diagnostic)
        self.diagnostic = diagnostic
        self.step = step
        self.partial = list(partial or [])


class ArtifactMismatchError(PipelineError, ValueError):
    """Artifacts from different runs, splits or shapes were combined."""
    exit_code = 4


def derive_seed(master_seed: int, *path: int) -> int:
    """
    Derive an independent child seed from a master seed.

    The member index (and any further path components) are mixed into the master
    seed through numpy's SeedSequence, so derive_seed(s, i) is stable across runs
    and platforms and distinct children do not share streams.
    """
    sequence = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, *[int(p) for p in path]])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def sha256_bytes(*chunks: bytes) -> str:
    digest = hashlib.sha256()
    for chunk in chunks:
        digest.update(chunk)
    return digest.hexdigest()


def sha256_arrays(*arrays: np.ndarray) -> str:
    """Hash arrays by dtype, shape and little-endian contents."""
    digest = hashlib.sha256()
    for array in arrays:
        array = np.ascontiguousarray(array)
        little = array.astype(array.dtype.newbyteorder('<'), copy=False)
        digest.update(str(little.dtype.str).encode())
        digest.update(str(little.shape).encode())
        digest.update(little.tobytes())
    return digest.hexdigest()


def canonical_json(data: Any) -> str:
    """JSON text with sorted keys and no whitespace, stable enough to hash."""
    return json.dumps(data, sort_keys=True, separators=(',', ':'), default=str)


def sha256_json(data: Any) -> str:
    return sha256_bytes(canonical_json(data).encode('utf-8'))
