"""
Versioned binary container shared by feature, parameter and ensemble files.

    offset  size  field
    0       8     magic (file kind)
    8       4     u32 little-endian container version
    12      4     u32 little-endian header length H
    16      H     UTF-8 JSON header (sorted keys)
    16+H    ...   raw little-endian payload, layout given by the header
"""
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Tuple, Type, Union

from utils import ArtifactFormatError, ConfigError, DataFormatError, sha256_bytes

logger = logging.getLogger(__name__)

_PREFIX = struct.Struct('<8sII')


def write_container(path: Union[str, Path], magic: bytes, version: int, header: Dict[str, Any], payload: bytes) -> str:
    """
    Write one container file.

    Returns:
        sha256 of the written bytes
    """
    if len(magic) != 8:
        raise ValueError("container magic must be exactly 8 bytes")
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    blob = _PREFIX.pack(magic, version, len(header_bytes)) + header_bytes + payload
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(blob)
    logger.debug(f"Wrote {len(blob)} bytes to {path}")
    return sha256_bytes(blob)


def read_container(
    path: Union[str, Path],
    magic: bytes,
    version: int,
    error_cls: Type[DataFormatError] = ArtifactFormatError,
) -> Tuple[Dict[str, Any], bytes]:
    """
    Read one container file and return (header, payload).

    Raises:
        ConfigError: file does not exist
        error_cls: wrong magic, unsupported version, truncated or unparsable header
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Artifact not found: {path}")
    with open(path, 'rb') as f:
        blob = f.read()
    if len(blob) < _PREFIX.size:
        raise error_cls(f"{path.name}: truncated container prefix", field='prefix')
    found_magic, found_version, header_len = _PREFIX.unpack_from(blob)
    if found_magic != magic:
        raise error_cls(f"{path.name}: bad magic {found_magic!r}, expected {magic!r}", field='magic')
    if found_version != version:
        raise error_cls(f"{path.name}: unsupported version {found_version}, expected {version}", field='version')
    header_end = _PREFIX.size + header_len
    if len(blob) < header_end:
        raise error_cls(f"{path.name}: truncated header", field='header')
    try:
        header = json.loads(blob[_PREFIX.size:header_end].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise error_cls(f"{path.name}: unreadable header: {e}", field='header') from e
    if not isinstance(header, dict):
        raise error_cls(f"{path.name}: header is not an object", field='header')
    return header, blob[header_end:]


def file_sha256(path: Union[str, Path]) -> str:
    with open(path, 'rb') as f:
        return sha256_bytes(f.read())
