"""
Dataset ingestion: IDX (MNIST) files, feature files, class splits and bootstrap resamples.

Feature file layout (little-endian throughout):

    offset  size  field
    0       8     magic b"LLUFEAT\\0"
    8       4     u32 container version
    12      4     u32 header length H
    16      H     UTF-8 JSON header {"version", "N", "d", "K", "manifest_hash", ...}
    16+H    ...   N rows of (d float64 features, int64 label)

Loading is pure: no shuffling, no normalisation beyond the 1/255 pixel scaling.
"""
import gzip
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Dict, Any, Union

import numpy as np

from artifacts import read_container, write_container
from config import FEATURE_FILE_VERSION
from schemas import ClassSplit
from utils import DatasetError, IdxFormatError, FeatureFormatError, ConfigError, sha256_arrays

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
FEATURE_MAGIC = b'LLUFEAT\x00'

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Labeled examples (feature vector, class index) with class count K.

    Holds both raw inputs D and extracted representations R. Arrays are copied
    and marked read-only at construction, so a Dataset can be shared freely.
    """
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64, copy=True)
        labels = np.array(self.labels, copy=True)
        if features.ndim != 2:
            raise DatasetError(f"features must be a 2-D array (N x d), got shape {features.shape}")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise DatasetError(f"labels shape {labels.shape} does not match {features.shape[0]} examples")
        if features.shape[0] < 1:
            raise DatasetError("empty dataset")
        if features.shape[1] < 1:
            raise DatasetError("feature_dim must be at least 1")
        if self.num_classes < 2:
            raise DatasetError(f"num_classes must be at least 2, got {self.num_classes}")
        if labels.dtype.kind not in 'iu':
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise DatasetError("labels must be integers")
        labels = labels.astype(np.int64)
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise DatasetError(f"labels must lie in [0, {self.num_classes}), got range [{labels.min()}, {labels.max()}]")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'num_classes', int(self.num_classes))

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def __len__(self) -> int:
        return self.size

    def subset(
        self,
        indices: np.ndarray,
        num_classes: Optional[int] = None,
        labels: Optional[np.ndarray] = None,
        meta: Optional[Dict[str, Any]] = None,
    ) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            features=self.features[indices],
            labels=self.labels[indices] if labels is None else labels,
            num_classes=self.num_classes if num_classes is None else num_classes,
            meta={**self.meta, **(meta or {})},
        )

    def content_hash(self) -> str:
        return sha256_arrays(self.features, self.labels, np.array([self.num_classes], dtype=np.int64))


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Data file not found: {path}")
    opener = gzip.open if path.suffix == '.gz' else open
    with opener(path, 'rb') as f:
        return f.read()


def _parse_idx_header(raw: bytes, expected_magic: int, kind: str, n_dims: int) -> Tuple[int, ...]:
    header_size = 4 * (1 + n_dims)
    if len(raw) < header_size:
        raise IdxFormatError(f"truncated {kind} header", field=f'{kind}.header')
    header = np.frombuffer(raw, dtype='>u4', count=1 + n_dims)
    if int(header[0]) != expected_magic:
        raise IdxFormatError(f"bad {kind} magic: 0x{int(header[0]):08x}", field=f'{kind}.magic')
    return tuple(int(v) for v in header[1:])


def load_idx(images_path: PathLike, labels_path: PathLike, num_classes: Optional[int] = None) -> Dataset:
    """
    Load an IDX image/label pair (plain or gzip) into a Dataset.

    Pixels are scaled by 1/255 into [0, 1] and flattened row-major to d = rows * cols.

    Args:
        images_path: IDX3 file (magic 0x00000803)
        labels_path: IDX1 file (magic 0x00000801)
        num_classes: K; inferred as max label + 1 when omitted

    Raises:
        IdxFormatError: bad magic, truncated payload or count mismatch (field names the culprit)
    """
    image_bytes = _read_bytes(images_path)
    label_bytes = _read_bytes(labels_path)

    n_images, rows, cols = _parse_idx_header(image_bytes, IDX_IMAGES_MAGIC, 'images', 3)
    (n_labels,) = _parse_idx_header(label_bytes, IDX_LABELS_MAGIC, 'labels', 1)

    pixel_count = n_images * rows * cols
    if len(image_bytes) - 16 < pixel_count:
        raise IdxFormatError(
            f"truncated images payload: expected {pixel_count} bytes, found {len(image_bytes) - 16}",
            field='images.payload',
        )
    if len(label_bytes) - 8 < n_labels:
        raise IdxFormatError(
            f"truncated labels payload: expected {n_labels} bytes, found {len(label_bytes) - 8}",
            field='labels.payload',
        )
    if n_images != n_labels:
        raise IdxFormatError(f"count mismatch: {n_images} images vs {n_labels} labels", field='count')

    pixels = np.frombuffer(image_bytes, dtype=np.uint8, count=pixel_count, offset=16)
    labels = np.frombuffer(label_bytes, dtype=np.uint8, count=n_labels, offset=8).astype(np.int64)
    features = pixels.reshape(n_images, rows * cols).astype(np.float64) / 255.0

    if num_classes is None:
        num_classes = int(labels.max()) + 1 if n_labels else 0
    logger.info(f"Loaded {n_images} examples ({rows}x{cols}) from {Path(images_path).name}")
    return Dataset(
        features=features,
        labels=labels,
        num_classes=num_classes,
        meta={'source': str(images_path), 'preprocessing': 'pixels / 255'},
    )


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: PathLike, labels_path: PathLike) -> None:
    """Write uint8 images (N x rows x cols) and labels (N) as an IDX pair; .gz paths are compressed."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise DatasetError(f"images must be N x rows x cols, got shape {images.shape}")
    image_header = np.array([IDX_IMAGES_MAGIC, *images.shape], dtype='>u4').tobytes()
    label_header = np.array([IDX_LABELS_MAGIC, labels.shape[0]], dtype='>u4').tobytes()
    for path, payload in ((images_path, image_header + images.tobytes()),
                          (labels_path, label_header + labels.tobytes())):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        opener = gzip.open if path.suffix == '.gz' else open
        with opener(path, 'wb') as f:
            f.write(payload)


def _row_dtype(d: int) -> np.dtype:
    return np.dtype([('x', '<f8', (d,)), ('y', '<i8')])


def save_feature_file(ds: Dataset, path: PathLike, manifest_hash: str = '', extra: Optional[Dict[str, Any]] = None) -> None:
    """Persist a Dataset in the feature file layout; reals are stored bit-exactly."""
    rows = np.empty(ds.size, dtype=_row_dtype(ds.feature_dim))
    rows['x'] = ds.features
    rows['y'] = ds.labels
    header = {
        'version': FEATURE_FILE_VERSION,
        'N': ds.size,
        'd': ds.feature_dim,
        'K': ds.num_classes,
        'manifest_hash': manifest_hash,
        **(extra or {}),
    }
    write_container(path, FEATURE_MAGIC, FEATURE_FILE_VERSION, header, rows.tobytes())


def load_feature_file(path: PathLike) -> Dataset:
    """
    Load a feature file written by save_feature_file.

    The header is exposed as Dataset.meta (manifest_hash, source params hash, class split).

    Raises:
        FeatureFormatError: header/payload inconsistency or empty dataset
    """
    header, payload = read_container(path, FEATURE_MAGIC, FEATURE_FILE_VERSION, error_cls=FeatureFormatError)
    for key in ('N', 'd', 'K'):
        if not isinstance(header.get(key), int):
            raise FeatureFormatError(f"feature header is missing integer field '{key}'", field=key)
    n, d, k = header['N'], header['d'], header['K']
    if n < 1:
        raise FeatureFormatError("empty dataset", field='N')
    if d < 1:
        raise FeatureFormatError(f"invalid feature dimension d={d}", field='d')
    row_dtype = _row_dtype(d)
    if len(payload) != n * row_dtype.itemsize:
        raise FeatureFormatError(
            f"payload of {len(payload)} bytes does not hold {n} rows of d={d} values",
            field='d',
        )
    rows = np.frombuffer(payload, dtype=row_dtype, count=n)
    return Dataset(features=rows['x'], labels=rows['y'], num_classes=k, meta=dict(header))


def split_by_class(ds: Dataset, split: ClassSplit) -> Tuple[Dataset, Dataset]:
    """
    Partition a dataset into in-distribution and out-of-distribution parts.

    In-distribution labels are relabeled densely to [0, |in_classes|) by ascending
    original class index; the out part keeps original labels. Input order is preserved.

    Raises:
        DatasetError: split does not partition {0..K-1} into two nonempty sets
    """
    validate_split(split, ds.num_classes)
    in_mask = np.isin(ds.labels, split.in_classes)
    relabel = np.full(ds.num_classes, -1, dtype=np.int64)
    relabel[split.in_classes] = np.arange(len(split.in_classes))

    in_idx = np.flatnonzero(in_mask)
    out_idx = np.flatnonzero(~in_mask)
    if in_idx.size == 0 or out_idx.size == 0:
        raise DatasetError("class split leaves one side without examples")
    split_meta = {"in_classes": split.in_classes, "out_classes": split.out_classes}
    in_ds = ds.subset(
        in_idx,
        num_classes=len(split.in_classes),
        labels=relabel[ds.labels[in_idx]],
        meta={**split_meta, "role": "in"},
    )
    out_ds = ds.subset(out_idx, meta={**split_meta, "role": "out"})
    return in_ds, out_ds


def validate_split(split: ClassSplit, num_classes: int) -> None:
    in_set, out_set = set(split.in_classes), set(split.out_classes)
    if not in_set:
        raise DatasetError("in_classes is empty")
    if not out_set:
        raise DatasetError("out_classes is empty")
    if in_set & out_set:
        raise DatasetError(f"in_classes and out_classes overlap: {sorted(in_set & out_set)}")
    bad = sorted(c for c in in_set | out_set if c < 0 or c >= num_classes)
    if bad:
        raise DatasetError(f"class split references classes outside [0, {num_classes}): {bad}")
    if in_set | out_set != set(range(num_classes)):
        missing = sorted(set(range(num_classes)) - in_set - out_set)
        raise DatasetError(f"class split does not cover classes {missing}")


def bootstrap_resample(ds: Dataset, seed: int) -> Dataset:
    """Draw N examples i.i.d. uniformly with replacement; deterministic given seed."""
    rng = np.random.default_rng(seed)
    indices = rng.integers(0, ds.size, size=ds.size)
    return ds.subset(indices)
