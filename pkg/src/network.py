"""
Dense feedforward network with a softmax head.

Stage one of the two-stage procedure: train the representation network, then
read the penultimate activations z as features. Everything runs in float64
with fixed summation order, so training is bitwise reproducible for a seed.

Parameter file layout: container magic b"LLUPARAM", JSON header
{"layer_sizes", "manifest_hash", ...}, then for each layer ell in order the
weight matrix W_ell (out x in, row-major float64) followed by b_ell (out float64).
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union, Dict, Any

import numpy as np
from scipy.special import logsumexp, softmax as _scipy_softmax

from artifacts import read_container, write_container
from config import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPSILON,
    DEFAULT_PREDICTION_CHUNK,
    PARAMS_FILE_VERSION,
)
from data import Dataset
from schemas import Architecture, TrainConfig
from utils import ArtifactFormatError, ArtifactMismatchError, DatasetError, DivergenceError, derive_seed, sha256_arrays

logger = logging.getLogger(__name__)

PARAMS_MAGIC = b'LLUPARAM'


@dataclass(frozen=True, eq=False)
class NetworkParams:
    """Per-layer weights W_ell (out x in) and biases b_ell; the last layer is the softmax head (W, b)."""
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        weights = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        biases = tuple(np.asarray(b, dtype=np.float64) for b in self.biases)
        if not weights or len(weights) != len(biases):
            raise ValueError("NetworkParams needs one bias vector per weight matrix")
        for ell, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {ell}: weight {w.shape} and bias {b.shape} are inconsistent")
            if ell and w.shape[1] != weights[ell - 1].shape[0]:
                raise ValueError(f"layer {ell}: input width {w.shape[1]} != previous output {weights[ell - 1].shape[0]}")
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'biases', biases)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def layer_sizes(self) -> List[int]:
        return [int(self.weights[0].shape[1])] + [int(w.shape[0]) for w in self.weights]

    @property
    def architecture(self) -> Architecture:
        return Architecture(layer_sizes=self.layer_sizes)

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.weights[-1].shape[0])

    @property
    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> List[np.ndarray]:
        """Flat list [W_0, b_0, W_1, b_1, ...]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> 'NetworkParams':
        return cls(weights=tuple(arrays[0::2]), biases=tuple(arrays[1::2]))

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> 'NetworkParams':
        return NetworkParams.from_arrays([fn(a) for a in self.arrays()])

    def combine(self, other: 'NetworkParams', fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> 'NetworkParams':
        return NetworkParams.from_arrays([fn(a, b) for a, b in zip(self.arrays(), other.arrays())])

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, vector: np.ndarray) -> 'NetworkParams':
        """Params shaped like self, filled from a flat vector."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.num_parameters,):
            raise ValueError(f"expected a vector of {self.num_parameters} values, got shape {vector.shape}")
        arrays, offset = [], 0
        for a in self.arrays():
            arrays.append(vector[offset:offset + a.size].reshape(a.shape))
            offset += a.size
        return NetworkParams.from_arrays(arrays)

    def zeros_like(self) -> 'NetworkParams':
        return self.map(np.zeros_like)

    def last_layer(self) -> 'NetworkParams':
        """The multinomial logistic regression head (W_L, b_L) as a one-layer network."""
        return NetworkParams(weights=(self.weights[-1],), biases=(self.biases[-1],))

    def with_last_layer(self, head: 'NetworkParams') -> 'NetworkParams':
        if head.num_layers != 1 or head.weights[0].shape != self.weights[-1].shape:
            raise ArtifactMismatchError(f"head {head.layer_sizes} does not fit network {self.layer_sizes}")
        return NetworkParams(weights=self.weights[:-1] + head.weights, biases=self.biases[:-1] + head.biases)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def content_hash(self) -> str:
        return sha256_arrays(*self.arrays())


@dataclass(frozen=True)
class DropoutSpec:
    """
    Inverted dropout: inputs of the listed layers are multiplied by Bernoulli(1 - p_drop)
    masks scaled by 1 / (1 - p_drop), at training and at prediction time.
    """
    p_drop: float
    layers: Tuple[int, ...]

    def sample_masks(self, params: NetworkParams, batch_size: int, rng: np.random.Generator) -> List[Optional[np.ndarray]]:
        keep = 1.0 - self.p_drop
        masks: List[Optional[np.ndarray]] = [None] * params.num_layers
        for ell in self.layers:
            width = params.weights[ell].shape[1]
            masks[ell] = (rng.random((batch_size, width)) >= self.p_drop) / keep
        return masks


@dataclass
class TrainResult:
    params: NetworkParams
    final_loss: float
    epoch_losses: List[float] = field(default_factory=list)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis (max-subtracted before exponentiating)."""
    return _scipy_softmax(np.asarray(logits, dtype=np.float64), axis=-1)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def init_params(arch: Architecture, seed: int) -> NetworkParams:
    """Symmetric uniform fan-in initialisation U(-sqrt(6/fan_in), sqrt(6/fan_in)); zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch.layer_sizes[:-1], arch.layer_sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights=tuple(weights), biases=tuple(biases))


def _as_batch(params: NetworkParams, x: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != params.input_dim:
        raise ArtifactMismatchError(f"input has dimension {batch.shape[-1]}, network expects {params.input_dim}")
    return batch, single


def _forward_cache(
    params: NetworkParams,
    batch: np.ndarray,
    masks: Optional[Sequence[Optional[np.ndarray]]] = None,
) -> Tuple[List[np.ndarray], List[np.ndarray], List[np.ndarray], np.ndarray]:
    """Returns (activations, layer inputs after masking, hidden pre-activations, logits)."""
    activations = [batch]
    inputs, pre_activations = [], []
    h = batch
    last = params.num_layers - 1
    for ell, (w, b) in enumerate(zip(params.weights, params.biases)):
        layer_in = h if masks is None or masks[ell] is None else h * masks[ell]
        inputs.append(layer_in)
        pre = layer_in @ w.T + b
        if ell < last:
            pre_activations.append(pre)
            h = relu(pre)
            activations.append(h)
        else:
            return activations, inputs, pre_activations, pre
    raise AssertionError("unreachable")


def forward(
    params: NetworkParams,
    x: np.ndarray,
    masks: Optional[Sequence[Optional[np.ndarray]]] = None,
) -> Tuple[List[np.ndarray], np.ndarray]:
    """
    Forward pass for one input vector or a batch (rows).

    Returns:
        (activations, probabilities): activations[0] is the input, activations[-1] the
        penultimate feature z (for a one-layer head it is the input itself).
    """
    batch, single = _as_batch(params, x)
    activations, _, _, logits = _forward_cache(params, batch, masks)
    probs = softmax(logits)
    if single:
        return [a[0] for a in activations], probs[0]
    return activations, probs


def _check_labels(params: NetworkParams, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= params.num_classes):
        raise DatasetError(f"labels must lie in [0, {params.num_classes}), got range [{y.min()}, {y.max()}]")
    return y


def loss_and_gradient(
    params: NetworkParams,
    x: np.ndarray,
    y: np.ndarray,
    masks: Optional[Sequence[Optional[np.ndarray]]] = None,
) -> Tuple[float, NetworkParams]:
    """
    Mean cross-entropy over the batch and its exact gradient (backpropagation).

    Args:
        params: network parameters
        x: batch inputs (B x d)
        y: integer labels (B)
        masks: optional per-layer input masks (already scaled), see DropoutSpec

    Raises:
        DatasetError: empty batch or label out of range
    """
    batch, _ = _as_batch(params, x)
    y = _check_labels(params, y)
    n = batch.shape[0]
    if n == 0 or y.shape != (n,):
        raise DatasetError("batch must be nonempty with one label per row")

    _, inputs, pre_activations, logits = _forward_cache(params, batch, masks)
    log_norm = logsumexp(logits, axis=1)
    rows = np.arange(n)
    loss = float(np.mean(log_norm - logits[rows, y]))

    delta = np.exp(logits - log_norm[:, None])
    delta[rows, y] -= 1.0
    delta /= n

    grad_w: List[np.ndarray] = [None] * params.num_layers
    grad_b: List[np.ndarray] = [None] * params.num_layers
    for ell in range(params.num_layers - 1, -1, -1):
        grad_w[ell] = delta.T @ inputs[ell]
        grad_b[ell] = delta.sum(axis=0)
        if ell == 0:
            break
        delta = delta @ params.weights[ell]
        if masks is not None and masks[ell] is not None:
            delta = delta * masks[ell]
        delta = delta * (pre_activations[ell - 1] > 0.0)
    return loss, NetworkParams(weights=tuple(grad_w), biases=tuple(grad_b))


class PlainSGD:
    """theta <- theta - gamma * grad."""

    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: NetworkParams, grads: NetworkParams) -> NetworkParams:
        lr = self.learning_rate
        return params.combine(grads, lambda p, g: p - lr * g)


class Adam:
    """Adam with bias-corrected moment estimates."""

    def __init__(self, learning_rate: float, beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, epsilon: float = ADAM_EPSILON):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self._m: Optional[List[np.ndarray]] = None
        self._v: Optional[List[np.ndarray]] = None
        self._t = 0

    def step(self, params: NetworkParams, grads: NetworkParams) -> NetworkParams:
        g = grads.arrays()
        if self._m is None:
            self._m = [np.zeros_like(a) for a in g]
            self._v = [np.zeros_like(a) for a in g]
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1 ** self._t
        correction2 = 1.0 - b2 ** self._t
        updated = []
        for i, (p, grad) in enumerate(zip(params.arrays(), g)):
            self._m[i] = b1 * self._m[i] + (1.0 - b1) * grad
            self._v[i] = b2 * self._v[i] + (1.0 - b2) * grad * grad
            m_hat = self._m[i] / correction1
            v_hat = self._v[i] / correction2
            updated.append(p - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon))
        return NetworkParams.from_arrays(updated)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == 'adam':
        return Adam(cfg.learning_rate)
    return PlainSGD(cfg.learning_rate)


def dataset_loss(params: NetworkParams, ds: Dataset, chunk_size: int = DEFAULT_PREDICTION_CHUNK) -> float:
    """Mean cross-entropy over the whole dataset, no dropout."""
    total = 0.0
    for start in range(0, ds.size, chunk_size):
        stop = min(start + chunk_size, ds.size)
        _, _, _, logits = _forward_cache(params, ds.features[start:stop])
        y = ds.labels[start:stop]
        total += float(np.sum(logsumexp(logits, axis=1) - logits[np.arange(stop - start), y]))
    return total / ds.size


def train(
    ds: Dataset,
    arch: Architecture,
    cfg: TrainConfig,
    init: Optional[NetworkParams] = None,
    dropout: Optional[DropoutSpec] = None,
    progress_callback: Optional[Callable[[str, float, str], None]] = None,
) -> TrainResult:
    """
    Mini-batch training with per-epoch reshuffling.

    Args:
        ds: training data; dims must match arch
        arch: layer layout
        cfg: optimiser, learning rate, batch size, epochs, seed
        init: starting parameters (theta* for the samplers); seeded fan-in init otherwise
        dropout: inverted-dropout masks applied during training
        progress_callback: optional progress hook (stage, percent, message)

    Returns:
        TrainResult with the trained params and final full-data training loss

    Raises:
        DatasetError: data/architecture mismatch
        DivergenceError: non-finite loss or parameters
    """
    if ds.feature_dim != arch.input_dim or ds.num_classes != arch.num_classes:
        raise DatasetError(
            f"dataset (d={ds.feature_dim}, K={ds.num_classes}) does not match architecture {arch.layer_sizes}"
        )
    params = init if init is not None else init_params(arch, derive_seed(cfg.seed, 0))
    if params.layer_sizes != arch.layer_sizes:
        raise ArtifactMismatchError(f"initial params {params.layer_sizes} do not match architecture {arch.layer_sizes}")

    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, 1))
    mask_rng = np.random.default_rng(derive_seed(cfg.seed, 2))
    optimizer = make_optimizer(cfg)
    n, s = ds.size, cfg.batch_size
    epoch_losses: List[float] = []
    step = 0

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        batch_losses = []
        for start in range(0, n, s):
            idx = order[start:start + s]
            masks = dropout.sample_masks(params, idx.size, mask_rng) if dropout else None
            loss, grads = loss_and_gradient(params, ds.features[idx], ds.labels[idx], masks)
            step += 1
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch + 1}, step {step}", step=step)
            params = optimizer.step(params, grads)
            batch_losses.append(loss)
        if not params.is_finite():
            raise DivergenceError(f"non-finite parameters after epoch {epoch + 1}", step=step)
        epoch_losses.append(float(np.mean(batch_losses)))
        logger.info(f"Epoch {epoch + 1}/{cfg.epochs}: mean batch loss {epoch_losses[-1]:.6f}")
        if progress_callback:
            progress_callback('train', 100.0 * (epoch + 1) / cfg.epochs, f'Epoch {epoch + 1}/{cfg.epochs}')

    final_loss = dataset_loss(params, ds)
    if not np.isfinite(final_loss):
        raise DivergenceError("non-finite final training loss", step=step)
    logger.info(f"Training complete: final train loss {final_loss:.6f}")
    return TrainResult(params=params, final_loss=final_loss, epoch_losses=epoch_losses)


def predict_proba(params: NetworkParams, x: np.ndarray, chunk_size: int = DEFAULT_PREDICTION_CHUNK) -> np.ndarray:
    batch, single = _as_batch(params, x)
    out = np.empty((batch.shape[0], params.num_classes))
    for start in range(0, batch.shape[0], chunk_size):
        _, probs = forward(params, batch[start:start + chunk_size])
        out[start:start + chunk_size] = probs
    return out[0] if single else out


def extract_features(params: NetworkParams, ds: Dataset, chunk_size: int = DEFAULT_PREDICTION_CHUNK) -> Dataset:
    """
    Build the representation dataset R = {(z_i, y_i)} from the penultimate activations.

    Labels, class count, order and the dataset meta are carried over.
    """
    if params.num_layers < 2:
        raise ArtifactMismatchError("feature extraction needs a network with at least one hidden layer")
    if ds.feature_dim != params.input_dim:
        raise ArtifactMismatchError(f"dataset has dimension {ds.feature_dim}, network expects {params.input_dim}")
    width = params.layer_sizes[-2]
    features = np.empty((ds.size, width))
    for start in range(0, ds.size, chunk_size):
        activations, _ = forward(params, ds.features[start:start + chunk_size])
        features[start:start + chunk_size] = activations[-1]
    return Dataset(features=features, labels=ds.labels, num_classes=ds.num_classes, meta=dict(ds.meta))


Predictor = Union[NetworkParams, Callable[[np.ndarray], np.ndarray], Any]


def accuracy(predictor: Predictor, ds: Dataset) -> float:
    """
    Fraction of argmax-correct predictions (ties go to the lowest class index).

    predictor may be NetworkParams, anything with predict_proba(X), or a callable X -> probabilities.
    """
    if isinstance(predictor, NetworkParams):
        probs = predict_proba(predictor, ds.features)
    elif hasattr(predictor, 'predict_proba'):
        probs = predictor.predict_proba(ds.features)
    else:
        probs = np.asarray(predictor(ds.features))
    return float(np.mean(np.argmax(probs, axis=1) == ds.labels))


def save_params(params: NetworkParams, path: Union[str, Path], manifest_hash: str = '', extra: Optional[Dict[str, Any]] = None) -> str:
    header = {
        'version': PARAMS_FILE_VERSION,
        'layer_sizes': params.layer_sizes,
        'params_hash': params.content_hash(),
        'manifest_hash': manifest_hash,
        **(extra or {}),
    }
    return write_container(path, PARAMS_MAGIC, PARAMS_FILE_VERSION, header, params_to_bytes(params))


def params_to_bytes(params: NetworkParams) -> bytes:
    return b''.join(np.ascontiguousarray(a, dtype='<f8').tobytes() for a in params.arrays())


def params_from_bytes(layer_sizes: Sequence[int], payload: bytes, offset: int = 0) -> Tuple[NetworkParams, int]:
    """Decode one parameter block; returns the params and the offset just past it."""
    arrays = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        for shape in ((fan_out, fan_in), (fan_out,)):
            count = int(np.prod(shape))
            end = offset + 8 * count
            if end > len(payload):
                raise ArtifactFormatError("truncated parameter payload", field='payload')
            arrays.append(np.frombuffer(payload, dtype='<f8', count=count, offset=offset).reshape(shape).astype(np.float64))
            offset = end
    return NetworkParams.from_arrays(arrays), offset


def load_params(path: Union[str, Path]) -> Tuple[NetworkParams, Dict[str, Any]]:
    """Load a parameter file; returns (params, header)."""
    header, payload = read_container(path, PARAMS_MAGIC, PARAMS_FILE_VERSION)
    layer_sizes = header.get('layer_sizes')
    if not isinstance(layer_sizes, list) or len(layer_sizes) < 2:
        raise ArtifactFormatError("parameter header is missing layer_sizes", field='layer_sizes')
    params, end = params_from_bytes(layer_sizes, payload)
    if end != len(payload):
        raise ArtifactFormatError(f"{len(payload) - end} trailing bytes after parameters", field='payload')
    return params, header
