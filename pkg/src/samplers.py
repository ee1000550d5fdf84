"""
Posterior ensembling around a trained theta*.

Every sampler starts at theta*. In last-layer scope it works on the representation
R and only ever touches the head (W_L, b_L); in full-network scope it works on the
raw inputs D and all layers.

    sgd / sgld   constant-step chains, one saved state every n_thinning updates, no burn-in
    bootstrap    retrain from theta* on n_samples bootstrap resamples (plain SGD)
    mc-dropout   train from theta* with inverted dropout, sample fresh masks at prediction time
    sgd-pe       theta* alone (point-estimate baseline)

Ensemble file layout: container magic b"LLUENSMB", JSON header {kind, scope,
layer_sizes, n_members, config, provenance, dropout, partial, manifest_hash},
then n_members parameter blocks laid out as in network.py.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from artifacts import read_container, write_container
from config import DEFAULT_PREDICTION_CHUNK, ENSEMBLE_FILE_VERSION
from data import Dataset, bootstrap_resample
from network import (
    DropoutSpec,
    NetworkParams,
    forward,
    loss_and_gradient,
    params_from_bytes,
    params_to_bytes,
    predict_proba,
    train,
)
from schemas import SamplerConfig, TrainConfig
from utils import ArtifactFormatError, ArtifactMismatchError, DivergenceError, derive_seed

logger = logging.getLogger(__name__)

ENSEMBLE_MAGIC = b'LLUENSMB'

ProgressCallback = Optional[Callable[[str, float, str], None]]


@dataclass(frozen=True, eq=False)
class Ensemble:
    """
    Ordered parameter samples {theta_i} with provenance.

    For mc-dropout there is a single member plus a DropoutSpec; n_samples forward
    passes with fresh masks are drawn per input at prediction time.
    """
    members: Tuple[NetworkParams, ...]
    config: SamplerConfig
    provenance: Dict[str, Any] = field(default_factory=dict)
    dropout: Optional[DropoutSpec] = None
    partial: bool = False

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("an ensemble needs at least one member")
        shape = members[0].layer_sizes
        if any(m.layer_sizes != shape for m in members):
            raise ValueError("ensemble members must share one architecture")
        if self.config.kind == 'mc-dropout' and (self.dropout is None or len(members) != 1):
            raise ValueError("an mc-dropout ensemble is one parameter set plus a dropout spec")
        object.__setattr__(self, 'members', members)

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def scope(self) -> str:
        return self.config.scope

    @property
    def n_samples(self) -> int:
        """Number of predictive samples per input."""
        return self.config.n_samples if self.dropout is not None else len(self.members)

    @property
    def input_dim(self) -> int:
        return self.members[0].input_dim

    @property
    def num_classes(self) -> int:
        return self.members[0].num_classes

    @property
    def single_member(self) -> bool:
        return self.n_samples == 1

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Predictive posterior mean for a batch of inputs."""
        return predictive_samples(self, x).mean(axis=0)


class ChainDivergenceError(DivergenceError):
    """Sampler divergence; ensemble holds the members completed before it (or None)."""

    def __init__(self, diagnostic: str, step: Optional[int] = None, ensemble: Optional[Ensemble] = None):
        super().__init__(diagnostic, step=step, partial=list(ensemble.members) if ensemble else [])
        self.ensemble = ensemble


@dataclass(frozen=True)
class PosteriorTarget:
    """Posterior proportional to p(theta) prod_i p(y_i | z_i, theta); prior_variance=None drops the prior."""
    dataset: Dataset
    prior_variance: Optional[float] = 1.0

    @property
    def n_data(self) -> int:
        return self.dataset.size


def langevin_update(
    theta: np.ndarray,
    grad_log_lik: np.ndarray,
    gamma: float,
    n_data: int,
    prior_variance: Optional[float],
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    theta + gamma * [grad_log_lik + grad log prior(theta) / N] + sqrt(2 gamma / N) * noise

    grad_log_lik is the minibatch mean of grad log p(y|z, theta); the Gaussian prior
    contributes -theta / prior_variance. noise=None gives the SGD update.
    """
    drift = grad_log_lik
    if prior_variance is not None:
        drift = drift - theta / (prior_variance * n_data)
    updated = theta + gamma * drift
    if noise is not None:
        updated = updated + math.sqrt(2.0 * gamma / n_data) * noise
    return updated


def _step(
    theta: NetworkParams,
    x: np.ndarray,
    y: np.ndarray,
    gamma: float,
    target: PosteriorTarget,
    noise: Optional[NetworkParams],
) -> NetworkParams:
    _, grads = loss_and_gradient(theta, x, y)
    noise_arrays = noise.arrays() if noise is not None else [None] * len(grads.arrays())
    updated = NetworkParams.from_arrays([
        langevin_update(p, -g, gamma, target.n_data, target.prior_variance, z)
        for p, g, z in zip(theta.arrays(), grads.arrays(), noise_arrays)
    ])
    if not updated.is_finite():
        raise DivergenceError("non-finite parameters after update")
    return updated


def sgld_step(
    theta: NetworkParams,
    x: np.ndarray,
    y: np.ndarray,
    gamma: float,
    target: PosteriorTarget,
    noise: NetworkParams,
) -> NetworkParams:
    """One Langevin step on a minibatch (x, y) with the given standard normal noise."""
    return _step(theta, x, y, gamma, target, noise)


def sgd_step(theta: NetworkParams, x: np.ndarray, y: np.ndarray, gamma: float, target: PosteriorTarget) -> NetworkParams:
    """sgld_step without the noise term."""
    return _step(theta, x, y, gamma, target, None)


def minibatch_stream(n_data: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Endless minibatch indices, reshuffled at every epoch; the last batch of an epoch may be short."""
    while True:
        order = rng.permutation(n_data)
        for start in range(0, n_data, batch_size):
            yield order[start:start + batch_size]


GradFn = Callable[[np.ndarray, np.ndarray], Tuple[float, np.ndarray]]


def run_langevin_chain(
    theta0: np.ndarray,
    grad_fn: GradFn,
    n_data: int,
    *,
    gamma: float,
    batch_size: int,
    n_samples: int,
    n_thinning: int,
    prior_variance: Optional[float],
    add_noise: bool,
    seed: int,
    noise_scale: float = 1.0,
    progress_callback: ProgressCallback = None,
) -> List[np.ndarray]:
    """
    Constant-step chain over a flat parameter vector; saves theta after every n_thinning updates.

    Args:
        theta0: starting point (theta*)
        grad_fn: (theta, minibatch indices) -> (loss, mean grad log-likelihood)
        n_data: N, scales the prior drift and the noise
        add_noise: True for SGLD, False for SGD
        noise_scale: multiplies the Gaussian draws (0 turns SGLD into SGD bit-for-bit)

    Raises:
        ChainDivergenceError: non-finite loss or parameters; partial carries the saved states
    """
    batch_rng = np.random.default_rng(derive_seed(seed, 1))
    noise_rng = np.random.default_rng(derive_seed(seed, 2))
    batches = minibatch_stream(n_data, batch_size, batch_rng)
    theta = np.array(theta0, dtype=np.float64, copy=True)
    samples: List[np.ndarray] = []
    step = 0

    for i in range(n_samples):
        for _ in range(n_thinning):
            idx = next(batches)
            step += 1
            loss, grad_log_lik = grad_fn(theta, idx)
            noise = None
            if add_noise:
                noise = noise_rng.standard_normal(theta.shape)
                if noise_scale != 1.0:
                    noise = noise * noise_scale
            theta = langevin_update(theta, grad_log_lik, gamma, n_data, prior_variance, noise)
            if not np.isfinite(loss) or not np.all(np.isfinite(theta)):
                diagnostic = f"chain diverged at step {step} (sample {i + 1}/{n_samples}): loss={loss}"
                logger.error(diagnostic)
                raise DivergenceError(diagnostic, step=step, partial=samples)
        samples.append(theta.copy())
        logger.debug(f"Saved sample {i + 1}/{n_samples} after {step} steps")
        if progress_callback:
            progress_callback('sample', 100.0 * (i + 1) / n_samples, f'Saved sample {i + 1}/{n_samples}')
    return samples


def start_params(theta_star: NetworkParams, ds: Dataset, scope: str) -> NetworkParams:
    """theta* restricted to the sampled scope, checked against the data it will see."""
    start = theta_star.last_layer() if scope == 'last-layer' else theta_star
    if ds.feature_dim != start.input_dim:
        expected = 'the representation R' if scope == 'last-layer' else 'the raw inputs D'
        raise ArtifactMismatchError(
            f"{scope} sampling needs {expected} (dimension {start.input_dim}); got dimension {ds.feature_dim}"
        )
    if ds.num_classes != start.num_classes:
        raise ArtifactMismatchError(f"dataset has {ds.num_classes} classes, network predicts {start.num_classes}")
    return start


def _provenance(theta_star: NetworkParams, ds: Dataset, cfg: SamplerConfig, **extra) -> Dict[str, Any]:
    provenance = {
        'theta_hash': theta_star.content_hash(),
        'data_hash': ds.content_hash(),
        'data_manifest_hash': ds.meta.get('manifest_hash', ''),
        'use_prior': cfg.use_prior,
    }
    for key in ('in_classes', 'out_classes'):
        if key in ds.meta:
            provenance[key] = ds.meta[key]
    provenance.update(extra)
    return provenance


def run_chain(
    kind: str,
    ds: Dataset,
    theta_star: NetworkParams,
    cfg: SamplerConfig,
    noise_scale: float = 1.0,
    progress_callback: ProgressCallback = None,
) -> Ensemble:
    """
    SGD or SGLD chain from theta*: n_samples x n_thinning updates, a member saved every n_thinning.

    n_thinning defaults to ceil(N / s), i.e. one saved state per epoch.
    """
    if kind not in ('sgd', 'sgld') or cfg.kind != kind:
        raise ValueError(f"run_chain handles sgd/sgld configs, got kind={kind}, cfg.kind={cfg.kind}")
    start = start_params(theta_star, ds, cfg.scope)
    n_thinning = cfg.n_thinning or math.ceil(ds.size / cfg.batch_size)
    prior_variance = cfg.prior_variance if cfg.use_prior else None
    features, labels = ds.features, ds.labels

    def grad_fn(theta: np.ndarray, idx: np.ndarray) -> Tuple[float, np.ndarray]:
        loss, grads = loss_and_gradient(start.unflatten(theta), features[idx], labels[idx])
        return loss, -grads.flatten()

    provenance = _provenance(theta_star, ds, cfg, n_thinning=n_thinning, n_steps=cfg.n_samples * n_thinning)
    logger.info(
        f"Running {kind} chain ({cfg.scope}): {cfg.n_samples} samples x {n_thinning} steps, "
        f"gamma={cfg.learning_rate}, s={cfg.batch_size}"
    )
    try:
        samples = run_langevin_chain(
            start.flatten(),
            grad_fn,
            ds.size,
            gamma=cfg.learning_rate,
            batch_size=cfg.batch_size,
            n_samples=cfg.n_samples,
            n_thinning=n_thinning,
            prior_variance=prior_variance,
            add_noise=(kind == 'sgld'),
            seed=cfg.seed,
            noise_scale=noise_scale,
            progress_callback=progress_callback,
        )
    except DivergenceError as e:
        members = tuple(start.unflatten(v) for v in e.partial)
        partial = Ensemble(members, cfg, provenance, partial=True) if members else None
        raise ChainDivergenceError(e.diagnostic, step=e.step, ensemble=partial) from e
    return Ensemble(tuple(start.unflatten(v) for v in samples), cfg, provenance)


def _bootstrap_member(ds: Dataset, start: NetworkParams, cfg: SamplerConfig, index: int) -> NetworkParams:
    member_seed = derive_seed(cfg.seed, index)
    resampled = bootstrap_resample(ds, member_seed)
    train_cfg = TrainConfig(
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        epochs=cfg.n_epochs,
        optimizer='plain-sgd',
        seed=member_seed,
    )
    result = train(resampled, start.architecture, train_cfg, init=start)
    logger.info(f"Bootstrap member {index + 1}/{cfg.n_samples} done (loss {result.final_loss:.6f})")
    return result.params


def bootstrap_ensemble(
    ds: Dataset,
    theta_star: NetworkParams,
    cfg: SamplerConfig,
    progress_callback: ProgressCallback = None,
) -> Ensemble:
    """
    n_samples members, each trained from theta* with plain SGD on its own bootstrap resample.

    Member i uses seed derive_seed(cfg.seed, i) for both the resample and its batch order,
    so running members on cfg.max_workers threads gives the sequential result.
    """
    if cfg.kind != 'bootstrap':
        raise ValueError(f"bootstrap_ensemble needs a bootstrap config, got {cfg.kind}")
    start = start_params(theta_star, ds, cfg.scope)
    provenance = _provenance(theta_star, ds, cfg)
    logger.info(f"Bootstrapping {cfg.n_samples} members ({cfg.scope}) on {cfg.max_workers} worker(s)")

    members: List[NetworkParams] = []
    with ThreadPoolExecutor(max_workers=cfg.max_workers) as executor:
        futures = [executor.submit(_bootstrap_member, ds, start, cfg, i) for i in range(cfg.n_samples)]
        for i, future in enumerate(futures):
            try:
                members.append(future.result())
            except DivergenceError as e:
                for pending in futures[i + 1:]:
                    pending.cancel()
                partial = Ensemble(tuple(members), cfg, provenance, partial=True) if members else None
                raise ChainDivergenceError(f"bootstrap member {i + 1} diverged: {e.diagnostic}", step=e.step, ensemble=partial) from e
            if progress_callback:
                progress_callback('sample', 100.0 * (i + 1) / cfg.n_samples, f'Bootstrap member {i + 1}/{cfg.n_samples}')
    return Ensemble(tuple(members), cfg, provenance)


def dropout_layers(params: NetworkParams, scope: str) -> Tuple[int, ...]:
    """Layers whose input is masked: the head's input z, or the output of every hidden layer."""
    if scope == 'last-layer' or params.num_layers == 1:
        return (params.num_layers - 1,)
    return tuple(range(1, params.num_layers))


def mc_dropout_build(
    ds: Dataset,
    theta_star: NetworkParams,
    cfg: SamplerConfig,
    progress_callback: ProgressCallback = None,
) -> Ensemble:
    """Train from theta* with inverted dropout; keep (theta, p_drop, n_samples, seed)."""
    if cfg.kind != 'mc-dropout':
        raise ValueError(f"mc_dropout_build needs an mc-dropout config, got {cfg.kind}")
    start = start_params(theta_star, ds, cfg.scope)
    spec = DropoutSpec(p_drop=cfg.p_drop, layers=dropout_layers(start, cfg.scope))
    train_cfg = TrainConfig(
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        epochs=cfg.n_epochs,
        optimizer='plain-sgd',
        seed=derive_seed(cfg.seed, 0),
    )
    logger.info(f"Training MC-Dropout ({cfg.scope}, p_drop={cfg.p_drop}) for {cfg.n_epochs} epochs")
    try:
        result = train(ds, start.architecture, train_cfg, init=start, dropout=spec, progress_callback=progress_callback)
    except DivergenceError as e:
        raise ChainDivergenceError(f"mc-dropout training diverged: {e.diagnostic}", step=e.step) from e
    return Ensemble((result.params,), cfg, _provenance(theta_star, ds, cfg), dropout=spec)


def point_estimate(ds: Dataset, theta_star: NetworkParams, cfg: SamplerConfig) -> Ensemble:
    """SGD-PE: the posterior is a Dirac at theta*."""
    return Ensemble((start_params(theta_star, ds, cfg.scope),), cfg, _provenance(theta_star, ds, cfg))


def build_ensemble(
    ds: Dataset,
    theta_star: NetworkParams,
    cfg: SamplerConfig,
    progress_callback: ProgressCallback = None,
) -> Ensemble:
    """Dispatch on cfg.kind."""
    if cfg.kind in ('sgd', 'sgld'):
        return run_chain(cfg.kind, ds, theta_star, cfg, progress_callback=progress_callback)
    if cfg.kind == 'bootstrap':
        return bootstrap_ensemble(ds, theta_star, cfg, progress_callback=progress_callback)
    if cfg.kind == 'mc-dropout':
        return mc_dropout_build(ds, theta_star, cfg, progress_callback=progress_callback)
    return point_estimate(ds, theta_star, cfg)


def _dropout_passes(ens: Ensemble, batch: np.ndarray, start_index: int) -> np.ndarray:
    params, spec, n = ens.members[0], ens.dropout, ens.n_samples
    repeated = np.repeat(batch, n, axis=0)
    mask_blocks = [
        spec.sample_masks(params, n, np.random.default_rng(derive_seed(ens.config.seed, start_index + i)))
        for i in range(batch.shape[0])
    ]
    masks = [
        None if mask_blocks[0][ell] is None else np.concatenate([block[ell] for block in mask_blocks])
        for ell in range(params.num_layers)
    ]
    _, probs = forward(params, repeated, masks)
    return probs.reshape(batch.shape[0], n, -1).transpose(1, 0, 2)


def predictive_samples(
    ens: Ensemble,
    x: np.ndarray,
    start_index: int = 0,
    chunk_size: int = DEFAULT_PREDICTION_CHUNK,
) -> np.ndarray:
    """
    Member probability vectors for a batch: array (n_samples, B, K).

    For mc-dropout, example start_index + i gets masks seeded by (seed, start_index + i),
    so chunked, parallel and one-at-a-time calls agree.
    """
    x = np.asarray(x, dtype=np.float64)
    batch = x[None, :] if x.ndim == 1 else x
    if batch.shape[1] != ens.input_dim:
        expected = 'z (representation)' if ens.scope == 'last-layer' else 'raw input'
        raise ArtifactMismatchError(f"{ens.scope} ensemble expects {expected} of dimension {ens.input_dim}, got {batch.shape[1]}")
    if ens.dropout is not None:
        # each input is repeated n_samples times, so a forward pass holds at most chunk_size rows
        rows = max(1, chunk_size // ens.n_samples)
        blocks = [
            _dropout_passes(ens, batch[start:start + rows], start_index + start)
            for start in range(0, batch.shape[0], rows)
        ]
        return np.concatenate(blocks, axis=1)
    return np.stack([predict_proba(member, batch, chunk_size) for member in ens.members])


def draw_predictive_samples(ens: Ensemble, x: np.ndarray, index: int = 0) -> np.ndarray:
    """Probability vectors p(.|x, theta_i) for one input, shape (n_samples, K)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("draw_predictive_samples takes a single input vector")
    return predictive_samples(ens, x, start_index=index)[:, 0, :]


def save_ensemble(ens: Ensemble, path: Union[str, Path], manifest_hash: str = '') -> str:
    header = {
        'version': ENSEMBLE_FILE_VERSION,
        'kind': ens.kind,
        'scope': ens.scope,
        'layer_sizes': ens.members[0].layer_sizes,
        'n_members': len(ens.members),
        'config': ens.config.model_dump(),
        'provenance': ens.provenance,
        'dropout': None if ens.dropout is None else {'p_drop': ens.dropout.p_drop, 'layers': list(ens.dropout.layers)},
        'partial': ens.partial,
        'manifest_hash': manifest_hash,
    }
    payload = b''.join(params_to_bytes(m) for m in ens.members)
    return write_container(path, ENSEMBLE_MAGIC, ENSEMBLE_FILE_VERSION, header, payload)


def load_ensemble(path: Union[str, Path]) -> Tuple[Ensemble, Dict[str, Any]]:
    """Load an ensemble file; returns (ensemble, header)."""
    header, payload = read_container(path, ENSEMBLE_MAGIC, ENSEMBLE_FILE_VERSION)
    try:
        layer_sizes = header['layer_sizes']
        n_members = int(header['n_members'])
        cfg = SamplerConfig.model_validate(header['config'])
    except (KeyError, TypeError, ValueError) as e:
        raise ArtifactFormatError(f"ensemble header is incomplete: {e}", field='header') from e
    members, offset = [], 0
    for _ in range(n_members):
        member, offset = params_from_bytes(layer_sizes, payload, offset)
        members.append(member)
    if offset != len(payload):
        raise ArtifactFormatError(f"{len(payload) - offset} trailing bytes after ensemble members", field='payload')
    dropout = header.get('dropout')
    spec = DropoutSpec(p_drop=dropout['p_drop'], layers=tuple(dropout['layers'])) if dropout else None
    ens = Ensemble(tuple(members), cfg, dict(header.get('provenance') or {}), dropout=spec, partial=bool(header.get('partial')))
    return ens, header
