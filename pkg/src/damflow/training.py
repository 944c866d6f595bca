"""Minibatch training loop: window sampling, masked RMSE, Adadelta, ensembles.

A training instance is one (basin, window-start) pair of sequence_length days.
Instances are drawn uniformly with replacement over all admissible pairs.  An
epoch is the number of draws needed for any given training day to appear in a
sampled window with probability >= 99% (so "epochs" stays meaningful across
dataset sizes without making each epoch an exhaustive pass).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, NormalizationSpec, invert_normalized_target
from .lstm import (
    DropoutMasks,
    LstmDims,
    LstmWeights,
    backward_batch,
    forward_batch,
    init_weights,
)

# Random seeds used for the standard six-member ensembles.
DEFAULT_SEEDS = (123, 1234, 12345, 111, 1111, 11111)

EPOCH_COVERAGE_MISS = 0.01  # per-day probability of being missed in one epoch


class TrainingError(Exception):
    """Raised when training cannot proceed (bad shapes, divergence, ...)."""


class TrainingDivergedError(TrainingError):
    def __init__(self, epoch: int, iteration: int):
        super().__init__(f"non-finite loss at epoch {epoch}, iteration {iteration}")
        self.epoch = epoch
        self.iteration = iteration


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 100
    sequence_length: int = 365
    hidden_size: int = 256
    dropout_p: float = 0.5
    epochs: int = 300
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    adadelta_decay: float = 0.95
    adadelta_eps: float = 1e-6
    d_in: int | None = None  # post-transform input width; None = raw width
    iterations_per_epoch: int | None = None  # None = coverage rule
    warmup_days: int = 365

    def __post_init__(self):
        if min(self.batch_size, self.sequence_length, self.hidden_size) < 1:
            raise ValueError("batch_size, sequence_length and hidden_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    def with_overrides(self, **kwargs) -> "TrainingConfig":
        return replace(self, **kwargs)


@dataclass
class ModelTensors:
    """Normalized model inputs/targets for a fixed basin set and window."""

    gauge_ids: list[str]
    inputs: np.ndarray   # (N, T, 37)
    targets: np.ndarray  # (N, T), NaN = missing

    @staticmethod
    def from_normalized(tensors: dict[str, tuple[np.ndarray, np.ndarray]]) -> "ModelTensors":
        ids = sorted(tensors)
        if not ids:
            raise TrainingError("no basins to train on")
        lengths = {tensors[g][0].shape[0] for g in ids}
        if len(lengths) != 1:
            raise TrainingError(f"basins disagree on window length: {sorted(lengths)}")
        return ModelTensors(
            gauge_ids=ids,
            inputs=np.stack([tensors[g][0] for g in ids]),
            targets=np.stack([tensors[g][1] for g in ids]),
        )

    @property
    def n_basins(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_days(self) -> int:
        return self.inputs.shape[1]


def iterations_per_epoch(tensors: ModelTensors, config: TrainingConfig) -> int:
    if config.iterations_per_epoch is not None:
        return config.iterations_per_epoch
    total_days = tensors.n_basins * tensors.n_days
    covered = config.batch_size * config.sequence_length
    if covered >= total_days:
        return 1
    return math.ceil(math.log(EPOCH_COVERAGE_MISS) / math.log(1.0 - covered / total_days))


def sample_minibatch(
    tensors: ModelTensors,
    config: TrainingConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Draw batch_size (basin, start) pairs uniformly with replacement.

    Returns (basin_idx, starts, input slices (B, rho, 37), target slices (B, rho)).
    """
    rho = config.sequence_length
    n_starts = tensors.n_days - rho + 1
    if n_starts < 1:
        raise TrainingError(
            f"training window ({tensors.n_days} days) shorter than sequence length {rho}"
        )
    flat = rng.integers(0, tensors.n_basins * n_starts, size=config.batch_size)
    basin_idx = flat // n_starts
    starts = flat % n_starts
    xs = np.empty((config.batch_size, rho, tensors.inputs.shape[2]))
    ys = np.empty((config.batch_size, rho))
    for k in range(config.batch_size):
        xs[k] = tensors.inputs[basin_idx[k], starts[k]:starts[k] + rho]
        ys[k] = tensors.targets[basin_idx[k], starts[k]:starts[k] + rho]
    return basin_idx, starts, xs, ys


def rmse_loss(predictions: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Masked RMSE over all unmasked elements and its gradient w.r.t. predictions.

    NaN targets are masked out; they contribute zero gradient.
    """
    pred = np.asarray(predictions, dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64)
    if pred.shape != tgt.shape:
        raise TrainingError(f"shape mismatch: predictions {pred.shape} vs targets {tgt.shape}")
    mask = np.isfinite(tgt)
    n = int(mask.sum())
    if n == 0:
        raise TrainingError("all target elements are missing")
    diff = np.where(mask, pred - tgt, 0.0)
    loss = math.sqrt(float(np.sum(diff * diff)) / n)
    if loss == 0.0:
        return 0.0, np.zeros_like(pred)
    grad = diff / (n * loss)
    return loss, grad


@dataclass
class AdadeltaState:
    """Running averages E[g^2] and E[dx^2], one array per parameter."""

    e_grad_sq: dict[str, np.ndarray]
    e_update_sq: dict[str, np.ndarray]

    @staticmethod
    def zeros(weights: LstmWeights) -> "AdadeltaState":
        return AdadeltaState(
            e_grad_sq={name: np.zeros_like(arr) for name, arr in weights.params()},
            e_update_sq={name: np.zeros_like(arr) for name, arr in weights.params()},
        )


def adadelta_step(
    weights: LstmWeights,
    grads: LstmWeights,
    state: AdadeltaState,
    decay: float,
    eps: float,
) -> LstmWeights:
    """One Adadelta update; mutates state, returns new weights.

    E[g2] <- decay*E[g2] + (1-decay)*g^2
    dx    = -sqrt(E[dx2] + eps) / sqrt(E[g2] + eps) * g
    E[dx2] <- decay*E[dx2] + (1-decay)*dx^2
    """
    for name, g in grads.params():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}; step not applied")
    out = {}
    for name, w in weights.params():
        g = getattr(grads, name)
        eg = state.e_grad_sq[name]
        eu = state.e_update_sq[name]
        eg *= decay
        eg += (1.0 - decay) * g * g
        dx = -np.sqrt(eu + eps) / np.sqrt(eg + eps) * g
        eu *= decay
        eu += (1.0 - decay) * dx * dx
        out[name] = w + dx
    return LstmWeights(dims=weights.dims, **out)


@dataclass
class EpochLogRow:
    seed: int
    epoch: int
    mean_loss: float
    wall_time_s: float


@dataclass
class TrainResult:
    weights: LstmWeights
    log: list[EpochLogRow] = field(default_factory=list)


def train(tensors: ModelTensors, config: TrainingConfig, seed: int) -> TrainResult:
    """Train one model; fully deterministic given (tensors, config, seed)."""
    d_raw = tensors.inputs.shape[2]
    dims = LstmDims(d_in_raw=d_raw, hidden=config.hidden_size, d_in=config.d_in)
    weights = init_weights(dims, rng_seed=seed)
    state = AdadeltaState.zeros(weights)
    rng = np.random.default_rng(seed)
    n_iter = iterations_per_epoch(tensors, config)
    result = TrainResult(weights=weights)

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        losses = np.empty(n_iter)
        for it in range(n_iter):
            _, _, xs, ys = sample_minibatch(tensors, config, rng)
            masks = DropoutMasks.sample(
                rng, config.dropout_p, config.batch_size, dims.d_in, dims.hidden
            )
            preds, trace = forward_batch(weights, masks, xs)
            loss, dy = rmse_loss(preds, ys)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, it)
            grads = backward_batch(trace, weights, masks, dy)
            weights = adadelta_step(
                weights, grads, state, config.adadelta_decay, config.adadelta_eps
            )
            losses[it] = loss
        result.log.append(
            EpochLogRow(
                seed=seed,
                epoch=epoch,
                mean_loss=float(losses.mean()),
                wall_time_s=time.perf_counter() - t0,
            )
        )
    result.weights = weights
    return result


@dataclass
class EnsembleModel:
    """Trained weights for each seed plus the shared normalization spec."""

    members: dict[int, LstmWeights]
    spec: NormalizationSpec

    def __post_init__(self):
        if not self.members:
            raise TrainingError("ensemble needs at least one member")


def predict_ensemble(
    ensemble: EnsembleModel,
    dataset: Dataset,
    gauge_id: str,
    inputs_with_warmup: np.ndarray,
    warmup_days: int,
) -> np.ndarray:
    """Ensemble-mean daily discharge (m3/s) over the evaluation window.

    inputs_with_warmup: (warmup + T, 37) normalized inputs; the first
    warmup_days rows spin up the recurrent state from zero and are discarded.
    Members run with dropout disabled; averaging happens in discharge space.
    """
    x = np.asarray(inputs_with_warmup, dtype=np.float64)
    if x.shape[0] - warmup_days < 1:
        raise TrainingError("evaluation window must be at least 1 day")
    member_preds = []
    for seed in sorted(ensemble.members):
        weights = ensemble.members[seed]
        y, _ = forward_batch(weights, None, x[None])
        y_eval = y[0, warmup_days:]
        member_preds.append(
            invert_normalized_target(ensemble.spec, dataset, gauge_id, y_eval)
        )
    return np.mean(np.stack(member_preds), axis=0)
