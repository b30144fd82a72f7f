"""Fitting the drift and diffusion networks from observed trajectories.

Training data are one-step transitions ``(x, x_next, t, dt)`` pooled from
trajectories.  Two per-sample losses drive the two networks:

* drift: squared error of the predicted increment,
  ``|x_next - (x + mu(x, t) dt)|^2``;
* diffusion: Gaussian transition negative log-likelihood of the residual
  ``r = x_next - x - mu(x, t) dt`` under ``N(0, diag(sigma^2) dt)``, with
  the constant ``(d/2) log 2 pi`` dropped:
  ``sum_j [ r_j^2 / (2 sigma_j^2 dt) + log(sigma_j sqrt(dt)) ]``.

The residual inside the diffusion loss is treated as a constant with respect
to the drift parameters (stop-gradient): the drift trains purely on its
squared error, the diffusion fits the spread of whatever residuals the
current drift leaves.  The combined objective is
``drift_weight * L_drift + diffusion_weight * L_diffusion``; because the
likelihood's log term can go negative, the total can too.

Validation splits are made by trajectory, not by transition: transitions
within one trajectory are correlated, and splitting them across train and
validation would leak.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    EstimationError,
    TrainingDivergenceError,
    ValidationError,
)
from .mlp import GradientSet, MlpNetwork, glorot_init, sgd_step
from .numeric_core import RngStream
from .sde_model import EmbeddingTrajectory, SdeModel, TimeEncoding


@dataclass(frozen=True)
class TransitionSample:
    """One observed step: state ``x`` at ``t`` moved to ``x_next`` at ``t + dt``."""

    x: np.ndarray
    x_next: np.ndarray
    t: float
    dt: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        x_next = np.asarray(self.x_next, dtype=np.float64)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "x_next", x_next)
        if x.shape != x_next.shape or x.ndim != 1:
            raise DimensionMismatchError(f"x {x.shape} vs x_next {x_next.shape}")
        if not (self.dt > 0.0):
            raise ValidationError(f"dt must be positive, got {self.dt}")


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters of the fitting procedure.

    ``hidden_dims``, ``hidden_activation`` and the time-encoding choice fix
    the architecture of both networks; everything else controls the SGD
    loop.  ``validation_fraction`` is the share of trajectories (not
    transitions) held out.
    """

    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 0.05
    drift_weight: float = 1.0
    diffusion_weight: float = 1.0
    seed: int = 0
    validation_fraction: float = 0.0
    grad_clip: float | None = None
    hidden_dims: tuple[int, ...] = (32,)
    hidden_activation: str = "tanh"
    time_encoding_kind: str = "scalar_normalized"
    time_encoding_pairs: int = 4

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be positive")
        if not (self.learning_rate > 0.0):
            raise ValidationError("learning_rate must be positive")
        if self.drift_weight < 0.0 or self.diffusion_weight < 0.0:
            raise ValidationError("loss weights must be nonnegative")
        if self.drift_weight + self.diffusion_weight <= 0.0:
            raise ValidationError("at least one loss weight must be positive")
        if not (0.0 <= self.validation_fraction < 1.0):
            raise ValidationError("validation_fraction must lie in [0, 1)")
        if self.grad_clip is not None and not (self.grad_clip > 0.0):
            raise ValidationError("grad_clip must be positive when set")


@dataclass(frozen=True)
class LossRecord:
    """Per-sample average losses after one epoch on one split."""

    epoch: int
    split: str
    total: float
    drift: float
    diffusion: float


def extract_transitions(trajectory: EmbeddingTrajectory) -> list[TransitionSample]:
    """Consecutive-pair samples; a single-state trajectory yields none."""
    out = []
    for i in range(len(trajectory) - 1):
        out.append(
            TransitionSample(
                x=trajectory.states[i],
                x_next=trajectory.states[i + 1],
                t=float(trajectory.times[i]),
                dt=float(trajectory.times[i + 1] - trajectory.times[i]),
            )
        )
    return out


def _batch_arrays(batch: list[TransitionSample]) -> tuple[np.ndarray, ...]:
    if not batch:
        raise ValidationError("empty batch")
    x = np.stack([s.x for s in batch])
    x_next = np.stack([s.x_next for s in batch])
    t = np.array([s.t for s in batch])
    dt = np.array([s.dt for s in batch])
    return x, x_next, t, dt


def drift_loss(model: SdeModel, batch: list[TransitionSample]) -> float:
    """Mean squared error of predicted increments over the batch."""
    x, x_next, t, dt = _batch_arrays(batch)
    mu = model.drift(x, t)
    resid = x_next - x - mu * dt[:, None]
    return float(np.mean(np.sum(resid * resid, axis=1)))


def diffusion_loss(model: SdeModel, batch: list[TransitionSample]) -> float:
    """Average residual negative log-likelihood (constant term dropped).

    Can be negative: the ``log(sigma sqrt(dt))`` term has no floor.  Raises
    when the model's diffusion is not strictly positive or the value is not
    finite.
    """
    x, x_next, t, dt = _batch_arrays(batch)
    sigma = model.diffusion(x, t)
    if np.any(sigma <= 0.0):
        raise ValidationError("diffusion must be strictly positive on the batch")
    mu = model.drift(x, t)
    resid = x_next - x - mu * dt[:, None]
    with np.errstate(over="ignore", divide="ignore"):
        terms = resid**2 / (2.0 * sigma**2 * dt[:, None]) + np.log(sigma) + 0.5 * np.log(dt)[:, None]
        value = float(np.mean(np.sum(terms, axis=1)))
    if not math.isfinite(value):
        raise EstimationError("diffusion loss is not finite")
    return value


def _drift_loss_grads(
    net: MlpNetwork, inputs: np.ndarray, x: np.ndarray, x_next: np.ndarray, dt: np.ndarray
) -> tuple[float, GradientSet, np.ndarray]:
    """Loss, parameter gradients, and residuals for the drift term."""
    n = x.shape[0]
    mu, cache = net.forward_with_cache(inputs)
    resid = x_next - x - mu * dt[:, None]
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    grad_out = (-2.0 / n) * resid * dt[:, None]
    return loss, net.backward(cache, grad_out), resid


def _diffusion_loss_grads(
    net: MlpNetwork, inputs: np.ndarray, resid: np.ndarray, dt: np.ndarray
) -> tuple[float, GradientSet]:
    """Loss and parameter gradients for the diffusion term.

    ``resid`` enters as data (stop-gradient): no gradient flows from here
    back to the drift parameters.
    """
    n = resid.shape[0]
    sigma, cache = net.forward_with_cache(inputs)
    if np.any(sigma <= 0.0):
        raise ValidationError("diffusion must be strictly positive during training")
    with np.errstate(over="ignore", divide="ignore"):
        terms = resid**2 / (2.0 * sigma**2 * dt[:, None]) + np.log(sigma) + 0.5 * np.log(dt)[:, None]
        loss = float(np.mean(np.sum(terms, axis=1)))
        grad_out = (1.0 / n) * (-(resid**2) / (sigma**3 * dt[:, None]) + 1.0 / sigma)
    return loss, net.backward(cache, grad_out)


def split_by_trajectory(
    trajectories: list[EmbeddingTrajectory],
    validation_fraction: float,
    rng: RngStream,
) -> tuple[list[EmbeddingTrajectory], list[EmbeddingTrajectory]]:
    """Deterministic train/validation split at trajectory granularity."""
    order = rng.shuffled_indices(len(trajectories))
    n_val = int(round(validation_fraction * len(trajectories)))
    n_val = min(n_val, len(trajectories) - 1)
    val_idx = set(order[:n_val].tolist())
    train = [t for i, t in enumerate(trajectories) if i not in val_idx]
    val = [t for i, t in enumerate(trajectories) if i in val_idx]
    return train, val


def _eval_split(
    model: SdeModel, samples: list[TransitionSample], config: TrainingConfig, epoch: int, split: str
) -> LossRecord:
    l_mu = drift_loss(model, samples)
    l_sigma = diffusion_loss(model, samples)
    total = config.drift_weight * l_mu + config.diffusion_weight * l_sigma
    return LossRecord(epoch=epoch, split=split, total=total, drift=l_mu, diffusion=l_sigma)


def fit(
    trajectories: list[EmbeddingTrajectory],
    config: TrainingConfig | None = None,
) -> tuple[SdeModel, list[LossRecord]]:
    """Train drift and diffusion networks on trajectory transitions.

    Deterministic given ``config.seed``: initialization, the validation
    split, and per-epoch shuffling all derive from one stream.  Raises
    :class:`TrainingDivergenceError` (carrying the records so far and the
    last epoch that was still finite) when a loss stops being finite.
    """
    config = config if config is not None else TrainingConfig()
    if not trajectories:
        raise ValidationError("no trajectories given")
    dim = trajectories[0].dim
    for i, traj in enumerate(trajectories):
        if traj.dim != dim:
            raise DimensionMismatchError(f"trajectory {i} has dim {traj.dim}, expected {dim}")

    rng = RngStream(config.seed)
    train_trajs, val_trajs = split_by_trajectory(trajectories, config.validation_fraction, rng)
    train_samples = [s for traj in train_trajs for s in extract_transitions(traj)]
    val_samples = [s for traj in val_trajs for s in extract_transitions(traj)]
    if not train_samples:
        raise ValidationError("no transitions to train on (all trajectories have length 1?)")

    t_max = max(float(traj.times[-1]) for traj in trajectories)
    encoding = TimeEncoding(
        kind=config.time_encoding_kind,
        horizon=t_max if t_max > 0.0 else 1.0,
        n_pairs=config.time_encoding_pairs,
    )
    layer_dims = [dim + encoding.width, *config.hidden_dims, dim]
    drift_net = glorot_init(layer_dims, rng, config.hidden_activation, "identity")
    diffusion_net = glorot_init(layer_dims, rng, config.hidden_activation, "softplus")
    model = SdeModel(dim, drift_net, diffusion_net, encoding)

    x_all, x_next_all, t_all, dt_all = _batch_arrays(train_samples)
    feats_all = np.concatenate([x_all, encoding.encode_batch(t_all)], axis=1)

    records: list[LossRecord] = []
    last_good = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.shuffled_indices(len(train_samples))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            feats, x = feats_all[idx], x_all[idx]
            x_next, dt = x_next_all[idx], dt_all[idx]

            l_mu, g_mu, resid = _drift_loss_grads(drift_net, feats, x, x_next, dt)
            l_sigma, g_sigma = _diffusion_loss_grads(diffusion_net, feats, resid, dt)
            if not (math.isfinite(l_mu) and math.isfinite(l_sigma)):
                raise TrainingDivergenceError(
                    f"non-finite batch loss in epoch {epoch}",
                    last_good_epoch=last_good,
                    records=records,
                )
            if config.drift_weight > 0.0:
                g_mu.scale(config.drift_weight)
                sgd_step(drift_net, g_mu, config.learning_rate, config.grad_clip)
            if config.diffusion_weight > 0.0:
                g_sigma.scale(config.diffusion_weight)
                sgd_step(diffusion_net, g_sigma, config.learning_rate, config.grad_clip)

        try:
            records.append(_eval_split(model, train_samples, config, epoch, "train"))
            if val_samples:
                records.append(_eval_split(model, val_samples, config, epoch, "validation"))
        except EstimationError as exc:
            raise TrainingDivergenceError(
                f"non-finite loss evaluating epoch {epoch}",
                last_good_epoch=last_good,
                records=records,
            ) from exc
        if not math.isfinite(records[-1].total):
            raise TrainingDivergenceError(
                f"non-finite loss after epoch {epoch}",
                last_good_epoch=last_good,
                records=records,
            )
        last_good = epoch
    return model, records
