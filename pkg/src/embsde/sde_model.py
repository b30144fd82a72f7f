"""The SDE: neural drift and diffusion fields, integration, generation.

A model is the pair of networks in

    dX(t) = mu(X(t), t) dt + sigma(X(t), t) (.) dW(t)

with diagonal diffusion: ``sigma`` returns a d-vector multiplied
componentwise into the Wiener increment.  Integration is explicit
Euler-Maruyama; each path owns a noise stream derived from the caller's seed
XOR the path index, which makes single-path and ensemble simulation produce
the same numbers and lets paths be generated independently.

Also here: the question-to-answer generation procedure (start from the mean
of the question embeddings, integrate forward one token per step), analytic
linear fixtures used as ground truth in tests and the bundled synthetic
dataset, and the deterministic Picard successive-approximation validator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    SimulationBlowupError,
    ValidationError,
)
from .mlp import MlpNetwork
from .numeric_core import RngStream, indexed_normals

# abort integration when any state component leaves this box
BLOWUP_LIMIT = 1e6

TIME_ENCODING_KINDS = ("none", "scalar_normalized", "sinusoidal")


@dataclass(frozen=True)
class TimeEncoding:
    """Feature map from integration time to extra network inputs.

    ``scalar_normalized`` appends the single feature ``t / horizon``;
    ``sinusoidal`` appends ``n_pairs`` pairs ``sin(w_i t), cos(w_i t)`` with
    the frequency ladder ``w_i = pi * 2**i / horizon`` (the slowest component
    completes half a cycle over the horizon, each next doubles).
    """

    kind: str = "scalar_normalized"
    horizon: float = 1.0
    n_pairs: int = 4

    def __post_init__(self):
        if self.kind not in TIME_ENCODING_KINDS:
            raise ValidationError(f"unknown time encoding kind {self.kind!r}")
        if not (self.horizon > 0.0):
            raise ValidationError(f"horizon must be positive, got {self.horizon}")
        if self.kind == "sinusoidal" and self.n_pairs < 1:
            raise ValidationError("sinusoidal encoding needs n_pairs >= 1")

    @property
    def width(self) -> int:
        if self.kind == "none":
            return 0
        if self.kind == "scalar_normalized":
            return 1
        return 2 * self.n_pairs

    def encode_batch(self, ts) -> np.ndarray:
        """Features for an array of times, shape ``(n, width)``."""
        ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
        if self.kind == "none":
            return np.zeros((ts.shape[0], 0))
        if self.kind == "scalar_normalized":
            return (ts / self.horizon)[:, None]
        freqs = np.pi * (2.0 ** np.arange(self.n_pairs)) / self.horizon
        angles = ts[:, None] * freqs[None, :]
        out = np.empty((ts.shape[0], 2 * self.n_pairs))
        out[:, 0::2] = np.sin(angles)
        out[:, 1::2] = np.cos(angles)
        return out

    def encode(self, t: float) -> np.ndarray:
        return self.encode_batch([t])[0]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "horizon": self.horizon, "n_pairs": self.n_pairs}

    @classmethod
    def from_dict(cls, d: dict) -> "TimeEncoding":
        return cls(
            kind=d.get("kind", "scalar_normalized"),
            horizon=float(d.get("horizon", 1.0)),
            n_pairs=int(d.get("n_pairs", 4)),
        )


@dataclass(frozen=True)
class EmbeddingTrajectory:
    """A sequence of d-dimensional states at strictly increasing times."""

    states: np.ndarray
    times: np.ndarray
    tokens: list[str] | None = None

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        times = np.atleast_1d(np.asarray(self.times, dtype=np.float64))
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "times", times)
        if states.ndim != 2 or states.shape[0] < 1:
            raise ValidationError("trajectory needs at least one state")
        if times.shape != (states.shape[0],):
            raise DimensionMismatchError(
                f"{states.shape[0]} states but {times.shape} times"
            )
        if np.any(np.diff(times) <= 0.0):
            raise ValidationError("times must be strictly increasing")
        if self.tokens is not None and len(self.tokens) != states.shape[0]:
            raise DimensionMismatchError(
                f"{states.shape[0]} states but {len(self.tokens)} tokens"
            )

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def uniform_spacing(self) -> bool:
        deltas = np.diff(self.times)
        if deltas.size == 0:
            return True
        return bool(np.max(np.abs(deltas - deltas[0])) < 1e-12)


@dataclass(frozen=True)
class NoisePath:
    """Wiener increments for one path: ``increments[k, j] ~ sqrt(dt) N(0,1)``."""

    increments: np.ndarray
    dt: float
    seed: int


def sample_noise_path(dim: int, n_steps: int, dt: float, seed: int) -> NoisePath:
    """Increments for ``n_steps`` steps; replayable from the seed.

    Step ``k``, component ``j`` consumes normal ``k * dim + j`` of the
    stream, so any sub-block can be regenerated without drawing the rest.
    """
    if dim < 1 or n_steps < 0 or not (dt > 0.0):
        raise ValidationError(f"bad noise path request dim={dim} n_steps={n_steps} dt={dt}")
    z = RngStream(seed).normals(n_steps * dim).reshape(n_steps, dim)
    return NoisePath(increments=math.sqrt(dt) * z, dt=float(dt), seed=int(seed))


class SdeModel:
    """Neural drift and diffusion over d-dimensional embeddings.

    Immutable by convention after construction; simulation methods never
    mutate the model, so instances are safe to share across parallel path
    generation.
    """

    def __init__(
        self,
        dim: int,
        drift_net: MlpNetwork,
        diffusion_net: MlpNetwork,
        time_encoding: TimeEncoding | None = None,
    ):
        if dim < 1:
            raise ValidationError(f"dim must be positive, got {dim}")
        enc = time_encoding if time_encoding is not None else TimeEncoding()
        want_in = dim + enc.width
        for name, net in (("drift", drift_net), ("diffusion", diffusion_net)):
            if net.input_dim != want_in or net.output_dim != dim:
                raise DimensionMismatchError(
                    f"{name} net is {net.input_dim}->{net.output_dim}, "
                    f"model needs {want_in}->{dim}"
                )
        self.dim = dim
        self.drift_net = drift_net
        self.diffusion_net = diffusion_net
        self.time_encoding = enc

    def _net_input(self, x, t) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if xs.shape[1] != self.dim:
            raise DimensionMismatchError(f"state dim {xs.shape[1]}, model dim {self.dim}")
        ts = np.broadcast_to(np.asarray(t, dtype=np.float64), (xs.shape[0],))
        return np.concatenate([xs, self.time_encoding.encode_batch(ts)], axis=1)

    def drift(self, x, t) -> np.ndarray:
        """Drift field at ``(x, t)``; batched when ``x`` is ``(n, d)``."""
        out = self.drift_net.forward(self._net_input(x, t))
        return out[0] if np.ndim(x) == 1 else out

    def diffusion(self, x, t) -> np.ndarray:
        """Diffusion magnitudes at ``(x, t)``; positive for softplus heads."""
        out = self.diffusion_net.forward(self._net_input(x, t))
        return out[0] if np.ndim(x) == 1 else out


def euler_maruyama_step(model: SdeModel, x, t: float, dt: float, dW) -> np.ndarray:
    """One update ``x + mu(x,t) dt + sigma(x,t) (.) dW``."""
    x = np.asarray(x, dtype=np.float64)
    dW = np.asarray(dW, dtype=np.float64)
    if x.shape != dW.shape:
        raise DimensionMismatchError(f"state {x.shape} vs increment {dW.shape}")
    if not (dt > 0.0):
        raise ValidationError(f"dt must be positive, got {dt}")
    with np.errstate(over="ignore", invalid="ignore"):  # non-finite handled below
        nxt = x + model.drift(x, t) * dt + model.diffusion(x, t) * dW
    if not np.all(np.isfinite(nxt)):
        raise SimulationBlowupError(
            "non-finite state after one step", step=0, prefix_states=[x], prefix_times=[t]
        )
    return nxt


def _check_state(x: np.ndarray, step: int, states: list, times: list) -> None:
    if not np.all(np.isfinite(x)) or float(np.max(np.abs(x))) > BLOWUP_LIMIT:
        raise SimulationBlowupError(
            f"state left |x| <= {BLOWUP_LIMIT:g} at step {step}",
            step=step,
            prefix_states=list(states),
            prefix_times=list(times),
        )


def simulate(
    model: SdeModel,
    x0,
    n_steps: int,
    dt: float = 1.0,
    seed: int = 0,
) -> EmbeddingTrajectory:
    """Integrate one path from ``x0``; pure in ``(model, x0, n_steps, dt, seed)``.

    Equivalent to row 0 of :func:`simulate_ensemble` with one path and the
    same seed.  Raises :class:`SimulationBlowupError` carrying the finite
    prefix when a state leaves ``|x| <= BLOWUP_LIMIT``.
    """
    ens = simulate_ensemble(model, x0, n_paths=1, n_steps=n_steps, dt=dt, seed=seed)
    return EmbeddingTrajectory(states=ens[0], times=dt * np.arange(n_steps + 1))


def simulate_ensemble(
    model: SdeModel,
    x0,
    n_paths: int,
    n_steps: int,
    dt: float = 1.0,
    seed: int = 0,
) -> np.ndarray:
    """Integrate ``n_paths`` independent paths.

    ``x0`` is either one shared start state ``(d,)`` or one per path
    ``(n_paths, d)``.  Returns states of shape ``(n_paths, n_steps + 1, d)``.
    Path ``p`` uses the noise stream seeded ``seed XOR p``, so any single
    path can be reproduced in isolation with :func:`simulate`.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (model.dim,) and x0.shape != (n_paths, model.dim):
        raise DimensionMismatchError(f"x0 shape {x0.shape}, model dim {model.dim}")
    if n_paths < 1 or n_steps < 0:
        raise ValidationError(f"bad request n_paths={n_paths} n_steps={n_steps}")
    if not (dt > 0.0):
        raise ValidationError(f"dt must be positive, got {dt}")

    seeds = (np.uint64(int(seed) & (2**64 - 1)) ^ np.arange(n_paths, dtype=np.uint64))[:, None]
    sqrt_dt = math.sqrt(dt)
    out = np.empty((n_paths, n_steps + 1, model.dim))
    out[:, 0, :] = x0
    x = np.broadcast_to(x0, (n_paths, model.dim)).copy() if x0.ndim == 1 else x0.copy()
    dim_idx = np.arange(model.dim, dtype=np.uint64)[None, :]
    for k in range(n_steps):
        t = k * dt
        dW = sqrt_dt * indexed_normals(seeds, np.uint64(k * model.dim) + dim_idx)
        with np.errstate(over="ignore", invalid="ignore"):  # blow-up handled below
            x = x + model.drift(x, t) * dt + model.diffusion(x, t) * dW
        if not np.all(np.isfinite(x)) or float(np.max(np.abs(x))) > BLOWUP_LIMIT:
            bad = np.where(~np.isfinite(x).all(axis=1) | (np.abs(x).max(axis=1) > BLOWUP_LIMIT))[0]
            raise SimulationBlowupError(
                f"path {bad[0]} left |x| <= {BLOWUP_LIMIT:g} at step {k + 1}",
                step=k + 1,
                prefix_states=[out[bad[0], i].copy() for i in range(k + 1)],
                prefix_times=[i * dt for i in range(k + 1)],
            )
        out[:, k + 1, :] = x
    return out


def generate_answer(
    model: SdeModel,
    question_embeddings,
    n_steps: int,
    dt: float = 1.0,
    seed: int = 0,
) -> EmbeddingTrajectory:
    """Answer trajectory: integrate from the mean of the question embeddings.

    The start state is the exact componentwise arithmetic mean; the rest is
    :func:`simulate`.
    """
    q = np.atleast_2d(np.asarray(question_embeddings, dtype=np.float64))
    if q.size == 0:
        raise ValidationError("need at least one question embedding")
    if q.shape[1] != model.dim:
        raise DimensionMismatchError(f"question dim {q.shape[1]}, model dim {model.dim}")
    return simulate(model, q.mean(axis=0), n_steps=n_steps, dt=dt, seed=seed)


# ---------------------------------------------------------------------------
# Analytic linear fixtures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearSdeSpec:
    """Constant-coefficient linear SDE ``dX = a X dt + b dW``."""

    a: float
    b: float
    dim: int = 1

    def __post_init__(self):
        if self.b < 0.0:
            raise ValidationError(f"b must be nonnegative, got {self.b}")
        if self.dim < 1:
            raise ValidationError(f"dim must be positive, got {self.dim}")


def linear_sde_model(spec: LinearSdeSpec, time_encoding: TimeEncoding | None = None) -> SdeModel:
    """Exact network realization of a linear spec.

    The drift net is a single affine layer ``[a I | 0]`` (time features get
    zero weight); the diffusion net is constant at ``b``.  For ``b > 0`` the
    bias is ``log(expm1(b))`` under a softplus head; ``b = 0`` needs an
    identity head since softplus cannot reach zero.  These identity-head
    fixtures are the one place a model's diffusion may be non-positive.
    """
    enc = time_encoding if time_encoding is not None else TimeEncoding()
    d, w = spec.dim, enc.width
    drift_w = np.concatenate([spec.a * np.eye(d), np.zeros((d, w))], axis=1)
    drift_net = MlpNetwork([d + w, d], [drift_w], [np.zeros(d)], output_activation="identity")
    if spec.b > 0.0:
        bias = math.log(math.expm1(spec.b)) * np.ones(d)
        diffusion_net = MlpNetwork(
            [d + w, d], [np.zeros((d, d + w))], [bias], output_activation="softplus"
        )
    else:
        diffusion_net = MlpNetwork(
            [d + w, d], [np.zeros((d, d + w))], [np.zeros(d)], output_activation="identity"
        )
    return SdeModel(d, drift_net, diffusion_net, enc)


def sample_linear_trajectories(
    spec: LinearSdeSpec,
    n_trajectories: int,
    n_steps: int,
    dt: float,
    seed: int,
    x0_low: float = -2.0,
    x0_high: float = 2.0,
) -> list[EmbeddingTrajectory]:
    """Euler paths of a linear SDE with uniform random start states.

    The bundled synthetic dataset: start states are drawn from
    ``U(x0_low, x0_high)`` per component off the base stream, path ``i``
    integrates with the stream ``seed XOR (i + 1)``.
    """
    if n_trajectories < 1:
        raise ValidationError("need at least one trajectory")
    if not (x0_high > x0_low):
        raise ValidationError(f"empty start-state range [{x0_low}, {x0_high}]")
    model = linear_sde_model(spec, TimeEncoding(kind="none"))
    base = RngStream(seed)
    out = []
    for i in range(n_trajectories):
        u = base.uniforms(spec.dim)
        x0 = x0_low + (x0_high - x0_low) * u
        out.append(simulate(model, x0, n_steps=n_steps, dt=dt, seed=base.seed ^ (i + 1)))
    return out


# ---------------------------------------------------------------------------
# Picard successive approximations (deterministic validator)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PicardResult:
    """Successive approximations and their sup-norm gaps.

    ``iterates[n]`` is iterate ``n`` evaluated on ``t_grid`` (shape
    ``(len(t_grid), d)``); ``gaps[n]`` is the sup norm of
    ``iterates[n+1] - iterates[n]``.
    """

    t_grid: np.ndarray
    iterates: list[np.ndarray] = field(default_factory=list)
    gaps: list[float] = field(default_factory=list)


def picard_iterates(spec: LinearSdeSpec, x0, t_grid, n_iters: int) -> PicardResult:
    """Deterministic Picard scheme for ``dX = a X dt`` (requires ``b = 0``).

    Iterate 0 is the constant ``x0``; iterate ``n+1`` integrates
    ``a * X_n`` from the grid start by the trapezoid rule.  For contractive
    ``a`` on a unit interval the gaps decay factorially.
    """
    if spec.b != 0.0:
        raise ValidationError("the Picard validator is deterministic; b must be 0")
    if n_iters < 1:
        raise ValidationError("need at least one iteration")
    t = np.asarray(t_grid, dtype=np.float64)
    if t.ndim != 1 or t.size < 2:
        raise ValidationError("t_grid needs at least two points")
    deltas = np.diff(t)
    if np.any(deltas <= 0.0):
        raise ValidationError("t_grid must be strictly increasing")
    if np.max(np.abs(deltas - deltas[0])) > 1e-12 * max(1.0, abs(float(deltas[0]))):
        raise ValidationError("t_grid must be uniformly spaced")
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    if x0.shape != (spec.dim,):
        raise DimensionMismatchError(f"x0 shape {x0.shape}, spec dim {spec.dim}")

    current = np.tile(x0, (t.size, 1))
    iterates = [current]
    gaps = []
    for _ in range(n_iters):
        integrand = spec.a * current
        # cumulative trapezoid rule from the grid start
        increments = 0.5 * deltas[:, None] * (integrand[1:] + integrand[:-1])
        integral = np.vstack([np.zeros((1, spec.dim)), np.cumsum(increments, axis=0)])
        nxt = x0[None, :] + integral
        gaps.append(float(np.max(np.abs(nxt - current))))
        iterates.append(nxt)
        current = nxt
    return PicardResult(t_grid=t, iterates=iterates, gaps=gaps)
