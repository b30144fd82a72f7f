"""Small dense networks with explicit forward/backward passes.

The drift and diffusion fields are parameterized by fully-connected networks
kept deliberately minimal: a list of weight matrices (shape
``(fan_out, fan_in)``) and bias vectors, one hidden activation, one output
activation.  Training uses plain stochastic gradient descent; the backward
pass is hand-written so that gradients are exact for the losses built on top
(and can be checked against finite differences in tests).

Inputs may be a single vector or an ``(n, d)`` batch; batched evaluation
agrees with row-at-a-time evaluation to floating-point roundoff (the matmul
kernel may differ by an ulp across batch shapes).  Gradients returned by
:func:`backward` are summed over the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, ValidationError
from .numeric_core import RngStream

# softplus underflows to exactly 0.0 below about -745; diffusion magnitudes
# enter a likelihood through log(sigma), so keep them strictly positive
_SOFTPLUS_FLOOR = 1e-300

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("identity", "softplus")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "identity":
        return z
    if name == "softplus":
        return np.maximum(np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0), _SOFTPLUS_FLOOR)
    raise ValidationError(f"unknown activation {name!r}")


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "identity":
        return np.ones_like(z)
    if name == "softplus":
        return _sigmoid(z)
    raise ValidationError(f"unknown activation {name!r}")


class MlpNetwork:
    """Dense network ``layer_dims[0] -> ... -> layer_dims[-1]``.

    ``weights[i]`` has shape ``(layer_dims[i+1], layer_dims[i])`` and acts on
    the left of column vectors; evaluation is row-major,
    ``a @ W.T + b``.
    """

    __slots__ = ("layer_dims", "weights", "biases", "hidden_activation", "output_activation")

    def __init__(
        self,
        layer_dims: list[int],
        weights: list[np.ndarray],
        biases: list[np.ndarray],
        hidden_activation: str = "tanh",
        output_activation: str = "identity",
    ):
        if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
            raise ValidationError(f"bad layer_dims {layer_dims}")
        if hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValidationError(f"unknown hidden activation {hidden_activation!r}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValidationError(f"unknown output activation {output_activation!r}")
        if len(weights) != len(layer_dims) - 1 or len(biases) != len(weights):
            raise DimensionMismatchError("weights/biases do not match layer_dims")
        for i, (w, b) in enumerate(zip(weights, biases)):
            want = (layer_dims[i + 1], layer_dims[i])
            if w.shape != want or b.shape != (layer_dims[i + 1],):
                raise DimensionMismatchError(
                    f"layer {i}: weight {w.shape} / bias {b.shape}, expected {want}"
                )
        self.layer_dims = list(layer_dims)
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def _layer_activation(self, layer: int) -> str:
        return self.output_activation if layer == len(self.weights) - 1 else self.hidden_activation

    def forward(self, x) -> np.ndarray:
        """Evaluate the network on one vector or an ``(n, d)`` batch."""
        a, single = self._promote(x)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = _apply_activation(self._layer_activation(i), a @ w.T + b)
        return a[0] if single else a

    def forward_with_cache(self, x) -> tuple[np.ndarray, list]:
        """Forward pass keeping per-layer inputs and pre-activations.

        The cache feeds :meth:`backward`; the returned output is always a
        batch (``(n, out_dim)``), even for a single input vector.
        """
        a, _ = self._promote(x)
        cache = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            out = _apply_activation(self._layer_activation(i), z)
            cache.append((a, z, out))
            a = out
        return a, cache

    def backward(self, cache: list, grad_output: np.ndarray) -> "GradientSet":
        """Parameter gradients of ``sum_n grad_output[n] . output[n]``.

        ``grad_output`` has shape ``(n, out_dim)``; gradients are summed over
        the batch axis.
        """
        grad_w = [None] * len(self.weights)
        grad_b = [None] * len(self.biases)
        delta = np.asarray(grad_output, dtype=np.float64)
        for i in range(len(self.weights) - 1, -1, -1):
            a_in, z, out = cache[i]
            delta = delta * _activation_grad(self._layer_activation(i), z, out)
            grad_w[i] = delta.T @ a_in
            grad_b[i] = delta.sum(axis=0)
            if i:
                delta = delta @ self.weights[i]
        return GradientSet(grad_w, grad_b)

    def _promote(self, x) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        if single:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.input_dim:
            raise DimensionMismatchError(
                f"input shape {np.shape(x)} incompatible with input_dim {self.input_dim}"
            )
        return arr, single

    # -- flat parameter view (finite-difference checks, persistence) --------

    def flatten_params(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def unflatten_params(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise DimensionMismatchError(f"expected {self.n_params} params, got {vec.shape}")
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = vec[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = vec[pos : pos + b.size].copy()
            pos += b.size

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden_activation,
            self.output_activation,
        )


@dataclass
class GradientSet:
    """Per-parameter gradients mirroring an :class:`MlpNetwork` layout."""

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    @classmethod
    def zeros_like(cls, net: MlpNetwork) -> "GradientSet":
        return cls(
            [np.zeros_like(w) for w in net.weights],
            [np.zeros_like(b) for b in net.biases],
        )

    def add_scaled(self, other: "GradientSet", scale: float) -> None:
        for mine, theirs in zip(self.weights, other.weights):
            mine += scale * theirs
        for mine, theirs in zip(self.biases, other.biases):
            mine += scale * theirs

    def scale(self, c: float) -> None:
        for w in self.weights:
            w *= c
        for b in self.biases:
            b *= c

    def global_norm(self) -> float:
        total = 0.0
        for w in self.weights:
            total += float(np.sum(w * w))
        for b in self.biases:
            total += float(np.sum(b * b))
        return math.sqrt(total)

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)


def glorot_init(
    layer_dims: list[int],
    rng: RngStream,
    hidden_activation: str = "tanh",
    output_activation: str = "identity",
) -> MlpNetwork:
    """Network with Glorot-uniform weights and zero biases.

    Each weight is drawn from ``U(-a, a]`` with
    ``a = sqrt(6 / (fan_in + fan_out))``; draw order is row-major per layer,
    so the result is a pure function of ``(layer_dims, rng.seed, position)``.
    """
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        u = rng.uniforms(fan_out * fan_in)
        weights.append(((2.0 * u - 1.0) * bound).reshape(fan_out, fan_in))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(layer_dims, weights, biases, hidden_activation, output_activation)


def sgd_step(net: MlpNetwork, grads: GradientSet, lr: float, clip_norm: float | None = None) -> float:
    """In-place gradient descent step; returns the pre-clip gradient norm.

    With ``clip_norm`` set, the whole gradient is rescaled to that global
    norm when it exceeds it (direction preserved).
    """
    norm = grads.global_norm()
    factor = lr
    if clip_norm is not None and norm > clip_norm:
        factor = lr * (clip_norm / norm)
    for w, gw in zip(net.weights, grads.weights):
        w -= factor * gw
    for b, gb in zip(net.biases, grads.biases):
        b -= factor * gb
    return norm
