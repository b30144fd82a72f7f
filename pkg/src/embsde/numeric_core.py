"""Deterministic numeric substrate: seeded RNG, eigendecomposition, PCA.

Vectors and matrices throughout the package are plain ``float64`` numpy
arrays.  This module pins down the two pieces whose exact behaviour the rest
of the package depends on:

* a counter-based random number generator with a frozen, documented
  algorithm, so that every simulated noise path can be replayed bit-for-bit
  from its seed (and indexed out of order for parallel path generation);
* principal component analysis built on an in-package symmetric
  eigendecomposition (cyclic Jacobi for small dimension, power iteration
  with deflation above ``_JACOBI_MAX_DIM``), with a deterministic sign and
  ordering convention.

Frozen RNG algorithm
--------------------
The word stream is SplitMix64: the ``n``-th 64-bit word (0-based) of the
stream with seed ``s`` is ``mix64((s + (n + 1) * GAMMA) mod 2**64)`` where
``GAMMA = 0x9E3779B97F4A7C15`` and ``mix64`` is the xor-shift/multiply
finalizer with constants ``0xBF58476D1CE4E5B9`` and ``0x94D049BB133111EB``.
A word maps to a uniform in ``(0, 1]`` via ``((w >> 11) + 1) * 2**-53``.
Standard normals use the trigonometric Box-Muller transform, one normal per
pair of consecutive words::

    z_k = sqrt(-2 ln u_{2k}) * cos(2 pi u_{2k+1})

The sine companion is intentionally discarded: each normal is then a pure
function of ``(seed, k)``, which is what makes ensemble noise generation a
bulk array computation rather than a sequential draw.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, ValidationError

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX_C1 = 0xBF58476D1CE4E5B9
_MIX_C2 = 0x94D049BB133111EB

_U64_GAMMA = np.uint64(_GAMMA)
_U64_C1 = np.uint64(_MIX_C1)
_U64_C2 = np.uint64(_MIX_C2)

_TWO_PI = 2.0 * math.pi
_INV_2_53 = 2.0 ** -53

# Above this dimension pca_fit switches from full Jacobi to power iteration.
_JACOBI_MAX_DIM = 64


def _mix64_int(z: int) -> int:
    z &= _MASK64
    z ^= z >> 30
    z = (z * _MIX_C1) & _MASK64
    z ^= z >> 27
    z = (z * _MIX_C2) & _MASK64
    z ^= z >> 31
    return z


def _mix64_array(z: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps mod 2**64; scalars would warn, arrays do not
    z = z ^ (z >> np.uint64(30))
    z = z * _U64_C1
    z = z ^ (z >> np.uint64(27))
    z = z * _U64_C2
    z = z ^ (z >> np.uint64(31))
    return z


def stream_words(seed: int, start: int, count: int) -> np.ndarray:
    """Words ``start .. start+count-1`` of the stream with the given seed."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    states = np.uint64(seed & _MASK64) + idx * _U64_GAMMA
    return _mix64_array(states)


def _words_to_unit(words: np.ndarray) -> np.ndarray:
    return ((words >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53


def _box_muller(w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    u1 = _words_to_unit(w1)
    u2 = _words_to_unit(w2)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def indexed_normals(seeds, normal_indices) -> np.ndarray:
    """Standard normals addressed by (stream seed, normal index).

    ``seeds`` and ``normal_indices`` are broadcast against each other; entry
    ``(s, k)`` equals the ``k``-th value of ``RngStream(s).standard_normal()``
    on a fresh stream.  Used for bulk Wiener-increment generation where every
    path owns its own stream.
    """
    seeds = np.asarray(seeds, dtype=np.uint64)
    idx = np.asarray(normal_indices, dtype=np.uint64)
    seeds, idx = np.broadcast_arrays(seeds, idx)
    two_i = idx * np.uint64(2)
    w1 = _mix64_array(seeds + (two_i + np.uint64(1)) * _U64_GAMMA)
    w2 = _mix64_array(seeds + (two_i + np.uint64(2)) * _U64_GAMMA)
    return _box_muller(w1, w2)


class RngStream:
    """Deterministic random stream with explicit seed and word counter.

    Two streams constructed with the same seed produce identical draws; the
    module docstring freezes the exact algorithm.  A stream is single-owner:
    share seeds, not stream objects, across concurrent work (see
    :meth:`spawn`).
    """

    __slots__ = ("seed", "_count")

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._count = 0

    @property
    def words_drawn(self) -> int:
        return self._count

    def next_uint64(self) -> int:
        state = (self.seed + ((self._count + 1) * _GAMMA)) & _MASK64
        self._count += 1
        return _mix64_int(state)

    def uniform(self) -> float:
        """One uniform draw in (0, 1]."""
        return ((self.next_uint64() >> 11) + 1) * _INV_2_53

    def standard_normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)

    def normals(self, count: int) -> np.ndarray:
        """``count`` standard normals, identical to repeated scalar draws."""
        if count < 0:
            raise ValidationError("normals count must be nonnegative")
        words = stream_words(self.seed, self._count, 2 * count)
        self._count += 2 * count
        return _box_muller(words[0::2], words[1::2])

    def uniforms(self, count: int) -> np.ndarray:
        words = stream_words(self.seed, self._count, count)
        self._count += count
        return _words_to_unit(words)

    def spawn(self, index: int) -> "RngStream":
        """Independent stream for a worker/path: seed XOR index."""
        return RngStream(self.seed ^ (int(index) & _MASK64))

    def shuffled_indices(self, n: int) -> np.ndarray:
        """Deterministic Fisher-Yates permutation of ``range(n)``."""
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = min(int(self.uniform() * (i + 1)), i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx


# ---------------------------------------------------------------------------
# Symmetric eigendecomposition and PCA
# ---------------------------------------------------------------------------


def jacobi_eigh(matrix: np.ndarray, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues in descending
    order and eigenvectors as rows, sign-canonicalized so the first component
    of each row above 1e-12 in magnitude is positive.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f"expected square matrix, got shape {a.shape}")
    d = a.shape[0]
    v = np.eye(d)
    if d == 1:
        return a.diagonal().copy(), v

    scale = np.max(np.abs(a)) or 1.0
    tol = 1e-15 * scale
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.tril(a, -1) ** 2)))
        if off <= tol * d:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= tol * 1e-2:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.hypot(1.0, tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    eigvals = a.diagonal().copy()
    order = np.argsort(-eigvals, kind="stable")
    rows = v.T[order]
    return eigvals[order], _canonical_signs(rows)


def power_iteration_topk(
    matrix: np.ndarray,
    k: int,
    tol: float = 1e-13,
    max_iter: int = 10_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Top-``k`` eigenpairs of a symmetric PSD matrix by power iteration.

    Uses deflation plus re-orthogonalization against already-found vectors;
    start vectors come from a fixed internal seed so results are
    reproducible.  Returns eigenvalues (descending) and eigenvectors as rows.
    """
    a = np.array(matrix, dtype=np.float64)
    d = a.shape[0]
    rng = RngStream(0xE16E & _MASK64)
    vals = np.empty(k)
    vecs = np.empty((k, d))
    for j in range(k):
        v = rng.normals(d)
        v /= math.sqrt(float(v @ v))
        for _ in range(max_iter):
            w = a @ v
            if j:
                w -= vecs[:j].T @ (vecs[:j] @ w)
            norm = math.sqrt(float(w @ w))
            if norm <= 1e-300:
                # deflated matrix is (numerically) zero in this subspace
                w = _orthogonal_fill(vecs[:j], d)
                norm = 1.0
            w /= norm
            if float(np.abs(w - v).max()) < tol or float(np.abs(w + v).max()) < tol:
                v = w
                break
            v = w
        vals[j] = float(v @ a @ v)
        vecs[j] = v
        a = a - vals[j] * np.outer(v, v)
    order = np.argsort(-vals, kind="stable")
    return vals[order], _canonical_signs(vecs[order])


def _orthogonal_fill(rows: np.ndarray, d: int) -> np.ndarray:
    """Any unit vector orthogonal to the given orthonormal rows."""
    for i in range(d):
        cand = np.zeros(d)
        cand[i] = 1.0
        if len(rows):
            cand -= rows.T @ (rows @ cand)
        norm = math.sqrt(float(cand @ cand))
        if norm > 1e-8:
            return cand / norm
    raise ValidationError("cannot extend orthonormal basis")  # d exhausted


def _canonical_signs(rows: np.ndarray) -> np.ndarray:
    rows = rows.copy()
    for i, row in enumerate(rows):
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0.0:
            rows[i] = -row
    return rows


@dataclass(frozen=True)
class PcaResult:
    """Fitted principal-component basis.

    ``basis`` rows are orthonormal directions in descending
    ``explained_variance`` order; ``degenerate`` flags an all-identical
    point cloud, for which the variance is zero and the basis arbitrary
    (but still orthonormal).
    """

    basis: np.ndarray
    mean: np.ndarray
    explained_variance: np.ndarray
    degenerate: bool = False


def pca_fit(points, k: int) -> PcaResult:
    """Fit a ``k``-component PCA to a cloud of vectors.

    ``points`` is a sequence of equal-length vectors (or an ``(n, d)``
    array).  Eigenvectors of the sample covariance are computed by cyclic
    Jacobi for ``d <= 64`` and by power iteration with deflation above that.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.ndim != 2 or pts.size == 0:
        raise DimensionMismatchError("points must be a nonempty (n, d) collection")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("points contain non-finite values")
    n, d = pts.shape
    if not (1 <= k <= min(d, n)):
        raise DimensionMismatchError(
            f"k={k} out of range for {n} points of dimension {d}"
        )

    mean = pts.mean(axis=0)
    centered = pts - mean
    if n > 1:
        cov = (centered.T @ centered) / (n - 1)
    else:
        cov = np.zeros((d, d))

    scale = max(1.0, float(np.max(np.sum(pts * pts, axis=1))))
    if float(np.trace(cov)) <= 1e-24 * scale:
        warnings.warn("degenerate point cloud: zero variance in every direction")
        return PcaResult(
            basis=np.eye(d)[:k].copy(),
            mean=mean,
            explained_variance=np.zeros(k),
            degenerate=True,
        )

    if d <= _JACOBI_MAX_DIM:
        vals, vecs = jacobi_eigh(cov)
        vals, vecs = vals[:k], vecs[:k]
    else:
        vals, vecs = power_iteration_topk(cov, k)
    return PcaResult(
        basis=vecs,
        mean=mean,
        explained_variance=np.maximum(vals, 0.0),
        degenerate=False,
    )


def pca_project(basis: np.ndarray, mean: np.ndarray, x) -> np.ndarray:
    """Project ``x`` (one vector or an ``(n, d)`` batch) onto the basis rows."""
    basis = np.asarray(basis, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != basis.shape[1] or mean.shape[0] != basis.shape[1]:
        raise DimensionMismatchError(
            f"cannot project shape {arr.shape} through basis {basis.shape}"
        )
    return (arr - mean) @ basis.T
