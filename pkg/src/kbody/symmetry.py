"""Block-diagonal rotation actions on R^{kn}.

A vector x in R^{kn} is split into n consecutive blocks of length kappa.
A single rotation sigma in SO(kappa) acts on every block simultaneously:

    R_sigma(x) = (sigma(x_1..x_k), ..., sigma(x_{k(n-1)+1}..x_{kn})).

Bodies and functions invariant under every R_sigma are called
kappa-balanced.  This module provides the action itself, Haar sampling on
SO(kappa), orbit averaging, the sampled balancedness check, and the orbit
geometry primitives (similarity, alignment, canonical representatives)
that the interpolation and quadrature layers build on.

Orbit similarity.  For two points x, y the quantity

    t(x, y) = max_{sigma in SO(kappa), s = +-1} <x, s R_sigma y>

is the natural rotation-invariant pairing (the sign accounts for origin
symmetry; for even kappa the sign is already inside the group).  It has
closed forms in every case this package needs:

* kappa = 1:  t = |<x, y>|.
* kappa = 2:  write each block as a complex number; t = |sum_i conj(z_i) w_i|.
* kappa >= 3: available when one argument has parallel blocks
  (y = w (x) v with w in R^n, v in R^kappa); then t = |v|.|Y^T w|_2 where
  Y is the block matrix of the other argument.  For kappa >= 3 a
  direction admits a kappa-dimensional rotation-stable subspace exactly
  when its blocks are parallel, so grids and frames in that regime are
  restricted to such directions (see ``orbit_subspace``).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, UnsupportedDimension, ZeroVector

__all__ = [
    "Dimensions",
    "BlockRotation",
    "block_rotate",
    "haar_sample",
    "orbit_average",
    "is_k_balanced",
    "as_rng",
    "derive_seed",
    "block_matrix",
    "orbit_similarity",
    "similarity_to_axes",
    "stratum_axis",
    "canonicalize",
    "align_to",
    "so_generators",
    "random_unit",
]

_ORTHO_TOL = 1e-12


@dataclass(frozen=True)
class Dimensions:
    """Block structure of the ambient space R^{kappa*n}."""

    kappa: int
    n: int

    def __post_init__(self):
        if int(self.kappa) != self.kappa or self.kappa < 1:
            raise DimensionMismatch(f"kappa must be a positive integer, got {self.kappa}")
        if int(self.n) != self.n or self.n < 2:
            raise DimensionMismatch(f"n must be an integer >= 2, got {self.n}")
        object.__setattr__(self, "kappa", int(self.kappa))
        object.__setattr__(self, "n", int(self.n))

    @property
    def ambient(self) -> int:
        return self.kappa * self.n

    def __str__(self):
        return f"(kappa={self.kappa}, n={self.n})"


@dataclass(frozen=True)
class BlockRotation:
    """An element sigma of SO(kappa), applied block-wise by block_rotate."""

    kappa: int
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (self.kappa, self.kappa):
            raise DimensionMismatch(
                f"rotation matrix shape {m.shape} does not match kappa={self.kappa}"
            )
        if not np.allclose(m.T @ m, np.eye(self.kappa), atol=1e-12):
            raise DimensionMismatch("rotation matrix is not orthogonal within 1e-12")
        if abs(np.linalg.det(m) - 1.0) > 1e-12:
            raise DimensionMismatch("rotation matrix must have determinant +1")
        object.__setattr__(self, "matrix", m)

    def compose(self, other: "BlockRotation") -> "BlockRotation":
        if other.kappa != self.kappa:
            raise DimensionMismatch("cannot compose rotations of different block size")
        return BlockRotation(self.kappa, self.matrix @ other.matrix)


def as_rng(seed) -> np.random.Generator:
    """Coerce an int seed or an existing Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derive_seed(*parts) -> int:
    """Deterministic child seed from a tuple of hashable labels."""
    text = "|".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little")


def block_matrix(dims: Dimensions, x: np.ndarray) -> np.ndarray:
    """Reshape (..., kappa*n) into blocks (..., n, kappa)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dims.ambient:
        raise DimensionMismatch(
            f"vector length {x.shape[-1]} does not match ambient {dims.ambient}"
        )
    return x.reshape(x.shape[:-1] + (dims.n, dims.kappa))


def block_rotate(dims: Dimensions, sigma: BlockRotation, x: np.ndarray) -> np.ndarray:
    """Apply sigma to each kappa-block of x; accepts batched x."""
    if sigma.kappa != dims.kappa:
        raise DimensionMismatch(
            f"rotation block size {sigma.kappa} does not match kappa {dims.kappa}"
        )
    xb = block_matrix(dims, x)
    out = xb @ sigma.matrix.T
    return out.reshape(np.asarray(x).shape)


def so_generators(kappa: int) -> list[np.ndarray]:
    """Basis E_pq - E_qp, p < q, of the antisymmetric matrices."""
    gens = []
    for p in range(kappa):
        for q in range(p + 1, kappa):
            g = np.zeros((kappa, kappa))
            g[p, q] = -1.0
            g[q, p] = 1.0
            gens.append(g)
    return gens


def haar_sample(kappa: int, rng) -> BlockRotation:
    """Haar-distributed rotation via QR of a Gaussian matrix.

    The R-diagonal sign correction makes the QR map measure preserving;
    a determinant of -1 is fixed by swapping the first two columns,
    which maps the reflection coset bijectively onto SO(kappa).
    """
    if kappa < 1:
        raise DimensionMismatch("kappa must be >= 1")
    rng = as_rng(rng)
    if kappa == 1:
        rng.standard_normal(1)  # keep the stream advancing uniformly
        return BlockRotation(1, np.eye(1))
    g = rng.standard_normal((kappa, kappa))
    q, r = np.linalg.qr(g)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    q = q * d
    if np.linalg.det(q) < 0:
        q = q[:, [1, 0] + list(range(2, kappa))]
    return BlockRotation(kappa, q)


def orbit_average(dims: Dimensions, f, x: np.ndarray, m: int, rng) -> float:
    """Monte Carlo average of f over the rotation orbit of x."""
    if m < 1:
        raise DimensionMismatch("sample count m must be >= 1")
    rng = as_rng(rng)
    x = np.asarray(x, dtype=float)
    if dims.kappa == 1:
        return float(f(x))
    total = 0.0
    for _ in range(m):
        sigma = haar_sample(dims.kappa, rng)
        total += float(f(block_rotate(dims, sigma, x)))
    return total / m


def is_k_balanced(dims: Dimensions, body, trials: int = 512, tol: float = 1e-9,
                  rng=0) -> tuple[bool, float]:
    """Sampled invariance check of a body's Minkowski functional.

    Draws random (x, sigma) pairs and measures the worst relative
    deviation of ||R_sigma x|| from ||x||.  Returns (balanced, max_dev).
    """
    if trials < 1:
        raise DimensionMismatch("trials must be >= 1")
    rng = as_rng(rng)
    if dims.kappa == 1:
        return True, 0.0
    x = rng.standard_normal((trials, dims.ambient))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    base = np.asarray(body.norm(x), dtype=float)
    worst = 0.0
    for _ in range(8):
        sigma = haar_sample(dims.kappa, rng)
        rotated = np.asarray(body.norm(block_rotate(dims, sigma, x)), dtype=float)
        dev = np.max(np.abs(rotated - base) / np.maximum(np.abs(base), 1e-300))
        worst = max(worst, float(dev))
    return worst <= tol, worst


# ---------------------------------------------------------------------------
# Orbit geometry: similarity, alignment, canonical representatives.
# ---------------------------------------------------------------------------

def _complex_blocks(dims: Dimensions, x: np.ndarray) -> np.ndarray:
    xb = block_matrix(dims, x)
    return xb[..., 0] + 1j * xb[..., 1]


def similarity_to_axes(dims: Dimensions, points: np.ndarray,
                       axes: np.ndarray) -> np.ndarray:
    """t(points, w (x) v) for unit block-parallel directions given by axes.

    points: (M, ambient); axes: (N, n) unit rows.  Returns (M, N).
    """
    pb = block_matrix(dims, np.atleast_2d(points))
    axes = np.atleast_2d(np.asarray(axes, dtype=float))
    if axes.shape[1] != dims.n:
        raise DimensionMismatch(f"axes must have {dims.n} columns")
    # V[m, a, j] = sum_i axes[j, i] * block(points[m])[i, a]
    v = np.tensordot(pb, axes, axes=([1], [1]))
    return np.linalg.norm(v, axis=1)


def orbit_similarity(dims: Dimensions, points: np.ndarray,
                     nodes: np.ndarray) -> np.ndarray:
    """Pairwise rotation-and-sign invariant pairing t, shape (M, N).

    For kappa >= 3 the nodes must have parallel blocks; their axes are
    extracted with ``stratum_axis``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    k = dims.kappa
    if k == 1:
        return np.abs(points @ nodes.T)
    if k == 2:
        zp = _complex_blocks(dims, points)
        zn = _complex_blocks(dims, nodes)
        return np.abs(zp @ zn.conj().T)
    axes = np.stack([stratum_axis(dims, u) * np.linalg.norm(u) for u in nodes])
    return similarity_to_axes(dims, points, axes)


def stratum_axis(dims: Dimensions, x: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Unit axis w in R^n of a block-parallel vector x = w (x) v.

    Raises UnsupportedDimension when the blocks of x are not parallel
    within tol (relative to the largest singular value); such directions
    have no kappa-dimensional rotation-stable subspace when kappa >= 3.
    """
    xb = block_matrix(dims, np.asarray(x, dtype=float))
    if xb.ndim != 2:
        raise DimensionMismatch("stratum_axis expects a single vector")
    norm = np.linalg.norm(xb)
    if norm == 0.0:
        raise ZeroVector("zero vector has no block axis")
    u, s, _ = np.linalg.svd(xb, full_matrices=False)
    if s.size > 1 and s[1] > tol * s[0]:
        raise UnsupportedDimension(
            "blocks are not parallel: no stable subspace of dimension kappa "
            f"contains this direction (singular value ratio {s[1] / s[0]:.2e})"
        )
    w = u[:, 0]
    idx = np.flatnonzero(np.abs(w) > 1e-12)
    if idx.size and w[idx[0]] < 0:
        w = -w
    return w


def canonicalize(dims: Dimensions, x: np.ndarray) -> np.ndarray:
    """Canonical representative of the orbit of x under rotations and sign.

    Used for cache keys and persisted grids; evaluation paths rely on
    ``orbit_similarity``/``align_to`` instead and never require it.
    """
    x = np.asarray(x, dtype=float)
    k = dims.kappa
    if k == 1:
        idx = np.flatnonzero(np.abs(x) > 1e-13)
        return -x if (idx.size and x[idx[0]] < 0) else x.copy()
    if k == 2:
        z = _complex_blocks(dims, x)
        i0 = int(np.argmax(np.abs(z)))
        if np.abs(z[i0]) < 1e-300:
            return x.copy()
        phase = z[i0] / np.abs(z[i0])
        zc = z * np.conj(phase)
        out = np.empty_like(x)
        out[0::2] = zc.real
        out[1::2] = zc.imag
        return out
    def rotated_qr(mat):
        # mat = X^T is kappa x n; X sigma^T over sigma in SO(kappa)
        # reaches R^T d with X^T = Q R, d carrying the det constraint
        # on sign-free (numerically zero) rows when any exist.
        q, r = np.linalg.qr(mat, mode="complete")
        m = min(mat.shape)
        d = np.ones(mat.shape[0])
        diag = np.diagonal(r)[:m]
        d[:m] = np.where(diag < 0, -1.0, 1.0)
        if np.linalg.det(q) * np.prod(d) < 0:
            norms = np.linalg.norm(r, axis=1)
            free = np.flatnonzero(norms <= 1e-14 * max(1.0, norms.max()))
            d[free[-1] if free.size else -1] *= -1.0
        return r * d[:, None]

    xb = block_matrix(dims, x)
    cand = rotated_qr(xb.T).T.reshape(-1)
    if k % 2 == 1:
        neg = rotated_qr(-xb.T).T.reshape(-1)
        if tuple(np.round(neg, 12)) > tuple(np.round(cand, 12)):
            return neg
    return cand


def align_to(dims: Dimensions, target: np.ndarray, mover: np.ndarray) -> np.ndarray:
    """Rotated-and-signed copy of mover closest to target.

    Returns s * R_sigma(mover) maximizing the inner product with target.
    For kappa >= 3 the mover must be block-parallel.
    """
    target = np.asarray(target, dtype=float)
    mover = np.asarray(mover, dtype=float)
    k = dims.kappa
    if k == 1:
        s = np.sign(target @ mover)
        return mover if s == 0 else s * mover
    if k == 2:
        zt = _complex_blocks(dims, target)
        zm = _complex_blocks(dims, mover)
        g = np.sum(np.conj(zm) * zt)
        if np.abs(g) < 1e-300:
            return mover.copy()
        phase = g / np.abs(g)
        zr = zm * phase
        out = np.empty_like(mover)
        out[0::2] = zr.real
        out[1::2] = zr.imag
        return out
    w = stratum_axis(dims, mover)
    scale = np.linalg.norm(mover)
    tb = block_matrix(dims, target)
    v = tb.T @ w
    nv = np.linalg.norm(v)
    if nv < 1e-300:
        return mover.copy()
    aligned = np.outer(w, v / nv) * scale
    return aligned.reshape(-1)


def random_unit(d: int, rng, size: int | None = None) -> np.ndarray:
    """Uniform points on S^{d-1}."""
    rng = as_rng(rng)
    shape = (d,) if size is None else (size, d)
    x = rng.standard_normal(shape)
    nrm = np.linalg.norm(x, axis=-1, keepdims=True)
    while np.any(nrm == 0):
        bad = (nrm == 0).reshape(-1)
        x[bad] = rng.standard_normal((int(bad.sum()), d))
        nrm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / nrm
