"""Orbit subspace frames and quadrature on spheres and sub-spheres.

For a unit direction xi the rotation orbit {R_sigma(xi)} spans a
subspace H_xi_perp; its orthogonal complement H_xi plays the role of a
hyperplane for kappa-balanced geometry.  Integrals over S^{d-1} and over
the sub-spheres S^{d-1} cap H are realized by QuadratureRule values with
surface-measure normalization: weights always sum to |S^{m-1}| of the
sphere they discretize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_jacobi

from .errors import DimensionMismatch, NotUnit, UnsupportedDimension
from .symmetry import (
    Dimensions,
    as_rng,
    block_matrix,
    block_rotate,
    haar_sample,
    random_unit,
    so_generators,
)

__all__ = [
    "surface_area",
    "ball_volume",
    "SubsphereFrame",
    "QuadratureRule",
    "orbit_subspace",
    "sphere_quadrature",
    "subsphere_quadrature",
    "integrate",
    "integrate_with_error",
]


def surface_area(d: int) -> float:
    """|S^{d-1}| = 2 pi^{d/2} / Gamma(d/2)."""
    if d < 1:
        raise DimensionMismatch("sphere dimension must be >= 1")
    return math.exp(math.log(2.0) + 0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d))


def ball_volume(d: int) -> float:
    """|B^d| = pi^{d/2} / Gamma(d/2 + 1)."""
    if d < 0:
        raise DimensionMismatch("ball dimension must be >= 0")
    return math.exp(0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d + 1.0))


@dataclass(frozen=True)
class SubsphereFrame:
    """Orthonormal frame splitting R^{kn} into H_xi_perp and H_xi."""

    dims: Dimensions
    xi: np.ndarray = field(repr=False)
    basis_perp: np.ndarray = field(repr=False)  # kappa x ambient
    basis_h: np.ndarray = field(repr=False)  # (ambient - kappa) x ambient

    def validate(self, atol: float = 1e-10) -> None:
        full = np.vstack([self.basis_perp, self.basis_h])
        gram = full @ full.T
        if not np.allclose(gram, np.eye(self.dims.ambient), atol=atol):
            raise BadFrame("frame is not orthonormal")
        coeffs = self.basis_perp @ self.xi
        rec = coeffs @ self.basis_perp
        if np.linalg.norm(rec - self.xi) > atol:
            raise BadFrame("xi does not lie in span(basis_perp)")


class BadFrame(DimensionMismatch):
    pass


def _gram_schmidt(rows, tol=1e-10):
    kept = []
    for v in rows:
        u = np.asarray(v, dtype=float).copy()
        for b in kept:
            u -= (u @ b) * b
        nrm = np.linalg.norm(u)
        if nrm > tol:
            kept.append(u / nrm)
    return kept


def orbit_subspace(dims: Dimensions, xi: np.ndarray) -> SubsphereFrame:
    """Frame of the orbit span of xi and its orthogonal complement.

    The orbit span is generated by xi together with the antisymmetric
    generators applied block-wise.  When that span does not close at
    dimension kappa (possible only for kappa >= 3 and non-parallel
    blocks) no stable frame exists and UnsupportedDimension is raised.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (dims.ambient,):
        raise DimensionMismatch(
            f"direction has length {xi.shape}, expected {dims.ambient}"
        )
    if abs(np.linalg.norm(xi) - 1.0) > 1e-8:
        raise NotUnit(f"|xi| = {np.linalg.norm(xi):.3e} is not 1 within 1e-8")
    xb = block_matrix(dims, xi)
    vectors = [xi]
    for g in so_generators(dims.kappa):
        vectors.append((xb @ g.T).reshape(-1))
    perp = _gram_schmidt(vectors)
    if len(perp) != dims.kappa:
        raise UnsupportedDimension(
            f"orbit span of this direction has dimension {len(perp)}, not "
            f"kappa={dims.kappa}; for kappa >= 3 only directions with "
            "parallel blocks admit a stable kappa-dimensional subspace"
        )
    rows = list(perp)
    for i in range(dims.ambient):
        e = np.zeros(dims.ambient)
        e[i] = 1.0
        got = _gram_schmidt(rows + [e])
        if len(got) > len(rows):
            rows = got
        if len(rows) == dims.ambient:
            break
    basis_perp = np.array(rows[: dims.kappa])
    basis_h = np.array(rows[dims.kappa:])
    return SubsphereFrame(dims, xi, basis_perp, basis_h)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for integration against surface measure.

    d is the dimension of the sphere's ambient space (nodes lie on
    S^{d-1}); the nodes themselves may be embedded in a larger space.
    ``cluster`` is the number of symmetrized copies per base node and
    drives the error estimate in integrate_with_error.
    """

    d: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    method: str = "monte_carlo"
    cluster: int = 1

    @property
    def total(self) -> float:
        return float(np.sum(self.weights))

    def validate(self, atol: float = 1e-8) -> None:
        if np.any(self.weights <= 0):
            raise DimensionMismatch("weights must be positive")
        norms = np.linalg.norm(self.nodes, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-12:
            raise DimensionMismatch("nodes must be unit vectors")
        if abs(self.total - surface_area(self.d)) > atol * max(1.0, surface_area(self.d)):
            raise DimensionMismatch("weights do not sum to the surface area")


def _product_gauss_nodes(d: int, size: int) -> tuple[np.ndarray, np.ndarray]:
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        m = max(4, size)
        ang = 2.0 * math.pi * (np.arange(m) + 0.5) / m
        nodes = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return nodes, np.full(m, 2.0 * math.pi / m)
    per_axis = max(4, int(math.ceil(size ** (1.0 / (d - 1)))))
    sub_nodes, sub_w = _product_gauss_nodes(d - 1, per_axis ** (d - 2))
    t, tw = roots_jacobi(per_axis, (d - 3) / 2.0, (d - 3) / 2.0)
    s = np.sqrt(np.maximum(0.0, 1.0 - t**2))
    nodes = np.empty((len(t) * len(sub_nodes), d))
    weights = np.empty(len(t) * len(sub_nodes))
    k = 0
    for ti, si, wi in zip(t, s, tw):
        m = len(sub_nodes)
        nodes[k : k + m, :-1] = si * sub_nodes
        nodes[k : k + m, -1] = ti
        weights[k : k + m] = wi * sub_w
        k += m
    return nodes, weights


def _block_symmetrize(dims: Dimensions | None, nodes: np.ndarray,
                      rng, n_rot: int = 8):
    """Antipodal copies plus shared Haar block rotations.

    Returns (nodes, cluster) where cluster counts copies per base node.
    """
    copies = [nodes, -nodes]
    if dims is not None and dims.kappa >= 2 and n_rot > 0:
        rotated = []
        for _ in range(n_rot):
            sigma = haar_sample(dims.kappa, rng)
            for c in (nodes, -nodes):
                rotated.append(block_rotate(dims, sigma, c))
        copies.extend(rotated)
    cluster = len(copies)
    stacked = np.stack(copies, axis=1).reshape(-1, nodes.shape[1])
    return stacked, cluster


def sphere_quadrature(d: int, size: int, method: str = "symmetrized_mc",
                      rng=0, dims: Dimensions | None = None) -> QuadratureRule:
    """Quadrature rule on S^{d-1} with surface-measure normalization.

    dims, when given with d == dims.ambient, enables block-rotation
    symmetrization for the symmetrized_mc method.
    """
    if d < 1 or size < 1:
        raise DimensionMismatch("d and size must be >= 1")
    rng = as_rng(rng)
    area = surface_area(d)
    if d == 1:
        return QuadratureRule(1, np.array([[1.0], [-1.0]]), np.array([1.0, 1.0]),
                              method, cluster=2)
    if method == "monte_carlo":
        nodes = random_unit(d, rng, size)
        return QuadratureRule(d, nodes, np.full(size, area / size), method)
    if method == "symmetrized_mc":
        use_dims = dims if (dims is not None and d == dims.ambient) else None
        n_rot = 8 if (use_dims is not None and use_dims.kappa >= 2) else 0
        per = 2 * (1 + n_rot)
        base = max(1, int(round(size / per)))
        nodes = random_unit(d, rng, base)
        nodes, cluster = _block_symmetrize(use_dims, nodes, rng, n_rot)
        m = nodes.shape[0]
        return QuadratureRule(d, nodes, np.full(m, area / m), method, cluster=cluster)
    if method == "product_gauss":
        if d > 8:
            raise UnsupportedDimension("product_gauss is limited to d <= 8")
        nodes, weights = _product_gauss_nodes(d, size)
        nodes = nodes / np.linalg.norm(nodes, axis=1, keepdims=True)
        return QuadratureRule(d, nodes, weights, method)
    raise DimensionMismatch(f"unknown quadrature method {method!r}")


def subsphere_quadrature(frame: SubsphereFrame, which: str, size: int,
                         method: str = "symmetrized_mc", rng=0) -> QuadratureRule:
    """Rule on the unit sphere of H_xi (which='H') or H_xi_perp ('Hperp'),
    embedded in the ambient space.

    Both subspaces are stable under block rotations, so the symmetrized
    method may rotate embedded nodes without leaving the sub-sphere.
    """
    if which == "H":
        basis = frame.basis_h
    elif which == "Hperp":
        basis = frame.basis_perp
    else:
        raise DimensionMismatch("which must be 'H' or 'Hperp'")
    rng = as_rng(rng)
    m = basis.shape[0]
    area = surface_area(m)
    dims = frame.dims
    if m == 1:
        nodes = np.vstack([basis[0], -basis[0]])
        return QuadratureRule(1, nodes, np.array([1.0, 1.0]), method, cluster=2)
    if method == "product_gauss":
        if m > 8:
            raise UnsupportedDimension("product_gauss is limited to d <= 8")
        coords, weights = _product_gauss_nodes(m, size)
        nodes = coords @ basis
        nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
        return QuadratureRule(m, nodes, weights, method)
    if method == "monte_carlo":
        coords = random_unit(m, rng, size)
        nodes = coords @ basis
        return QuadratureRule(m, nodes, np.full(size, area / size), method)
    if method == "symmetrized_mc":
        n_rot = 8 if dims.kappa >= 2 else 0
        per = 2 * (1 + n_rot)
        base = max(1, int(round(size / per)))
        coords = random_unit(m, rng, base)
        nodes = coords @ basis
        nodes, cluster = _block_symmetrize(dims, nodes, rng, n_rot)
        nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
        count = nodes.shape[0]
        return QuadratureRule(m, nodes, np.full(count, area / count), method,
                              cluster=cluster)
    raise DimensionMismatch(f"unknown quadrature method {method!r}")


def _values_on(rule: QuadratureRule, f) -> np.ndarray:
    if callable(f):
        vals = np.asarray(f(rule.nodes), dtype=float)
    else:
        vals = np.asarray(f, dtype=float)
    if vals.shape != (rule.nodes.shape[0],):
        raise DimensionMismatch("integrand values do not match node count")
    return vals


def integrate(rule: QuadratureRule, f) -> float:
    """Sum of w_i f(node_i); f may be a vectorized callable or an array."""
    vals = _values_on(rule, f)
    return float(np.sum(rule.weights * vals))


def integrate_with_error(rule: QuadratureRule, f) -> tuple[float, float]:
    """Integral plus a standard error from per-cluster aggregation.

    Symmetrized rules group each base node with its reflected and
    rotated copies; treating cluster sums as independent draws gives an
    honest Monte Carlo error estimate.  Deterministic rules report 0.
    """
    vals = _values_on(rule, f)
    contrib = rule.weights * vals
    total = float(np.sum(contrib))
    if rule.method == "product_gauss":
        return total, 0.0
    c = max(1, rule.cluster)
    m = len(contrib)
    b = m // c
    if b < 2:
        return total, 0.0
    sums = contrib[: b * c].reshape(b, c).sum(axis=1)
    stderr = float(np.std(sums, ddof=1) * math.sqrt(b))
    return total, stderr
