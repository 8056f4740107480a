"""Sub-sphere Radon transform, section volumes, and the discretized
operator with a regularized inverse.

The transform of an even balanced function f at a unit direction xi is
the integral of f over the great sub-sphere S^{kn-1} cap H_xi.  Section
volumes follow from the polar formula

    |K cap H_xi| = (kn - k)^{-1} * integral of rho_K^{kn-k} over that
    sub-sphere,

and the radius of the intersection body is

    rho(xi) = (k |K cap H_xi| / |S^{k-1}|)^{1/k}.

The discretized operator acts on values sampled at canonical orbit
representatives: column j holds the transform of the j-th
partition-of-unity bump, so the matrix applied to the constant vector 1
reproduces |S^{kn-k-1}| exactly.  Degree-homogeneous Fourier data is
recovered through the transform:

* degree -(kn-k):  (f r^{-kn+k})^ on the sphere equals
  (2 pi)^k / |S^{k-1}| times the transform of f (direct quadrature);
* degree -k: (f r^{-k})^ equals |S^{k-1}| (2 pi)^{kn-k} times the
  regularized inverse transform of f (sampled on the grid).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .bodies import KernelInterp, MeasureDensity, StarBody, radial_primitive
from .errors import DimensionMismatch, NotUnit, SingularOperator, StepTooSmall
from .sphere import (
    SubsphereFrame,
    ball_volume,
    integrate,
    integrate_with_error,
    orbit_subspace,
    sphere_quadrature,
    subsphere_quadrature,
    surface_area,
)
from .symmetry import Dimensions, as_rng, canonicalize, derive_seed, random_unit

__all__ = [
    "radon_transform",
    "section_volume",
    "section_volume_with_error",
    "intersection_radius",
    "measure_section",
    "measure_volume",
    "measure_volume_with_error",
    "OrbitGrid",
    "make_orbit_grid",
    "RadonOperator",
    "build_radon_operator",
    "radon_invert",
    "fourier_deg_minus_nk",
    "fourier_deg_minus_k",
    "section_profile",
    "measure_section_profile",
    "refined_max",
    "ParallelSectionFunction",
    "parallel_section",
    "laplacian_at_origin",
    "cache_dir",
]


def _check_unit(xi, ambient):
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (ambient,):
        raise DimensionMismatch(f"direction length {xi.shape} != ambient {ambient}")
    if abs(np.linalg.norm(xi) - 1.0) > 1e-8:
        raise NotUnit(f"|xi| = {np.linalg.norm(xi):.6e}")
    return xi


def radon_transform(dims: Dimensions, f, xi, size: int = 4000,
                    method: str = "symmetrized_mc", rng=0) -> float:
    """Quadrature of f over the sub-sphere S^{kn-1} cap H_xi."""
    xi = _check_unit(xi, dims.ambient)
    frame = orbit_subspace(dims, xi)
    rule = subsphere_quadrature(frame, "H", size, method, rng)
    return integrate(rule, f)


def section_volume(body: StarBody, xi, size: int = 4000, rng=0,
                   method: str = "symmetrized_mc") -> float:
    return section_volume_with_error(body, xi, size, rng, method)[0]


def section_volume_with_error(body: StarBody, xi, size: int = 4000, rng=0,
                              method: str = "symmetrized_mc") -> tuple[float, float]:
    """(kn-k)-volume of the central section, with Monte Carlo stderr."""
    dims = body.dims
    xi = _check_unit(xi, dims.ambient)
    frame = orbit_subspace(dims, xi)
    rule = subsphere_quadrature(frame, "H", size, method, rng)
    p = dims.ambient - dims.kappa
    val, err = integrate_with_error(
        rule, lambda pts: np.asarray(body.radial(pts), dtype=float) ** p
    )
    return val / p, err / p


def intersection_radius(body: StarBody, xi, size: int = 4000, rng=0) -> float:
    """Radial value of the intersection body: the (k-1)-sphere of this
    radius in the orbit span bounds a disk of volume |K cap H_xi|.

    With this normalization the value for kappa = 1 is half the
    classical one (the 0-sphere has measure 2)."""
    k = body.dims.kappa
    sec = section_volume(body, xi, size, rng)
    return (k * sec / surface_area(k)) ** (1.0 / k)


def measure_section(body: StarBody, g: MeasureDensity, xi, size: int = 4000,
                    rng=0, method: str = "symmetrized_mc") -> float:
    """gamma(K cap H_xi) for the measure with density g."""
    dims = body.dims
    xi = _check_unit(xi, dims.ambient)
    frame = orbit_subspace(dims, xi)
    rule = subsphere_quadrature(frame, "H", size, method, rng)
    p = dims.ambient - dims.kappa

    def integrand(pts):
        rho = np.asarray(body.radial(pts), dtype=float)
        return radial_primitive(g, pts, rho, p)

    return integrate(rule, integrand)


def measure_volume(body: StarBody, f: MeasureDensity, rule=None,
                   size: int = 20000, rng=0) -> float:
    return measure_volume_with_error(body, f, rule, size, rng)[0]


def measure_volume_with_error(body: StarBody, f: MeasureDensity, rule=None,
                              size: int = 20000, rng=0) -> tuple[float, float]:
    """mu(K) for the measure with density f, with stderr."""
    dims = body.dims
    if rule is None:
        rule = sphere_quadrature(dims.ambient, size, "symmetrized_mc", rng, dims)
    p = dims.ambient

    def integrand(pts):
        rho = np.asarray(body.radial(pts), dtype=float)
        return radial_primitive(f, pts, rho, p)

    return integrate_with_error(rule, integrand)


# ---------------------------------------------------------------------------
# Canonical orbit grids and the discretized operator.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrbitGrid:
    """Canonical orbit representatives with surface-measure weights."""

    dims: Dimensions
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    axes: np.ndarray | None = field(repr=False, default=None)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]


def _axis_anchors(n: int, signed: bool) -> np.ndarray:
    """m-of-n equal-weight directions: every support and (optionally)
    every sign pattern with positive leading entry.

    Representing measures of cube-symmetric bodies concentrate on these
    orbits; a pure Monte Carlo grid leaves them unresolved.
    """
    from itertools import combinations, product
    rows = []
    for m in range(1, n + 1):
        for support in combinations(range(n), m):
            signs = (product((1.0, -1.0), repeat=m - 1) if signed
                     else [(1.0,) * (m - 1)])
            for tail in signs:
                v = np.zeros(n)
                v[list(support)] = np.array((1.0,) + tail) / math.sqrt(m)
                rows.append(v)
    return np.array(rows)


def make_orbit_grid(dims: Dimensions, size: int, rng=0) -> OrbitGrid:
    """Sample orbit representatives: structured axis anchors first, the
    rest uniform.

    For kappa <= 2 nodes are canonicalized sphere points.  For kappa >= 3
    only directions with parallel blocks carry sub-sphere frames, so
    representatives w (x) e_1 are indexed by axes w.
    """
    rng = as_rng(rng)
    area = surface_area(dims.ambient)
    if dims.kappa <= 2:
        anchors = (_axis_anchors(dims.ambient, signed=True) if dims.kappa == 1
                   else _embed_blocks(dims, _axis_anchors(dims.n, signed=False)))
        anchors = anchors[: max(size // 4, 1)]
        raw = random_unit(dims.ambient, rng, max(size - len(anchors), 1))
        nodes = np.stack([canonicalize(dims, x)
                          for x in np.vstack([anchors, raw])[:size]])
        axes = None
    else:
        anchors = _axis_anchors(dims.n, signed=True)[: max(size // 4, 1)]
        raw = random_unit(dims.n, rng, max(size - len(anchors), 1))
        axes = np.vstack([anchors, raw])[:size]
        idx = np.argmax(np.abs(axes) > 1e-12, axis=1)
        sign = np.sign(axes[np.arange(size), idx])
        sign[sign == 0] = 1.0
        axes = axes * sign[:, None]
        nodes = np.zeros((size, dims.ambient))
        nodes[:, 0 :: dims.kappa] = axes  # w (x) e_1 layout
    weights = np.full(size, area / size)
    return OrbitGrid(dims, nodes, weights, axes)


def _embed_blocks(dims: Dimensions, profiles: np.ndarray) -> np.ndarray:
    out = np.zeros((profiles.shape[0], dims.ambient))
    out[:, 0 :: dims.kappa] = profiles
    return out


class RadonOperator:
    """Dense discretization of the sub-sphere transform on an orbit grid.

    matrix @ values approximates the transform of the kernel-collocation
    interpolant of the grid values, evaluated back on the grid.  The
    inverse is a Tikhonov-filtered SVD solve.
    """

    def __init__(self, grid: OrbitGrid, matrix: np.ndarray, interp: KernelInterp,
                 basis_h: np.ndarray, basis_perp: np.ndarray, reg: float,
                 sub_size: int, seed: int, cache_stem: str | None = None,
                 row_scale: np.ndarray | None = None):
        self.dims = grid.dims
        self.grid = grid
        self.matrix = matrix
        self.interp = interp
        self.basis_h = basis_h
        self.basis_perp = basis_perp
        self.reg = float(reg)
        self.sub_size = int(sub_size)
        self.seed = int(seed)
        self.cache_stem = cache_stem
        self.row_scale = (np.ones(grid.size) if row_scale is None
                          else np.asarray(row_scale, dtype=float))
        self._svd = None
        self.noise: float | None = None  # set by membership calibration

    # -- linear actions --------------------------------------------------
    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights

    @property
    def size(self) -> int:
        return self.grid.size

    def node_values(self, fn) -> np.ndarray:
        return np.asarray(fn(self.nodes), dtype=float)

    def apply(self, f) -> np.ndarray:
        v = self.node_values(f) if callable(f) else np.asarray(f, dtype=float)
        if v.shape != (self.size,):
            raise DimensionMismatch("grid function has wrong length")
        return self.matrix @ v

    def svd(self):
        if self._svd is None:
            u, s, vt = np.linalg.svd(self.matrix, full_matrices=False)
            if not np.all(np.isfinite(s)):
                raise SingularOperator("operator has non-finite singular values")
            self._svd = (u, s, vt)
        return self._svd

    def invert(self, g, reg: float | None = None) -> np.ndarray:
        g = self.node_values(g) if callable(g) else np.asarray(g, dtype=float)
        if g.shape != (self.size,):
            raise DimensionMismatch("grid function has wrong length")
        u, s, vt = self.svd()
        lam = (self.reg if reg is None else float(reg)) * s[0]
        if lam <= 0:
            if s[-1] <= 1e-12 * s[0]:
                raise SingularOperator(
                    f"condition number {s[0] / max(s[-1], 1e-300):.2e} with no "
                    "regularization"
                )
            gain = 1.0 / s
        else:
            gain = s / (s**2 + lam**2)
        if not np.all(np.isfinite(gain)):
            raise SingularOperator("regularized gains are not finite")
        return vt.T @ (gain * (u.T @ g))

    def interpolate(self, values) -> "np.ufunc":
        """Smooth balanced extension of grid values to arbitrary points."""
        return self.interp(np.asarray(values, dtype=float))

    def bump_columns(self, ynodes: np.ndarray,
                     yaxes: np.ndarray | None = None,
                     width: float = 1.0) -> np.ndarray:
        """Transforms of unit-weight kernel bumps centered off-grid.

        Column j evaluates, at every grid node, the transform of the
        interpolation bump sitting at ynodes[j]; the same row rescaling
        as the assembled matrix is applied, so these columns extend the
        operator's own atom family to arbitrary centers.  width < 1
        narrows the bumps below the grid's native bandwidth, probing
        measures sharper than the assembled family can represent.
        """
        ynodes = np.atleast_2d(np.asarray(ynodes, dtype=float))
        if self.dims.kappa >= 3 and yaxes is None:
            yaxes = ynodes[:, 0 :: self.dims.kappa]
        tau = _pair_similarity(self.dims, self.nodes, self.grid.axes,
                               ynodes, yaxes)
        root = np.sqrt(np.clip(1.0 - tau**2, 0.0, 1.0))
        sin_phi, wq = _beta_rule(self.dims, int(self.sub_size / width))
        h = self.interp.h * float(width)
        cols = np.zeros_like(tau)
        for q in range(sin_phi.size):
            cols += wq[q] * self.interp.kernel_raw(root * sin_phi[q], h)
        cols *= surface_area(self.dims.ambient - self.dims.kappa)
        return cols * self.row_scale[:, None]

    # -- diagnostics ------------------------------------------------------
    def constant_defect(self) -> float:
        target = surface_area(self.dims.ambient - self.dims.kappa)
        row = self.matrix @ np.ones(self.size)
        return float(np.max(np.abs(row / target - 1.0)))

    def symmetry_defect(self) -> float:
        w = self.weights[:, None]
        wa = w * self.matrix
        return float(np.linalg.norm(wa - wa.T) / np.linalg.norm(wa))

    def frame(self, i: int) -> SubsphereFrame:
        return SubsphereFrame(self.dims, self.nodes[i], self.basis_perp[i],
                              self.basis_h[i])


def cache_dir() -> str:
    root = os.environ.get("KBODY_CACHE_DIR")
    if not root:
        root = os.path.join(os.path.expanduser("~"), ".cache", "kbody")
    os.makedirs(root, exist_ok=True)
    return root


def _operator_stem(dims, size, sub_size, seed, reg, kernel, bw):
    tag = (f"radon3_k{dims.kappa}_n{dims.n}_N{size}_m{sub_size}_s{seed}"
           f"_r{reg:g}_{kernel}_b{bw:g}")
    return os.path.join(cache_dir(), tag)


def _pair_similarity(dims: Dimensions, nodes, axes, nodes2=None, axes2=None):
    if nodes2 is None:
        nodes2, axes2 = nodes, axes
    if dims.kappa >= 3:
        t = np.abs(axes @ axes2.T)
    elif dims.kappa == 2:
        z = nodes[:, 0::2] + 1j * nodes[:, 1::2]
        z2 = nodes2[:, 0::2] + 1j * nodes2[:, 1::2]
        t = np.abs(z @ z2.conj().T)
    else:
        t = np.abs(nodes @ nodes2.T)
    return np.clip(t, 0.0, 1.0)


def _beta_rule(dims: Dimensions, sub_size: int):
    """phi-rule realizing the Beta(kappa/2, (kappa n - 2 kappa)/2) law of
    the squared sub-sphere similarity (n = 2: the law is degenerate)."""
    kap = dims.kappa
    sub_dim = dims.ambient - kap
    if sub_dim == kap:
        return np.ones(1), np.ones(1)
    gl = int(min(800, max(32, sub_size // 10)))
    x, w = np.polynomial.legendre.leggauss(gl)
    phi = (x + 1.0) * (np.pi / 4.0)
    sin_phi = np.sin(phi)
    wq = w * sin_phi ** (kap - 1) * np.cos(phi) ** (sub_dim - kap - 1)
    return sin_phi, wq / wq.sum()


def build_radon_operator(dims: Dimensions, grid_size: int = 800,
                         reg: float = 1e-3, sub_size: int = 1600,
                         seed: int = 0, use_cache: bool = True,
                         kernel: str = "gauss",
                         bandwidth_factor: float = 1.0) -> RadonOperator:
    """Assemble (or load) the dense operator on a fresh orbit grid.

    Entry (i, j) integrates node j's kernel bump over the sub-sphere of
    node i.  For x uniform on that sub-sphere the squared similarity to
    node j splits as (1 - tau_ij^2) Y with Y ~ Beta(kappa/2,
    (kappa n - 2 kappa)/2) and tau_ij the node-to-node similarity, so
    every entry collapses to the same 1-D Gauss rule and no sampling
    enters the matrix.  Right-multiplying by the inverse collocation
    matrix maps node values to bump weights; rows are then rescaled so
    the constant function is transformed exactly.  sub_size sets the
    depth of the reduced rule (the default is already converged).
    """
    stem = _operator_stem(dims, grid_size, sub_size, seed, reg, kernel,
                          bandwidth_factor)
    path = stem + ".npz"
    if use_cache and os.path.exists(path):
        op = _load_operator(dims, path, reg, sub_size, seed, stem)
        if op is not None:
            return op
    grid = make_orbit_grid(dims, grid_size, as_rng(seed))
    interp = KernelInterp(dims, grid.nodes, grid.weights, grid.axes,
                          kernel=kernel)
    if bandwidth_factor != 1.0:
        interp.h *= float(bandwidth_factor)
    n = grid.size
    amb = dims.ambient
    kap = dims.kappa
    sub_dim = amb - kap
    basis_h = np.empty((n, sub_dim, amb))
    basis_perp = np.empty((n, kap, amb))
    for i in range(n):
        fr = orbit_subspace(dims, grid.nodes[i])
        basis_h[i] = fr.basis_h
        basis_perp[i] = fr.basis_perp
    area = surface_area(sub_dim)
    tau = _pair_similarity(dims, grid.nodes, grid.axes)
    root = np.sqrt(np.clip(1.0 - tau**2, 0.0, 1.0))
    sin_phi, wq = _beta_rule(dims, sub_size)
    quad = np.zeros((n, n))
    for q in range(sin_phi.size):
        quad += wq[q] * interp.kernel_raw(root * sin_phi[q])
    quad *= area
    colloc = interp.kernel_raw(tau)
    try:
        matrix = np.linalg.solve(colloc.T, quad.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularOperator(f"collocation matrix is singular: {exc}")
    rs = matrix.sum(axis=1)
    if np.any(rs <= 0) or not np.all(np.isfinite(rs)):
        raise SingularOperator("operator rows lost positivity")
    matrix *= (area / rs)[:, None]
    op = RadonOperator(grid, matrix, interp, basis_h, basis_perp, reg,
                       sub_size, seed, stem, row_scale=area / rs)
    if use_cache:
        _save_operator(op, path)
    return op


def _save_operator(op: RadonOperator, path: str) -> None:
    payload = {
        "nodes": op.grid.nodes,
        "weights": op.grid.weights,
        "matrix": op.matrix,
        "basis_h": op.basis_h,
        "basis_perp": op.basis_perp,
        "bandwidth": np.array([op.interp.h]),
        "kernel": np.array([op.interp.kernel]),
        "row_scale": op.row_scale,
    }
    if op.grid.axes is not None:
        payload["axes"] = op.grid.axes
    tmp = path + ".tmp.npz"
    np.savez_compressed(tmp, **payload)
    os.replace(tmp, path)


def _load_operator(dims, path, reg, sub_size, seed, stem):
    try:
        data = np.load(path)
        grid = OrbitGrid(dims, data["nodes"], data["weights"],
                         data["axes"] if "axes" in data else None)
        interp = KernelInterp(dims, grid.nodes, grid.weights, grid.axes,
                              bandwidth=float(data["bandwidth"][0]),
                              kernel=str(data["kernel"][0])
                              if "kernel" in data else "quartic")
        if "row_scale" not in data:
            return None  # stale: rebuilt to pick up bump-column scaling
        return RadonOperator(grid, data["matrix"], interp, data["basis_h"],
                             data["basis_perp"], reg, sub_size, seed, stem,
                             row_scale=data["row_scale"])
    except Exception:
        return None


def radon_invert(op: RadonOperator, g, reg: float | None = None) -> np.ndarray:
    """Tikhonov-regularized solve of (matrix) f = g on the grid."""
    return op.invert(g, reg)


def fourier_deg_minus_nk(dims: Dimensions, f, xi, size: int = 4000, rng=0) -> float:
    """Sphere restriction of the Fourier transform of f r^{-kn+k}."""
    c = (2.0 * math.pi) ** dims.kappa / surface_area(dims.kappa)
    return c * radon_transform(dims, f, xi, size, rng=rng)


def fourier_deg_minus_k(op: RadonOperator, f, reg: float | None = None) -> np.ndarray:
    """Grid values of the Fourier transform of f r^{-k}, divided by
    r^{-kn+k}; the sign pattern is the positive-definiteness diagnostic."""
    dims = op.dims
    c = surface_area(dims.kappa) * (2.0 * math.pi) ** (dims.ambient - dims.kappa)
    return c * op.invert(f, reg)


# ---------------------------------------------------------------------------
# Independent section profiles over operator grids (never through the
# assembled matrix; used for honest checks and inequality reports).
# ---------------------------------------------------------------------------

def _profile_clouds(op: RadonOperator, size: int, seed: int):
    """Yield (slice of node indices, points (b, m, ambient)) chunks.

    The same subspace coordinates are reused for every node, so two
    bodies profiled with equal (op, size, seed) see identical clouds and
    their difference enjoys common-random-number cancellation.
    """
    dims = op.dims
    sub_dim = dims.ambient - dims.kappa
    half = max(8, size // 2)
    coords = random_unit(sub_dim, as_rng(derive_seed(seed, "profile")), half)
    coords = np.vstack([coords, -coords])
    n = op.size
    chunk = max(1, int(4.0e7 // max(1, coords.shape[0] * dims.ambient)))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        pts = np.einsum("ms,bsa->bma", coords, op.basis_h[lo:hi])
        yield slice(lo, hi), pts


def section_profile(body: StarBody, op: RadonOperator, size: int = 1536,
                    seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """|K cap H_xi| at every grid node, with per-node stderr."""
    dims = op.dims
    p = dims.ambient - dims.kappa
    area = surface_area(p)
    vals = np.empty(op.size)
    errs = np.empty(op.size)
    for sl, pts in _profile_clouds(op, size, seed):
        b, m, amb = pts.shape
        rho = np.asarray(body.radial(pts.reshape(-1, amb)), dtype=float)
        rp = rho.reshape(b, m) ** p
        mean = rp.mean(axis=1)
        vals[sl] = area * mean / p
        pair = 0.5 * (rp[:, : m // 2] + rp[:, m // 2 :])
        errs[sl] = area * pair.std(axis=1, ddof=1) / math.sqrt(m // 2) / p
    return vals, errs


def measure_section_profile(body: StarBody, g: MeasureDensity, op: RadonOperator,
                            size: int = 1536, seed: int = 0
                            ) -> tuple[np.ndarray, np.ndarray]:
    """gamma(K cap H_xi) at every grid node, with per-node stderr."""
    dims = op.dims
    p = dims.ambient - dims.kappa
    area = surface_area(p)
    vals = np.empty(op.size)
    errs = np.empty(op.size)
    for sl, pts in _profile_clouds(op, size, seed):
        b, m, amb = pts.shape
        flat = pts.reshape(-1, amb)
        rho = np.asarray(body.radial(flat), dtype=float)
        contrib = radial_primitive(g, flat, rho, p).reshape(b, m)
        mean = contrib.mean(axis=1)
        vals[sl] = area * mean
        pair = 0.5 * (contrib[:, : m // 2] + contrib[:, m // 2 :])
        errs[sl] = area * pair.std(axis=1, ddof=1) / math.sqrt(m // 2)
    return vals, errs


def refined_max(op: RadonOperator, values: np.ndarray, fun, steps: int = 3
                ) -> tuple[float, np.ndarray]:
    """Grid max of a section functional plus golden-section refinement
    along the arc from the argmax node towards its best neighbor.

    fun evaluates the functional at an arbitrary unit direction (for
    kappa >= 3 the arc is traced in axis space, staying on the stratum
    of directions with parallel blocks).
    """
    values = np.asarray(values, dtype=float)
    i0 = int(np.argmax(values))
    dims = op.dims
    if dims.kappa >= 3:
        pts = op.grid.axes
    else:
        pts = op.nodes
    p0 = pts[i0]
    sim = np.abs(pts @ p0)
    sim[i0] = -np.inf
    j0 = int(np.argmax(sim))
    p1 = pts[j0] if pts[j0] @ p0 >= 0 else -pts[j0]

    def embed(w):
        w = w / np.linalg.norm(w)
        if dims.kappa >= 3:
            node = np.zeros(dims.ambient)
            node[0 :: dims.kappa] = w
            return node
        return w

    def eval_at(t):
        return float(fun(embed((1.0 - t) * p0 + t * p1)))

    best_val = float(values[i0])
    best_dir = embed(p0)
    lo, hi = -1.0, 1.0
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c1 = b - g * (b - a)
    c2 = a + g * (b - a)
    f1, f2 = eval_at(c1), eval_at(c2)
    for _ in range(max(0, steps)):
        if f1 < f2:
            a, c1, f1 = c1, c2, f2
            c2 = a + g * (b - a)
            f2 = eval_at(c2)
        else:
            b, c2, f2 = c2, c1, f1
            c1 = b - g * (b - a)
            f1 = eval_at(c1)
    for t, fv in ((c1, f1), (c2, f2)):
        if fv > best_val:
            best_val = fv
            best_dir = embed((1.0 - t) * p0 + t * p1)
    return best_val, best_dir


# ---------------------------------------------------------------------------
# Parallel section function and the Laplacian diagnostic.
# ---------------------------------------------------------------------------

class ParallelSectionFunction:
    """u in R^k -> volume of K cap (H_xi + sum u_i e_i).

    Volumes come from rejection sampling inside the bounding ball of the
    shifted slice; one fixed sample cloud is shared across evaluations
    so finite differences benefit from common random numbers.
    """

    def __init__(self, body: StarBody, frame: SubsphereFrame,
                 size: int = 100000, rng=0):
        self.body = body
        self.frame = frame
        self.dims = body.dims
        d = self.dims.ambient - self.dims.kappa
        rng = as_rng(rng)
        self._dirs = random_unit(d, rng, int(size))
        self._radii = rng.uniform(0.0, 1.0, int(size)) ** (1.0 / d)
        self._cloud = self._dirs * self._radii[:, None]
        self._rmax = body.radial_bounds()[1]

    def __call__(self, u) -> float:
        return self.with_error(u)[0]

    def with_error(self, u) -> tuple[float, float]:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.shape[0] != self.dims.kappa:
            raise DimensionMismatch("offset must have length kappa")
        d = self.dims.ambient - self.dims.kappa
        shift = u @ self.frame.basis_perp
        r2 = self._rmax**2 - float(u @ u)
        if r2 <= 0.0:
            return 0.0, 0.0
        r = math.sqrt(r2)
        pts = (r * self._cloud) @ self.frame.basis_h + shift
        norms = np.asarray(self.body.norm(pts), dtype=float)
        inside = norms <= 1.0
        p = float(np.mean(inside))
        vol_ball = ball_volume(d) * r**d
        err = vol_ball * math.sqrt(max(p * (1.0 - p), 0.0) / inside.size)
        return vol_ball * p, err

    def _quarter_values(self, u) -> np.ndarray:
        """Four independent sub-cloud estimates, for error propagation."""
        u = np.asarray(u, dtype=float).reshape(-1)
        d = self.dims.ambient - self.dims.kappa
        shift = u @ self.frame.basis_perp
        r2 = self._rmax**2 - float(u @ u)
        if r2 <= 0.0:
            return np.zeros(4)
        r = math.sqrt(r2)
        pts = (r * self._cloud) @ self.frame.basis_h + shift
        norms = np.asarray(self.body.norm(pts), dtype=float)
        inside = (norms <= 1.0).astype(float)
        m = (inside.size // 4) * 4
        quarters = inside[:m].reshape(4, -1).mean(axis=1)
        return ball_volume(d) * r**d * quarters


def parallel_section(body: StarBody, frame: SubsphereFrame, u,
                     size: int = 100000, rng=0) -> float:
    return ParallelSectionFunction(body, frame, size, rng)(u)


def _laplacian_once(psf: ParallelSectionFunction, h: float) -> tuple[float, float]:
    k = psf.dims.kappa
    center = psf._quarter_values(np.zeros(k))
    acc = np.zeros(4)
    for i in range(k):
        e = np.zeros(k)
        e[i] = h
        acc += psf._quarter_values(e) + psf._quarter_values(-e) - 2.0 * center
    per_quarter = acc / h**2
    est = float(np.mean(per_quarter))
    err = float(np.std(per_quarter, ddof=1) / math.sqrt(4.0))
    return est, err


def laplacian_at_origin(body: StarBody, frame: SubsphereFrame,
                        h: float | None = None, size: int = 100000, rng=0,
                        richardson: bool = True) -> tuple[float, float]:
    """Central-difference Laplacian of the parallel section function at
    the origin, with a noise estimate.

    Uses a shared sample cloud (common random numbers), a default step
    of 0.05 times the smallest radius, and one Richardson pass.  Raises
    StepTooSmall when the noise both dominates the estimate and is
    large on the natural scale A(0)/h^2.
    """
    rmin = body.radial_bounds()[0]
    if h is None:
        h = 0.05 * rmin
    if h <= 0 or h >= rmin:
        raise StepTooSmall(f"step {h} outside (0, {rmin})")
    psf = ParallelSectionFunction(body, frame, size, rng)
    d1, e1 = _laplacian_once(psf, h)
    if richardson:
        d2, e2 = _laplacian_once(psf, h / 2.0)
        est = (4.0 * d2 - d1) / 3.0
        err = math.sqrt((4.0 * e2 / 3.0) ** 2 + (e1 / 3.0) ** 2)
    else:
        est, err = d1, e1
    a0 = psf(np.zeros(psf.dims.kappa))
    scale = 2.0 * psf.dims.kappa * max(a0, 1e-300) / h**2
    if err > abs(est) and err > 0.02 * scale:
        raise StepTooSmall(
            f"finite-difference noise {err:.3e} exceeds the estimate "
            f"{est:.3e}; increase the sample size or the step"
        )
    return est, err
