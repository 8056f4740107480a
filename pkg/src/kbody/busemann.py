"""Boundary-curve diagnostics for sections through balanced subspaces.

For a balanced subspace S of dimension k(n-2) and a unit u
perpendicular to S, the slice subspace S_u = span{S, orbit span of u}
has dimension k(n-1) and

    r(u) = |K cap S_u|^{1/k}

behaves like the radial function of a convex body when K is convex:
on every admissible triple u1, u2, u3 = (u1+u2)/|u1+u2|,

    |u1 + u2| / r(u3) <= 1/r(u1) + 1/r(u2).

The module samples these triples, certifies convexity of constructed
intersection bodies, provides the 1-D three-function inequality oracle
used by the same circle of ideas, and estimates how far a convex body
is from the ball after second-moment normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate as _sintegrate

from .bodies import StarBody, is_convex_sampled
from .errors import (
    BadSubspace,
    DimensionMismatch,
    HypothesisViolated,
    NotUnit,
)
from .ibody import intersection_body_of
from .sphere import (
    ball_volume,
    orbit_subspace,
    sphere_quadrature,
    surface_area,
)
from .symmetry import (
    Dimensions,
    as_rng,
    block_rotate,
    derive_seed,
    haar_sample,
    random_unit,
)

__all__ = [
    "BalancedSubspace",
    "BusemannCurveProbe",
    "TriangleCheck",
    "ConvexityReport",
    "balanced_subspace_sample",
    "busemann_curve",
    "curve_probe",
    "busemann_check",
    "intersection_convexity_check",
    "ball_inequality_oracle",
    "ball_distance_estimate",
]


@dataclass(frozen=True)
class BalancedSubspace:
    """Orthonormal basis of a balanced subspace plus the two leftover
    block axes spanning its orthogonal complement."""

    dims: Dimensions
    basis: np.ndarray   # (k(n-2), ambient)
    wperp: np.ndarray   # (2, n): axes w with S-perp = span{w (x) R^k}


def _block_row(dims: Dimensions, w: np.ndarray, j: int) -> np.ndarray:
    row = np.zeros(dims.ambient)
    row[j :: dims.kappa] = w
    return row


def balanced_subspace_sample(dims: Dimensions, rng=0) -> BalancedSubspace:
    """Random balanced k(n-2)-dimensional subspace: a Haar rotation of
    the first n-2 coordinate blocks."""
    if dims.n < 3:
        raise DimensionMismatch("need n >= 3 for a non-trivial subspace")
    rng = as_rng(rng)
    gauss = rng.normal(size=(dims.n, dims.n))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    rows = [_block_row(dims, q[i], j)
            for i in range(dims.n - 2) for j in range(dims.kappa)]
    return BalancedSubspace(dims, np.array(rows), q[dims.n - 2 :].copy())


def _check_subspace(dims: Dimensions, S: np.ndarray, rng=0) -> None:
    S = np.atleast_2d(S)
    if S.shape[1] != dims.ambient:
        raise DimensionMismatch("subspace basis has wrong ambient dimension")
    gram = S @ S.T
    if np.max(np.abs(gram - np.eye(S.shape[0]))) > 1e-8:
        raise BadSubspace("basis rows are not orthonormal")
    rng = as_rng(rng)
    for _ in range(4):
        sigma = haar_sample(dims.kappa, rng)
        rot = block_rotate(dims, sigma, S)
        resid = rot - (rot @ S.T) @ S
        if np.max(np.abs(resid)) > 1e-6:
            raise BadSubspace("subspace is not invariant under block rotations")


def _slice_basis(dims: Dimensions, S: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Orthonormal basis of span{S, orbit span of u}."""
    perp = orbit_subspace(dims, u).basis_perp
    basis = np.vstack([S, perp])
    gram = basis @ basis.T
    if np.max(np.abs(gram - np.eye(basis.shape[0]))) > 1e-8:
        raise BadSubspace("orbit span of u overlaps the subspace")
    return basis


def _sample_u(dims: Dimensions, wperp: np.ndarray, rng,
              v: np.ndarray | None = None) -> np.ndarray:
    """Unit vector in S-perp; for kappa >= 3 restricted to the
    block-parallel family (c1 w1 + c2 w2) (x) v so orbit spans exist."""
    if dims.kappa >= 3:
        c = random_unit(2, rng)
        if v is None:
            v = random_unit(dims.kappa, rng)
        w = c[0] * wperp[0] + c[1] * wperp[1]
        u = np.zeros(dims.ambient)
        for j in range(dims.kappa):
            u += v[j] * _block_row(dims, w, j)
        return u
    basis = np.array([_block_row(dims, wperp[i], j)
                      for i in range(2) for j in range(dims.kappa)])
    return random_unit(2 * dims.kappa, rng) @ basis


def _curve_with_error(K: StarBody, S: np.ndarray, u, size: int, rng,
                      method: str) -> tuple[float, float]:
    dims = K.dims
    k = dims.kappa
    d = dims.ambient - k  # = k(n-1)
    u = np.asarray(u, dtype=float)
    if u.shape != (dims.ambient,):
        raise DimensionMismatch("u has wrong length")
    if abs(np.linalg.norm(u) - 1.0) > 1e-8:
        raise NotUnit("u must be a unit vector")
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != k * (dims.n - 2):
        raise DimensionMismatch(
            f"subspace must have dimension k(n-2) = {k * (dims.n - 2)}")
    if np.max(np.abs(S @ u)) > 1e-8:
        raise BadSubspace("u is not orthogonal to the subspace")
    basis = _slice_basis(dims, S, u)
    rng = as_rng(rng)
    rmax = K.radial_bounds()[1]
    if method == "rejection":
        dirs = random_unit(d, rng, int(size))
        radii = rng.uniform(0.0, 1.0, int(size)) ** (1.0 / d)
        pts = (dirs * (rmax * radii[:, None])) @ basis
        inside = np.asarray(K.norm(pts), dtype=float) <= 1.0
        p = float(np.mean(inside))
        vol_box = ball_volume(d) * rmax**d
        vol = vol_box * p
        err = vol_box * math.sqrt(max(p * (1.0 - p), 0.0) / inside.size)
    elif method == "polar":
        half = max(8, int(size) // 2)
        coords = random_unit(d, rng, half)
        coords = np.vstack([coords, -coords])
        rho = np.asarray(K.radial(coords @ basis), dtype=float) ** d
        area = surface_area(d)
        vol = area * float(rho.mean()) / d
        pair = 0.5 * (rho[:half] + rho[half:])
        err = area * float(pair.std(ddof=1)) / math.sqrt(half) / d
    else:
        raise ValueError(f"unknown method {method!r}")
    if vol <= 0:
        raise BadSubspace("slice volume estimate is not positive")
    r = vol ** (1.0 / k)
    return r, err * r / (k * vol)


def busemann_curve(K: StarBody, S: np.ndarray, u, size: int = 100000,
                   rng=0, method: str = "rejection") -> float:
    """r(u) = |K cap span{S, orbit span of u}|^{1/k}.

    method "rejection" samples the bounding ball of the slice;
    "polar" integrates rho^{k(n-1)} over the slice sphere (cheaper for
    bodies with expensive norms)."""
    _check_subspace(K.dims, S, derive_seed(0, "curve-check"))
    return _curve_with_error(K, S, u, size, rng, method)[0]


@dataclass
class BusemannCurveProbe:
    subspace: np.ndarray
    us: np.ndarray
    rs: np.ndarray
    errs: np.ndarray


def curve_probe(K: StarBody, sub: BalancedSubspace, count: int = 16,
                size: int = 20000, rng=0,
                method: str = "rejection") -> BusemannCurveProbe:
    """Sample r(u) over directions in the complement of the subspace."""
    rng = as_rng(rng)
    us = np.empty((count, K.dims.ambient))
    rs = np.empty(count)
    errs = np.empty(count)
    for i in range(count):
        us[i] = _sample_u(K.dims, sub.wperp, rng)
        rs[i], errs[i] = _curve_with_error(K, sub.basis, us[i], size, rng,
                                           method)
    return BusemannCurveProbe(sub.basis, us, rs, errs)


@dataclass
class TriangleCheck:
    violation: float
    tol: float
    trials: int
    witness: dict | None = None

    def to_dict(self) -> dict:
        return {
            "violation": float(self.violation),
            "tol": float(self.tol),
            "trials": int(self.trials),
        }


def busemann_check(K: StarBody, trials: int = 200, rng=0, size: int = 20000,
                   method: str = "rejection") -> TriangleCheck:
    """Worst sampled violation of |u1+u2|/r(u3) <= 1/r(u1) + 1/r(u2).

    Returns the clipped worst violation together with the 3-sigma noise
    tolerance at the worst draw; convex balanced bodies must stay below
    tolerance.  Antipodal and collinear draws are redrawn."""
    dims = K.dims
    rng = as_rng(rng)
    worst = -math.inf
    worst_tol = 0.0
    witness = None
    for t in range(trials):
        sub = balanced_subspace_sample(dims, rng)
        v = random_unit(dims.kappa, rng) if dims.kappa >= 3 else None
        for _ in range(64):
            u1 = _sample_u(dims, sub.wperp, rng, v)
            u2 = _sample_u(dims, sub.wperp, rng, v)
            s = np.linalg.norm(u1 + u2)
            if s > 1e-6 and abs(u1 @ u2) < 1.0 - 1e-9:
                break
        else:
            continue
        u3 = (u1 + u2) / s
        r = np.empty(3)
        e = np.empty(3)
        for i, u in enumerate((u1, u2, u3)):
            r[i], e[i] = _curve_with_error(K, sub.basis, u, size,
                                           derive_seed(rng.integers(2**32),
                                                       "curve", t, i), method)
        viol = s / r[2] - 1.0 / r[0] - 1.0 / r[1]
        tol = 3.0 * (s * e[2] / r[2]**2 + e[0] / r[0]**2 + e[1] / r[1]**2)
        if viol > worst:
            worst = viol
            worst_tol = tol
            witness = {"u1": u1, "u2": u2, "subspace": sub.basis,
                       "r": r.copy()}
    return TriangleCheck(max(0.0, worst), worst_tol, trials, witness)


@dataclass
class ConvexityReport:
    body: StarBody
    convex_ok: bool
    convex_worst: float
    triangle: TriangleCheck | None
    source_convex_ok: bool | None = None

    def to_dict(self) -> dict:
        out = {
            "convex_ok": bool(self.convex_ok),
            "convex_worst": float(self.convex_worst),
        }
        if self.triangle is not None:
            out["triangle_violation"] = float(self.triangle.violation)
            out["triangle_tol"] = float(self.triangle.tol)
        if self.source_convex_ok is not None:
            out["source_convex_ok"] = bool(self.source_convex_ok)
        return out


def intersection_convexity_check(K: StarBody, grid_size: int = 700,
                                 sub_size: int = 1536,
                                 triangle_trials: int = 48,
                                 curve_size: int = 15000,
                                 convex_trials: int = 2048,
                                 convex_tol: float = 1e-3,
                                 seed: int = 0) -> ConvexityReport:
    """Construct the intersection body of K and test its convexity,
    by midpoint sampling and (for n >= 3) by the triangle inequality
    of the boundary curve.

    convex_tol is relative and sized for tabulated interpolants; at
    n = 2 the triangle check degenerates (the construction is a
    rotation), so the report also carries the convexity of K itself.
    """
    body = intersection_body_of(K, grid_size, sub_size, seed)
    ok, worst = is_convex_sampled(body, trials=convex_trials, tol=convex_tol,
                                  rng=derive_seed(seed, "iconvex"))
    tri = None
    source_ok = None
    if K.dims.n >= 3:
        tri = busemann_check(body, trials=triangle_trials, size=curve_size,
                             rng=derive_seed(seed, "triangle"),
                             method="polar")
    else:
        source_ok, _ = is_convex_sampled(K, trials=convex_trials,
                                         rng=derive_seed(seed, "source"))
    return ConvexityReport(body, bool(ok), float(worst), tri, source_ok)


# ---------------------------------------------------------------------------
# 1-D three-function inequality oracle.
# ---------------------------------------------------------------------------

def ball_inequality_oracle(f1, f2, f3, alpha: float, p: float,
                           r_cut: float = math.inf, grid: int = 24,
                           tol: float = 1e-9) -> bool:
    """Check  C >= alpha / (1/A + 1/B)  for the t^{p-1}-weighted means

        A^p = integral of f1(t) t^{p-1},  likewise B, C,

    after verifying the hypothesis f3(r3) >= f1(r1)^{1-lam} f2(r2)^lam
    with lam = r1/(r1+r2) and r3 = alpha/(1/r1 + 1/r2) on a sample grid.
    """
    if alpha < 0 or p <= 0:
        raise ValueError("need alpha >= 0 and p > 0")
    hi = r_cut if math.isfinite(r_cut) else 10.0
    rs = np.geomspace(hi * 1e-3, hi, grid)
    for r1 in rs:
        for r2 in rs:
            lam = r1 / (r1 + r2)
            r3 = alpha / (1.0 / r1 + 1.0 / r2) if alpha > 0 else 0.0
            lhs = float(f3(r3))
            rhs = float(f1(r1)) ** (1.0 - lam) * float(f2(r2)) ** lam
            if lhs < rhs - tol * max(1.0, rhs):
                raise HypothesisViolated(
                    f"f3({r3:.4f}) = {lhs:.6e} < {rhs:.6e}",
                    witness=(float(r1), float(r2)))

    def moment(f):
        val, _ = _sintegrate.quad(lambda t: f(t) * t ** (p - 1.0), 0.0,
                                  r_cut, limit=400)
        return val ** (1.0 / p)

    a, b, c = moment(f1), moment(f2), moment(f3)
    if alpha == 0:
        return c >= -tol
    return c >= alpha / (1.0 / a + 1.0 / b) - tol * max(1.0, c)


# ---------------------------------------------------------------------------
# Distance to the ball after second-moment normalization.
# ---------------------------------------------------------------------------

def ball_distance_estimate(D: StarBody, rule_size: int = 20000,
                           probe_size: int = 4000, seed: int = 0) -> float:
    """(max rho)/(min rho) of D normalized by its inverse square-root
    second-moment matrix; 1 for ellipsoids, an upper bound on the
    distance to the ball otherwise."""
    dims = D.dims
    amb = dims.ambient
    rule = sphere_quadrature(amb, rule_size, "symmetrized_mc",
                             derive_seed(seed, "moments"), dims)
    rho = np.asarray(D.radial(rule.nodes), dtype=float)
    w = rule.weights * rho ** (amb + 2) / (amb + 2)
    moment = np.einsum("m,mi,mj->ij", w, rule.nodes, rule.nodes)
    vals, vecs = np.linalg.eigh(moment)
    if np.min(vals) <= 0:
        raise ArithmeticError("second-moment matrix is not positive definite")
    inv_t = vecs @ np.diag(np.sqrt(vals)) @ vecs.T  # T^{-1} for T = M^{-1/2}
    probes = random_unit(amb, as_rng(derive_seed(seed, "probes")), probe_size)
    # rho of the normalized body at unit theta is 1 / ||T^{-1} theta||_D
    radial = 1.0 / np.asarray(D.norm(probes @ inv_t), dtype=float)
    return float(np.max(radial) / np.min(radial))
