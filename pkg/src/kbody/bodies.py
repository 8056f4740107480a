"""Star bodies with block-rotation symmetry, and measure densities.

A star body is described by its Minkowski functional ||x|| (positive,
1-homogeneous, even, continuous away from 0); the radial function is
rho(theta) = ||theta||^{-1} on the unit sphere.  All evaluation paths
are vectorized over rows of points.

Parametric kinds: Ball, QBall (block q-norms), KEllipsoid (two semi-axes
split along the orbit span of a direction and its complement),
RadialKSum (rho^kappa additive combinations).  Data-driven kinds:
Tabulated (radial values on canonicalized grid nodes, evaluated by
orbit-aligned local quadratic regression, which makes interpolated
bodies exactly balanced by construction) and Perturbed (a base body
whose rho^{kn-k} profile is shifted by a tabulated correction).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc, roots_legendre

from .errors import (
    BadExponent,
    DimensionMismatch,
    InvalidSpec,
    NonStarBody,
    ZeroVector,
)
from .symmetry import (
    Dimensions,
    as_rng,
    block_matrix,
    orbit_similarity,
    random_unit,
    similarity_to_axes,
    stratum_axis,
)

__all__ = [
    "StarBody",
    "Ball",
    "QBall",
    "KEllipsoid",
    "RadialKSum",
    "Tabulated",
    "Perturbed",
    "DerivedRadial",
    "MeasureDensity",
    "Lebesgue",
    "Gaussian",
    "RadialPower",
    "minkowski_norm",
    "ellipsoid_norm",
    "radial_k_sum",
    "volume",
    "volume_with_error",
    "is_convex_sampled",
    "density_eval",
    "radial_primitive",
    "KernelInterp",
    "body_from_spec",
    "body_to_spec",
    "read_grid_csv",
    "write_grid_csv",
]


def _rows(x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def _unsingle(v, single):
    return float(v[0]) if single else v


class StarBody:
    """Base class; subclasses implement _norm_rows on (M, ambient)."""

    kind = "abstract"

    def __init__(self, dims: Dimensions):
        self.dims = dims

    def _norm_rows(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def norm(self, x) -> float | np.ndarray:
        """Minkowski functional; raises ZeroVector on any zero row."""
        xm, single = _rows(x)
        if xm.shape[1] != self.dims.ambient:
            raise DimensionMismatch(
                f"point length {xm.shape[1]} does not match ambient {self.dims.ambient}"
            )
        if np.any(np.all(xm == 0.0, axis=1)):
            raise ZeroVector("Minkowski functional is undefined at the origin")
        return _unsingle(self._norm_rows(xm), single)

    def radial(self, theta) -> float | np.ndarray:
        """rho(theta) = |theta| / ||theta||; equals 1/||theta|| on unit input."""
        tm, single = _rows(theta)
        r = np.linalg.norm(tm, axis=1) / np.asarray(self.norm(tm), dtype=float)
        return _unsingle(r, single)

    def radial_bounds(self) -> tuple[float, float]:
        raise NotImplementedError

    def scale(self, lam: float) -> "StarBody":
        if lam <= 0:
            raise NonStarBody("scale factor must be positive")
        return _Scaled(self, lam)

    def spec(self) -> dict:
        raise InvalidSpec(f"kind {self.kind!r} has no JSON form", "$")


class _Scaled(StarBody):
    kind = "scaled"

    def __init__(self, base: StarBody, lam: float):
        super().__init__(base.dims)
        self.base = base
        self.lam = float(lam)

    def _norm_rows(self, x):
        return np.asarray(self.base.norm(x)) / self.lam

    def radial_bounds(self):
        lo, hi = self.base.radial_bounds()
        return lo * self.lam, hi * self.lam

    def scale(self, lam):
        return _Scaled(self.base, self.lam * lam)


class Ball(StarBody):
    kind = "ball"

    def __init__(self, dims: Dimensions, radius: float = 1.0):
        super().__init__(dims)
        if radius <= 0:
            raise NonStarBody("radius must be positive")
        self.radius = float(radius)

    def _norm_rows(self, x):
        return np.linalg.norm(x, axis=1) / self.radius

    def radial_bounds(self):
        return self.radius, self.radius

    def scale(self, lam):
        return Ball(self.dims, self.radius * lam)

    def spec(self):
        return {"kappa": self.dims.kappa, "n": self.dims.n, "kind": "ball",
                "radius": self.radius}


class QBall(StarBody):
    """Unit ball of the block q-norm (sum of q-th powers of block lengths)."""

    kind = "qball"

    def __init__(self, dims: Dimensions, q: float):
        super().__init__(dims)
        if q < 1:
            raise BadExponent("q must be >= 1")
        self.q = float(q)

    def _norm_rows(self, x):
        bn = np.linalg.norm(block_matrix(self.dims, x), axis=2)
        if self.q == 2.0:
            return np.linalg.norm(bn, axis=1)
        return np.sum(bn**self.q, axis=1) ** (1.0 / self.q)

    def radial_bounds(self):
        corner = self.dims.n ** (0.5 - 1.0 / self.q)
        return min(1.0, corner), max(1.0, corner)

    def spec(self):
        return {"kappa": self.dims.kappa, "n": self.dims.n, "kind": "qball",
                "q": self.q}


class KEllipsoid(StarBody):
    """Ellipsoid with semi-axis a on the orbit span of xi and b on its
    orthogonal complement.

    ||x||^2 = P/a^2 + (|x|^2 - P)/b^2 where P is the squared length of
    the projection of x onto the orbit span; P equals the squared
    rotation-invariant pairing with xi, which gives one formula for all
    block sizes.
    """

    kind = "kellipsoid"

    def __init__(self, dims: Dimensions, a: float, b: float, xi: np.ndarray):
        super().__init__(dims)
        if a <= 0 or b <= 0:
            raise NonStarBody("semi-axes must be positive")
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (dims.ambient,):
            raise DimensionMismatch("xi has wrong length")
        nrm = np.linalg.norm(xi)
        if abs(nrm - 1.0) > 1e-12:
            if nrm == 0:
                raise ZeroVector("xi must be a unit vector")
            xi = xi / nrm
        self.a = float(a)
        self.b = float(b)
        self.xi = xi
        if dims.kappa >= 3:
            self._axis = stratum_axis(dims, xi)[None, :]
        else:
            self._axis = None

    def _proj_sq(self, x):
        if self._axis is not None:
            t = similarity_to_axes(self.dims, x, self._axis)[:, 0]
        else:
            t = orbit_similarity(self.dims, x, self.xi[None, :])[:, 0]
        return t**2

    def _norm_rows(self, x):
        p = self._proj_sq(x)
        sq = np.sum(x**2, axis=1)
        val = p / self.a**2 + np.maximum(sq - p, 0.0) / self.b**2
        return np.sqrt(val)

    def radial_bounds(self):
        return min(self.a, self.b), max(self.a, self.b)

    def scale(self, lam):
        return KEllipsoid(self.dims, self.a * lam, self.b * lam, self.xi)

    def spec(self):
        return {"kappa": self.dims.kappa, "n": self.dims.n, "kind": "kellipsoid",
                "a": self.a, "b": self.b, "xi": [float(v) for v in self.xi]}


class RadialKSum(StarBody):
    """rho^kappa = sum of the parts' rho^kappa."""

    kind = "ksum"

    def __init__(self, dims: Dimensions, terms):
        super().__init__(dims)
        flat = []
        for t in terms:
            if t.dims != dims:
                raise DimensionMismatch("radial sum terms live in different spaces")
            if isinstance(t, RadialKSum):
                flat.extend(t.terms)
            else:
                flat.append(t)
        if not flat:
            raise NonStarBody("radial sum needs at least one term")
        self.terms = tuple(flat)

    def _norm_rows(self, x):
        k = self.dims.kappa
        acc = np.zeros(x.shape[0])
        for t in self.terms:
            acc += np.asarray(t.norm(x), dtype=float) ** (-k)
        return acc ** (-1.0 / k)

    def radial_bounds(self):
        k = self.dims.kappa
        lo = sum(t.radial_bounds()[0] ** k for t in self.terms) ** (1.0 / k)
        hi = sum(t.radial_bounds()[1] ** k for t in self.terms) ** (1.0 / k)
        return lo, hi

    def scale(self, lam):
        return RadialKSum(self.dims, [t.scale(lam) for t in self.terms])

    def spec(self):
        return {"kappa": self.dims.kappa, "n": self.dims.n, "kind": "ksum",
                "terms": [t.spec() for t in self.terms]}


def radial_k_sum(K: StarBody, *rest: StarBody) -> RadialKSum:
    parts = [K, *rest]
    if any(L.dims != K.dims for L in parts):
        raise DimensionMismatch("radial sum of bodies in different spaces")
    return RadialKSum(K.dims, parts)


class Tabulated(StarBody):
    """Radial values on canonical grid nodes, evaluated by orbit-aligned
    local quadratic regression.

    Queries are compared to nodes through the rotation-invariant
    pairing, each neighbor is rotated into optimal alignment with the
    query, and a ridge-regularized quadratic fit in the ambient offsets
    is evaluated at the query.  The value depends on the query only
    through its orbit, so tabulated bodies are balanced by construction.
    """

    kind = "tabulated"

    def __init__(self, dims: Dimensions, nodes: np.ndarray, values: np.ndarray,
                 axes: np.ndarray | None = None, neighbors: int | None = None):
        super().__init__(dims)
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        values = np.asarray(values, dtype=float).reshape(-1)
        if nodes.shape[0] != values.shape[0]:
            raise DimensionMismatch("node and value counts differ")
        if nodes.shape[1] != dims.ambient:
            raise DimensionMismatch("grid nodes have wrong length")
        if np.any(values <= 0):
            raise NonStarBody("radial values must be positive")
        nrm = np.linalg.norm(nodes, axis=1, keepdims=True)
        if np.any(nrm == 0):
            raise ZeroVector("grid nodes must be nonzero")
        self.nodes = nodes / nrm
        self.values = values
        if dims.kappa >= 3:
            if axes is None:
                axes = np.stack([stratum_axis(dims, u) for u in self.nodes])
            self.axes = np.asarray(axes, dtype=float)
        else:
            self.axes = None
        amb = dims.ambient
        n_feat = 1 + amb + amb * (amb + 1) // 2
        self._n_feat = n_feat
        n = nodes.shape[0]
        self.neighbors = int(neighbors) if neighbors else min(n, max(32, 2 * n_feat))
        self._zn = None
        if dims.kappa == 2:
            nb = block_matrix(dims, self.nodes)
            self._zn = nb[..., 0] + 1j * nb[..., 1]

    # -- similarity of queries to all nodes, plus alignment data --------
    def _similarity(self, theta):
        k = self.dims.kappa
        if k == 1:
            g = theta @ self.nodes.T
            return np.abs(g), g
        if k == 2:
            tb = block_matrix(self.dims, theta)
            zq = tb[..., 0] + 1j * tb[..., 1]
            g = zq @ self._zn.conj().T
            return np.abs(g), g
        t = similarity_to_axes(self.dims, theta, self.axes)
        return t, None

    def _aligned_nodes(self, theta, idx, g):
        """Aligned copies of selected nodes for each query row."""
        m, k = idx.shape
        amb = self.dims.ambient
        kappa = self.dims.kappa
        out = np.empty((m, k, amb))
        if kappa == 1:
            sel = self.nodes[idx]
            sign = np.sign(np.take_along_axis(g, idx, axis=1))
            sign[sign == 0] = 1.0
            out = sel * sign[:, :, None]
            return out
        if kappa == 2:
            zsel = self._zn[idx]  # (m, k, n) complex
            gsel = np.take_along_axis(g, idx, axis=1)
            mag = np.abs(gsel)
            phase = np.where(mag > 1e-300, gsel / np.maximum(mag, 1e-300), 1.0)
            zal = zsel * phase[:, :, None]
            out[:, :, 0::2] = zal.real
            out[:, :, 1::2] = zal.imag
            return out
        # kappa >= 3: node j aligned to theta is w_j (x) (Theta^T w_j)/|.|
        tb = block_matrix(self.dims, theta)  # (m, n, kappa)
        wsel = self.axes[idx]  # (m, k, n)
        v = np.einsum("mkn,mna->mka", wsel, tb)
        nv = np.linalg.norm(v, axis=2, keepdims=True)
        fallback = np.zeros_like(v)
        fallback[..., 0] = 1.0
        v = np.where(nv > 1e-12, v / np.maximum(nv, 1e-300), fallback)
        out = wsel[:, :, :, None] * v[:, :, None, :]
        return out.reshape(m, k, amb)

    def radial_on_sphere(self, theta: np.ndarray) -> np.ndarray:
        """Radial values at unit query points (M, ambient)."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        m = theta.shape[0]
        out = np.empty(m)
        chunk = max(1, int(2.0e8 // max(1, self.nodes.shape[0] * 16)))
        for lo in range(0, m, chunk):
            sl = slice(lo, min(m, lo + chunk))
            out[sl] = self._radial_chunk(theta[sl])
        return out

    def _radial_chunk(self, theta):
        m = theta.shape[0]
        k = min(self.neighbors, self.nodes.shape[0])
        t, g = self._similarity(theta)
        c = np.clip(t, -1.0, 1.0)
        if k < self.nodes.shape[0]:
            idx = np.argpartition(-c, k - 1, axis=1)[:, :k]
        else:
            idx = np.broadcast_to(np.arange(k), (m, k)).copy()
        csel = np.take_along_axis(c, idx, axis=1)
        dist = np.arccos(np.clip(csel, -1.0, 1.0))
        h = np.maximum(dist.max(axis=1, keepdims=True) * 1.05, 1e-8)
        wts = np.maximum(0.0, 1.0 - (dist / h) ** 2) ** 2
        aligned = self._aligned_nodes(theta, idx, g)
        u = aligned - theta[:, None, :]
        vals = self.values[idx]
        return _local_quadratic(u, vals, wts, self._n_feat)

    def _norm_rows(self, x):
        nrm = np.linalg.norm(x, axis=1)
        r = self.radial_on_sphere(x / nrm[:, None])
        if np.any(r <= 0):
            raise NonStarBody("interpolated radial value is not positive")
        return nrm / r

    def radial_bounds(self):
        lo = float(np.min(self.values))
        hi = float(np.max(self.values))
        return 0.95 * lo, 1.05 * hi

    def scale(self, lam):
        return Tabulated(self.dims, self.nodes, self.values * lam, self.axes,
                         self.neighbors)

    def spec(self):
        raise InvalidSpec("tabulated bodies serialize through grid CSV files; "
                          "use write_grid_csv and reference it as grid_file")


def _local_quadratic(u, vals, wts, n_feat):
    """Weighted ridge quadratic fit per query; returns the intercepts.

    u: (m, k, amb) offsets, vals: (m, k), wts: (m, k).
    The intercept is not penalized, so constant data is reproduced
    exactly.
    """
    m, k, amb = u.shape
    iu, ju = np.triu_indices(amb)
    feats = np.empty((m, k, n_feat))
    feats[:, :, 0] = 1.0
    feats[:, :, 1 : 1 + amb] = u
    feats[:, :, 1 + amb :] = u[:, :, iu] * u[:, :, ju]
    w = wts[:, :, None]
    a = np.einsum("mkp,mkq->mpq", feats * w, feats)
    rhs = np.einsum("mkp,mk->mp", feats * w, vals)
    ridge = np.trace(a, axis1=1, axis2=2) / n_feat * 1e-9 + 1e-14
    diag = np.zeros(n_feat)
    diag[1:] = 1.0
    a += ridge[:, None, None] * np.diag(diag)
    a[:, 0, 0] += 1e-300
    try:
        beta = np.linalg.solve(a, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        beta = np.stack([np.linalg.lstsq(ai, ri, rcond=None)[0]
                         for ai, ri in zip(a, rhs)])
    out = beta[:, 0]
    # fall back to the nearest node where coverage is empty
    dead = wts.sum(axis=1) < 1e-12
    if np.any(dead):
        nearest = np.argmax(wts[dead], axis=1)
        out[dead] = vals[dead, nearest]
    return out


class Perturbed(StarBody):
    """Base body with rho^{kn-k} shifted by -epsilon * correction(theta).

    The correction is any vectorized function of unit directions
    (typically a smooth grid interpolant).  Non-positive intermediate
    profiles raise NonStarBody.
    """

    kind = "perturbed"

    def __init__(self, base: StarBody, correction, epsilon: float,
                 check_rng=0, check_points: int = 512):
        super().__init__(base.dims)
        self.base = base
        self.correction = correction
        self.epsilon = float(epsilon)
        self.power = base.dims.ambient - base.dims.kappa
        probe = random_unit(base.dims.ambient, as_rng(check_rng), check_points)
        self._probe_min = float(np.min(self._profile(probe)))
        if self._probe_min <= 0:
            raise NonStarBody(
                f"perturbation too large: min radial power {self._probe_min:.3e}"
            )

    def _profile(self, theta):
        base_r = np.asarray(self.base.radial(theta), dtype=float)
        corr = np.asarray(self.correction(theta), dtype=float)
        return base_r**self.power - self.epsilon * corr

    def radial_on_sphere(self, theta):
        prof = self._profile(np.atleast_2d(theta))
        if np.any(prof <= 0):
            raise NonStarBody("perturbed radial power is not positive")
        return prof ** (1.0 / self.power)

    def _norm_rows(self, x):
        nrm = np.linalg.norm(x, axis=1)
        return nrm / self.radial_on_sphere(x / nrm[:, None])

    def radial_bounds(self):
        lo, hi = self.base.radial_bounds()
        return 0.5 * min(lo, self._probe_min ** (1.0 / self.power)), 1.5 * hi


class DerivedRadial(StarBody):
    """Internal kind: a star body given directly by a vectorized radial
    function on the unit sphere (must be even and balanced by
    construction of the supplied function)."""

    kind = "derived"

    def __init__(self, dims: Dimensions, radial_fn, bounds=None):
        super().__init__(dims)
        self._fn = radial_fn
        self._bounds = bounds

    def _norm_rows(self, x):
        nrm = np.linalg.norm(x, axis=1)
        r = np.asarray(self._fn(x / nrm[:, None]), dtype=float)
        if np.any(r <= 0):
            raise NonStarBody("derived radial function must be positive")
        return nrm / r

    def radial_bounds(self):
        if self._bounds is not None:
            return self._bounds
        probe = random_unit(self.dims.ambient, as_rng(7), 512)
        r = np.asarray(self._fn(probe), dtype=float)
        return 0.8 * float(np.min(r)), 1.25 * float(np.max(r))


# ---------------------------------------------------------------------------
# Plain functional entry points.
# ---------------------------------------------------------------------------

def minkowski_norm(body: StarBody, x) -> float | np.ndarray:
    return body.norm(x)


def ellipsoid_norm(params: KEllipsoid, x) -> float | np.ndarray:
    """Norm of the two-axis ellipsoid; params is a KEllipsoid body."""
    return params.norm(x)


def volume(body: StarBody, rule) -> float:
    """Polar formula (1/kn) * sum w_i rho(theta_i)^{kn}."""
    return volume_with_error(body, rule)[0]


def volume_with_error(body: StarBody, rule) -> tuple[float, float]:
    from .sphere import integrate_with_error  # local import, no cycle at load

    d = body.dims.ambient
    if rule.nodes.shape[1] != d:
        raise DimensionMismatch("rule does not live on the body's sphere")
    total, err = integrate_with_error(
        rule, lambda pts: np.asarray(body.radial(pts), dtype=float) ** d
    )
    return total / d, err / d


def is_convex_sampled(body: StarBody, trials: int = 2048, tol: float = 1e-8,
                      rng=0) -> tuple[bool, float]:
    """Sampled triangle inequality; returns (convex, worst violation).

    The violation is relative: (||x+y|| - ||x|| - ||y||) / (||x|| + ||y||).
    """
    if trials < 1:
        raise DimensionMismatch("trials must be >= 1")
    rng = as_rng(rng)
    d = body.dims.ambient
    x = random_unit(d, rng, trials) * rng.uniform(0.2, 1.0, trials)[:, None]
    y = random_unit(d, rng, trials) * rng.uniform(0.2, 1.0, trials)[:, None]
    s = x + y
    keep = np.linalg.norm(s, axis=1) > 1e-9
    nx = np.asarray(body.norm(x[keep]), dtype=float)
    ny = np.asarray(body.norm(y[keep]), dtype=float)
    ns = np.asarray(body.norm(s[keep]), dtype=float)
    viol = (ns - nx - ny) / (nx + ny)
    worst = float(np.max(viol)) if viol.size else 0.0
    return worst <= tol, worst


# ---------------------------------------------------------------------------
# Measure densities.
# ---------------------------------------------------------------------------

class MeasureDensity:
    """Non-negative even balanced weight f on R^{kn} minus the origin."""

    kind = "abstract"

    def eval_rows(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x):
        xm, single = _rows(x)
        return _unsingle(self.eval_rows(xm), single)


class Lebesgue(MeasureDensity):
    kind = "lebesgue"

    def eval_rows(self, x):
        return np.ones(x.shape[0])


class Gaussian(MeasureDensity):
    """exp(-|x|^2 / (2 s^2)), normalized to peak value 1."""

    kind = "gaussian"

    def __init__(self, s: float = 1.0):
        if s <= 0:
            raise BadExponent("Gaussian scale must be positive")
        self.s = float(s)

    def eval_rows(self, x):
        return np.exp(-np.sum(x**2, axis=1) / (2.0 * self.s**2))


class RadialPower(MeasureDensity):
    """||x||_M^{-l}; singular at the origin when l > 0."""

    kind = "power"

    def __init__(self, M: StarBody, l: float):
        self.M = M
        self.l = float(l)

    def eval_rows(self, x):
        if self.l > 0 and np.any(np.all(x == 0.0, axis=1)):
            raise ZeroVector("radial power density is singular at the origin")
        return np.asarray(self.M.norm(x), dtype=float) ** (-self.l)


def density_eval(d: MeasureDensity, x) -> float | np.ndarray:
    return d(x)


_GL_NODES, _GL_WEIGHTS = roots_legendre(48)


def radial_primitive(density: MeasureDensity, theta: np.ndarray,
                     rho: np.ndarray, p: float) -> np.ndarray:
    """integral_0^rho f(r * theta) r^{p-1} dr for unit rows theta.

    Closed forms for the built-in kinds; 48-node Gauss-Legendre
    otherwise.  Requires p > 0 net of any radial singularity of f.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    rho = np.asarray(rho, dtype=float)
    if p <= 0:
        raise BadExponent("radial exponent must be positive")
    if isinstance(density, Lebesgue):
        return rho**p / p
    if isinstance(density, Gaussian):
        s = density.s
        # substitute r^2/(2 s^2); the regularized lower Gamma does the rest
        z = rho**2 / (2.0 * s**2)
        return (2.0 ** (0.5 * p - 1.0) * s**p * math.gamma(0.5 * p)
                * gammainc(0.5 * p, z))
    if isinstance(density, RadialPower):
        q = p - density.l
        if q <= 0:
            raise BadExponent(
                f"density power {density.l} is not integrable against r^{p - 1}"
            )
        base = np.asarray(density.M.norm(theta), dtype=float) ** (-density.l)
        return base * rho**q / q
    # generic fallback
    r = 0.5 * rho[:, None] * (_GL_NODES[None, :] + 1.0)
    pts = theta[:, None, :] * r[:, :, None]
    flat = pts.reshape(-1, theta.shape[1])
    vals = density.eval_rows(flat).reshape(r.shape)
    integ = np.sum(_GL_WEIGHTS[None, :] * vals * r ** (p - 1.0), axis=1)
    return 0.5 * rho * integ


# ---------------------------------------------------------------------------
# Kernel interpolation of grid functions (used by Perturbed bodies and
# the transform operator).
# ---------------------------------------------------------------------------

class KernelInterp:
    """Partition-of-unity interpolant of values on canonical grid nodes.

    phi_j(y) = w_j k((d(y, node_j))/h) / sum_l w_l k(...) with the
    compact quartic kernel k(u) = (1 - u^2)_+^2 and orbit distance
    d = arccos of the normalized invariant pairing.  The interpolant is
    balanced and even by construction.
    """

    def __init__(self, dims: Dimensions, nodes: np.ndarray,
                 node_weights: np.ndarray | None = None,
                 axes: np.ndarray | None = None, bandwidth: float | None = None,
                 kernel: str = "quartic"):
        self.dims = dims
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        nodes = nodes / np.linalg.norm(nodes, axis=1, keepdims=True)
        self.nodes = nodes
        self.axes = axes
        if axes is None and dims.kappa >= 3:
            self.axes = np.stack([stratum_axis(dims, u) for u in nodes])
        n = nodes.shape[0]
        self.node_weights = (np.ones(n) if node_weights is None
                             else np.asarray(node_weights, dtype=float))
        if kernel not in ("quartic", "gauss"):
            raise ValueError(f"unknown kernel {kernel!r}")
        self.kernel = kernel
        if bandwidth is None:
            bandwidth = self._auto_bandwidth()
        self.h = float(bandwidth)

    def _similarity(self, pts):
        if self.dims.kappa >= 3:
            return similarity_to_axes(self.dims, pts, self.axes)
        return orbit_similarity(self.dims, pts, self.nodes)

    def _auto_bandwidth(self):
        n = self.nodes.shape[0]
        take = min(n, 400)
        sub = self.nodes[:: max(1, n // take)]
        t = self._similarity(sub)
        d = np.arccos(np.clip(t, -1.0, 1.0))
        d[d < 1e-9] = np.inf  # drop self distances
        kth = min(8, n - 1)
        nn = np.sort(d, axis=1)[:, kth - 1]
        return float(np.median(nn)) * (1.1 if self.kernel == "gauss" else 2.2)

    def kernel_raw(self, t: np.ndarray, h: float | None = None) -> np.ndarray:
        """Unnormalized kernel value at similarity t (no node weights)."""
        u = np.arccos(np.clip(t, -1.0, 1.0)) / (self.h if h is None else h)
        if self.kernel == "gauss":
            return np.where(u < 4.0, np.exp(-(u**2)), 0.0)
        return np.maximum(0.0, 1.0 - u**2) ** 2

    def basis(self, pts: np.ndarray) -> np.ndarray:
        """Partition-of-unity weights phi_j(pts), shape (M, N)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        t = np.clip(self._similarity(pts), -1.0, 1.0)
        k = self.kernel_raw(t) * self.node_weights[None, :]
        denom = k.sum(axis=1, keepdims=True)
        dead = denom[:, 0] <= 1e-300
        if np.any(dead):
            nearest = np.argmax(t[dead], axis=1)
            k[dead] = 0.0
            k[np.flatnonzero(dead), nearest] = 1.0
            denom = k.sum(axis=1, keepdims=True)
        return k / denom

    def apply(self, pts: np.ndarray, values: np.ndarray) -> np.ndarray:
        """basis(pts) @ values without materializing the full basis."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        values = np.asarray(values, dtype=float)
        out = np.empty(pts.shape[0])
        chunk = max(1, int(2.5e7 // max(1, self.nodes.shape[0])))
        for lo in range(0, pts.shape[0], chunk):
            hi = min(pts.shape[0], lo + chunk)
            out[lo:hi] = self.basis(pts[lo:hi]) @ values
        return out

    def __call__(self, values: np.ndarray):
        values = np.asarray(values, dtype=float)

        def interp(pts):
            return self.apply(pts, values)

        return interp


# ---------------------------------------------------------------------------
# JSON body specifications and grid CSV files.
# ---------------------------------------------------------------------------

def _require(spec, key, path):
    if key not in spec:
        raise InvalidSpec(f"missing field {key!r}", path)
    return spec[key]


def body_from_spec(spec: dict, base_dir: str = ".", path: str = "$") -> StarBody:
    """Build a StarBody from its JSON dictionary form."""
    if not isinstance(spec, dict):
        raise InvalidSpec("body spec must be an object", path)
    kappa = _require(spec, "kappa", path)
    n = _require(spec, "n", path)
    try:
        dims = Dimensions(kappa, n)
    except Exception as exc:
        raise InvalidSpec(str(exc), path) from exc
    kind = _require(spec, "kind", path)
    try:
        if kind == "ball":
            return Ball(dims, float(spec.get("radius", 1.0)))
        if kind == "qball":
            return QBall(dims, float(_require(spec, "q", path)))
        if kind == "kellipsoid":
            xi = np.asarray(_require(spec, "xi", path), dtype=float)
            return KEllipsoid(dims, float(_require(spec, "a", path)),
                              float(_require(spec, "b", path)), xi)
        if kind == "ksum":
            terms_spec = _require(spec, "terms", path)
            terms = []
            for i, ts in enumerate(terms_spec):
                sub = dict(ts)
                sub.setdefault("kappa", kappa)
                sub.setdefault("n", n)
                terms.append(body_from_spec(sub, base_dir, f"{path}.terms[{i}]"))
            return RadialKSum(dims, terms)
        if kind == "tabulated":
            grid_file = _require(spec, "grid_file", path)
            import os

            nodes, values = read_grid_csv(os.path.join(base_dir, grid_file),
                                          dims.ambient)
            return Tabulated(dims, nodes, values)
        if kind == "perturbed":
            base_spec = dict(_require(spec, "base", path))
            base_spec.setdefault("kappa", kappa)
            base_spec.setdefault("n", n)
            base = body_from_spec(base_spec, base_dir, f"{path}.base")
            grid_file = _require(spec, "grid_file", path)
            import os

            nodes, corr = read_grid_csv(os.path.join(base_dir, grid_file),
                                        dims.ambient)
            interp = KernelInterp(dims, nodes)(corr)
            return Perturbed(base, interp, float(spec.get("epsilon", 0.0)))
    except InvalidSpec:
        raise
    except Exception as exc:
        raise InvalidSpec(f"{type(exc).__name__}: {exc}", path) from exc
    raise InvalidSpec(f"unknown body kind {kind!r}", f"{path}.kind")


def body_to_spec(body: StarBody) -> dict:
    return body.spec()


def read_grid_csv(path: str, ambient: int) -> tuple[np.ndarray, np.ndarray]:
    """Read rows of ambient coordinates followed by one value."""
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != ambient + 1:
                raise InvalidSpec(
                    f"grid row {i} has {len(row)} fields, expected {ambient + 1}",
                    path,
                )
            rows.append([float(v) for v in row])
    if not rows:
        raise InvalidSpec("grid file is empty", path)
    data = np.asarray(rows, dtype=float)
    return data[:, :ambient], data[:, ambient]


def write_grid_csv(path: str, nodes: np.ndarray, values: np.ndarray) -> None:
    nodes = np.atleast_2d(nodes)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for node, val in zip(nodes, np.asarray(values, dtype=float)):
            writer.writerow([repr(float(c)) for c in node] + [repr(float(val))])
