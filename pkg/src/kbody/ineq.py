"""Section-domination experiments and the inequality reports built on
them: the stability bound, the hyperplane bound with its exact
ball-volume ratio constant, and the arbitrary-measure variants.

Every report carries an explicit tolerance equal to 3 times the sum of
the standard errors of its Monte Carlo inputs; "satisfied" always means
slack >= -tol.  Maxima over directions are taken over the operator grid
and then refined by a few golden-section steps along the best arc.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bodies import (
    Ball,
    DerivedRadial,
    KEllipsoid,
    MeasureDensity,
    StarBody,
    volume_with_error,
)
from .errors import (
    BadExponent,
    DimensionMismatch,
    HypothesisViolated,
    NotCertified,
)
from .ibody import MembershipCertificate, membership_ellipsoid_nnls
from .radon import (
    RadonOperator,
    measure_section,
    measure_section_profile,
    measure_volume_with_error,
    refined_max,
    section_profile,
    section_volume,
)
from .sphere import integrate_with_error, sphere_quadrature, surface_area
from .symmetry import Dimensions, as_rng, derive_seed, random_unit

__all__ = [
    "BPReport",
    "InequalityReport",
    "bp_check",
    "bp_stability",
    "hyperplane_inequality",
    "constant_ratio",
    "measure_bp_check",
    "measure_hyperplane_inequality",
    "weighted_section_inequality",
    "weighted_section_corollary",
    "ball_certificate",
    "associated_body",
]


@dataclass
class BPReport:
    section_margin: float
    volume_K: float
    volume_L: float
    implication_holds: bool
    section_tol: float
    volume_tol: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "section_margin": float(self.section_margin),
            "volume_K": float(self.volume_K),
            "volume_L": float(self.volume_L),
            "implication_holds": bool(self.implication_holds),
            "section_tol": float(self.section_tol),
            "volume_tol": float(self.volume_tol),
        }
        out.update({k: float(v) for k, v in self.details.items()
                    if isinstance(v, (int, float))})
        return out


@dataclass
class InequalityReport:
    lhs: float
    rhs: float
    slack: float
    constant_used: float
    satisfied: bool
    tol: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "lhs": float(self.lhs),
            "rhs": float(self.rhs),
            "slack": float(self.slack),
            "constant_used": float(self.constant_used),
            "satisfied": bool(self.satisfied),
            "tol": float(self.tol),
        }
        out.update({k: float(v) for k, v in self.details.items()
                    if isinstance(v, (int, float))})
        return out


def _report(lhs, rhs, constant, tol, **details) -> InequalityReport:
    slack = rhs - lhs
    return InequalityReport(float(lhs), float(rhs), float(slack),
                            float(constant), bool(slack >= -tol), float(tol),
                            details)


def _require_member(cert: MembershipCertificate | None, who: str) -> None:
    if cert is None:
        raise NotCertified(f"{who} requires a membership certificate")
    if cert.verdict != "member":
        raise NotCertified(f"{who} requires verdict 'member', got "
                           f"{cert.verdict!r} (residual {cert.residual:.3e})")


def ball_certificate(dims: Dimensions) -> MembershipCertificate:
    """Member certificate for the unit ball by exact atom recovery."""
    e1 = np.zeros(dims.ambient)
    e1[0] = 1.0
    return membership_ellipsoid_nnls(Ball(dims), [KEllipsoid(dims, 1.0, 1.0, e1)],
                                     grid_size=64)


def constant_ratio(n: int, kappa: int) -> float:
    """|B^{kn}|^{(n-1)/n} / |B^{kn-k}|, the sharp section constant.

    Always inside (e^{-k/2}, 1) by log-convexity of the Gamma function;
    the bracket is re-checked on every call.
    """
    if n < 2 or kappa < 1:
        raise ValueError("need n >= 2 and kappa >= 1")
    amb = kappa * n
    log_num = (n - 1) / n * ((amb / 2) * math.log(math.pi)
                             - math.lgamma(amb / 2 + 1))
    log_den = ((amb - kappa) / 2) * math.log(math.pi) - math.lgamma(
        (amb - kappa) / 2 + 1)
    ratio = math.exp(log_num - log_den)
    lower = math.exp(-kappa / 2.0)
    if not (lower < ratio < 1.0):
        raise ArithmeticError(
            f"ratio {ratio} escaped its bracket ({lower}, 1)")
    return ratio


def _refined_section_max(body: StarBody, op: RadonOperator, values, errs,
                         size: int, seed: int) -> tuple[float, float]:
    """(refined max section, stderr at the argmax)."""
    def fun(xi):
        return section_volume(body, xi, size, rng=derive_seed(seed, "refine"))

    best, _ = refined_max(op, values, fun)
    i0 = int(np.argmax(values))
    return max(best, float(values[i0])), float(errs[i0])


def bp_check(K: StarBody, L: StarBody, op: RadonOperator,
             profile_size: int = 2048, vol_size: int = 20000,
             seed: int = 0) -> BPReport:
    """Section domination vs volume comparison for a pair of bodies.

    implication_holds is false exactly when the sections of K stay
    below those of L (within tolerance) while the volume of K exceeds
    the volume of L by more than the volume tolerance.
    """
    if K.dims != L.dims or K.dims != op.dims:
        raise DimensionMismatch("bodies and operator must share dimensions")
    sec_seed = derive_seed(seed, "bp-sections")
    sk, ek = section_profile(K, op, profile_size, sec_seed)
    sl, el = section_profile(L, op, profile_size, sec_seed)
    diff = sk - sl
    node_err = ek + el

    def diff_fun(xi):
        r = derive_seed(seed, "bp-refine")
        return (section_volume(K, xi, profile_size, rng=r)
                - section_volume(L, xi, profile_size, rng=r))

    margin, _ = refined_max(op, diff, diff_fun)
    margin = max(margin, float(np.max(diff)))
    i0 = int(np.argmax(diff))
    section_tol = 3.0 * float(node_err[i0])

    rule = sphere_quadrature(K.dims.ambient, vol_size, "symmetrized_mc",
                             derive_seed(seed, "bp-volume"), K.dims)
    vk, evk = volume_with_error(K, rule)
    vl, evl = volume_with_error(L, rule)
    volume_tol = 3.0 * (evk + evl)
    dominated = margin <= section_tol
    holds = (not dominated) or (vk <= vl + volume_tol)
    return BPReport(float(margin), float(vk), float(vl), bool(holds),
                    section_tol, float(volume_tol),
                    {"volume_K_err": evk, "volume_L_err": evl})


def bp_stability(K: StarBody, L: StarBody, eps: float,
                 cert: MembershipCertificate | None = None,
                 op: RadonOperator | None = None,
                 profile_size: int = 2048, vol_size: int = 20000,
                 seed: int = 0) -> InequalityReport:
    """|K|^{(n-1)/n} <= |L|^{(n-1)/n} + eps * ratio constant.

    K must carry a member certificate.  When an operator is supplied,
    eps is validated against the measured worst section excess of K
    over L (it must cover it up to noise).
    """
    _require_member(cert, "bp_stability")
    if K.dims != L.dims:
        raise DimensionMismatch("bodies must share dimensions")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    dims = K.dims
    n = dims.n
    details = {}
    if op is not None:
        sec_seed = derive_seed(seed, "stability-sections")
        sk, ek = section_profile(K, op, profile_size, sec_seed)
        sl, el = section_profile(L, op, profile_size, sec_seed)
        excess = sk - sl
        i0 = int(np.argmax(excess))
        measured = max(0.0, float(excess[i0]))
        details["measured_section_excess"] = measured
        if eps < measured - 3.0 * float(ek[i0] + el[i0]):
            raise HypothesisViolated(
                f"eps {eps:.3e} does not cover the measured section excess "
                f"{measured:.3e}", witness=op.nodes[i0])
    rule = sphere_quadrature(dims.ambient, vol_size, "symmetrized_mc",
                             derive_seed(seed, "stability-volume"), dims)
    vk, evk = volume_with_error(K, rule)
    vl, evl = volume_with_error(L, rule)
    p = (n - 1) / n
    lhs = vk**p
    const = constant_ratio(n, dims.kappa)
    rhs = vl**p + eps * const
    # error of v^p is p v^{p-1} sigma_v
    tol = 3.0 * p * (vk ** (p - 1) * evk + vl ** (p - 1) * evl)
    details.update({"volume_K": vk, "volume_L": vl})
    return _report(lhs, rhs, const, tol, **details)


def hyperplane_inequality(K: StarBody,
                          cert: MembershipCertificate | None = None,
                          op: RadonOperator | None = None,
                          profile_size: int = 2048, vol_size: int = 20000,
                          seed: int = 0) -> InequalityReport:
    """|K|^{(n-1)/n} <= ratio * max section, for certified members."""
    _require_member(cert, "hyperplane_inequality")
    if op is None or op.dims != K.dims:
        raise DimensionMismatch("operator with matching dims required")
    dims = K.dims
    n = dims.n
    vals, errs = section_profile(K, op, profile_size,
                                 derive_seed(seed, "hyper-sections"))
    max_sec, sec_err = _refined_section_max(K, op, vals, errs,
                                            profile_size, seed)
    rule = sphere_quadrature(dims.ambient, vol_size, "symmetrized_mc",
                             derive_seed(seed, "hyper-volume"), dims)
    vk, evk = volume_with_error(K, rule)
    p = (n - 1) / n
    const = constant_ratio(n, dims.kappa)
    lhs = vk**p
    rhs = const * max_sec
    tol = 3.0 * (p * vk ** (p - 1) * evk + const * sec_err)
    return _report(lhs, rhs, const, tol, volume=vk, max_section=max_sec)


# ---------------------------------------------------------------------------
# Arbitrary-measure variants.
# ---------------------------------------------------------------------------

def _ratio_at(f: MeasureDensity, g: MeasureDensity, pts: np.ndarray) -> np.ndarray:
    num = np.asarray(f.eval_rows(pts), dtype=float)
    den = np.asarray(g.eval_rows(pts), dtype=float)
    if np.any(den <= 0):
        raise HypothesisViolated("density g vanishes on the sample",
                                 witness=pts[np.argmin(den)])
    return num / den


def associated_body(K: StarBody, f: MeasureDensity,
                    g: MeasureDensity) -> DerivedRadial:
    """Body D with rho_D^k = rho_K^k * (f/g evaluated on K's boundary).

    Its membership certificate is the second hypothesis of the
    measure comparison check."""
    dims = K.dims

    def radial(theta):
        rho = np.asarray(K.radial(theta), dtype=float)
        ratio = _ratio_at(f, g, theta * rho[:, None])
        return rho * ratio ** (1.0 / dims.kappa)

    return DerivedRadial(dims, radial, bounds=None)


def _check_monotone_rays(K: StarBody, f: MeasureDensity, g: MeasureDensity,
                         rays: int = 64, radii: int = 32, rng=0) -> None:
    """t -> t^k f(t x) / g(t x) must be non-decreasing along rays."""
    dims = K.dims
    rng = as_rng(rng)
    dirs = random_unit(dims.ambient, rng, rays)
    rmax = 2.0 * K.radial_bounds()[1]
    ts = np.linspace(rmax / radii, rmax, radii)
    for x in dirs:
        pts = ts[:, None] * x[None, :]
        h = ts**dims.kappa * _ratio_at(f, g, pts)
        drop = np.diff(h)
        j = int(np.argmin(drop))
        if drop[j] < -1e-9 * max(1.0, float(np.max(np.abs(h)))):
            raise HypothesisViolated(
                f"t^k f/g decreases along a ray between t={ts[j]:.4f} and "
                f"t={ts[j + 1]:.4f}", witness=x)


def measure_bp_check(K: StarBody, L: StarBody, f: MeasureDensity,
                     g: MeasureDensity, eps: float,
                     cert_d: MembershipCertificate | None = None,
                     op: RadonOperator | None = None,
                     profile_size: int = 2048, vol_size: int = 20000,
                     seed: int = 0, rays: int = 64,
                     radii: int = 32) -> InequalityReport:
    """mu_f(K) <= mu_f(L) + eps * |S^{kn-k-1}|^{-1} * boundary term.

    Preconditions enforced: the ray monotonicity of t^k f/g (sampled),
    and a member certificate for the associated body D with
    rho_D^k = rho_K^k * (f/g at the boundary of K).  When an operator
    is supplied, eps is checked against the worst measured g-section
    excess of K over L.
    """
    if K.dims != L.dims:
        raise DimensionMismatch("bodies must share dimensions")
    dims = K.dims
    _check_monotone_rays(K, f, g, rays, radii, derive_seed(seed, "rays"))
    _require_member(cert_d, "measure_bp_check (associated body D)")
    details = {}
    if op is not None:
        sec_seed = derive_seed(seed, "mbp-sections")
        sk, ek = measure_section_profile(K, g, op, profile_size, sec_seed)
        sl, el = measure_section_profile(L, g, op, profile_size, sec_seed)
        excess = sk - sl
        i0 = int(np.argmax(excess))
        measured = max(0.0, float(excess[i0]))
        details["measured_section_excess"] = measured
        if eps < measured - 3.0 * float(ek[i0] + el[i0]):
            raise HypothesisViolated(
                f"eps {eps:.3e} below measured g-section excess "
                f"{measured:.3e}", witness=op.nodes[i0])
    rule = sphere_quadrature(dims.ambient, vol_size, "symmetrized_mc",
                             derive_seed(seed, "mbp-volume"), dims)
    mk, emk = measure_volume_with_error(K, f, rule)
    ml, eml = measure_volume_with_error(L, f, rule)

    def boundary_term(pts):
        rho = np.asarray(K.radial(pts), dtype=float)
        ratio = _ratio_at(f, g, pts * rho[:, None])
        return rho**dims.kappa * ratio

    corr, ecorr = integrate_with_error(rule, boundary_term)
    area = surface_area(dims.ambient - dims.kappa)
    lhs = mk
    rhs = ml + eps * corr / area
    tol = 3.0 * (emk + eml + eps * ecorr / area)
    details.update({"mu_K": mk, "mu_L": ml, "boundary_term": corr / area})
    return _report(lhs, rhs, 1.0 / area, tol, **details)


def measure_hyperplane_inequality(K: StarBody, f: MeasureDensity,
                                  cert: MembershipCertificate | None = None,
                                  op: RadonOperator | None = None,
                                  profile_size: int = 2048,
                                  vol_size: int = 20000,
                                  seed: int = 0) -> InequalityReport:
    """mu_f(K) <= n/(n-1) * ratio * max_xi gamma_f(K cap H_xi) * |K|^{1/n}."""
    _require_member(cert, "measure_hyperplane_inequality")
    if op is None or op.dims != K.dims:
        raise DimensionMismatch("operator with matching dims required")
    dims = K.dims
    n = dims.n
    vals, errs = measure_section_profile(K, f, op, profile_size,
                                         derive_seed(seed, "mh-sections"))

    def fun(xi):
        return measure_section(K, f, xi, profile_size,
                               rng=derive_seed(seed, "mh-refine"))

    max_sec, _ = refined_max(op, vals, fun)
    max_sec = max(max_sec, float(np.max(vals)))
    i0 = int(np.argmax(vals))
    sec_err = float(errs[i0])
    rule = sphere_quadrature(dims.ambient, vol_size, "symmetrized_mc",
                             derive_seed(seed, "mh-volume"), dims)
    mk, emk = measure_volume_with_error(K, f, rule)
    vk, evk = volume_with_error(K, rule)
    ratio = constant_ratio(n, dims.kappa)
    const = n / (n - 1) * ratio
    lhs = mk
    rhs = const * max_sec * vk ** (1.0 / n)
    tol = 3.0 * (emk + const * (sec_err * vk ** (1.0 / n)
                                + max_sec * vk ** (1.0 / n - 1.0) * evk / n))
    return _report(lhs, rhs, const, tol, mu_K=mk, volume=vk,
                   max_section=max_sec)


def weighted_section_inequality(M: StarBody, K: StarBody, l: float,
                                cert_m: MembershipCertificate | None = None,
                                op: RadonOperator | None = None,
                                profile_size: int = 2048,
                                vol_size: int = 20000,
                                seed: int = 0) -> InequalityReport:
    """Moment inequality against a certified body M:

        integral over K of ||x||_M^{-l-k} dx
          <= n/(n-1) * ratio * |M|^{1/n} * max_xi
             integral over K cap H_xi of ||x||_M^{-l}.
    """
    from .bodies import RadialPower

    if M.dims != K.dims:
        raise DimensionMismatch("bodies must share dimensions")
    dims = K.dims
    k, n = dims.kappa, dims.n
    if l >= dims.ambient - k:
        raise BadExponent(f"need l < kn - k = {dims.ambient - k}, got {l}")
    _require_member(cert_m, "weighted_section_inequality (body M)")
    if op is None or op.dims != dims:
        raise DimensionMismatch("operator with matching dims required")
    f_vol = RadialPower(M, l + k)
    f_sec = RadialPower(M, l)
    vals, errs = measure_section_profile(K, f_sec, op, profile_size,
                                         derive_seed(seed, "ws-sections"))

    def fun(xi):
        return measure_section(K, f_sec, xi, profile_size,
                               rng=derive_seed(seed, "ws-refine"))

    max_sec, _ = refined_max(op, vals, fun)
    max_sec = max(max_sec, float(np.max(vals)))
    i0 = int(np.argmax(vals))
    sec_err = float(errs[i0])
    rule = sphere_quadrature(dims.ambient, vol_size, "symmetrized_mc",
                             derive_seed(seed, "ws-volume"), dims)
    lhs, elhs = measure_volume_with_error(K, f_vol, rule)
    vm, evm = volume_with_error(M, rule)
    ratio = constant_ratio(n, k)
    const = n / (n - 1) * ratio
    rhs = const * vm ** (1.0 / n) * max_sec
    tol = 3.0 * (elhs + const * (sec_err * vm ** (1.0 / n)
                                 + max_sec * vm ** (1.0 / n - 1.0) * evm / n))
    return _report(lhs, rhs, const, tol, volume_M=vm, max_section=max_sec)


def weighted_section_corollary(K: StarBody, which: str,
                               op: RadonOperator | None = None,
                               profile_size: int = 2048,
                               vol_size: int = 20000,
                               seed: int = 0) -> InequalityReport:
    """The two ball specializations of the moment inequality.

    which="moment":   l = -k, compares |K| against max section moments
                      of |x|^k (the l=-k reduction);
    which="inverse":  l = 0, compares the |x|^{-k} integral against max
                      plain sections.
    """
    dims = K.dims
    if which == "moment":
        l = -float(dims.kappa)
    elif which == "inverse":
        l = 0.0
    else:
        raise ValueError("which must be 'moment' or 'inverse'")
    return weighted_section_inequality(Ball(dims), K, l,
                                       cert_m=ball_certificate(dims), op=op,
                                       profile_size=profile_size,
                                       vol_size=vol_size, seed=seed)
