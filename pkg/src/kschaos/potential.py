"""Screened 2D interaction kernel, its mollification, and radial tables.

The pair interaction is Phi(x) = chi/(2 pi) * K0(|x|), the Green's function
of (-Lap + 1) in the plane scaled by the signal strength chi.  Particles
never see Phi directly: they see Phi_eps = Phi * j_eps, the convolution with
a compactly supported mollifier of width eps.  Phi_eps is radial and smooth,
so it is tabulated once per (chi, eps) on a radial grid and evaluated by
monotone cubic interpolation everywhere else, including inside compiled
pair-summation kernels.

Table layout: node spacing is exactly eps/8 on [0, 2 eps] and geometric
beyond, which makes the interpolation interval computable in O(1) from the
radius (no binary search in the hot loops).
"""

import io
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from .errors import ConfigurationError

__all__ = [
    "EULER_GAMMA", "bessel_k0", "yukawa_eval", "yukawa_cutoff",
    "MollifierSpec", "YukawaSpec", "PotentialTable", "build_table",
    "eval_pair", "table_phi", "table_grad", "save_table", "load_table",
    "norm_scaling_diagnostic", "mollifier_lq_norm", "mollifier_identity_gap",
]

EULER_GAMMA = 0.5772156649015329

# Series split radius.  The ascending series loses ~7 digits to cancellation
# at r = 9 and the asymptotic series reaches ~1e-8 relative error there, so
# both branches meet at comparable accuracy.
_K0_SPLIT = 9.0
_K0_ASCENDING_TERMS = 42
_K0_ASYMPTOTIC_TERMS = 18

TABLE_FORMAT_VERSION = 1


def bessel_k0(r):
    """Modified Bessel function K0, ascending series below r=9, asymptotic above.

    Accepts scalars or arrays of positive radii.  Relative accuracy is about
    1e-8 near the split and much better elsewhere, which is far inside every
    tolerance used downstream (the kernel values there are ~5e-5).
    """
    r = np.asarray(r, dtype=float)
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    if np.any(r < 0):
        raise ValueError("bessel_k0 needs nonnegative radii")
    out = np.empty_like(r)
    out[r == 0] = np.inf

    lo = (r > 0) & (r <= _K0_SPLIT)
    if np.any(lo):
        x = r[lo]
        q = 0.25 * x * x
        term = np.ones_like(x)        # q^k / (k!)^2
        i0 = np.ones_like(x)
        acc = np.zeros_like(x)        # sum of term * H_k
        harmonic = 0.0
        for k in range(1, _K0_ASCENDING_TERMS + 1):
            term = term * q / (k * k)
            harmonic += 1.0 / k
            i0 += term
            acc += term * harmonic
        out[lo] = -(np.log(0.5 * x) + EULER_GAMMA) * i0 + acc

    hi = r > _K0_SPLIT
    if np.any(hi):
        x = r[hi]
        term = np.ones_like(x)
        acc = np.ones_like(x)
        for k in range(1, _K0_ASYMPTOTIC_TERMS + 1):
            term = term * (-((2 * k - 1) ** 2) / (8.0 * x * k))
            acc += term
        out[hi] = np.sqrt(0.5 * np.pi / x) * np.exp(-x) * acc

    return out[0] if scalar else out


def yukawa_eval(r, chi=1.0):
    """Unmollified interaction Phi(r) = chi/(2 pi) K0(r)."""
    return chi / (2.0 * np.pi) * bessel_k0(r)


def yukawa_cutoff(chi, tail_tolerance):
    """Smallest radius beyond which |Phi| stays below tail_tolerance."""
    if chi == 0.0:
        return 0.0
    target = tail_tolerance / (abs(chi) / (2.0 * np.pi))
    lo, hi = 1e-6, 2.0
    while bessel_k0(hi) > target:
        hi *= 2.0
        if hi > 1e4:
            raise ConfigurationError("tail tolerance too small to resolve")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if bessel_k0(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * hi:
            break
    return hi


# -- mollifier ---------------------------------------------------------------

def _bump_profile(s):
    """Unnormalized standard bump exp(-1/(1-s^2)) as a function of radius s."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    with np.errstate(over="ignore"):
        out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


_bump_norm_cache = {}


def _bump_normalization():
    """Constant C with integral of C*exp(-1/(1-|x|^2)) over the disc equal 1."""
    if "C" not in _bump_norm_cache:
        x, w = leggauss(200)
        q = 0.5 * (x + 1.0)
        wq = 0.5 * w
        _bump_norm_cache["C"] = 1.0 / (2.0 * np.pi * np.sum(wq * q * _bump_profile(q)))
    return _bump_norm_cache["C"]


def _bump_second_moment():
    """int |z|^2 j(z) dz for the standard bump (enters the far-tail gap)."""
    if "m2" not in _bump_norm_cache:
        x, w = leggauss(200)
        q = 0.5 * (x + 1.0)
        wq = 0.5 * w
        _bump_norm_cache["m2"] = (2.0 * np.pi * _bump_normalization()
                                  * np.sum(wq * q**3 * _bump_profile(q)))
    return _bump_norm_cache["m2"]


@dataclass
class MollifierSpec:
    """Mollifier j_eps(x) = eps^-2 j(x/eps), unit mass, support in B_eps.

    profile maps radius s in [0, 1) to the unnormalized shape; the default is
    the standard bump.  Custom profiles are supported for field-side gridding
    only; table construction differentiates the standard bump analytically.
    """

    epsilon: float
    profile: callable = field(default=_bump_profile)

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ConfigurationError(
                f"mollifier width must be in (0, 1), got {self.epsilon}")

    @property
    def normalization(self):
        if self.profile is _bump_profile:
            return _bump_normalization()
        x, w = leggauss(200)
        q = 0.5 * (x + 1.0)
        wq = 0.5 * w
        return 1.0 / (2.0 * np.pi * np.sum(wq * q * self.profile(q)))

    def values(self, y):
        """j_eps at displacement vectors y, shape (..., 2)."""
        y = np.asarray(y, dtype=float)
        s = np.sqrt(np.sum(y * y, axis=-1)) / self.epsilon
        return self.normalization / self.epsilon**2 * self.profile(s)

    def radial(self, rho):
        """j_eps as a function of radius."""
        rho = np.asarray(rho, dtype=float)
        return (self.normalization / self.epsilon**2
                * self.profile(rho / self.epsilon))


@dataclass(frozen=True)
class YukawaSpec:
    """Interaction strength and the tail threshold that fixes the cutoff."""

    chi: float
    tail_tolerance: float = 1e-10

    def __post_init__(self):
        if self.chi < 0:
            raise ConfigurationError("chi must be nonnegative")
        if not (0 < self.tail_tolerance < 1e-2):
            raise ConfigurationError("tail_tolerance must be in (0, 1e-2)")

    @property
    def cutoff_radius(self):
        return yukawa_cutoff(self.chi, self.tail_tolerance)


# -- quadrature for the mollified kernel -------------------------------------

def _bump_kernels(z):
    """Value, d/dz1, and d^2/dz1^2 of the normalized bump at points z (..,2).

    Derivatives follow from j = C exp(g), g = -1/(1-s), s = |z|^2:
    d1 g = -2 z1 (1-s)^-2,  d11 g = -2 (1-s)^-2 - 8 z1^2 (1-s)^-3.
    """
    c = _bump_normalization()
    z = np.asarray(z, dtype=float)
    s = np.sum(z * z, axis=-1)
    inside = s < 1.0
    j = np.zeros_like(s)
    d1 = np.zeros_like(s)
    d11 = np.zeros_like(s)
    si = s[inside]
    z1 = z[..., 0][inside]
    om = 1.0 - si
    val = c * np.exp(-1.0 / om)
    g1 = -2.0 * z1 / om**2
    g11 = -2.0 / om**2 - 8.0 * z1**2 / om**3
    j[inside] = val
    d1[inside] = val * g1
    d11[inside] = val * (g1 * g1 + g11)
    return j, d1, d11


def _graded_panels(a, b, n_panels, n_gauss, grade_to_a):
    """Composite Gauss nodes on [a, b]; dyadic grading toward a for a=0 ends."""
    x, w = leggauss(n_gauss)
    if grade_to_a:
        edges = a + (b - a) * np.concatenate(
            ([0.0], 0.5 ** np.arange(n_panels - 1, -1, -1.0)))
    else:
        edges = np.linspace(a, b, n_panels + 1)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (hi - lo) * (x + 1.0) + lo)
        weights.append(0.5 * (hi - lo) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _mollified_at_radius(r, eps, chi, n_theta=48):
    """(Phi_eps, d/dr Phi_eps, d^2/dr^2 Phi_eps) at radius r by quadrature.

    Polar coordinates centred on the kernel singularity: the integration
    variable w runs over the annulus where both Phi(|w|) and the shifted
    mollifier j_eps(r e1 - w) are active.  The theta integral collapses to
    the arc where |r e1 - w| < eps.
    """
    if r == 0.0:
        rho, wr = _graded_panels(0.0, eps, 10, 16, grade_to_a=True)
        phi = yukawa_eval(rho, chi)
        j = MollifierSpec(eps).radial(rho)
        return 2.0 * np.pi * np.sum(wr * rho * phi * j), 0.0, None

    # Inner edge max(0, r-eps): for r < eps the whole disc rho < eps - r lies
    # inside the mollifier support (theta_max clips to pi there).  Grading
    # toward the inner edge resolves the rho*log(rho) behaviour of the kernel.
    a, b = max(0.0, r - eps), r + eps
    rho, wr = _graded_panels(a, b, 10, 16, grade_to_a=True)

    # Arc half-width; cos(theta_max) from the law of cosines, clipped for the
    # full-circle regime rho <= eps - r.
    carg = (r * r + rho * rho - eps * eps) / (2.0 * r * rho)
    theta_max = np.arccos(np.clip(carg, -1.0, 1.0))
    gx, gw = leggauss(n_theta)
    theta = 0.5 * theta_max[:, None] * (gx[None, :] + 1.0)
    wt = 0.5 * theta_max[:, None] * gw[None, :] * 2.0   # even in theta

    y1 = (r - rho[:, None] * np.cos(theta)) / eps
    y2 = (-rho[:, None] * np.sin(theta)) / eps
    z = np.stack([y1, y2], axis=-1)
    j, d1, d11 = _bump_kernels(z)

    phi_rho = yukawa_eval(rho, chi)
    base = wr * rho * phi_rho
    val = np.sum(base * np.sum(wt * j, axis=1)) / eps**2
    grad = np.sum(base * np.sum(wt * d1, axis=1)) / eps**3
    hess = np.sum(base * np.sum(wt * d11, axis=1)) / eps**4
    return val, grad, hess


# -- tables ------------------------------------------------------------------

@dataclass
class PotentialTable:
    """Radial tabulation of Phi_eps with monotone cubic interpolation.

    grad_values stores the signed radial derivative phi'(r), so that
    grad Phi_eps(x) = grad_values(|x|) * x/|x| (negative for a decreasing
    kernel).  hess_sup bounds the spectral norm of the Hessian: the radial
    eigenvalue is phi'' and the tangential one phi'/r.
    """

    chi: float
    epsilon: float
    tail_tolerance: float
    cutoff_radius: float
    radii: np.ndarray
    phi_values: np.ndarray
    grad_values: np.ndarray
    hess_radial: np.ndarray
    hess_sup: float
    n_core: int            # number of uniform intervals on [0, 2 eps]
    geo_ratio: float       # spacing ratio of the geometric tail
    phi_coeff: np.ndarray = field(repr=False, default=None)
    grad_coeff: np.ndarray = field(repr=False, default=None)
    _phi_interp: object = field(repr=False, default=None, compare=False)
    _grad_interp: object = field(repr=False, default=None, compare=False)

    def __post_init__(self):
        # Shape-preserving cubic interpolation.  Where quadrature supplies the
        # exact nodal slope (phi' for phi, phi'' for phi') a cubic Hermite
        # interpolant is used: same piecewise-cubic form as PCHIP but without
        # PCHIP's slope estimation, which loses the evenness of phi at r = 0
        # and costs ~1e-3 relative error on the first interval.  Monotone
        # shape is verified in build_table.
        if self._phi_interp is None and len(self.radii) > 1:
            if self.hess_radial is not None and np.all(np.isfinite(self.hess_radial)):
                self._phi_interp = CubicHermiteSpline(
                    self.radii, self.phi_values, self.grad_values)
                self._grad_interp = CubicHermiteSpline(
                    self.radii, self.grad_values, self.hess_radial)
            else:
                self._phi_interp = PchipInterpolator(self.radii, self.phi_values)
                self._grad_interp = PchipInterpolator(self.radii, self.grad_values)
            self.phi_coeff = np.ascontiguousarray(self._phi_interp.c)
            self.grad_coeff = np.ascontiguousarray(self._grad_interp.c)

    @property
    def phi_at_zero(self):
        return float(self.phi_values[0])


def build_table(chi, epsilon, tail_tolerance=1e-10, geo_ratio=1.04):
    """Tabulate Phi_eps = Phi * j_eps on a radial grid.

    Node spacing is eps/8 up to 2 eps (spec of the interpolation error near
    the mollified core) and geometric with the given ratio out to the tail
    cutoff.  All values come from the annular quadrature above.
    """
    spec = YukawaSpec(chi=chi, tail_tolerance=tail_tolerance)
    MollifierSpec(epsilon)  # validates the width
    if chi == 0.0:
        radii = np.array([0.0, 1.0])
        zeros = np.zeros(2)
        return PotentialTable(
            chi=0.0, epsilon=epsilon, tail_tolerance=tail_tolerance,
            cutoff_radius=0.0, radii=radii, phi_values=zeros.copy(),
            grad_values=zeros.copy(), hess_radial=zeros.copy(),
            hess_sup=0.0, n_core=1, geo_ratio=geo_ratio)

    # The tail threshold applies to the mollified kernel, which sits above
    # the bare one by ~(m2/4) eps^2 in the far field; solve the cutoff with
    # the tolerance deflated by twice that factor so phi(cutoff) <= tolerance.
    inflation = 1.0 + 0.5 * _bump_second_moment() * epsilon**2
    cutoff = max(yukawa_cutoff(chi, tail_tolerance / inflation), 2.5 * epsilon)
    core_end = 2.0 * epsilon
    radii_core = np.linspace(0.0, core_end, 17)     # spacing exactly eps/8
    n_geo = int(np.ceil(np.log(cutoff / core_end) / np.log(geo_ratio)))
    radii_geo = core_end * geo_ratio ** np.arange(1, n_geo + 1)
    radii_geo[-1] = cutoff
    radii = np.concatenate([radii_core, radii_geo])

    phi = np.empty_like(radii)
    grad = np.empty_like(radii)
    hess = np.empty_like(radii)
    for m, r in enumerate(radii):
        val, g, h = _mollified_at_radius(r, epsilon, chi)
        phi[m], grad[m] = val, g
        hess[m] = h if h is not None else np.nan
    grad[0] = 0.0
    # phi''(0) by the generic quadrature just off the origin (both Hessian
    # eigenvalues coincide there by radial symmetry).
    _, _, hess[0] = _mollified_at_radius(1e-9 * epsilon, epsilon, chi)

    tangential = np.abs(grad[1:]) / radii[1:]
    hess_sup = float(max(np.max(np.abs(hess)), np.max(tangential)))

    table = PotentialTable(
        chi=chi, epsilon=epsilon, tail_tolerance=tail_tolerance,
        cutoff_radius=cutoff, radii=radii, phi_values=phi, grad_values=grad,
        hess_radial=hess, hess_sup=hess_sup, n_core=16, geo_ratio=geo_ratio)

    # The kernel must stay a decreasing function of radius after
    # interpolation; single-signed slope data keeps Hermite cubics monotone
    # in practice, and this guards the assumption.
    dense = np.linspace(0.0, cutoff, 4 * len(radii))
    if np.any(np.diff(table_phi(table, dense)) > 1e-13 * phi[0]):
        raise ConfigurationError("interpolated kernel is not monotone")
    return table


def table_phi(table, r):
    """Phi_eps(r) from the table; zero at and beyond the cutoff."""
    r = np.asarray(r, dtype=float)
    if table.chi == 0.0:
        return np.zeros_like(r)
    out = np.where(r < table.radii[-1], table._phi_interp(np.minimum(r, table.radii[-1])), 0.0)
    return out


def table_grad(table, r):
    """Signed radial derivative phi'(r) from the table; zero beyond cutoff."""
    r = np.asarray(r, dtype=float)
    if table.chi == 0.0:
        return np.zeros_like(r)
    out = np.where(r < table.radii[-1], table._grad_interp(np.minimum(r, table.radii[-1])), 0.0)
    return out


def eval_pair(table, dx):
    """(Phi_eps(|dx|), grad Phi_eps(dx)) for displacement vectors dx (..., 2)."""
    dx = np.asarray(dx, dtype=float)
    r = np.sqrt(np.sum(dx * dx, axis=-1))
    phi = table_phi(table, r)
    gr = table_grad(table, r)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(r > 0, gr / np.where(r > 0, r, 1.0), 0.0)
    grad = dx * scale[..., None]
    return phi, grad


# -- persistence -------------------------------------------------------------

def save_table(table, path):
    """Write a table as CSV with a commented header (versioned)."""
    buf = io.StringIO()
    buf.write(f"# kschaos potential table v{TABLE_FORMAT_VERSION}\n")
    buf.write(f"# chi={float(table.chi)!r} epsilon={float(table.epsilon)!r} "
              f"tail_tolerance={float(table.tail_tolerance)!r}\n")
    buf.write(f"# cutoff_radius={float(table.cutoff_radius)!r} "
              f"hess_sup={float(table.hess_sup)!r} n_core={int(table.n_core)} "
              f"geo_ratio={float(table.geo_ratio)!r}\n")
    buf.write("radius,phi,grad,hess\n")
    for r, p, g, h in zip(table.radii, table.phi_values,
                          table.grad_values, table.hess_radial):
        buf.write(f"{float(r)!r},{float(p)!r},{float(g)!r},{float(h)!r}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def load_table(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# kschaos potential table v"):
        raise ConfigurationError(f"{path}: not a potential table file")
    version = int(lines[0].rsplit("v", 1)[1])
    if version != TABLE_FORMAT_VERSION:
        raise ConfigurationError(f"{path}: unsupported table version {version}")
    meta = {}
    for line in lines[1:3]:
        for chunk in line.lstrip("# ").split():
            key, val = chunk.split("=")
            meta[key] = float(val)
    body = np.array([[float(v) for v in line.split(",")]
                     for line in lines[4:] if line])
    return PotentialTable(
        chi=meta["chi"], epsilon=meta["epsilon"],
        tail_tolerance=meta["tail_tolerance"],
        cutoff_radius=meta["cutoff_radius"], radii=body[:, 0],
        phi_values=body[:, 1], grad_values=body[:, 2],
        hess_radial=body[:, 3], hess_sup=meta["hess_sup"],
        n_core=int(meta["n_core"]), geo_ratio=meta["geo_ratio"])


# -- diagnostics -------------------------------------------------------------

def _fit_loglog(x, y):
    """OLS slope of log y vs log x with its standard error."""
    lx, ly = np.log(x), np.log(y)
    n = len(lx)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    sxx = np.sum((lx - lx.mean()) ** 2)
    dof = max(n - 2, 1)
    stderr = np.sqrt(np.sum(resid**2) / dof / sxx)
    return float(slope), float(stderr), float(intercept)


def norm_scaling_diagnostic(chi, eps_list, tail_tolerance=1e-10):
    """Fit how the mollified kernel's norms scale with 1/eps.

    Returns per-eps sup norms of Phi_eps, its gradient, and its Hessian, and
    least-squares slopes s0, s1, s2 of log(norm) against log(1/eps).  The
    kernel core is logarithmic so s0 should stay well below 1; the gradient
    and Hessian scale like 1/eps and 1/eps^2.
    """
    eps_list = sorted(float(e) for e in eps_list)
    if len(eps_list) < 4:
        raise ConfigurationError("need at least 4 widths to fit exponents")
    if max(eps_list) / min(eps_list) < 4.0:
        raise ConfigurationError("widths must span at least two dyadic decades")
    sup_phi, sup_grad, sup_hess = [], [], []
    for eps in eps_list:
        t = build_table(chi, eps, tail_tolerance)
        sup_phi.append(t.phi_at_zero)
        sup_grad.append(float(np.max(np.abs(t.grad_values))))
        sup_hess.append(t.hess_sup)
    inv = np.array([1.0 / e for e in eps_list])
    s0, se0, _ = _fit_loglog(inv, np.array(sup_phi))
    s1, se1, _ = _fit_loglog(inv, np.array(sup_grad))
    s2, se2, _ = _fit_loglog(inv, np.array(sup_hess))
    return {
        "eps": np.array(eps_list),
        "sup_phi": np.array(sup_phi),
        "sup_grad": np.array(sup_grad),
        "sup_hess": np.array(sup_hess),
        "s0": s0, "s0_stderr": se0,
        "s1": s1, "s1_stderr": se1,
        "s2": s2, "s2_stderr": se2,
    }


def mollifier_lq_norm(epsilon, q, grad=False):
    """L^q norm of j_eps (or of |grad j_eps|) by radial quadrature."""
    spec = MollifierSpec(epsilon)
    rho, w = _graded_panels(0.0, epsilon, 8, 24, grade_to_a=False)
    if grad:
        z = np.stack([rho / epsilon, np.zeros_like(rho)], axis=-1)
        _, d1, _ = _bump_kernels(z)
        vals = np.abs(d1) / epsilon**3
    else:
        vals = spec.radial(rho)
    return float((2.0 * np.pi * np.sum(w * rho * vals**q)) ** (1.0 / q))


def mollifier_identity_gap(epsilon, q, grad=False):
    """Relative gap between the scaled norm and the eps=1 scaling identity.

    ||j_eps||_q = (1/eps)^(2(q-1)/q) ||j||_q and
    ||grad j_eps||_q = (1/eps)^((3q-2)/q) ||grad j||_q.
    """
    base = mollifier_lq_norm(1.0 - 1e-12, q, grad=grad)
    direct = mollifier_lq_norm(epsilon, q, grad=grad)
    expo = (3.0 * q - 2.0) / q if grad else 2.0 * (q - 1.0) / q
    predicted = (1.0 / epsilon) ** expo * base
    return abs(direct - predicted) / predicted
