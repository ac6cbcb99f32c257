"""Statistics quantifying trajectory coupling and propagation of chaos.

Everything here is a pure function of its inputs: power means and maxima of
error vectors, hitting times and stopped processes on checkpoint grids,
exceedance probabilities with Wilson intervals, the difference-of-mean-and-
convolution statistics, kernel density L1 distances, weak-convergence test
function statistics, and log-log slope fits.  Aggregation across replicas
uses fixed summation order, so results are bit-reproducible for a given
input order.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import pairsum
from .errors import ConfigurationError
from .particles import sample_field_bilinear
from .pde import DensityField, kernel_convolution_field

# two-sided 95% normal quantile, frozen so intervals are reproducible
WILSON_Z = 1.959963984540054


@dataclass
class ErrorSample:
    """One replica's pairwise trajectory errors at one checkpoint."""
    t: float
    n: int
    epsilon: float
    replica: int
    errors: np.ndarray = None

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=float)
        if self.errors.ndim != 1 or self.errors.shape[0] != self.n:
            raise ConfigurationError("expected %d error values" % self.n)
        if np.any(self.errors < 0.0):
            raise ConfigurationError("errors must be nonnegative")


@dataclass
class MetricRecord:
    """One aggregated statistic, the row format of the result tables."""
    experiment: str
    t: float
    n: int
    epsilon: float
    alpha: float
    k: float
    stat: str
    value: float
    replicas: int
    ci_lo: float = None
    ci_hi: float = None

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ConfigurationError("statistic %r is not finite" % self.stat)
        if self.replicas < 1:
            raise ConfigurationError("replica count must be at least 1")


def power_mean(errors, k):
    """M_k = ((1/N) sum |x_i|^k)^(1/k); k = inf gives the max."""
    a = np.abs(np.asarray(errors, dtype=float)).ravel()
    if a.size == 0:
        raise ValueError("power mean of an empty vector")
    if np.isinf(k):
        return float(a.max())
    if k < 1.0:
        raise ValueError("k must be at least 1")
    m = float(a.max())
    if m == 0.0:
        return 0.0
    # factor out the max so large k cannot overflow; in exact arithmetic the
    # scaled mean lies in [1/N, 1], and the clamps keep both arms of the
    # mean-max sandwich M_k <= M_inf <= N^(1/k) M_k true through rounding
    val = m * float(np.mean((a / m) ** k)) ** (1.0 / k)
    scale = float(a.size) ** (1.0 / k)
    lo = m / scale
    while lo * scale < m:
        lo = float(np.nextafter(lo, np.inf))
    return min(max(val, lo), m)


def max_norm(errors):
    """M_inf = max |x_i|."""
    a = np.abs(np.asarray(errors, dtype=float)).ravel()
    if a.size == 0:
        raise ValueError("max norm of an empty vector")
    return float(a.max())


def geometric_mean(errors):
    """(prod |x_i|)^(1/N); any zero entry gives 0."""
    a = np.abs(np.asarray(errors, dtype=float)).ravel()
    if a.size == 0:
        raise ValueError("geometric mean of an empty vector")
    if np.any(a == 0.0):
        return 0.0
    # at or below the arithmetic mean by AM-GM; the clamp protects that
    # ordering from exp/log rounding
    return min(float(np.exp(np.mean(np.log(a)))), power_mean(a, 1.0))


def _check_trajectory(times, errors):
    times = np.asarray(times, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if errors.ndim != 2 or errors.shape[0] != times.shape[0]:
        raise ConfigurationError(
            "expected one error vector per checkpoint time")
    if times.size and np.any(np.diff(times) <= 0.0):
        raise ConfigurationError("checkpoint times must increase")
    return times, errors


def hitting_time(times, errors, alpha, k):
    """First checkpoint where (1/N) sum |e|^(2k) >= N^(-2 alpha k).

    Returns +inf when the level is never reached.  errors is (T, N), one
    row per checkpoint.
    """
    times, errors = _check_trajectory(times, errors)
    n = errors.shape[1]
    moments = np.mean(np.abs(errors) ** (2.0 * float(k)), axis=1)
    return hitting_time_from_moments(times, moments, n, alpha, k)


def hitting_time_from_moments(times, moments, n, alpha, k):
    """hitting_time from precomputed 2k-power means, one per checkpoint.

    Lets long runs keep only the scalar moment series instead of full
    error vectors.
    """
    if k < 1.0:
        raise ValueError("k must be at least 1")
    times = np.asarray(times, dtype=float)
    moments = np.asarray(moments, dtype=float)
    if moments.shape != times.shape:
        raise ConfigurationError("expected one moment per checkpoint time")
    hits = np.nonzero(moments >= float(n) ** (-2.0 * alpha * k))[0]
    return float(times[hits[0]]) if hits.size else np.inf


@dataclass
class StoppedProcess:
    times: np.ndarray
    values: np.ndarray
    tau: float
    overshoot: float    # max(0, sup values - 1), one-step stopping slack


def stopped_process(times, errors, alpha, k):
    """S(t) = N^(2 alpha k) (1/N) sum |e|^(2k) frozen at the hitting time.

    The hitting time lives on the checkpoint grid, so the stopped value can
    overshoot 1 by whatever a single step grows; the overshoot is reported
    rather than interpolated away.
    """
    times, errors = _check_trajectory(times, errors)
    n = errors.shape[1]
    moments = np.mean(np.abs(errors) ** (2.0 * float(k)), axis=1)
    return stopped_process_from_moments(times, moments, n, alpha, k)


def stopped_process_from_moments(times, moments, n, alpha, k):
    """stopped_process from precomputed 2k-power means."""
    if k < 1.0:
        raise ValueError("k must be at least 1")
    times = np.asarray(times, dtype=float)
    moments = np.asarray(moments, dtype=float)
    if moments.shape != times.shape:
        raise ConfigurationError("expected one moment per checkpoint time")
    values = moments * float(n) ** (2.0 * alpha * k)
    hits = np.nonzero(values >= 1.0)[0]
    if hits.size:
        cut = hits[0]
        tau = float(times[cut])
        values = values.copy()
        values[cut + 1:] = values[cut]
    else:
        tau = np.inf
    overshoot = max(0.0, float(values.max()) - 1.0) if values.size else 0.0
    return StoppedProcess(times=times, values=values, tau=tau,
                          overshoot=overshoot)


@dataclass
class ExceedanceEstimate:
    probability: float
    ci_lo: float
    ci_hi: float
    count: int
    replicas: int


def exceedance_probability(samples, threshold):
    """Empirical P(sample >= threshold) with a Wilson 95% interval."""
    x = np.asarray(samples, dtype=float).ravel()
    r = x.size
    if r == 0:
        raise ValueError("at least one replica is required")
    if r < 30:
        warnings.warn("Wilson interval is unreliable below 30 replicas",
                      RuntimeWarning, stacklevel=2)
    c = int(np.count_nonzero(x >= threshold))
    p = c / r
    z2 = WILSON_Z ** 2
    denom = 1.0 + z2 / r
    center = (p + z2 / (2.0 * r)) / denom
    half = WILSON_Z * np.sqrt(p * (1.0 - p) / r + z2 / (4.0 * r * r)) / denom
    # at the boundary counts one interval endpoint is exactly the estimate
    lo = 0.0 if c == 0 else max(0.0, float(center - half))
    hi = 1.0 if c == r else min(1.0, float(center + half))
    return ExceedanceEstimate(probability=p, ci_lo=lo, ci_hi=hi,
                              count=c, replicas=r)


_DMC_KINDS = {
    "phi": pairsum.KIND_POTENTIAL,
    "grad": pairsum.KIND_GRAD,
    "grad_power": pairsum.KIND_GRAD_POWER,
}


@dataclass
class DmcResult:
    values: np.ndarray   # per-particle mean-minus-convolution differences
    max_abs: float
    threshold: float     # N^(-theta)
    event: bool          # any |value| >= threshold
    kernel: str
    power: float


def dmc_statistics(positions, table, field: DensityField, theta,
                   kernel="grad", k=None, method="auto"):
    """Per-particle difference between the empirical pair mean and the
    field convolution, for one of the kernels the concentration events use.

    kernel "phi" compares the interaction itself, "grad" the gradient
    magnitude, "grad_power" the magnitude to the power 2k/(2k-1).  The
    event flag reports whether any particle deviates by at least
    N^(-theta).
    """
    if kernel not in _DMC_KINDS:
        raise ConfigurationError("unknown dmc kernel %r" % (kernel,))
    power = 1.0
    if kernel == "grad_power":
        if k is None or k < 1:
            raise ConfigurationError(
                "grad_power needs an exponent index k >= 1")
        power = 2.0 * k / (2.0 * k - 1.0)
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[1] != 2:
        raise ConfigurationError("positions must have shape (n, 2)")
    grid = field.grid
    emp = pairsum.mean_pair_statistic(positions, grid.box, table,
                                      _DMC_KINDS[kernel], power=power,
                                      method=method)
    conv = kernel_convolution_field(field, table, kind=kernel, power=power)
    vals = emp - sample_field_bilinear(conv, grid, positions)
    n = positions.shape[0]
    thr = float(n) ** (-float(theta))
    amax = float(np.max(np.abs(vals)))
    return DmcResult(values=vals, max_abs=amax, threshold=thr,
                     event=bool(amax >= thr), kernel=kernel, power=power)


@dataclass
class KdeResult:
    l1: float
    bandwidth: float
    l1_half: float      # same distance at half the bandwidth
    l1_double: float    # and at double, the sensitivity report
    density: np.ndarray


def _gaussian_smooth(w_hat, grid, bandwidth):
    kx = 2.0 * np.pi * np.fft.fftfreq(grid.n, d=grid.spacing)
    ky = 2.0 * np.pi * np.fft.rfftfreq(grid.n, d=grid.spacing)
    k2 = kx[:, None] ** 2 + ky[None, :] ** 2
    return np.fft.irfft2(w_hat * np.exp(-0.5 * bandwidth ** 2 * k2),
                         s=(grid.n, grid.n))


def kde_l1_distance(positions, reference: DensityField, bandwidth=None):
    """L1 distance between a Gaussian kernel density estimate of the
    samples and a reference density, by grid quadrature.

    The estimate lives on the reference's grid: samples are binned to the
    nearest node and smoothed with the periodized Gaussian.  The default
    bandwidth is the pooled coordinate spread times N^(-1/6); distances at
    half and double that bandwidth are reported alongside, since absolute
    values are bandwidth-sensitive and only trends carry meaning.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[1] != 2:
        raise ConfigurationError("positions must have shape (n, 2)")
    n_samp = positions.shape[0]
    if n_samp < 100:
        raise ConfigurationError(
            "kernel density estimate needs at least 100 samples")
    grid = reference.grid
    if bandwidth is None:
        spread = float(np.sqrt(np.mean(positions.var(axis=0))))
        bandwidth = max(spread, grid.spacing) * n_samp ** (-1.0 / 6.0)
    if bandwidth <= 0.0:
        raise ConfigurationError("bandwidth must be positive")
    h = grid.spacing
    idx = np.round((positions + grid.half_width) / h).astype(np.int64) % grid.n
    counts = np.bincount(idx[:, 0] * grid.n + idx[:, 1],
                         minlength=grid.n * grid.n).reshape(grid.n, grid.n)
    w_hat = np.fft.rfft2(counts / (n_samp * h * h))
    h2 = h * h

    def dist(b):
        est = _gaussian_smooth(w_hat, grid, b)
        return float(np.sum(np.abs(est - reference.u)) * h2), est

    l1, density = dist(bandwidth)
    l1_half, _ = dist(0.5 * bandwidth)
    l1_double, _ = dist(2.0 * bandwidth)
    return KdeResult(l1=l1, bandwidth=float(bandwidth), l1_half=l1_half,
                     l1_double=l1_double, density=density)


def _fn_one(pts, half_width):
    return np.ones(pts.shape[:-1])


def _fn_x1(pts, half_width):
    return pts[..., 0]


def _fn_x2(pts, half_width):
    return pts[..., 1]


def _fn_gauss(pts, half_width):
    return np.exp(-0.5 * (pts[..., 0] ** 2 + pts[..., 1] ** 2))


def _fn_sine(pts, half_width):
    return np.sin(np.pi * pts[..., 0] / half_width)


# bounded smooth observables; enough to separate the weak limits at desk
# scale without chasing a full metrizing family
TEST_FUNCTIONS = {
    "one": _fn_one,
    "x1": _fn_x1,
    "x2": _fn_x2,
    "gauss": _fn_gauss,
    "sine": _fn_sine,
}


def _resolve_fn(f):
    if callable(f):
        return f
    try:
        return TEST_FUNCTIONS[f]
    except KeyError:
        raise ConfigurationError("unknown test function %r" % (f,)) from None


def field_inner_product(fn, reference: DensityField):
    """Grid quadrature of fn against the density."""
    fn = _resolve_fn(fn)
    grid = reference.grid
    ax = grid.axis()
    pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1)
    return float(np.sum(fn(pts, grid.half_width) * reference.u)
                 * grid.spacing ** 2)


@dataclass
class WeakChaosResult:
    statistic: float
    ci_lo: float
    ci_hi: float
    replicas: int
    phi: str
    psi: str


def weak_chaos_statistic(pairs, phi, psi, reference: DensityField,
                         bootstrap=500, seed=0):
    """|E[phi(X1) psi(X2)] - <phi,u><psi,u>| over replica pairs, with a
    bootstrap percentile interval.

    pairs has shape (R, 2, 2): per replica, the positions of the first two
    particles.  Deviation from the product form measures residual
    dependence between tagged particles.
    """
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim != 3 or pairs.shape[1:] != (2, 2):
        raise ConfigurationError("pairs must have shape (R, 2, 2)")
    r = pairs.shape[0]
    if r == 0:
        raise ValueError("at least one replica is required")
    if r < 100:
        warnings.warn("weak-convergence statistic below 100 replicas is "
                      "noise-dominated", RuntimeWarning, stacklevel=2)
    phi_name = phi if isinstance(phi, str) else getattr(phi, "__name__", "?")
    psi_name = psi if isinstance(psi, str) else getattr(psi, "__name__", "?")
    fn_phi, fn_psi = _resolve_fn(phi), _resolve_fn(psi)
    half = reference.grid.half_width
    prod = (fn_phi(pairs[:, 0, :], half) * fn_psi(pairs[:, 1, :], half))
    target = (field_inner_product(fn_phi, reference)
              * field_inner_product(fn_psi, reference))
    stat = abs(float(prod.mean()) - target)
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, r, size=(int(bootstrap), r))
    boot = np.abs(prod[draws].mean(axis=1) - target)
    lo, hi = np.percentile(boot, [2.5, 97.5])
    return WeakChaosResult(statistic=stat, ci_lo=float(lo), ci_hi=float(hi),
                           replicas=r, phi=phi_name, psi=psi_name)


@dataclass
class ScalingFit:
    slope: float
    stderr: float
    intercept: float
    n_points: int


def fit_scaling_exponent(x, y):
    """Ordinary least squares slope of log y against log x."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    if x.size < 4:
        raise ValueError("at least 4 points are required for a rate fit")
    if np.any(x <= 0.0) or np.any(y <= 0.0):
        raise ValueError("log-log fit needs positive values")
    lx, ly = np.log(x), np.log(y)
    dx = lx - lx.mean()
    sxx = float(np.sum(dx * dx))
    if sxx == 0.0:
        raise ValueError("x values must not all coincide")
    slope = float(np.sum(dx * (ly - ly.mean())) / sxx)
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    stderr = float(np.sqrt(np.sum(resid ** 2) / (x.size - 2) / sxx))
    return ScalingFit(slope=slope, stderr=stderr, intercept=intercept,
                      n_points=x.size)
