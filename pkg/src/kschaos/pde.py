"""Spectral solver for the density/signal system on a periodic box.

The density u follows dens_t u = Lap(e^{-v} u + u) with the signal v solving
-Lap v + v = chi * (u convolved with the mollifier), and the unmollified
source when epsilon is zero.  Fourier collocation on [-L, L)^2 handles both
equations: the Helmholtz solve is exact per mode, the density step treats
the plain Laplacian implicitly and the signal-weighted part explicitly with
v frozen at step start.  The zero mode is untouched by the step, so mass is
conserved to rounding.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline
from scipy.special import j0

from .errors import ConfigurationError, StabilityError
from .potential import _bump_normalization, _bump_profile

FIELD_FORMAT_VERSION = 1

# caches keyed on grid geometry; read-mostly, single-writer
_wavenumber_cache = {}
_symbol_cache = {}


@dataclass(frozen=True)
class GridSpec:
    """Periodic box [-L, L)^2 with n collocation points per axis."""
    half_width: float = 8.0
    n: int = 256
    dt: float = 1e-3
    t_end: float = 1.0

    def __post_init__(self):
        if self.n < 64 or self.n & (self.n - 1) != 0:
            raise ConfigurationError("n must be a power of two, at least 64")
        if not (self.half_width > 0.0 and np.isfinite(self.half_width)):
            raise ConfigurationError("half_width must be positive")
        if not (self.dt > 0.0 and np.isfinite(self.dt)):
            raise ConfigurationError("dt must be positive")
        if self.t_end < 0.0:
            raise ConfigurationError("t_end must be nonnegative")

    @property
    def spacing(self):
        return 2.0 * self.half_width / self.n

    @property
    def box(self):
        return 2.0 * self.half_width

    def axis(self):
        return -self.half_width + self.spacing * np.arange(self.n)


def check_epsilon_resolved(epsilon, grid):
    """Width floor: below two grid cells the discrete system no longer
    represents the mollified model."""
    if 0.0 < epsilon < 2.0 * grid.spacing:
        raise ConfigurationError(
            "epsilon %.4g under the resolution floor 2*dx = %.4g"
            % (epsilon, 2.0 * grid.spacing))


@dataclass
class DensityField:
    u: np.ndarray
    time: float
    epsilon: float
    grid: GridSpec

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.u.shape != (self.grid.n, self.grid.n):
            raise ConfigurationError("field shape does not match the grid")
        if self.u.min() < 0.0:
            raise ConfigurationError("density has negative values")
        if abs(self.mass - 1.0) > 1e-8:
            raise ConfigurationError("density mass %.3e away from 1"
                                     % (self.mass - 1.0))

    @property
    def mass(self):
        return float(self.u.sum()) * self.grid.spacing ** 2


@dataclass
class SignalField:
    v: np.ndarray
    time: float
    source_epsilon: float
    grid: GridSpec
    negative_floor: float = field(default=0.0)


def _wavenumbers(grid):
    key = (grid.n, grid.half_width)
    if key not in _wavenumber_cache:
        h = grid.spacing
        kx = 2.0 * np.pi * np.fft.fftfreq(grid.n, d=h)
        ky = 2.0 * np.pi * np.fft.rfftfreq(grid.n, d=h)
        _wavenumber_cache[key] = kx[:, None] ** 2 + ky[None, :] ** 2
    return _wavenumber_cache[key]


def mollifier_symbol(epsilon, grid):
    """Fourier transform of the mollifier on the grid's rfft2 modes, with
    the zero mode pinned to exactly 1 (unit mass).  epsilon = 0 selects the
    identity symbol."""
    if epsilon == 0.0:
        return np.ones_like(_wavenumbers(grid))
    check_epsilon_resolved(epsilon, grid)
    key = (float(epsilon), grid.n, grid.half_width)
    if key not in _symbol_cache:
        k2 = _wavenumbers(grid)
        kappa = epsilon * np.sqrt(k2)
        # radial Hankel integral of the bump, tabulated densely in kappa
        # and splined; the profile is smooth so 200 nodes are exact to
        # rounding and the spline is far below spectral truncation error
        x, w = leggauss(200)
        q = 0.5 * (x + 1.0)
        wq = (0.5 * 2.0 * np.pi * _bump_normalization()) * w * q \
            * _bump_profile(q)
        kk = np.linspace(0.0, float(kappa.max()) + 1e-9, 4097)
        samples = j0(np.outer(kk, q)) @ wq
        sym = CubicSpline(kk, samples)(kappa)
        sym /= sym[0, 0]
        _symbol_cache[key] = sym
    return _symbol_cache[key]


def solve_signal(u: DensityField, chi, epsilon) -> SignalField:
    """Helmholtz solve per Fourier mode: v_hat = chi j_hat u_hat/(1+k^2)."""
    if chi < 0.0:
        raise ConfigurationError("chi must be nonnegative")
    check_epsilon_resolved(epsilon, u.grid)
    k2 = _wavenumbers(u.grid)
    sym = mollifier_symbol(epsilon, u.grid)
    v_hat = chi * sym * np.fft.rfft2(u.u) / (1.0 + k2)
    v = np.fft.irfft2(v_hat, s=u.u.shape)
    floor = float(v.min())
    if floor < -1e-6:
        raise StabilityError("signal undershoot %.3e below tolerance"
                             % floor)
    np.maximum(v, 0.0, out=v)
    return SignalField(v=v, time=u.time, source_epsilon=epsilon,
                       grid=u.grid, negative_floor=min(floor, 0.0))


def step_density(u: DensityField, chi, epsilon, dt,
                 signal: SignalField = None) -> DensityField:
    """One semi-implicit step of dens_t u = Lap(e^{-v} u + u).

    The plain Laplacian is inverted implicitly, the signal-weighted flux is
    advanced explicitly with v frozen at step start.  Negative undershoots
    are clipped and the mass renormalized; a relative renormalization above
    1e-9 counts as a stability trip.
    """
    if signal is None:
        signal = solve_signal(u, chi, epsilon)
    k2 = _wavenumbers(u.grid)
    w_hat = np.fft.rfft2(np.exp(-signal.v) * u.u)
    u_hat = (np.fft.rfft2(u.u) - dt * k2 * w_hat) / (1.0 + dt * k2)
    u_new = np.fft.irfft2(u_hat, s=u.u.shape)
    if not np.all(np.isfinite(u_new)):
        raise StabilityError("non-finite density at t = %.6g" % (u.time + dt))
    np.maximum(u_new, 0.0, out=u_new)
    total = u_new.sum() * u.grid.spacing ** 2
    if total <= 0.0 or abs(total - 1.0) > 1e-9:
        raise StabilityError("mass drift %.3e after clipping at t = %.6g"
                             % (total - 1.0, u.time + dt))
    u_new /= total
    return DensityField(u=u_new, time=u.time + dt, epsilon=epsilon,
                        grid=u.grid)


def initial_density(grid: GridSpec, kind="gaussian", sigma=1.0,
                    centers=None, weights=None, epsilon=0.0) -> DensityField:
    """Canonical initial data: an isotropic Gaussian, or a normalized
    mixture of Gaussians given per-component centers/weights."""
    ax = grid.axis()
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    if kind == "gaussian":
        centers = [(0.0, 0.0)] if centers is None else centers
        weights = [1.0] if weights is None else weights
    elif kind != "mixture":
        raise ConfigurationError("unknown initial density %r" % (kind,))
    if centers is None or weights is None or len(centers) != len(weights):
        raise ConfigurationError("mixture needs matching centers/weights")
    sigmas = np.broadcast_to(np.asarray(sigma, dtype=float),
                             (len(centers),))
    if np.any(sigmas <= 0.0):
        raise ConfigurationError("sigma must be positive")
    wts = np.asarray(weights, dtype=float)
    if np.any(wts < 0.0) or wts.sum() <= 0.0:
        raise ConfigurationError("weights must be nonnegative, not all zero")
    wts = wts / wts.sum()
    u = np.zeros_like(xx)
    for (cx, cy), s, wt in zip(centers, sigmas, wts):
        r2 = (xx - cx) ** 2 + (yy - cy) ** 2
        u += wt * np.exp(-0.5 * r2 / s**2) / (2.0 * np.pi * s**2)
    u /= u.sum() * grid.spacing ** 2
    return DensityField(u=u, time=0.0, epsilon=epsilon, grid=grid)


def boundary_mass(u: DensityField):
    """Mass in the outermost ring of cells, the periodization leak gauge."""
    ring = np.zeros_like(u.u, dtype=bool)
    ring[0, :] = ring[-1, :] = True
    ring[:, 0] = ring[:, -1] = True
    return float(u.u[ring].sum()) * u.grid.spacing ** 2


def heat_reference(grid: GridSpec, t, sigma=1.0):
    """Free-space solution of dens_t u = 2 Lap u started from an isotropic
    gaussian of width sigma, sampled on the grid.

    With the signal switched off the density equation reduces to this pure
    heat flow, so the gap to an evolved field isolates the solver error.
    Returns the raw array: the tail the box truncates is not renormalized,
    so the samples are not a unit-mass DensityField.
    """
    if t < 0.0 or sigma <= 0.0:
        raise ConfigurationError("t must be nonnegative and sigma positive")
    var = sigma ** 2 + 4.0 * t
    g = np.exp(-0.5 * grid.axis() ** 2 / var) / np.sqrt(2.0 * np.pi * var)
    return np.outer(g, g)


class FieldEvolution:
    """Lockstep-steppable evolution holding the current (u, v) pair.

    run_to(t) advances in whole dt steps; advance() does a single step, the
    granularity the particle coupling consumes.
    """

    def __init__(self, grid: GridSpec, chi, epsilon, u0=None, dt=None):
        check_epsilon_resolved(epsilon, grid)
        self.grid = grid
        self.chi = float(chi)
        self.epsilon = float(epsilon)
        self.dt = float(dt if dt is not None else grid.dt)
        if u0 is None:
            u0 = initial_density(grid, epsilon=epsilon)
        elif isinstance(u0, dict):
            u0 = initial_density(grid, epsilon=epsilon, **u0)
        elif isinstance(u0, np.ndarray):
            u0 = DensityField(u=u0, time=0.0, epsilon=epsilon, grid=grid)
        self.density = u0
        self.signal = solve_signal(u0, self.chi, self.epsilon)
        self.steps_taken = int(round(u0.time / self.dt))
        # rounding alone would silently snap any time; reject real off-lattice
        # inputs while tolerating accumulated float noise
        if abs(self.steps_taken * self.dt - u0.time) > 1e-9 * max(1.0, u0.time):
            raise ConfigurationError("initial time %.6g not on the dt lattice"
                                     % u0.time)

    @property
    def time(self):
        return self.density.time

    def advance(self):
        u_new = step_density(self.density, self.chi, self.epsilon, self.dt,
                             signal=self.signal)
        # keep time exactly on the step lattice, no += drift
        self.steps_taken += 1
        u_new.time = self.steps_taken * self.dt
        self.density = u_new
        self.signal = solve_signal(u_new, self.chi, self.epsilon)
        return self

    def run_to(self, t):
        target = int(round(t / self.dt))
        if abs(target * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ConfigurationError("time %.6g not on the dt lattice" % t)
        while self.steps_taken < target:
            self.advance()
        return self


def evolve(u0, grid: GridSpec, chi, epsilon, checkpoint_times=None,
           max_dt_halvings=3):
    """Evolve to each checkpoint time, returning (DensityField, SignalField)
    pairs.  A stability trip restarts the whole evolution with dt halved,
    up to max_dt_halvings times."""
    if checkpoint_times is None:
        checkpoint_times = [grid.t_end]
    times = sorted(float(t) for t in checkpoint_times)
    if times and times[-1] > grid.t_end + 1e-12:
        raise ConfigurationError("checkpoint beyond t_end")
    dt = grid.dt
    for attempt in range(max_dt_halvings + 1):
        try:
            evo = FieldEvolution(grid, chi, epsilon, u0=u0, dt=dt)
            out = []
            for t in times:
                evo.run_to(t)
                leak = boundary_mass(evo.density)
                if leak > 1e-8:
                    warnings.warn(
                        "boundary mass %.3e at t = %.4g exceeds 1e-8; "
                        "the box truncates the spreading density" % (leak, t),
                        RuntimeWarning, stacklevel=2)
                out.append((evo.density, evo.signal))
            return out
        except StabilityError:
            if attempt == max_dt_halvings:
                raise
            dt *= 0.5
    raise AssertionError("unreachable")


def lp_diagnostics(u: DensityField, p_list):
    """Grid-quadrature L^p norms; p = 1 is the mass, inf the max."""
    out = {}
    h2 = u.grid.spacing ** 2
    for p in p_list:
        if p != np.inf and p < 1.0:
            raise ConfigurationError("p must be at least 1")
        if p == np.inf:
            out[p] = float(u.u.max())
        else:
            out[p] = float((np.sum(u.u ** p) * h2) ** (1.0 / p))
    return out


def _radial_kernel_grid(table, grid: GridSpec):
    """Minimum-image radii from the origin node, for kernel sampling."""
    n = grid.n
    idx = np.arange(n)
    d = np.minimum(idx, n - idx) * grid.spacing
    return np.hypot(d[:, None], d[None, :])


def kernel_convolution_field(u: DensityField, table, kind="grad",
                             power=1.0):
    """Torus convolution of a tabulated radial kernel with the density.

    kind selects the kernel: "phi" for the potential itself, "grad" for the
    gradient magnitude, "grad_power" for that magnitude raised to power.
    """
    from .potential import table_grad, table_phi
    if abs(table.epsilon - u.epsilon) > 1e-12:
        raise ConfigurationError(
            "table epsilon %.4g does not match field epsilon %.4g"
            % (table.epsilon, u.epsilon))
    r = _radial_kernel_grid(table, u.grid)
    if kind == "phi":
        base = table_phi(table, r)
    elif kind in ("grad", "grad_power"):
        base = np.abs(table_grad(table, r))
        if kind == "grad_power":
            if power <= 0.0:
                raise ConfigurationError("power must be positive")
            base = base ** power
    else:
        raise ConfigurationError("unknown kernel kind %r" % (kind,))
    h2 = u.grid.spacing ** 2
    return np.fft.irfft2(np.fft.rfft2(u.u) * np.fft.rfft2(base),
                         s=u.u.shape) * h2


def field_convolution_diagnostic(u: DensityField, table, k_list=(2,)):
    """Sup norms of |grad Phi_eps| * u and its 2k/(2k-1) powers * u, the
    field-side quantities paired with the particle DMC statistics."""
    out = {"grad": float(kernel_convolution_field(u, table, "grad").max()),
           "grad_power": {}}
    for k in k_list:
        p = 2.0 * k / (2.0 * k - 1.0)
        conv = kernel_convolution_field(u, table, "grad_power", power=p)
        out["grad_power"][k] = float(conv.max())
    return out


def save_field(u: DensityField, path_base, chi=None):
    """Flat binary dump plus JSON header, path_base + '.bin'/'.json'."""
    data = np.ascontiguousarray(u.u, dtype="<f8")
    with open(path_base + ".bin", "wb") as fh:
        fh.write(data.tobytes())
    header = {
        "format_version": FIELD_FORMAT_VERSION,
        "n": u.grid.n,
        "half_width": u.grid.half_width,
        "dt": u.grid.dt,
        "t_end": u.grid.t_end,
        "time": u.time,
        "epsilon": u.epsilon,
        "dtype": "<f8",
    }
    if chi is not None:
        header["chi"] = chi
    with open(path_base + ".json", "w") as fh:
        json.dump(header, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_field(path_base) -> DensityField:
    with open(path_base + ".json") as fh:
        header = json.load(fh)
    if header.get("format_version") != FIELD_FORMAT_VERSION:
        raise ConfigurationError("unsupported field file version")
    grid = GridSpec(half_width=header["half_width"], n=header["n"],
                    dt=header["dt"], t_end=header["t_end"])
    raw = np.fromfile(path_base + ".bin", dtype=header["dtype"])
    u = raw.reshape(grid.n, grid.n)
    return DensityField(u=u, time=header["time"],
                        epsilon=header["epsilon"], grid=grid)
