"""Preset experiment sweeps with shared caches and deterministic outputs.

Each preset turns one convergence statement into a sweep that emits
MetricRecord rows:

- "exceedance": couples the interacting and mean-field ensembles across an
  N sweep with eps = N^(-beta) and estimates P(M >= N^(-alpha)) for the
  max and 2k-power means of the pair errors, plus hitting-time fractions,
  stopped-process overshoots, and fitted decay slopes across N.
- "coupling_rate": couples the mean-field ensemble to the limit system
  over an explicit eps list at fixed N and fits how the pooled
  E[sup_t |error|^(2k)] scales with eps.
- "marginal_l1": kernel-density L1 distance of the interacting ensemble's
  positions to the mollified and limit densities across N.
- "lln": concentration of empirical pair means around the field
  convolution on i.i.d. samples drawn from the mollified density, over
  thresholds N^(-theta); lln rows carry theta in the alpha column.

Rows that aggregate across a sweep (fitted rates, the degenerate flag)
carry n = 0 and eps = nan.  emit_outputs writes one CSV per preset, one
SVG per plottable (statistic, checkpoint) group, and a JSON manifest
holding the config hash, so a rerun with the same config is byte-checkable
against the manifest.
"""

import csv
import hashlib
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import svgplot
from .errors import ConfigurationError
from .metrics import (MetricRecord, power_mean, exceedance_probability,
                      stopped_process_from_moments, dmc_statistics,
                      kde_l1_distance, fit_scaling_exponent)
from .noise import NoiseStream
from .particles import run_coupled_batch, wrap_positions
from .pde import GridSpec, check_epsilon_resolved, evolve
from .potential import build_table

PRESETS = ("exceedance", "coupling_rate", "marginal_l1", "lln")

# presets whose headline numbers are Wilson-interval probabilities
_PROBABILITY_PRESETS = ("exceedance", "lln")

_DEFAULT_TIMES = {
    "exceedance": (0.25, 0.5, 0.75, 1.0),
    "coupling_rate": None,          # resolved to (grid.t_end,)
    "marginal_l1": (0.0, 0.25, 0.5),
    "lln": (0.5,),
}
_DEFAULT_K = {
    "exceedance": (2,),
    "coupling_rate": (1,),
    "marginal_l1": (),
    "lln": (2,),
}

# well-posedness needs chi below 4 over the optimal constant in the
# Ladyzhenskaya inequality |w|_4^4 <= c |w|_2^2 |grad w|_2^2, about 23.4
CHI_WELLPOSED_BOUND = 23.401986


@dataclass
class ExperimentConfig:
    """Declarative description of one preset sweep.

    Exactly one of beta and epsilon_list fixes the kernel widths: beta
    scales them as N^(-beta), an explicit list overrides the scaling (one
    entry per N, except coupling_rate, which sweeps widths at a single N,
    and lln, which also accepts a single shared width).
    """
    preset: str
    n_list: tuple
    replicas: int
    beta: float = None
    epsilon_list: tuple = None
    alpha_list: tuple = ()
    k_list: tuple = None
    theta_list: tuple = (0.0, 0.25, 0.4)
    grid: GridSpec = field(default_factory=GridSpec)
    chi: float = 0.5
    seed: int = 0
    times: tuple = None
    output_dir: str = None
    workers: int = 1

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigurationError("unknown preset %r; choose one of %s"
                                     % (self.preset, ", ".join(PRESETS)))
        self.n_list = tuple(int(n) for n in np.atleast_1d(self.n_list))
        if not self.n_list or any(n < 1 for n in self.n_list):
            raise ConfigurationError("n_list must hold positive counts")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ConfigurationError("n_list must be strictly increasing")
        self.replicas = int(self.replicas)
        if self.replicas < 1:
            raise ConfigurationError("replicas must be at least 1")
        if self.preset in _PROBABILITY_PRESETS and self.replicas < 30:
            raise ConfigurationError(
                "preset %r estimates probabilities and needs at least 30 "
                "replicas, got %d" % (self.preset, self.replicas))
        if self.preset == "marginal_l1" and min(self.n_list) < 100:
            raise ConfigurationError(
                "density estimates need at least 100 samples per replica")
        self.chi = float(self.chi)
        if self.chi < 0.0:
            raise ConfigurationError("chi must be nonnegative")
        if self.chi >= CHI_WELLPOSED_BOUND:
            warnings.warn("chi = %.3g is at or above the well-posedness "
                          "bound %.3g; the density may concentrate"
                          % (self.chi, CHI_WELLPOSED_BOUND), RuntimeWarning)
        self.seed = int(self.seed)
        self.workers = int(self.workers)
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1")
        self._resolve_levels()
        self._resolve_widths()
        self._resolve_times()
        for eps in self.epsilons():
            check_epsilon_resolved(eps, self.grid)

    def _resolve_widths(self):
        if self.epsilon_list is not None:
            self.epsilon_list = tuple(float(e)
                                      for e in np.atleast_1d(self.epsilon_list))
            if any(e <= 0.0 for e in self.epsilon_list):
                raise ConfigurationError("kernel widths must be positive")
        if self.beta is not None:
            self.beta = float(self.beta)
        if self.preset == "coupling_rate":
            if len(self.n_list) != 1:
                raise ConfigurationError(
                    "coupling_rate sweeps widths at a single n")
            if self.beta is not None or not self.epsilon_list:
                raise ConfigurationError(
                    "coupling_rate needs an explicit epsilon list, not beta")
            if len(set(self.epsilon_list)) != len(self.epsilon_list):
                raise ConfigurationError("widths must be distinct")
            return
        if (self.beta is None) == (self.epsilon_list is None):
            raise ConfigurationError(
                "give exactly one of beta and an explicit epsilon list")
        if self.beta is not None:
            lo = 0.5 * min(self.alpha_or_default())
            if not 0.0 < self.beta < lo:
                warnings.warn(
                    "beta = %.3g outside the scaling band (0, %.3g) = "
                    "(0, alpha/2); the width shrinks out of step with the "
                    "thresholds" % (self.beta, lo), RuntimeWarning)
        elif self.preset == "lln" and len(self.epsilon_list) == 1:
            self.epsilon_list = self.epsilon_list * len(self.n_list)
        elif len(self.epsilon_list) != len(self.n_list):
            raise ConfigurationError(
                "explicit epsilon list needs one width per n")

    def alpha_or_default(self):
        return self.alpha_list if self.alpha_list else (0.5,)

    def _resolve_levels(self):
        self.alpha_list = tuple(float(a) for a in np.atleast_1d(self.alpha_list))
        if self.preset == "exceedance" and not self.alpha_list:
            raise ConfigurationError("exceedance needs at least one alpha")
        for a in self.alpha_list:
            if not 0.0 < a < 0.5:
                warnings.warn("alpha = %.3g outside (0, 1/2); the threshold "
                              "N^(-alpha) is no longer a convergence gate"
                              % a, RuntimeWarning)
        if self.k_list is None:
            self.k_list = _DEFAULT_K[self.preset]
        self.k_list = tuple(float(k) for k in np.atleast_1d(self.k_list))
        if any(k < 1.0 for k in self.k_list):
            raise ConfigurationError("every k must be at least 1")
        if self.preset in ("exceedance", "coupling_rate", "lln") \
                and not self.k_list:
            raise ConfigurationError("preset %r needs at least one k"
                                     % self.preset)
        self.theta_list = tuple(float(t) for t in np.atleast_1d(self.theta_list))
        for th in self.theta_list:
            if not 0.0 <= th < 0.5:
                warnings.warn("theta = %.3g outside [0, 1/2); concentration "
                              "thresholds this tight need not decay"
                              % th, RuntimeWarning)
        if self.preset == "lln" and not self.theta_list:
            raise ConfigurationError("lln needs at least one theta")

    def _resolve_times(self):
        if self.times is None:
            self.times = _DEFAULT_TIMES[self.preset] or (self.grid.t_end,)
        self.times = tuple(float(t) for t in np.atleast_1d(self.times))
        if not self.times:
            raise ConfigurationError("at least one checkpoint time required")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ConfigurationError("times must be strictly increasing")
        dt = self.grid.dt
        for t in self.times:
            if t < 0.0 or t > self.grid.t_end + 1e-12:
                raise ConfigurationError("time %.6g outside [0, t_end]" % t)
            if abs(round(t / dt) * dt - t) > 1e-9 * max(1.0, t):
                raise ConfigurationError(
                    "time %.6g not on the dt = %.3g lattice" % (t, dt))

    def epsilons(self):
        """Kernel width per sweep position: aligned with n_list, except
        coupling_rate, where it is the swept list itself."""
        if self.preset == "coupling_rate":
            return self.epsilon_list
        if self.epsilon_list is not None:
            return self.epsilon_list
        return tuple(float(n) ** (-self.beta) for n in self.n_list)


class SweepContext:
    """Shared per-sweep caches.

    Potential tables and field checkpoint sequences are built at most once
    per (chi, epsilon, grid) key; the build counters exist so tests can
    hold the cache to that."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self._tables = {}
        self._fields = {}
        self.table_builds = 0
        self.field_evolutions = 0

    def table(self, epsilon):
        key = (self.config.chi, float(epsilon))
        if key not in self._tables:
            self._tables[key] = build_table(self.config.chi, float(epsilon))
            self.table_builds += 1
        return self._tables[key]

    def field_checkpoints(self, epsilon, times):
        """Density checkpoints of the field evolution at the given times."""
        key = (self.config.chi, float(epsilon), self.config.grid,
               tuple(float(t) for t in times))
        if key not in self._fields:
            pairs = evolve(None, self.config.grid, self.config.chi,
                           float(epsilon), checkpoint_times=times)
            self._fields[key] = tuple(u for u, _ in pairs)
            self.field_evolutions += 1
        return self._fields[key]


def _batch_chunk(kwargs, replica_chunk):
    return run_coupled_batch(replicas=replica_chunk, **kwargs)


def _run_cells(config, epsilon, n, systems, k_list=(), track_steps=False,
               track_sup=False, store_positions=False, table=None):
    """All replicas of one sweep cell, split over workers when asked.

    Chunks re-evolve the shared field checkpoints independently; the
    evolutions are deterministic, so the merged results match a single
    sequential batch bit for bit."""
    kwargs = dict(grid=config.grid, chi=config.chi, epsilon=float(epsilon),
                  n=int(n), seed=config.seed, checkpoint_times=config.times,
                  systems=systems, table=table, k_list=k_list,
                  track_steps=track_steps, track_sup=track_sup,
                  store_positions=store_positions)
    reps = list(range(config.replicas))
    nw = min(config.workers, len(reps))
    if nw <= 1:
        return _batch_chunk(kwargs, reps)
    bounds = np.linspace(0, len(reps), nw + 1).astype(int)
    chunks = [reps[a:b] for a, b in zip(bounds, bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        futures = [pool.submit(_batch_chunk, kwargs, c) for c in chunks]
        parts = [f.result() for f in futures]
    return [r for part in parts for r in part]


def _anscombe(counts, replicas):
    # (c + 1/2)/(R + 1) keeps zero counts off the log axis in decay fits;
    # reported probabilities stay raw
    return (np.asarray(counts, dtype=float) + 0.5) / (float(replicas) + 1.0)


def _loglog_slope(x, y):
    """OLS slope of log y on log x for the short sweeps presets run.

    fit_scaling_exponent keeps its four-point contract for external
    callers; preset sweeps over two or three abscissae land here.  The
    standard error is nan below three points.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("a slope needs at least two points")
    if np.any(x <= 0.0) or np.any(y <= 0.0):
        raise ValueError("log-log fit needs positive values")
    if x.size >= 4:
        f = fit_scaling_exponent(x, y)
        return f.slope, f.stderr
    lx, ly = np.log(x), np.log(y)
    dx = lx - lx.mean()
    sxx = float(np.sum(dx * dx))
    if sxx == 0.0:
        raise ValueError("x values must not all coincide")
    slope = float(np.sum(dx * (ly - ly.mean())) / sxx)
    if x.size == 2:
        return slope, np.nan
    resid = ly - ly.mean() - slope * dx
    return slope, float(np.sqrt(np.sum(resid ** 2) / (x.size - 2) / sxx))


def _slope_record(preset, t, alpha, k, stat, x, y, replicas):
    slope, se = _loglog_slope(x, y)
    lo, hi = (None, None) if not np.isfinite(se) \
        else (slope - se, slope + se)
    # ci here is slope -+ one standard error, not a Wilson interval
    return MetricRecord(experiment=preset, t=t, n=0, epsilon=np.nan,
                        alpha=alpha, k=k, stat=stat, value=slope,
                        replicas=replicas, ci_lo=lo, ci_hi=hi)


_EXCEEDANCE_PAIR = "interacting-intermediate"
_COUPLING_PAIR = "intermediate-limit"


def preset_exceedance(config, ctx=None):
    """N sweep of trajectory-error exceedance probabilities.

    Couples the interacting and mean-field systems, reads the pair errors
    at each checkpoint, and estimates P(M_inf >= N^(-alpha)) and
    P(M_2k >= N^(-alpha)) with Wilson intervals, per-replica hitting
    fractions and stopped-process overshoots on the step grid, and decay
    slopes of the probabilities across N.
    """
    ctx = ctx or SweepContext(config)
    records = []
    r_count = config.replicas
    horizon = config.times[-1]
    counts_minf = {}
    counts_m2k = {}
    for n, eps in zip(config.n_list, config.epsilons()):
        results = _run_cells(config, eps, n,
                             systems=("interacting", "intermediate"),
                             k_list=config.k_list, track_steps=True,
                             table=ctx.table(eps))

        def rec(t, alpha, k, stat, value, ci_lo=None, ci_hi=None):
            records.append(MetricRecord(
                experiment=config.preset, t=t, n=n, epsilon=eps, alpha=alpha,
                k=k, stat=stat, value=value, replicas=r_count,
                ci_lo=ci_lo, ci_hi=ci_hi))

        for j, t in enumerate(config.times):
            errs = [r.checkpoints[j].errors[_EXCEEDANCE_PAIR]
                    for r in results]
            minf = np.array([e.max() for e in errs])
            rec(t, np.nan, np.inf, "minf_median", float(np.median(minf)))
            rec(t, np.nan, np.inf, "minf_max", float(minf.max()))
            m2k = {k: np.array([power_mean(e, 2.0 * k) for e in errs])
                   for k in config.k_list}
            for k in config.k_list:
                rec(t, np.nan, k, "m2k_median", float(np.median(m2k[k])))
            for alpha in config.alpha_list:
                thr = float(n) ** (-alpha)
                est = exceedance_probability(minf, thr)
                rec(t, alpha, np.inf, "p_minf", est.probability,
                    est.ci_lo, est.ci_hi)
                counts_minf.setdefault((t, alpha), []).append(est.count)
                for k in config.k_list:
                    est = exceedance_probability(m2k[k], thr)
                    rec(t, alpha, k, "p_m2k", est.probability,
                        est.ci_lo, est.ci_hi)
                    counts_m2k.setdefault((t, alpha, k), []).append(est.count)
        # hitting statistics live on the step grid, not the checkpoints,
        # so the stopping resolution is dt
        for alpha in config.alpha_list:
            for k in config.k_list:
                stops = [stopped_process_from_moments(
                    r.step_times, r.step_mean_pow[(_EXCEEDANCE_PAIR, 2 * k)],
                    n, alpha, k) for r in results]
                hit = np.array([1.0 if np.isfinite(s.tau) else 0.0
                                for s in stops])
                est = exceedance_probability(hit, 1.0)
                rec(horizon, alpha, k, "hit_fraction", est.probability,
                    est.ci_lo, est.ci_hi)
                rec(horizon, alpha, k, "overshoot_max",
                    max(s.overshoot for s in stops))
    if len(config.n_list) >= 2:
        for (t, alpha), counts in counts_minf.items():
            records.append(_slope_record(
                config.preset, t, alpha, np.inf, "p_minf_rate",
                config.n_list, _anscombe(counts, r_count), r_count))
        for (t, alpha, k), counts in counts_m2k.items():
            records.append(_slope_record(
                config.preset, t, alpha, k, "p_m2k_rate",
                config.n_list, _anscombe(counts, r_count), r_count))
    return records


def preset_coupling_rate(config, ctx=None):
    """Width sweep of the mean-field-to-limit coupling error.

    Pools the running sup of the pair error over particles and replicas
    and reports E[sup^(2k)] per width plus the fitted scaling exponent;
    the expected slope is 2k.  All-zero errors (chi = 0) set a degenerate
    flag instead of a fit.
    """
    ctx = ctx or SweepContext(config)
    records = []
    n = config.n_list[0]
    horizon = config.times[-1]
    moments = {k: [] for k in config.k_list}
    for eps in config.epsilon_list:
        results = _run_cells(config, eps, n,
                             systems=("intermediate", "limit"),
                             track_sup=True)
        sups = np.concatenate([r.sup_error[_COUPLING_PAIR] for r in results])
        for k in config.k_list:
            val = float(np.mean(sups ** (2.0 * k)))
            moments[k].append(val)
            records.append(MetricRecord(
                experiment=config.preset, t=horizon, n=n, epsilon=eps,
                alpha=np.nan, k=k, stat="sup_moment", value=val,
                replicas=config.replicas))
        records.append(MetricRecord(
            experiment=config.preset, t=horizon, n=n, epsilon=eps,
            alpha=np.nan, k=np.inf, stat="sup_max", value=float(sups.max()),
            replicas=config.replicas))
    if all(v == 0.0 for vals in moments.values() for v in vals):
        records.append(MetricRecord(
            experiment=config.preset, t=horizon, n=n, epsilon=np.nan,
            alpha=np.nan, k=np.nan, stat="degenerate", value=1.0,
            replicas=config.replicas))
        return records
    if len(config.epsilon_list) < 2:
        warnings.warn("a single width gives a point estimate only; no rate "
                      "is fitted", RuntimeWarning)
        return records
    for k in config.k_list:
        vals = np.asarray(moments[k])
        if np.any(vals <= 0.0):
            warnings.warn("nonpositive moment in the width sweep; rate fit "
                          "skipped for k = %g" % k, RuntimeWarning)
            continue
        records.append(_slope_record(
            config.preset, horizon, np.nan, k, "sup_rate",
            config.epsilon_list, vals, config.replicas))
    return records


def preset_marginal_l1(config, ctx=None):
    """N sweep of the kernel-density L1 distance of the interacting
    ensemble to the mollified and limit densities.

    Emits per-(n, t) medians over replicas at the automatic bandwidth and
    at half and double that bandwidth, plus trend slopes across N.
    """
    ctx = ctx or SweepContext(config)
    records = []
    refs_limit = ctx.field_checkpoints(0.0, config.times)
    medians = {}
    for n, eps in zip(config.n_list, config.epsilons()):
        refs_eps = ctx.field_checkpoints(eps, config.times)
        results = _run_cells(config, eps, n, systems=("interacting",),
                             store_positions=True, table=ctx.table(eps))

        def rec(t, stat, value):
            records.append(MetricRecord(
                experiment=config.preset, t=t, n=n, epsilon=eps,
                alpha=np.nan, k=np.nan, stat=stat, value=value,
                replicas=config.replicas))

        for j, t in enumerate(config.times):
            positions = [r.checkpoints[j].positions["interacting"]
                         for r in results]
            bandwidths = None
            for name, ref in (("mollified", refs_eps[j]),
                              ("limit", refs_limit[j])):
                kds = [kde_l1_distance(p, ref) for p in positions]
                med = float(np.median([d.l1 for d in kds]))
                rec(t, "kde_l1_" + name, med)
                rec(t, "kde_l1_%s_half" % name,
                    float(np.median([d.l1_half for d in kds])))
                rec(t, "kde_l1_%s_double" % name,
                    float(np.median([d.l1_double for d in kds])))
                medians.setdefault((t, name), []).append(med)
                if bandwidths is None:
                    # the automatic bandwidth depends on samples and grid
                    # only, so one reference's values speak for both
                    bandwidths = [d.bandwidth for d in kds]
            rec(t, "kde_bandwidth", float(np.median(bandwidths)))
    if len(config.n_list) >= 2:
        for (t, name), meds in medians.items():
            if all(m > 0.0 for m in meds):
                records.append(_slope_record(
                    config.preset, t, np.nan, np.nan,
                    "kde_l1_%s_rate" % name, config.n_list, meds,
                    config.replicas))
    return records


def _iid_field_samples(field_u, n, noise, replica):
    """n i.i.d. draws from the piecewise-constant cell reading of a
    density field.

    Cells are chosen by inverse CDF on one uniform block and the position
    jittered uniformly inside the h-by-h cell; the three counter
    addresses per replica make every draw independent of execution order.
    """
    grid = field_u.grid
    w = np.clip(field_u.u, 0.0, None).ravel()
    total = w.sum()
    if total <= 0.0:
        raise ConfigurationError("density has no mass to sample")
    cum = np.cumsum(w) / total
    pick = noise.uniforms(replica, 0, n)
    idx = np.minimum(np.searchsorted(cum, pick, side="right"), w.size - 1)
    ix, iy = np.divmod(idx, grid.n)
    ax = grid.axis()
    h = grid.spacing
    out = np.empty((int(n), 2))
    out[:, 0] = ax[ix] + (noise.uniforms(replica, 1, n) - 0.5) * h
    out[:, 1] = ax[iy] + (noise.uniforms(replica, 2, n) - 0.5) * h
    return wrap_positions(out, grid.half_width)


_LLN_KERNELS = (("phi", "phi", None), ("grad", "grad", None))


def preset_lln(config, ctx=None):
    """Concentration of empirical pair means on i.i.d. field samples.

    No particle system is run: each replica draws n independent points
    from the mollified density at the checkpoint and compares the
    empirical pair mean against the field convolution for the interaction
    kernel, its gradient magnitude, and the gradient magnitude to the
    power 2k/(2k-1).  Per theta, the row reports P(max_i |difference_i|
    >= n^(-theta)); theta rides in the alpha column.
    """
    ctx = ctx or SweepContext(config)
    records = []
    noise = NoiseStream(config.seed)
    k0 = config.k_list[0]
    kernels = _LLN_KERNELS + (("grad_power", "gradpow", k0),)
    r_count = config.replicas
    counts = {}
    for i, (n, eps) in enumerate(zip(config.n_list, config.epsilons())):
        table = ctx.table(eps)
        fields = ctx.field_checkpoints(eps, config.times)
        for j, t in enumerate(config.times):
            base = (i * len(config.times) + j) * r_count
            max_abs = {short: np.empty(r_count) for _, short, _ in kernels}
            for r in range(r_count):
                pos = _iid_field_samples(fields[j], n, noise, base + r)
                for kern, short, kk in kernels:
                    d = dmc_statistics(pos, table, fields[j], theta=0.0,
                                       kernel=kern, k=kk)
                    max_abs[short][r] = d.max_abs
            for kern, short, kk in kernels:
                k_val = np.nan if kk is None else float(kk)
                records.append(MetricRecord(
                    experiment=config.preset, t=t, n=n, epsilon=eps,
                    alpha=np.nan, k=k_val, stat="dmc_max_" + short,
                    value=float(np.median(max_abs[short])),
                    replicas=r_count))
                for theta in config.theta_list:
                    est = exceedance_probability(max_abs[short],
                                                 float(n) ** (-theta))
                    records.append(MetricRecord(
                        experiment=config.preset, t=t, n=n, epsilon=eps,
                        alpha=theta, k=k_val, stat="p_dmc_" + short,
                        value=est.probability, replicas=r_count,
                        ci_lo=est.ci_lo, ci_hi=est.ci_hi))
                    counts.setdefault((t, theta, short, k_val),
                                      []).append(est.count)
    if len(config.n_list) >= 2:
        for (t, theta, short, k_val), cs in counts.items():
            records.append(_slope_record(
                config.preset, t, theta, k_val, "p_dmc_%s_rate" % short,
                config.n_list, _anscombe(cs, r_count), r_count))
    return records


_PRESET_RUNNERS = {
    "exceedance": preset_exceedance,
    "coupling_rate": preset_coupling_rate,
    "marginal_l1": preset_marginal_l1,
    "lln": preset_lln,
}


def run_experiment(config: ExperimentConfig, ctx=None):
    """Dispatch to the preset runner; returns the MetricRecord list."""
    return _PRESET_RUNNERS[config.preset](config, ctx=ctx)


# ---------------------------------------------------------------- outputs

CSV_HEADER = ("experiment", "t", "n", "eps", "alpha", "k", "stat", "value",
              "replicas", "ci_lo", "ci_hi")


def _fmt(x):
    if x is None:
        return ""
    return "%.17g" % float(x)


def records_to_rows(records):
    rows = [",".join(CSV_HEADER)]
    for r in records:
        rows.append(",".join([
            r.experiment, _fmt(r.t), "%d" % r.n, _fmt(r.epsilon),
            _fmt(r.alpha), _fmt(r.k), r.stat, _fmt(r.value),
            "%d" % r.replicas, _fmt(r.ci_lo), _fmt(r.ci_hi)]))
    return rows


def write_records_csv(records, path):
    with open(path, "w", newline="") as f:
        f.write("\n".join(records_to_rows(records)) + "\n")


def load_records(path):
    """Parse a records CSV back into MetricRecord rows.

    Raises ConfigurationError with the offending line number on malformed
    rows, so callers can anchor their message.
    """
    records = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1:
                if tuple(row) != CSV_HEADER:
                    raise ConfigurationError(
                        "line 1: expected header %s" % ",".join(CSV_HEADER))
                continue
            if len(row) != len(CSV_HEADER):
                raise ConfigurationError(
                    "line %d: expected %d fields, got %d"
                    % (lineno, len(CSV_HEADER), len(row)))
            try:
                records.append(MetricRecord(
                    experiment=row[0], t=float(row[1]), n=int(row[2]),
                    epsilon=float(row[3]), alpha=float(row[4]),
                    k=float(row[5]), stat=row[6], value=float(row[7]),
                    replicas=int(row[8]),
                    ci_lo=float(row[9]) if row[9] else None,
                    ci_hi=float(row[10]) if row[10] else None))
            except (ValueError, ConfigurationError) as exc:
                raise ConfigurationError("line %d: %s" % (lineno, exc)) \
                    from None
    return records


def verify_scaling(records, beta=None, epsilon_by_n=None, rtol=1e-12):
    """Check each per-cell row's width against the configured scaling.

    Cross-sweep rows (n = 0) are exempt.  Either beta (eps = n^(-beta)) or
    an explicit n -> eps map applies.
    """
    for r in records:
        if r.n <= 0 or not np.isfinite(r.epsilon):
            continue
        if beta is not None:
            expect = float(r.n) ** (-float(beta))
        elif epsilon_by_n is not None and r.n in epsilon_by_n:
            expect = float(epsilon_by_n[r.n])
        else:
            continue
        if abs(r.epsilon - expect) > rtol * max(1.0, abs(expect)):
            raise ConfigurationError(
                "record (stat %r, n = %d) has eps = %.17g, expected %.17g"
                % (r.stat, r.n, r.epsilon, expect))


def config_to_dict(config: ExperimentConfig):
    d = asdict(config)
    d["grid"] = asdict(config.grid)
    return d


def dict_digest(d):
    """sha256 of the canonical JSON form of a plain dict."""
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def config_digest(config: ExperimentConfig):
    """sha256 of the canonical config JSON; output location and worker
    count do not affect results and stay out of the hash."""
    d = config_to_dict(config)
    d.pop("output_dir", None)
    d.pop("workers", None)
    return dict_digest(d)


def _file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _plot_value(t):
    return ("%g" % t).replace(".", "p").replace("-", "m")


def curve_groups(records):
    """Group per-cell rows into plottable curves.

    One group per (stat, t); the x axis is n when the group spans several
    particle counts, else eps when it spans several widths; groups with a
    single abscissa or aggregate rows (n = 0, eps = nan) are skipped.
    Series within a group split by (alpha, k).
    """
    by_key = {}
    for r in records:
        if r.n <= 0 and not np.isfinite(r.epsilon):
            continue
        by_key.setdefault((r.stat, r.t), []).append(r)
    groups = []
    for (stat, t), rows in sorted(by_key.items()):
        ns = sorted({r.n for r in rows if r.n > 0})
        eps = sorted({r.epsilon for r in rows if np.isfinite(r.epsilon)})
        if len(ns) >= 2:
            xdim, xlabel = (lambda r: r.n), "n"
        elif len(eps) >= 2:
            xdim, xlabel = (lambda r: r.epsilon), "eps"
        else:
            continue
        series = {}
        for r in rows:
            label_bits = []
            if np.isfinite(r.alpha):
                label_bits.append("alpha=%g" % r.alpha)
            if np.isfinite(r.k):
                label_bits.append("k=%g" % r.k)
            series.setdefault(" ".join(label_bits) or stat, []).append(r)
        chart = []
        for label in sorted(series):
            rows_s = sorted(series[label], key=xdim)
            xs = np.array([xdim(r) for r in rows_s], dtype=float)
            ys = np.array([r.value for r in rows_s])
            has_band = all(r.ci_lo is not None and r.ci_hi is not None
                           for r in rows_s)
            chart.append(svgplot.Series(
                label=label, x=xs, y=ys,
                band_lo=np.array([r.ci_lo for r in rows_s])
                if has_band else None,
                band_hi=np.array([r.ci_hi for r in rows_s])
                if has_band else None))
        groups.append({"stat": stat, "t": t, "xlabel": xlabel,
                       "series": chart,
                       "name": "%s_t%s.svg" % (stat, _plot_value(t))})
    return groups


def write_manifest(out_dir, command, config_dict, digest, seed, files,
                   status, record_count=0):
    """JSON manifest naming every output and its hash; written on success
    and on failure alike so a run is always auditable."""
    manifest = {
        "command": command,
        "status": status,
        "seed": seed,
        "version": _package_version(),
        "config": config_dict,
        "config_sha256": digest,
        "records": record_count,
        "files": {name: _file_sha256(os.path.join(out_dir, name))
                  for name in sorted(files)},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def _package_version():
    from . import __version__
    return __version__


def emit_outputs(records, config: ExperimentConfig, out_dir=None,
                 status=None):
    """Write the preset CSV, one SVG per plottable group, and the
    manifest.  Empty records write the manifest alone with status
    "empty"; the caller maps that to its failure exit code."""
    out_dir = out_dir or config.output_dir
    if not out_dir:
        raise ConfigurationError("an output directory is required")
    os.makedirs(out_dir, exist_ok=True)
    files = []
    if records:
        csv_name = config.preset + ".csv"
        write_records_csv(records, os.path.join(out_dir, csv_name))
        files.append(csv_name)
        for group in curve_groups(records):
            svgplot.line_chart(
                os.path.join(out_dir, group["name"]), group["series"],
                title="%s at t = %g" % (group["stat"], group["t"]),
                xlabel=group["xlabel"], ylabel=group["stat"])
            files.append(group["name"])
    if status is None:
        status = "ok" if records else "empty"
    return write_manifest(out_dir, "sweep:" + config.preset,
                          config_to_dict(config), config_digest(config),
                          config.seed, files, status, len(records))


def run_and_emit(config: ExperimentConfig, out_dir=None):
    records = run_experiment(config)
    manifest = emit_outputs(records, config, out_dir=out_dir)
    return records, manifest
