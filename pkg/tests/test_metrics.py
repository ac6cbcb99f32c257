"""Tests for the coupling and chaos statistics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erfc

from kschaos import metrics
from kschaos.errors import ConfigurationError
from kschaos.pde import (DensityField, GridSpec, initial_density,
                         kernel_convolution_field)
from kschaos.particles import sample_field_bilinear
from kschaos.potential import build_table

SANDWICH_KS = (1, 2, 4, 8)
# a few ulps of slack: the inequalities are exact in reals, the rooted
# float evaluation is not
ULP_SLACK = 1.0 + 1e-12


def fuzz_vectors(count=1000, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(1, 64))
        scale = 10.0 ** rng.uniform(-12, 3)
        yield rng.uniform(0.0, 1.0, size=n) * scale


def test_power_mean_examples():
    assert metrics.power_mean([3, 4], 2) == pytest.approx(np.sqrt(12.5),
                                                          rel=1e-15)
    assert metrics.power_mean([3, 4], np.inf) == 4.0
    const = np.full(17, 0.37)
    for k in (1, 2, 4, 8, np.inf):
        assert metrics.power_mean(const, k) == 0.37
    assert metrics.power_mean(np.zeros(5), 3) == 0.0


def test_power_mean_rejects():
    with pytest.raises(ValueError):
        metrics.power_mean([1.0], 0.5)
    with pytest.raises(ValueError):
        metrics.power_mean([], 2)
    with pytest.raises(ValueError):
        metrics.max_norm([])
    with pytest.raises(ValueError):
        metrics.geometric_mean([])


def test_geometric_mean_examples():
    assert metrics.geometric_mean([1, 4]) == pytest.approx(2.0, rel=1e-14)
    assert metrics.geometric_mean([3.0, 0.0, 5.0]) == 0.0


def test_mean_max_sandwich_fuzz():
    for e in fuzz_vectors():
        minf = metrics.max_norm(e)
        n = e.size
        for k in SANDWICH_KS:
            mk = metrics.power_mean(e, k)
            assert mk <= minf
            assert minf <= n ** (1.0 / k) * mk * ULP_SLACK
        # the k-th-power form of the upper bound is exact in floats:
        # a sum of nonnegatives dominates its largest term
        assert np.sum(e ** 2) >= minf ** 2


def test_power_mean_monotone_in_k_fuzz():
    for e in fuzz_vectors(count=500, seed=1):
        ms = [metrics.power_mean(e, k) for k in SANDWICH_KS]
        for lo, hi in zip(ms, ms[1:]):
            assert lo <= hi * ULP_SLACK
        assert metrics.geometric_mean(e) <= ms[0] * ULP_SLACK


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(min_value=0.0, max_value=1e6,
                          allow_nan=False), min_size=1, max_size=64))
def test_sandwich_property(values):
    e = np.asarray(values)
    minf = metrics.max_norm(e)
    for k in SANDWICH_KS:
        mk = metrics.power_mean(e, k)
        assert mk <= minf
        assert minf <= e.size ** (1.0 / k) * mk * ULP_SLACK
    assert metrics.geometric_mean(e) <= metrics.power_mean(e, 1) * ULP_SLACK


def test_hitting_time_examples():
    times = np.array([0.0, 1.0, 2.0, 3.0])
    zeros = np.zeros((4, 8))
    assert metrics.hitting_time(times, zeros, 0.3, 2) == np.inf

    big = np.full((4, 8), 5.0)
    assert metrics.hitting_time(times, big, 0.3, 2) == 0.0

    # exact attainment counts as a hit: mean(e^2) == n^(-2 alpha)
    n, alpha = 4, 0.25
    level = np.full(n, n ** (-alpha))
    traj = np.vstack([np.zeros(n), level, np.zeros(n)])
    tau = metrics.hitting_time(np.array([0.0, 1.0, 2.0]), traj, alpha, 1)
    assert tau == 1.0


def test_hitting_time_monotone_in_alpha():
    rng = np.random.default_rng(3)
    times = np.linspace(0.0, 1.0, 20)
    errors = np.cumsum(rng.uniform(0, 0.05, size=(20, 32)), axis=0)
    taus = [metrics.hitting_time(times, errors, a, 2)
            for a in (0.1, 0.2, 0.3, 0.4, 0.5)]
    # larger alpha lowers the threshold, so the hit cannot come later
    assert all(t1 >= t2 for t1, t2 in zip(taus, taus[1:]))


def test_hitting_time_rejects():
    with pytest.raises(ValueError):
        metrics.hitting_time([0.0], np.zeros((1, 4)), 0.3, 0.5)
    with pytest.raises(ConfigurationError):
        metrics.hitting_time([0.0, 1.0], np.zeros((3, 4)), 0.3, 1)
    with pytest.raises(ConfigurationError):
        metrics.hitting_time([1.0, 0.5], np.zeros((2, 4)), 0.3, 1)


def test_stopped_process():
    times = np.linspace(0.0, 1.0, 11)
    n = 16
    growth = np.linspace(0.0, 1.0, 11)[:, None]
    errors = np.broadcast_to(growth, (11, n)).copy()
    alpha, k = 0.25, 1
    sp = metrics.stopped_process(times, errors, alpha, k)
    assert sp.values[0] == 0.0
    tau = metrics.hitting_time(times, errors, alpha, k)
    assert sp.tau == tau
    cut = int(np.nonzero(times == tau)[0][0])
    assert np.all(sp.values[: cut] < 1.0)
    assert np.all(sp.values[cut:] == sp.values[cut])
    assert sp.values[cut] >= 1.0
    assert sp.overshoot == pytest.approx(sp.values[cut] - 1.0)
    assert np.all(sp.values <= 1.0 + sp.overshoot)


def test_moment_paths_reject_bad_input():
    times = np.array([0.0, 0.5, 1.0])
    with pytest.raises(ConfigurationError):
        metrics.hitting_time_from_moments(times, np.zeros(2), 16, 0.25, 2)
    with pytest.raises(ValueError):
        metrics.stopped_process_from_moments(times, np.zeros(3), 16, 0.25, 0)


def test_moment_paths_match_vector_paths():
    rng = np.random.default_rng(14)
    times = np.linspace(0.0, 1.0, 15)
    errors = np.cumsum(rng.uniform(0, 0.08, size=(15, 24)), axis=0)
    n = errors.shape[1]
    for alpha, k in [(0.2, 1), (0.3, 2), (0.45, 4)]:
        moments = np.mean(errors ** (2.0 * k), axis=1)
        assert (metrics.hitting_time(times, errors, alpha, k)
                == metrics.hitting_time_from_moments(times, moments, n,
                                                     alpha, k))
        a = metrics.stopped_process(times, errors, alpha, k)
        b = metrics.stopped_process_from_moments(times, moments, n, alpha, k)
        assert a.tau == b.tau and a.overshoot == b.overshoot
        assert np.array_equal(a.values, b.values)


def test_stopped_process_never_hits():
    times = np.linspace(0.0, 1.0, 5)
    errors = np.full((5, 8), 1e-4)
    sp = metrics.stopped_process(times, errors, 0.3, 2)
    assert sp.tau == np.inf
    assert np.all(sp.values < 1.0)
    assert sp.overshoot == 0.0


def test_exceedance_probability_edges():
    below = np.full(50, 0.1)
    est = metrics.exceedance_probability(below, 0.5)
    assert est.probability == 0.0 and est.ci_lo == 0.0
    above = np.full(50, 0.9)
    est = metrics.exceedance_probability(above, 0.5)
    assert est.probability == 1.0 and est.ci_hi == 1.0
    with pytest.raises(ValueError):
        metrics.exceedance_probability([], 0.5)
    with pytest.warns(RuntimeWarning):
        metrics.exceedance_probability(np.ones(10), 0.5)


def test_wilson_interval_against_quadratic_oracle():
    # the interval endpoints are the roots of
    # (p_hat - p)^2 = z^2 p (1 - p) / r
    samples = np.concatenate([np.ones(30), np.zeros(70)])
    est = metrics.exceedance_probability(samples, 0.5)
    z2 = metrics.WILSON_Z ** 2
    r = 100
    roots = np.roots([1.0 + z2 / r, -(2 * est.probability + z2 / r),
                      est.probability ** 2])
    lo, hi = np.sort(roots)
    assert est.ci_lo == pytest.approx(lo, abs=1e-12)
    assert est.ci_hi == pytest.approx(hi, abs=1e-12)


def test_wilson_coverage_on_bernoulli():
    rng = np.random.default_rng(8)
    p_true, r, trials = 0.3, 100, 300
    covered = 0
    for _ in range(trials):
        samples = (rng.uniform(size=r) < p_true).astype(float)
        est = metrics.exceedance_probability(samples, 0.5)
        covered += est.ci_lo <= p_true <= est.ci_hi
    assert covered / trials >= 0.92


def test_exceedance_matches_gaussian_tail():
    rng = np.random.default_rng(12)
    thr = 1.5
    p_true = float(erfc(thr / np.sqrt(2.0)))
    hits = 0
    for _ in range(100):
        samples = np.abs(rng.normal(size=200))
        est = metrics.exceedance_probability(samples, thr)
        hits += est.ci_lo <= p_true <= est.ci_hi
    assert hits >= 88


def test_exceedance_set_inclusions():
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(2, 128))
        alpha = float(rng.uniform(0.05, 0.45))
        e = np.abs(rng.normal(size=n)) * n ** (-rng.uniform(0.0, 0.6))
        minf = metrics.max_norm(e)
        for k in (1, 2, 4):
            m2k = metrics.power_mean(e, 2 * k)
            if minf >= n ** (-alpha):
                assert m2k >= n ** (-alpha - 1.0 / (2 * k))
            if m2k >= n ** (-alpha):
                assert minf >= n ** (-alpha)


GRID = GridSpec(half_width=8.0, n=128, dt=1e-3, t_end=0.1)


@pytest.fixture(scope="module")
def table():
    return build_table(0.5, 0.4)


@pytest.fixture(scope="module")
def gaussian_field():
    return initial_density(GRID, epsilon=0.4)


@pytest.fixture(scope="module")
def uniform_field():
    u = np.full((GRID.n, GRID.n), 1.0 / GRID.box ** 2)
    return DensityField(u=u, time=0.0, epsilon=0.4, grid=GRID)


def test_dmc_single_particle(table, gaussian_field):
    pos = np.array([[0.3, -0.2]])
    res = metrics.dmc_statistics(pos, table, gaussian_field, theta=0.0,
                                 kernel="grad")
    conv = kernel_convolution_field(gaussian_field, table, "grad")
    expected = -sample_field_bilinear(conv, GRID, pos)
    # gradient magnitude vanishes at zero separation, so only the
    # convolution side survives
    assert np.allclose(res.values, expected, atol=1e-12)
    assert res.threshold == 1.0

    res_phi = metrics.dmc_statistics(pos, table, gaussian_field, theta=0.0,
                                     kernel="phi")
    conv_phi = kernel_convolution_field(gaussian_field, table, "phi")
    emp = res_phi.values + sample_field_bilinear(conv_phi, GRID, pos)
    # the empirical mean keeps the self term
    assert emp[0] == pytest.approx(float(table.phi_values[0]), rel=1e-12)


def test_dmc_lln_trend(table, uniform_field):
    # uniform field sampled uniformly: the mean over particles estimates
    # the convolution, so the worst deviation shrinks with N
    wins = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        small = rng.uniform(-8.0, 8.0, size=(256, 2))
        large = rng.uniform(-8.0, 8.0, size=(4096, 2))
        d_small = metrics.dmc_statistics(small, table, uniform_field,
                                         theta=0.0, kernel="grad")
        d_large = metrics.dmc_statistics(large, table, uniform_field,
                                         theta=0.0, kernel="grad")
        wins += d_large.max_abs < d_small.max_abs
        assert not d_small.event and not d_large.event
    assert wins >= 9


def test_dmc_kernels_and_validation(table, gaussian_field):
    rng = np.random.default_rng(7)
    pos = rng.normal(size=(64, 2))
    for kernel, k in (("phi", None), ("grad", None), ("grad_power", 2)):
        res = metrics.dmc_statistics(pos, table, gaussian_field, theta=0.3,
                                     kernel=kernel, k=k)
        assert res.values.shape == (64,)
        assert res.max_abs == np.max(np.abs(res.values))
        assert res.event == (res.max_abs >= 64 ** -0.3)
    with pytest.raises(ConfigurationError):
        metrics.dmc_statistics(pos, table, gaussian_field, 0.3,
                               kernel="hessian")
    with pytest.raises(ConfigurationError):
        metrics.dmc_statistics(pos, table, gaussian_field, 0.3,
                               kernel="grad_power")
    mismatched = build_table(0.5, 0.3)
    with pytest.raises(ConfigurationError):
        metrics.dmc_statistics(pos, mismatched, gaussian_field, 0.3)


def test_kde_self_distance_is_zero(gaussian_field):
    rng = np.random.default_rng(2)
    pos = rng.normal(size=(2000, 2))
    first = metrics.kde_l1_distance(pos, gaussian_field)
    self_ref = DensityField(u=np.clip(first.density, 0.0, None), time=0.0,
                            epsilon=0.4, grid=GRID)
    again = metrics.kde_l1_distance(pos, self_ref,
                                    bandwidth=first.bandwidth)
    assert again.l1 < 1e-12


def test_kde_uniform_calibration(uniform_field):
    rng = np.random.default_rng(4)
    pos = rng.uniform(-8.0, 8.0, size=(10_000, 2))
    res = metrics.kde_l1_distance(pos, uniform_field)
    assert res.l1 < 0.1
    assert res.bandwidth > 0.0
    assert res.l1_half != res.l1 and res.l1_double != res.l1


def test_kde_consistency_in_n(gaussian_field):
    for seed in (0, 1, 2):
        rng = np.random.default_rng(seed)
        coarse = metrics.kde_l1_distance(rng.normal(size=(1000, 2)),
                                         gaussian_field)
        fine = metrics.kde_l1_distance(rng.normal(size=(100_000, 2)),
                                       gaussian_field)
        assert fine.l1 < coarse.l1


def test_kde_rejects_few_samples(gaussian_field):
    with pytest.raises(ConfigurationError):
        metrics.kde_l1_distance(np.zeros((99, 2)), gaussian_field)


def test_weak_chaos_normalization(gaussian_field):
    rng = np.random.default_rng(6)
    pairs = rng.normal(size=(150, 2, 2))
    res = metrics.weak_chaos_statistic(pairs, "one", "one", gaussian_field)
    assert res.statistic < 1e-12


def test_weak_chaos_independent_samples(gaussian_field):
    rng = np.random.default_rng(9)
    pairs = rng.normal(size=(2000, 2, 2))
    res = metrics.weak_chaos_statistic(pairs, "gauss", "sine",
                                       gaussian_field)
    # both observables are bounded by 1; 4 sigma of the replica mean
    assert res.statistic < 4.0 / np.sqrt(2000)
    assert res.ci_lo <= res.ci_hi
    assert res.replicas == 2000


def test_weak_chaos_correlated_pairs(gaussian_field):
    rng = np.random.default_rng(10)
    x = rng.normal(size=(4000, 2))
    pairs = np.stack([x, x], axis=1)
    res = metrics.weak_chaos_statistic(pairs, "x1", "x1", gaussian_field)
    # X2 = X1 turns the cross moment into E[x1^2] = Var_u(x1) = 1
    assert res.statistic == pytest.approx(1.0, abs=0.1)


def test_weak_chaos_validation(gaussian_field):
    with pytest.raises(ConfigurationError):
        metrics.weak_chaos_statistic(np.zeros((10, 3, 2)), "one", "one",
                                     gaussian_field)
    with pytest.raises(ConfigurationError):
        metrics.weak_chaos_statistic(np.zeros((120, 2, 2)), "cube", "one",
                                     gaussian_field)
    with pytest.raises(ValueError):
        metrics.weak_chaos_statistic(np.zeros((0, 2, 2)), "one", "one",
                                     gaussian_field)
    with pytest.warns(RuntimeWarning):
        metrics.weak_chaos_statistic(np.zeros((10, 2, 2)), "one", "one",
                                     gaussian_field)


def test_fit_scaling_exponent_exact():
    x = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    fit = metrics.fit_scaling_exponent(x, x ** 2)
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.stderr == pytest.approx(0.0, abs=1e-12)
    const = metrics.fit_scaling_exponent(x, np.full(5, 3.3))
    assert const.slope == 0.0


def test_fit_scaling_exponent_noisy():
    rng = np.random.default_rng(11)
    x = np.array([1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
    y = x ** -1.5 * (1.0 + rng.uniform(-0.05, 0.05, size=6))
    fit = metrics.fit_scaling_exponent(x, y)
    assert fit.slope == pytest.approx(-1.5, abs=0.1)
    assert fit.stderr > 0.0


def test_fit_scaling_exponent_rejects():
    with pytest.raises(ValueError):
        metrics.fit_scaling_exponent([1, 2, 3], [1, 4, 9])
    with pytest.raises(ValueError):
        metrics.fit_scaling_exponent([1, 2, 3, 4], [1, -4, 9, 16])
    with pytest.raises(ValueError):
        metrics.fit_scaling_exponent([1, 2, 3, 4], [1, 0, 9, 16])
    with pytest.raises(ValueError):
        metrics.fit_scaling_exponent([-1, 2, 3, 4], [1, 4, 9, 16])
    with pytest.raises(ValueError):
        metrics.fit_scaling_exponent([2, 2, 2, 2], [1, 4, 9, 16])
    with pytest.raises(ValueError):
        metrics.fit_scaling_exponent([1, 2, 3, 4], [1, 4, 9])


def test_record_types():
    rec = metrics.MetricRecord(experiment="sweep", t=1.0, n=256,
                               epsilon=0.2, alpha=0.3, k=2, stat="m_inf",
                               value=0.01, replicas=64)
    assert rec.ci_lo is None
    with pytest.raises(ConfigurationError):
        metrics.MetricRecord(experiment="sweep", t=1.0, n=256, epsilon=0.2,
                             alpha=0.3, k=2, stat="tau", value=np.inf,
                             replicas=64)
    with pytest.raises(ConfigurationError):
        metrics.MetricRecord(experiment="sweep", t=1.0, n=256, epsilon=0.2,
                             alpha=0.3, k=2, stat="m_inf", value=0.0,
                             replicas=0)
    sample = metrics.ErrorSample(t=1.0, n=3, epsilon=0.2, replica=0,
                                 errors=[0.1, 0.2, 0.3])
    assert sample.errors.dtype == float
    with pytest.raises(ConfigurationError):
        metrics.ErrorSample(t=1.0, n=4, epsilon=0.2, replica=0,
                            errors=[0.1, 0.2, 0.3])
    with pytest.raises(ConfigurationError):
        metrics.ErrorSample(t=1.0, n=2, epsilon=0.2, replica=0,
                            errors=[0.1, -0.2])
