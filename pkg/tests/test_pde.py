"""Spectral field solver against closed-form and quadrature oracles."""

import numpy as np
import pytest

import oracles
from kschaos import pde, potential as pot
from kschaos.errors import ConfigurationError, StabilityError

GRID = pde.GridSpec(half_width=8.0, n=256, dt=1e-3, t_end=1.0)


def uniform_field(grid, epsilon=0.0):
    u = np.full((grid.n, grid.n), 1.0 / grid.box ** 2)
    return pde.DensityField(u=u, time=0.0, epsilon=epsilon, grid=grid)


def test_gridspec_validation():
    with pytest.raises(ConfigurationError):
        pde.GridSpec(n=100)
    with pytest.raises(ConfigurationError):
        pde.GridSpec(n=32)
    with pytest.raises(ConfigurationError):
        pde.GridSpec(dt=0.0)
    with pytest.raises(ConfigurationError):
        pde.GridSpec(t_end=-1.0)
    assert pde.GridSpec().spacing == 0.0625


def test_epsilon_resolution_floor():
    u = uniform_field(GRID, epsilon=0.05)
    with pytest.raises(ConfigurationError):
        pde.solve_signal(u, 0.5, 0.05)   # 2*dx = 0.125
    with pytest.raises(ConfigurationError):
        pde.FieldEvolution(GRID, 0.5, 0.1)
    pde.solve_signal(uniform_field(GRID, epsilon=0.2), 0.5, 0.2)


def test_uniform_density_gives_constant_signal():
    want = 0.5 / GRID.box ** 2
    for eps in (0.0, 0.5):
        v = pde.solve_signal(uniform_field(GRID, epsilon=eps), 0.5, eps)
        assert np.allclose(v.v, want, rtol=0, atol=1e-14)
    v = pde.solve_signal(uniform_field(GRID), 0.0, 0.0)
    assert np.all(v.v == 0.0)


def test_helmholtz_single_mode_exact():
    # uniform background plus one resolved cosine mode: the discrete solve
    # must reproduce the closed-form per-mode amplitude to rounding
    grid = GRID
    ax = grid.axis()
    m = 3
    k0 = 2.0 * np.pi * m / grid.box
    amp = 1e-3
    u = 1.0 / grid.box ** 2 + amp * np.cos(k0 * ax)[:, None] \
        * np.ones(grid.n)[None, :]
    fld = pde.DensityField(u=u, time=0.0, epsilon=0.4, grid=grid)
    chi = 0.7
    sym = pde.mollifier_symbol(0.4, grid)[m, 0]
    want = chi / grid.box ** 2 + chi * sym * amp / (1.0 + k0**2) \
        * np.cos(k0 * ax)[:, None] * np.ones(grid.n)[None, :]
    got = pde.solve_signal(fld, chi, 0.4)
    assert np.allclose(got.v, want, rtol=0, atol=1e-12)


def test_signal_matches_convolution_quadrature():
    # narrow Gaussian, unmollified source: v(r) is the Yukawa convolution
    grid = GRID
    u0 = pde.initial_density(grid, sigma=0.5)
    v = pde.solve_signal(u0, 1.0, 0.0)
    center = grid.n // 2
    got = v.v[center + 16, center]     # grid point (1.0, 0.0)
    want = oracles.yukawa_convolution_gaussian(1.0, 1.0, 0.5)
    assert abs(got - want) <= 1e-4
    assert v.negative_floor >= -1e-12


def test_step_conserves_mass_and_positivity():
    evo = pde.FieldEvolution(GRID, chi=0.5, epsilon=0.3,
                             u0={"sigma": 1.0})
    for _ in range(10):
        evo.advance()
        assert abs(evo.density.mass - 1.0) <= 1e-12
        assert evo.density.u.min() >= 0.0
        assert evo.signal.negative_floor >= -1e-12


def test_uniform_density_is_fixed_point():
    u = uniform_field(GRID, epsilon=0.5)
    stepped = pde.step_density(u, 0.5, 0.5, GRID.dt)
    assert np.allclose(stepped.u, u.u, rtol=0, atol=1e-12)


def test_heat_limit_matches_exact_solution():
    # chi = 0 reduces the equation to u_t = 2 Lap u
    grid = pde.GridSpec(half_width=8.0, n=256, dt=1e-3, t_end=0.25)
    (checkpoint,) = pde.evolve(None, grid, chi=0.0, epsilon=0.0)
    u_num, _ = checkpoint
    ax = grid.axis()
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    exact = oracles.heat_gaussian(xx, yy, 0.25)
    l2 = np.sqrt(np.sum((u_num.u - exact) ** 2) * grid.spacing ** 2)
    assert l2 <= 1e-4
    assert abs(u_num.mass - 1.0) <= 1e-8


def test_evolve_checkpoints_track_heat_oracle():
    grid = pde.GridSpec(half_width=8.0, n=128, dt=1e-3, t_end=0.2)
    out = pde.evolve(None, grid, 0.0, 0.0, checkpoint_times=[0.0, 0.1, 0.2])
    assert [u.time for u, _ in out] == [0.0, 0.1, 0.2]
    ax = grid.axis()
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    for u_num, _ in out:
        exact = oracles.heat_gaussian(xx, yy, u_num.time)
        l2 = np.sqrt(np.sum((u_num.u - exact) ** 2) * grid.spacing ** 2)
        assert l2 <= 2e-4


def test_heat_reference_matches_oracle():
    grid = pde.GridSpec(half_width=8.0, n=128, dt=1e-3, t_end=0.5)
    ax = grid.axis()
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    for t in (0.0, 0.1, 0.5):
        ref = pde.heat_reference(grid, t)
        assert np.allclose(ref, oracles.heat_gaussian(xx, yy, t),
                           rtol=1e-14, atol=0)
    with pytest.raises(ConfigurationError):
        pde.heat_reference(grid, -0.1)
    with pytest.raises(ConfigurationError):
        pde.heat_reference(grid, 0.1, sigma=0.0)


def test_evolve_zero_horizon_returns_initial():
    grid = pde.GridSpec(half_width=8.0, n=128, dt=1e-3, t_end=0.0)
    ((u, v),) = pde.evolve(None, grid, 0.5, 0.3, checkpoint_times=[0.0])
    assert u.time == 0.0
    assert v.time == 0.0
    assert abs(u.mass - 1.0) <= 1e-12


def test_boundary_mass_warning():
    # by t = 1 the spreading Gaussian reaches the box edge at L = 8
    grid = pde.GridSpec(half_width=8.0, n=128, dt=1e-3, t_end=1.0)
    with pytest.warns(RuntimeWarning, match="boundary mass"):
        pde.evolve(None, grid, 0.0, 0.0)


def test_dt_halving_retry(monkeypatch):
    grid = pde.GridSpec(half_width=8.0, n=64, dt=4e-3, t_end=0.02)
    original = pde.step_density
    tripped = {"count": 0}

    def flaky(u, chi, epsilon, dt, signal=None):
        if dt > 2.5e-3:
            tripped["count"] += 1
            raise StabilityError("forced trip")
        return original(u, chi, epsilon, dt, signal=signal)

    monkeypatch.setattr(pde, "step_density", flaky)
    (pair,) = pde.evolve(None, grid, 0.0, 0.0)
    assert tripped["count"] == 1
    assert pair[0].time == pytest.approx(0.02)

    monkeypatch.setattr(pde, "step_density",
                        lambda *a, **k: (_ for _ in ()).throw(
                            StabilityError("always")))
    with pytest.raises(StabilityError):
        pde.evolve(None, grid, 0.0, 0.0, max_dt_halvings=2)


def test_lp_diagnostics():
    grid = GRID
    u = uniform_field(grid)
    got = pde.lp_diagnostics(u, [1, 2, np.inf])
    assert got[1] == pytest.approx(1.0, abs=1e-8)
    assert got[2] == pytest.approx(1.0 / grid.box, rel=1e-12)
    assert got[np.inf] == pytest.approx(1.0 / grid.box ** 2, rel=1e-12)
    gauss = pde.initial_density(grid, sigma=1.0)
    assert pde.lp_diagnostics(gauss, [2])[2] == pytest.approx(
        1.0 / (2.0 * np.sqrt(np.pi)), abs=1e-3)
    with pytest.raises(ConfigurationError):
        pde.lp_diagnostics(u, [0.5])


def test_initial_density_shapes_and_errors():
    grid = pde.GridSpec(half_width=8.0, n=64, dt=1e-3, t_end=1.0)
    mix = pde.initial_density(grid, kind="mixture", sigma=[0.8, 1.2],
                              centers=[(-2.0, 0.0), (2.0, 1.0)],
                              weights=[0.3, 0.7])
    assert abs(mix.mass - 1.0) <= 1e-12
    top = np.unravel_index(np.argmax(mix.u), mix.u.shape)
    x_top = grid.axis()[top[0]]
    assert x_top > 0.0   # the heavier component sits at x = 2
    with pytest.raises(ConfigurationError):
        pde.initial_density(grid, kind="mixture", centers=[(0, 0)],
                            weights=[0.5, 0.5])
    with pytest.raises(ConfigurationError):
        pde.initial_density(grid, kind="ring")
    with pytest.raises(ConfigurationError):
        pde.initial_density(grid, sigma=-1.0)


def test_convolution_diagnostic_uniform():
    table = pot.build_table(chi=0.5, epsilon=0.5)
    u = uniform_field(GRID, epsilon=0.5)
    got = pde.field_convolution_diagnostic(u, table, k_list=(2,))
    # against a constant, the convolution equals the kernel's L1 mass over
    # the box area, everywhere
    rs = np.linspace(0.0, table.cutoff_radius, 200001)
    g = np.abs(pot.table_grad(table, rs))
    l1 = 2.0 * np.pi * np.trapezoid(g * rs, rs)
    want = l1 / GRID.box ** 2
    assert abs(got["grad"] - want) <= 1e-4
    p = 4.0 / 3.0
    l1p = 2.0 * np.pi * np.trapezoid(g ** p * rs, rs)
    assert abs(got["grad_power"][2] - l1p / GRID.box ** 2) <= 1e-4


def test_convolution_diagnostic_errors_and_zero():
    table = pot.build_table(chi=0.0, epsilon=0.5)
    u = uniform_field(GRID, epsilon=0.5)
    got = pde.field_convolution_diagnostic(u, table)
    assert got["grad"] == 0.0
    table2 = pot.build_table(chi=0.5, epsilon=0.25)
    with pytest.raises(ConfigurationError):
        pde.field_convolution_diagnostic(u, table2)


@pytest.fixture(scope="module")
def epsilon_sweep_fields():
    # fine grid so the smallest width clears the resolution floor
    grid = pde.GridSpec(half_width=8.0, n=1024, dt=1e-3, t_end=0.1)
    out = {}
    for eps in (0.2, 0.1, 0.05):
        ((u, v),) = pde.evolve(None, grid, chi=0.5, epsilon=eps)
        out[eps] = u
    return out


def test_l2_norm_epsilon_uniform(epsilon_sweep_fields):
    norms = [pde.lp_diagnostics(u, [2])[2]
             for u in epsilon_sweep_fields.values()]
    assert max(norms) / min(norms) < 1.2


def test_convolution_sup_epsilon_uniform(epsilon_sweep_fields):
    sups = []
    for eps, u in epsilon_sweep_fields.items():
        table = pot.build_table(chi=0.5, epsilon=eps)
        sups.append(pde.field_convolution_diagnostic(u, table)["grad"])
    assert max(sups) / min(sups) < 1.5


def test_save_load_roundtrip(tmp_path):
    grid = pde.GridSpec(half_width=8.0, n=64, dt=1e-3, t_end=1.0)
    u = pde.initial_density(grid, sigma=1.0, epsilon=0.3)
    base = str(tmp_path / "field")
    pde.save_field(u, base, chi=0.5)
    back = pde.load_field(base)
    assert np.array_equal(back.u, u.u)
    assert back.time == u.time
    assert back.epsilon == u.epsilon
    assert back.grid == u.grid
