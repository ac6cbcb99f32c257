"""Compiled pair-sum kernels against a plain numpy all-pairs oracle."""

import numpy as np
import pytest

from kschaos import pairsum, potential as pot

BOX_L8 = 16.0   # [-8, 8)^2, the default simulation box
BOX_L12 = 24.0


@pytest.fixture(scope="module")
def table_eps03():
    return pot.build_table(chi=0.5, epsilon=0.3)


@pytest.fixture(scope="module")
def table_short():
    # loose tail tolerance gives a cutoff near 6.6 so a cell list fits
    # three cells across the 24-wide box
    return pot.build_table(chi=0.5, epsilon=0.3, tail_tolerance=1e-4)


def oracle_psi_mean(positions, box, table, kind=pairsum.KIND_POTENTIAL,
                    power=1.0):
    """Broadcasted reference: min-image displacements, spline evaluation
    through the scipy path, mean over j including the self term."""
    pos = np.asarray(positions, dtype=float)
    d = pos[:, None, :] - pos[None, :, :]
    d -= box * np.round(d / box)
    r = np.hypot(d[..., 0], d[..., 1])
    if kind == pairsum.KIND_POTENTIAL:
        vals = pot.table_phi(table, r)
    else:
        vals = np.abs(pot.table_grad(table, r))
        np.fill_diagonal(vals, 0.0)    # grad vanishes at r = 0 exactly
        if kind == pairsum.KIND_GRAD_POWER:
            vals = vals ** power
    return vals.mean(axis=1)


def random_cloud(seed, n, box):
    rng = np.random.default_rng(seed)
    return rng.uniform(-box / 2, box / 2, size=(n, 2))


def test_allpairs_matches_oracle_100_configs(table_eps03):
    for seed in range(100):
        pos = random_cloud(seed, 256, BOX_L8)
        got = pairsum.mean_pair_interaction(pos, BOX_L8, table_eps03,
                                            method="allpairs")
        want = oracle_psi_mean(pos, BOX_L8, table_eps03)
        assert np.allclose(got, want, rtol=0, atol=1e-12)


def test_cells_match_oracle_and_allpairs(table_short):
    assert pairsum.cell_count(BOX_L12, table_short.cutoff_radius) >= 3
    for seed in range(100):
        pos = random_cloud(seed, 256, BOX_L12)
        cells = pairsum.mean_pair_interaction(pos, BOX_L12, table_short,
                                              method="cells")
        direct = pairsum.mean_pair_interaction(pos, BOX_L12, table_short,
                                               method="allpairs")
        want = oracle_psi_mean(pos, BOX_L12, table_short)
        assert np.allclose(cells, want, rtol=0, atol=1e-12)
        assert np.allclose(cells, direct, rtol=0, atol=1e-12)


def test_auto_dispatch(table_short, table_eps03):
    pos = random_cloud(7, 128, BOX_L12)
    auto = pairsum.mean_pair_interaction(pos, BOX_L12, table_short)
    forced = pairsum.mean_pair_interaction(pos, BOX_L12, table_short,
                                           method="cells")
    assert np.array_equal(auto, forced)
    # default box cannot fit three cells of the full 1e-10 cutoff
    assert pairsum.cell_count(BOX_L8, table_eps03.cutoff_radius) == 0


@pytest.mark.parametrize("kind,power", [
    (pairsum.KIND_GRAD, 1.0),
    (pairsum.KIND_GRAD_POWER, 4.0 / 3.0),
])
def test_gradient_kinds_match_oracle(table_short, kind, power):
    for seed in range(20):
        pos = random_cloud(seed, 200, BOX_L12)
        got = pairsum.mean_pair_statistic(pos, BOX_L12, table_short,
                                          kind=kind, power=power,
                                          method="cells")
        want = oracle_psi_mean(pos, BOX_L12, table_short, kind, power)
        assert np.allclose(got, want, rtol=0, atol=1e-12)


def test_single_particle_self_term(table_eps03):
    pos = np.array([[0.7, -0.2]])
    v = pairsum.mean_pair_interaction(pos, BOX_L8, table_eps03)
    assert v.shape == (1,)
    assert v[0] == table_eps03.phi_values[0]
    g = pairsum.mean_pair_statistic(pos, BOX_L8, table_eps03,
                                    kind=pairsum.KIND_GRAD)
    assert g[0] == 0.0


def test_two_particles_symmetry(table_eps03):
    d = 0.4
    pos = np.array([[0.0, 0.0], [d, 0.0]])
    v = pairsum.mean_pair_interaction(pos, BOX_L8, table_eps03)
    phi_d = float(pot.table_phi(table_eps03, np.array(d)))
    want = 0.5 * (table_eps03.phi_values[0] + phi_d)
    assert v[0] == v[1]
    assert np.isclose(v[0], want, rtol=0, atol=1e-15)


def test_minimum_image_across_seam(table_eps03):
    # particles hugging opposite edges are separated by 0.02, not 15.98
    pos = np.array([[-7.99, 0.0], [7.99, 0.0]])
    v = pairsum.mean_pair_interaction(pos, BOX_L8, table_eps03)
    phi_near = float(pot.table_phi(table_eps03, np.array(0.02)))
    assert np.isclose(v[0], 0.5 * (table_eps03.phi_values[0] + phi_near),
                      rtol=0, atol=1e-14)


def test_fold_invariance(table_short):
    # shifting by whole boxes perturbs coordinates by float rounding only
    pos = random_cloud(3, 64, BOX_L12)
    shifted = pos + BOX_L12 * np.array([2.0, -1.0])
    a = pairsum.mean_pair_interaction(pos, BOX_L12, table_short)
    b = pairsum.mean_pair_interaction(shifted, BOX_L12, table_short)
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_zero_chi_table_gives_zero():
    t = pot.build_table(chi=0.0, epsilon=0.3)
    pos = random_cloud(1, 50, BOX_L8)
    assert np.all(pairsum.mean_pair_interaction(pos, BOX_L8, t) == 0.0)
    assert np.all(pairsum.mean_pair_statistic(
        pos, BOX_L8, t, kind=pairsum.KIND_GRAD) == 0.0)


def test_invalid_arguments(table_eps03, table_short):
    pos = random_cloud(0, 8, BOX_L8)
    with pytest.raises(ValueError):
        pairsum.mean_pair_interaction(pos, BOX_L8, table_eps03,
                                      method="cells")
    with pytest.raises(ValueError):
        pairsum.mean_pair_interaction(pos, BOX_L8, table_eps03,
                                      method="bogus")
    with pytest.raises(ValueError):
        pairsum.mean_pair_statistic(pos, BOX_L8, table_eps03,
                                    kind=pairsum.KIND_GRAD_POWER, power=0.0)
    with pytest.raises(ValueError):
        pairsum.mean_pair_interaction(np.zeros((4, 3)), BOX_L8, table_eps03)


def test_interval_lookup_hits_every_segment(table_eps03):
    # radii straddling every node and every midpoint must interpolate the
    # same values through the compiled path as through the scipy spline
    t = table_eps03
    rs = np.concatenate([t.radii[:-1], 0.5 * (t.radii[:-1] + t.radii[1:])])
    pos = np.zeros((2, 2))
    for r in rs:
        pos[1, 0] = r
        v = pairsum.mean_pair_interaction(pos, 64.0, t, method="allpairs")
        want = 0.5 * (t.phi_values[0] + float(pot.table_phi(t, np.array(r))))
        assert np.isclose(v[0], want, rtol=0, atol=1e-13), r
