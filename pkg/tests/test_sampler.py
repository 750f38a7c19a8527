import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import oracles
from pathlimit.action import EUCLIDEAN, REAL_TIME, PotentialSpec, SystemPaths, SystemSpec, TimeGrid
from pathlimit.classical import least_action_path
from pathlimit.sampler import (
    PathSamples,
    SamplerConfig,
    SamplerTuningWarning,
    bridge_sup_tail,
    brute_force_lattice_measure,
    deviation_probability,
    integrated_autocorrelation,
    l2_deviation,
    metropolis_transition_matrix,
    sample_histogram,
    sample_paths,
    total_variation,
)

FREE = SystemSpec.single(1.0)
WELL = SystemSpec.single(1.0, PotentialSpec.harmonic(1.0))


def test_config_invariants():
    for kwargs in [dict(sweeps=10, burn_in=10), dict(sweeps=10, burn_in=-1), dict(sweeps=10, thinning=0),
                   dict(sweeps=10, step_width=0.0)]:
        with pytest.raises(ValueError):
            SamplerConfig(**kwargs)
    assert SamplerConfig(10).resolved_step(SystemSpec.single(4.0, hbar=0.5), 0.5) == pytest.approx(0.25)


def test_grid_requirements():
    with pytest.raises(ValueError):
        sample_paths(FREE, 0, 0, TimeGrid(0, 1, 1, EUCLIDEAN), SamplerConfig(10))
    with pytest.raises(ValueError):
        sample_paths(FREE, 0, 0, TimeGrid(0, 1, 4, REAL_TIME), SamplerConfig(10))


def test_fixed_seed_reproduces_chain():
    tg = TimeGrid(0, 1, 8, EUCLIDEAN)
    cfg = SamplerConfig(2000, 100, seed=42, thinning=3)
    a, da = sample_paths(WELL, 0.0, 1.0, tg, cfg)
    b, db = sample_paths(WELL, 0.0, 1.0, tg, cfg)
    assert np.array_equal(a.positions, b.positions) and da == db
    c, _ = sample_paths(WELL, 0.0, 1.0, tg, SamplerConfig(2000, 100, seed=43, thinning=3))
    assert not np.array_equal(a.positions, c.positions)


def test_retention_and_diagnostics():
    tg = TimeGrid(0, 1, 6, EUCLIDEAN)
    samples, diag = sample_paths(FREE, 0.0, 0.0, tg, SamplerConfig(1000, 100, thinning=4))
    assert len(samples) == diag.retained == 225
    assert 0 <= diag.acceptance_rate <= 1
    assert 1 <= diag.effective_samples <= diag.retained
    assert np.all(samples.positions[:, 0] == 0) and np.all(samples.positions[:, -1] == 0)
    assert isinstance(samples[3], SystemPaths)


def test_bad_step_width_warns():
    tg = TimeGrid(0, 1, 8, EUCLIDEAN)
    with pytest.warns(SamplerTuningWarning):
        _, diag = sample_paths(FREE, 0, 0, tg, SamplerConfig(500, step_width=50.0))
    assert diag.warning and diag.acceptance_rate < 0.1


def test_free_marginals_follow_brownian_bridge():
    tg = TimeGrid(0, 1, 8, EUCLIDEAN)
    samples, diag = sample_paths(FREE, 0.0, 2.0, tg, SamplerConfig(300_000, 1000, seed=7, thinning=10))
    assert diag.effective_samples >= 1e4
    for k in range(1, tg.slices):
        tau = tg.times[k]
        sd = np.sqrt(oracles.bridge_variance(tau, 1.0, 1.0, 1.0))
        ks = stats.kstest(samples.positions[:, k], "norm", args=(2.0 * tau, sd)).statistic
        assert ks <= 0.05


def test_small_hbar_mean_path_approaches_minimiser():
    tg = TimeGrid(0, 2, 16, EUCLIDEAN)
    system = WELL.with_hbar(1e-4)
    (ref,) = least_action_path(system, 0.0, 1.0, tg)
    samples, diag = sample_paths(system, 0.0, 1.0, tg, SamplerConfig(40_000, 2000, seed=1, thinning=4))
    se = samples.positions.std(axis=0)[1:-1] / np.sqrt(diag.effective_samples)
    assert np.all(np.abs(samples.mean_path[1:-1] - ref.positions[1:-1]) <= 3 * se)


# -- deviation probability ----------------------------------------------------------


@pytest.fixture(scope="module")
def free_chain():
    tg = TimeGrid(0, 1, 16, EUCLIDEAN)
    ref = least_action_path(FREE, 0.0, 0.0, tg)[0]
    samples, _ = sample_paths(FREE, 0.0, 0.0, tg, SamplerConfig(20_000, 500, seed=3, thinning=2))
    return samples, ref


def test_deviation_probability_limits(free_chain):
    samples, ref = free_chain
    assert deviation_probability(samples, ref, 0.0)[0] == 1.0
    p, se = deviation_probability(samples, ref, 1e3)
    assert p == 0.0 and se == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 3), min_size=2, max_size=10))
def test_deviation_probability_is_monotone_in_epsilon(free_chain, eps):
    samples, ref = free_chain
    eps = np.sort(eps)
    p, _ = deviation_probability(samples, ref, eps)
    assert np.all(np.diff(p) <= 0)


def test_deviation_probability_rejections(free_chain):
    samples, ref = free_chain
    with pytest.raises(ValueError):
        deviation_probability([], ref, 0.5)
    other = least_action_path(FREE, 0.0, 1.0, ref.path.grid)[0]
    with pytest.raises(ValueError):
        deviation_probability(samples, other, 0.5)
    coarse = least_action_path(FREE, 0.0, 0.0, TimeGrid(0, 1, 8, EUCLIDEAN))[0]
    with pytest.raises(ValueError):
        deviation_probability(samples, coarse, 0.5)


def test_plain_path_lists_are_accepted(free_chain):
    samples, ref = free_chain
    as_list = [samples[i] for i in range(0, len(samples), 10)]
    p_list, _ = deviation_probability(as_list, ref, 0.4)
    sub = PathSamples(samples.grid, samples.positions[::10])
    assert p_list == deviation_probability(sub, ref, 0.4)[0]


def test_l2_deviation_is_bounded_by_sup(free_chain):
    samples, ref = free_chain
    l2 = l2_deviation(samples, ref)
    sup = np.max(np.abs(samples.positions - ref.positions[None, :]), axis=1)
    assert np.all(l2 <= sup + 1e-15)


def test_bridge_oracle_limits():
    rng = np.random.default_rng(0)
    p, se = bridge_sup_tail(16, 1.0, 1.0, 1.0, [0.0, 100.0], 1000, rng)
    assert p[0] == 1.0 and p[1] == 0.0
    assert np.all(se == 0)


def test_bridge_oracle_matches_corrected_continuum_tail():
    # continuum tail P(sup |B| > a) = 2 sum (-1)^(k+1) exp(-2 k^2 a^2) for a standard bridge;
    # monitoring on a grid acts like raising the barrier by 0.5826 sqrt(dt)
    n = 2000
    a = 0.8
    shifted = a + 0.5826 * np.sqrt(1.0 / n)
    k = np.arange(1, 50)
    expected = 2 * np.sum((-1.0) ** (k + 1) * np.exp(-2 * k**2 * shifted**2))
    p, se = bridge_sup_tail(n, 1.0, 1.0, 1.0, a, 40_000, np.random.default_rng(5), chunk=5000)
    assert abs(p[0] - expected) <= 4 * se[0] + 2e-3


# -- autocorrelation ---------------------------------------------------------------------


def test_autocorrelation_of_iid_and_ar1():
    rng = np.random.default_rng(0)
    assert integrated_autocorrelation(rng.normal(size=100_000)) == pytest.approx(1.0, abs=0.05)
    rho = 0.8
    x = np.empty(200_000)
    x[0] = 0
    noise = rng.normal(size=x.size)
    for i in range(1, x.size):
        x[i] = rho * x[i - 1] + noise[i]
    assert integrated_autocorrelation(x) == pytest.approx((1 + rho) / (1 - rho), rel=0.1)
    assert integrated_autocorrelation(np.ones(10)) == 1.0


# -- lattice oracle ------------------------------------------------------------------------


def test_lattice_symmetry():
    m = brute_force_lattice_measure(WELL, 0.0, 0.0, TimeGrid(0, 1, 2, EUCLIDEAN), [-1.0, 0.0, 1.0])
    assert m.probabilities[0] == pytest.approx(m.probabilities[2], rel=1e-14)
    assert m.probabilities.sum() == pytest.approx(1.0, rel=1e-14)


def test_lattice_large_hbar_is_uniform():
    sites = np.linspace(-1, 1, 5)
    m = brute_force_lattice_measure(WELL, 0.0, 0.5, TimeGrid(0, 1, 4, EUCLIDEAN), sites, hbar=1e6)
    uniform = np.full(len(m.probabilities), 1 / len(m.probabilities))
    assert total_variation(m.probabilities, uniform) <= 1e-3


def test_lattice_budget_and_distinct_sites():
    with pytest.raises(ValueError):
        brute_force_lattice_measure(FREE, 0, 0, TimeGrid(0, 1, 9, EUCLIDEAN), np.arange(7.0))
    with pytest.raises(ValueError):
        brute_force_lattice_measure(FREE, 0, 0, TimeGrid(0, 1, 3, EUCLIDEAN), [0.0, 0.0, 1.0])


def test_sampler_matches_enumeration_free_n3():
    sites = np.linspace(-1, 1, 5)
    tg = TimeGrid(0, 1, 3, EUCLIDEAN)
    m = brute_force_lattice_measure(FREE, 0.0, 0.0, tg, sites)
    samples, _ = sample_paths(FREE, 0.0, 0.0, tg, SamplerConfig(100_000, 1000, seed=9), site_values=sites)
    for node in range(tg.slices - 1):
        emp = np.bincount(np.searchsorted(sites, samples.positions[:, node + 1]), minlength=sites.size)
        assert total_variation(emp / len(samples), m.marginal(node)) <= 0.02
    assert total_variation(sample_histogram(samples, m), m.probabilities) <= 0.02


@pytest.mark.parametrize("node", [None, 2])
def test_transition_matrix_detailed_balance(node):
    sites = np.linspace(-1.5, 1.5, 5)
    tg = TimeGrid(0, 1, 4, EUCLIDEAN)
    system = SystemSpec.single(1.0, PotentialSpec.polynomial(1, 0, -2, 0, 1), 0.7)
    m, trans = metropolis_transition_matrix(system, 0.0, 0.5, tg, sites, node=node)
    assert np.allclose(trans.sum(axis=1), 1.0, rtol=0, atol=1e-14)
    assert np.all(trans >= 0)
    flow = m.probabilities[:, None] * trans
    assert np.max(np.abs(flow - flow.T)) <= 1e-15
    assert np.allclose(m.probabilities @ trans, m.probabilities, rtol=0, atol=1e-15)
