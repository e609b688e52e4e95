import numpy as np
import pytest
from scipy.stats import chisquare

from ansatz import Ansatz, LayerParams, log_norm_sq
from errors import StaleCacheError
from estimators import ObservableSet
from exact import config_indices, exact_contract
from galg import CachedInverse
from sampler import (ChainState, MCConfig, binned_error, chain_generators, metropolis_step, run_chain,
                     run_chains, sample_energy)


def test_mc_config_validation():
    with pytest.raises(ValueError):
        MCConfig(n_bins=10)
    with pytest.raises(ValueError):
        MCConfig(chains=0)
    with pytest.raises(ValueError):
        MCConfig(warmup_steps=-1)


def test_chain_generators_reproducible():
    first = [rng.random(3) for rng in chain_generators(11, 3)]
    second = [rng.random(3) for rng in chain_generators(11, 3)]
    assert all(np.array_equal(a, b) for a, b in zip(first, second))
    assert not np.allclose(first[0], first[1])


def test_zero_parameters_accept_everything(geom2):
    A = Ansatz(geom2, [LayerParams(0.0, 0.0)])
    state = ChainState(A, np.random.default_rng(3))
    for _ in range(300):
        assert metropolis_step(state)
    assert state.acceptance_rate == 1.0


def test_cached_log_norm_follows_chain(make_ansatz):
    A = make_ansatz(2)
    state = ChainState(A, np.random.default_rng(8), recompute_interval=1000)
    for _ in range(200):
        metropolis_step(state)
    assert state.proposed == 200
    assert 0 < state.accepted <= 200
    assert np.isclose(state.log_norm_sq(), log_norm_sq(state.G, A)[0], atol=1e-8)
    assert np.all((state.G >= 0) & (state.G < A.geom.N))


def test_forced_refresh_keeps_chain_consistent(make_ansatz):
    A = make_ansatz(1)
    state = ChainState(A, np.random.default_rng(4), recompute_interval=5)
    for _ in range(60):
        metropolis_step(state)
    assert sum(cache.refresh_count for cache in state.caches) > 1
    assert np.isclose(state.log_norm_sq(), log_norm_sq(state.G, A)[0], atol=1e-8)


def test_run_chain_is_reproducible(make_ansatz):
    A = make_ansatz(1)
    cfg = MCConfig(warmup_steps=50, sample_steps=100, seed=21, n_bins=20)
    first = run_chain(A, ObservableSet(), cfg)
    second = run_chain(A, ObservableSet(), cfg)
    assert len(first.samples) == 100
    assert np.array_equal(first.samples.electric, second.samples.electric)
    assert np.array_equal(first.final_config, second.final_config)
    assert first.log_norm_drift < 1e-8


def test_thinning_and_chains(make_ansatz):
    A = make_ansatz(1)
    cfg = MCConfig(warmup_steps=10, sample_steps=40, seed=2, chains=3, thinning=4, n_bins=20)
    samples, acceptance = run_chains(A, ObservableSet(gradients=False), cfg)
    assert len(samples) == 3 * 10
    assert 0.0 < acceptance <= 1.0


def test_binned_error_requires_enough_samples():
    with pytest.raises(ValueError):
        binned_error(np.ones(30), 20)
    err_re, err_im = binned_error(np.ones(100, dtype=np.complex128), 20)
    assert err_re == 0.0 and err_im == 0.0



def test_cache_drift_stays_small_without_refresh(make_ansatz):
    A = make_ansatz(2)
    cfg = MCConfig(warmup_steps=500, sample_steps=1500, seed=13, n_bins=20, recompute_interval=10 ** 6)
    result = run_chain(A, ObservableSet(gradients=False), cfg)
    assert result.refreshes == 2 * A.n_layers
    assert result.log_norm_drift < 1e-6


def test_run_chain_detects_cache_drift(make_ansatz, monkeypatch):
    original = CachedInverse.update

    def drifting_update(self, S, new_block):
        ratio = original(self, S, new_block)
        self.log_abs_det += 1e-3
        return ratio

    monkeypatch.setattr(CachedInverse, "update", drifting_update)
    cfg = MCConfig(warmup_steps=100, sample_steps=100, seed=3, n_bins=20, recompute_interval=10 ** 6)
    with pytest.raises(StaleCacheError):
        run_chain(make_ansatz(1), ObservableSet(gradients=False), cfg)


def test_flat_chain_wilson_loop_vanishes(geom2):
    A = Ansatz(geom2, [LayerParams(0.0, 0.0)])
    cfg = MCConfig(warmup_steps=100, sample_steps=10_000, seed=17, n_bins=50)
    result = run_chain(A, ObservableSet(gradients=False, wilson_loops=((1, 1),)), cfg)
    values = result.samples.wilson[(1, 1)]
    err_re, err_im = binned_error(values, 50)
    assert abs(values.mean().real) < 5 * err_re
    assert abs(values.mean().imag) < 5 * err_im


@pytest.mark.slow
def test_mc_agrees_with_exact_contraction(make_ansatz):
    A = make_ansatz(1)
    g = 1.0
    observables = ObservableSet(wilson_loops=((1, 1),))
    exact = exact_contract(A, g, observables)
    run = sample_energy(A, g, MCConfig(warmup_steps=10_000, sample_steps=100_000, seed=5), observables)
    mc = run.result
    assert 0.05 < run.acceptance_rate <= 1.0
    assert abs(mc.energy - exact.energy) < 4 * mc.energy_error
    assert abs(mc.electric.real - exact.electric.real) < 4 * mc.electric_error[0]
    assert abs(mc.plaquette.real - exact.plaquette.real) < 4 * mc.plaquette_error[0]
    estimate = run.estimates["W(1,1)"]
    assert abs(estimate.mean.real - exact.wilson[(1, 1)].real) < 4 * estimate.stderr
    for k in range(A.n_params):
        assert abs(mc.gradient[k] - exact.gradient[k]) < 4 * mc.gradient_error[k]


@pytest.mark.slow
def test_flat_distribution_is_uniform(geom2):
    """y = z = 0: все предложения приняты, гистограмма по 6561 конфигурациям равномерна"""
    A = Ansatz(geom2, [LayerParams(0.0, 0.0)])
    state = ChainState(A, np.random.default_rng(99))
    stride = 4 * geom2.n_links
    counts = np.zeros(geom2.n_configs, dtype=np.int64)
    for step in range(10_000_000):
        metropolis_step(state)
        if step % stride == 0:
            counts[config_indices(geom2, state.G[None, :])[0]] += 1
    assert state.acceptance_rate == 1.0
    assert chisquare(counts).pvalue > 0.01
