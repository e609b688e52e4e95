import numpy as np
import pytest
from scipy.signal import lfilter

from ansatz import PARAM_NAMES
from errors import HermiticityError
from estimators import (EnergyResult, ObservableSet, SampleEvaluator, SampleSet, bin_means, electric_estimator,
                        electric_grad_estimator, energy_and_grad, energy_from_expectations, energy_gradient,
                        gradient_assemble, jackknife, layer_inverses, magnetic_energy_estimator, representatives,
                        translated_paths)
from lattice import Direction, LatticeGeom, LinkId, random_config, zero_config


def test_magnetic_estimator(geom2):
    G = zero_config(geom2)
    assert magnetic_energy_estimator(geom2, G, 1.0) == 0.0
    G[0] = 1
    # плакет (0,0) содержит звено 0 с фазой e^{2πi/3}: (2 − 2cos(2π/3))/2 = 1.5
    assert np.isclose(magnetic_energy_estimator(geom2, G, 1.0, [(0, 0)]), 1.5)
    with pytest.raises(ValueError):
        magnetic_energy_estimator(geom2, G, 0.0)


def test_representatives(geom2):
    sub = representatives(geom2, "sublattice")
    assert len(sub.links) == 4 and len(set(sub.links)) == 4
    assert sub.plaquettes == ((0, 0), (1, 0))
    assert representatives(geom2, "origin").links == (0,)
    assert representatives(geom2, "all").links == tuple(range(geom2.n_links))
    with pytest.raises(ValueError):
        representatives(geom2, "diagonal")


def test_translated_paths_shape():
    geom = LatticeGeom(4)
    indices, signs = translated_paths(geom, 2, 1)
    assert indices.shape == (16, 6)
    assert np.all(signs.sum(axis=1) == 0)


@pytest.mark.parametrize("n_layers", [1, 2])
def test_electric_lowrank_matches_direct(make_ansatz, geom2, rng, n_layers):
    A = make_ansatz(n_layers)
    for _ in range(3):
        G = random_config(geom2, rng)
        for link in (0, 3, LinkId((1, 1), Direction.VERTICAL)):
            lowrank = electric_estimator(G, link, A, method="lowrank")
            direct = electric_estimator(G, link, A, method="direct")
            assert np.isclose(lowrank, direct, rtol=1e-8, atol=1e-12)


def test_electric_estimator_unknown_method(make_ansatz, geom2):
    with pytest.raises(ValueError):
        electric_estimator(zero_config(geom2), 0, make_ansatz(1), method="dense")


@pytest.mark.parametrize("alpha", PARAM_NAMES)
def test_electric_gradient_matches_finite_difference(make_ansatz, geom2, rng, alpha):
    A = make_ansatz(2)
    G = random_config(geom2, rng)
    h = 1e-6
    for i in range(A.n_layers):
        slot = A.param_slot(i, alpha)
        values = []
        for sign in (1, -1):
            B = A.copy()
            params = A.parameters.copy()
            params[slot] += sign * h
            B.set_parameters(params)
            values.append(electric_estimator(G, 1, B))
        numeric = (values[0] - values[1]) / (2 * h)
        analytic = electric_grad_estimator(G, 1, A, i, alpha)
        assert np.isclose(analytic, numeric, rtol=1e-5, atol=1e-8)


def test_sample_evaluator_row(make_ansatz, geom2, rng):
    A = make_ansatz(1)
    G = random_config(geom2, rng)
    evaluator = SampleEvaluator(A, ObservableSet(wilson_loops=((1, 1),)))
    electric, plaquette, d_electric, log_grad, wilson = evaluator.evaluate(G, layer_inverses(G, A))
    reps = representatives(geom2)
    expected = np.mean([electric_estimator(G, link, A) for link in reps.links])
    assert np.isclose(electric, expected)
    assert d_electric.shape == (2,) and log_grad.shape == (2,)
    assert abs(plaquette) <= 1.0 + 1e-12
    assert wilson.shape == (1,)
    assert evaluator.record(G, layer_inverses(G, A))
    assert evaluator.n_recorded == 1


def test_bin_means_and_jackknife(rng):
    values = rng.normal(1.0, 2.0, size=10_000)
    assert bin_means(values, 50).shape == (50,)
    with pytest.raises(ValueError):
        bin_means(values[:50], 50)
    value, err_re, err_im = jackknife([values], lambda x: x, 50)
    naive = values.std(ddof=1) / np.sqrt(len(values))
    assert np.isclose(value, values.mean())
    assert 0.65 * naive < err_re < 1.35 * naive
    assert err_im == 0.0


def test_gradient_assemble_constant_estimator(rng):
    F = np.ones(100, dtype=np.complex128)
    dF = rng.normal(size=(100, 2))
    R = rng.normal(size=(100, 2))
    assert np.allclose(gradient_assemble(F, dF, R), dF.mean(axis=0))


def _synthetic(n, electric, plaquette, n_params=2, weights=None):
    return SampleSet(
        electric=np.full(n, electric, dtype=np.complex128),
        plaquette=np.full(n, plaquette, dtype=np.complex128),
        d_electric=np.zeros((n, n_params), dtype=np.complex128),
        log_grad=np.zeros((n, n_params)),
        weights=weights,
    )


def test_energy_limits(geom2):
    g = 0.7
    ordered = energy_and_grad(_synthetic(200, 1.0, 1.0), geom2, g)
    assert isinstance(ordered, EnergyResult)
    assert np.isclose(ordered.energy, 0.0)
    flat = energy_and_grad(_synthetic(4, 1.0, 0.0, weights=np.full(4, 0.25)), geom2, g)
    assert np.isclose(flat.energy_density, 1.0 / g ** 2)
    disordered = energy_and_grad(_synthetic(200, 0.0, 0.0), geom2, g)
    assert np.isclose(disordered.energy, geom2.n_links * g ** 2 + geom2.n_plaquettes / g ** 2)
    assert np.allclose(disordered.gradient, 0.0)
    with pytest.raises(ValueError):
        energy_and_grad(_synthetic(1, 1.0, 1.0), geom2, g)


def test_energy_gradient_from_covariance(geom2, rng):
    """∂E = −n_links g² Re∂⟨F_el⟩ − (n_plaq/g²) Re∂⟨F_W⟩ при ∂F = 0"""
    n, g = 400, 1.3
    R = rng.normal(size=(n, 1))
    samples = SampleSet(
        electric=(0.5 + R[:, 0]).astype(np.complex128),
        plaquette=np.full(n, 0.2, dtype=np.complex128),
        d_electric=np.zeros((n, 1), dtype=np.complex128),
        log_grad=R,
    )
    result = energy_and_grad(samples, geom2, g)
    covariance = np.mean(R[:, 0] * (0.5 + R[:, 0])) - np.mean(R[:, 0]) * np.mean(0.5 + R[:, 0])
    assert np.isclose(result.gradient[0], -geom2.n_links * g * g * covariance)
    assert result.energy_error > 0.0


def test_energy_rejects_imaginary_offset(geom2, rng):
    n = 2000
    noise = 1e-3 * (rng.normal(size=n) + 1j * rng.normal(size=n))
    samples = SampleSet(
        electric=1.0 + 5.0j + noise,
        plaquette=np.full(n, 0.5, dtype=np.complex128),
        d_electric=np.zeros((n, 2), dtype=np.complex128),
        log_grad=rng.normal(size=(n, 2)),
    )
    with pytest.raises(HermiticityError) as excinfo:
        energy_and_grad(samples, geom2, 1.0)
    assert excinfo.value.what == "энергия"
    assert abs(excinfo.value.value) > 5.0 * excinfo.value.error > 0.0


def test_energy_accepts_noise_compatible_imaginary_part(geom2, rng):
    n = 2000
    samples = SampleSet(
        electric=0.8 + 0.01 * (rng.normal(size=n) + 1j * rng.normal(size=n)),
        plaquette=np.full(n, 0.5, dtype=np.complex128),
        d_electric=np.zeros((n, 2), dtype=np.complex128),
        log_grad=rng.normal(size=(n, 2)),
    )
    result = energy_and_grad(samples, geom2, 1.0)
    assert abs(result.energy_imag) <= 5.0 * result.energy_error + 1e-8


def test_live_assembly_matches_gradient_assemble(geom2, rng):
    n, g = 500, 0.9
    R = rng.normal(size=(n, 2))
    samples = SampleSet(
        electric=0.6 + 0.2 * R[:, 0] + 0.05 * rng.normal(size=n) + 0j,
        plaquette=0.3 - 0.1 * R[:, 1] + 0j,
        d_electric=0.01 * rng.normal(size=(n, 2)) + 0j,
        log_grad=R,
    )
    result = energy_and_grad(samples, geom2, g)
    expected = energy_gradient(
        geom2, g,
        gradient_assemble(samples.electric, samples.d_electric, R),
        gradient_assemble(samples.plaquette, np.zeros((n, 2)), R),
    )
    assert np.allclose(result.gradient, expected.real)
    assert np.isclose(result.energy, energy_from_expectations(geom2, g, samples.electric.mean(),
                                                              samples.plaquette.mean()).real)


def test_binned_error_exceeds_naive_for_correlated_stream(rng):
    """AR(1) с φ = 0.9: τ_int ≈ (1 + φ)/(1 − φ) = 19, ошибка по бинам ≈ √19 наивной"""
    phi, n = 0.9, 100_000
    values = lfilter([1.0], [1.0, -phi], rng.normal(size=n))
    _, err_re, _ = jackknife([values], lambda x: x, 50)
    naive = values.std(ddof=1) / np.sqrt(n)
    assert err_re > 2.5 * naive
    assert err_re < 7.0 * naive
    assert np.isclose(bin_means(values, 50).std(ddof=1) / np.sqrt(50), err_re, rtol=1e-8)
