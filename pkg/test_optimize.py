import numpy as np
import pytest

import optimize
from ansatz import Ansatz, LayerParams
from errors import OptimizationError
from estimators import EnergyResult
from exact import EDSpec, ed_ground_energy, exact_contract
from lattice import LatticeGeom
from optimize import (DescentSchedule, OptimizationResult, SweepSettings, bfgs_minimize, extend_with_zero_layer,
                      gradient_descent, minimize_point, parse_grid, sweep, sweep_columns)

TARGET = np.array([0.3, -0.2])


def quadratic(A: Ansatz) -> EnergyResult:
    """E = Σ(α − α*)² + 1"""
    shift = A.parameters - TARGET
    energy = float(shift @ shift) + 1.0
    return EnergyResult(energy=energy, energy_density=energy / A.geom.n_plaquettes, gradient=2.0 * shift,
                        electric=1.0, plaquette=1.0, energy_imag=0.0, n_samples=1)


def test_schedule_validation():
    with pytest.raises(ValueError):
        DescentSchedule(xi0=0.0)
    with pytest.raises(ValueError):
        DescentSchedule(decay=1.5)
    with pytest.raises(ValueError):
        DescentSchedule(max_iters=0)
    assert np.isclose(DescentSchedule(xi0=0.1, decay=0.5).step_size(2), 0.025)


def test_gradient_descent_on_quadratic(geom2):
    records = []
    schedule = DescentSchedule(xi0=0.4, decay=1.0, max_iters=200, grad_tol=1e-8)
    result = gradient_descent(Ansatz.initial(geom2, 1, 1.0, 1.0), quadratic, schedule, 1.0, records.append)
    assert result.converged
    assert np.allclose(result.params, TARGET, atol=1e-7)
    assert np.isclose(result.energy, 1.0)
    assert len(records) == result.iterations
    assert records[0]["iteration"] == 0 and "y1" in records[0] and "grad_norm" in records[0]


def test_gradient_descent_hits_max_iters(geom2):
    schedule = DescentSchedule(xi0=1e-3, decay=1.0, max_iters=3)
    result = gradient_descent(Ansatz.initial(geom2, 1, 1.0, 1.0), quadratic, schedule, 1.0)
    assert not result.converged
    assert result.iterations == 3


def test_gradient_descent_rejects_non_finite_gradient(geom2):
    calls = []

    def broken(A):
        result = quadratic(A)
        calls.append(1)
        if len(calls) > 1:
            result.gradient = np.array([np.nan, 0.0])
        return result

    with pytest.raises(OptimizationError) as info:
        gradient_descent(Ansatz.initial(geom2, 1), broken, DescentSchedule(max_iters=10), 1.0)
    assert info.value.checkpoint["iteration"] == 0


def test_bfgs_on_quadratic(geom2):
    result = bfgs_minimize(Ansatz.initial(geom2, 1), 1.0, starts=3, evaluate=quadratic)
    assert result.converged
    assert np.allclose(result.params, TARGET, atol=1e-6)
    assert isinstance(result, OptimizationResult)
    assert result.layers() == [LayerParams(*result.params)]


def test_extend_with_zero_layer():
    assert np.array_equal(extend_with_zero_layer(np.array([0.1, 0.2]), 2), [0.1, 0.2, 0.0, 0.0])
    assert np.array_equal(extend_with_zero_layer(np.array([0.1, 0.2]), 1), [0.1, 0.2])


def test_zero_layer_does_not_change_energy(make_ansatz, geom2):
    A = make_ansatz(1)
    B = Ansatz(geom2, [LayerParams(*A.parameters), LayerParams(0.0, 0.0)])
    assert np.isclose(exact_contract(A, 1.0).energy, exact_contract(B, 1.0).energy, rtol=1e-10)


def test_parse_grid():
    grid = parse_grid("0.2:3.0:29")
    assert len(grid) == 29
    assert np.isclose(grid[0], 0.2) and np.isclose(grid[-1], 3.0)
    assert np.isclose(grid[1] - grid[0], 0.1)
    with pytest.raises(ValueError):
        parse_grid("0.2:3.0")
    with pytest.raises(ValueError):
        parse_grid("a:b:c")


def _fake_point(settings, g, start=None, stream=0, on_checkpoint=None):
    if np.isclose(g, 0.5):
        raise OptimizationError("сбой")
    params = np.full(2 * settings.n_layers, g)
    return OptimizationResult(params=params, energy=-g, energy_density=-g / 4, gradient=np.zeros_like(params),
                              iterations=3, converged=True)


def test_sweep_with_failure(monkeypatch, geom2):
    monkeypatch.setattr(optimize, "minimize_point", _fake_point)
    grid = parse_grid("0.2:3.0:29")
    table, failures = sweep(grid, SweepSettings(geom2))
    assert list(table.columns) == sweep_columns(1)
    assert len(table) == 29
    assert len(failures) == 1 and np.isclose(failures[0]["g"], 0.5)
    failed = table[np.isclose(table["g"], 0.5)].iloc[0]
    assert np.isnan(failed["E"]) and failed["iters"] == 0 and not failed["converged"]
    assert np.isclose(table["E"].iloc[-1], -3.0)


def test_sweep_warm_start_passes_previous_params(monkeypatch, geom2):
    starts = []

    def recording(settings, g, start=None, stream=0, on_checkpoint=None):
        starts.append(None if start is None else start.copy())
        return _fake_point(settings, g)

    monkeypatch.setattr(optimize, "minimize_point", recording)
    table, failures = sweep([1.0, 2.0], SweepSettings(geom2), warm_start=True)
    assert not failures
    assert starts[0] is None and np.allclose(starts[1], [1.0, 1.0])


def test_sweep_rejects_unsorted_grid(geom2):
    with pytest.raises(ValueError):
        sweep([1.0, 0.5], SweepSettings(geom2))


def test_exact_gradient_descent_lowers_energy(geom2):
    settings = SweepSettings(geom2, kind="gd", init_y=0.1, init_z=0.1,
                             schedule=DescentSchedule(xi0=0.002, decay=1.0, max_iters=5))
    result = minimize_point(settings, 1.0)
    assert result.iterations == 5
    energies = [record["energy"] for record in result.history]
    assert energies[-1] < energies[0]


@pytest.mark.slow
def test_bfgs_respects_variational_bound_and_layers():
    geom = LatticeGeom(2)
    for g in (0.2, 0.6, 1.0, 1.5, 2.0, 3.0):
        E0 = ed_ground_energy(EDSpec(2, g)).energy
        energies = []
        for n_layers in (1, 2):
            settings = SweepSettings(geom, n_layers=n_layers, starts=4)
            energies.append(minimize_point(settings, g).energy)
        assert energies[0] >= E0 - 1e-8
        assert energies[1] >= E0 - 1e-8
        assert energies[1] <= energies[0] + 1e-8


@pytest.mark.slow
@pytest.mark.parametrize("g", [0.6, 2.0])
def test_three_layers_improve_on_two_and_one(g):
    geom = LatticeGeom(2)
    energies = [minimize_point(SweepSettings(geom, n_layers=k, starts=4), g).energy for k in (1, 2, 3)]
    assert energies[1] <= energies[0] + 1e-8
    assert energies[2] <= energies[1] + 1e-8


@pytest.mark.slow
def test_relative_error_vs_ed_decreases_at_strong_coupling():
    geom = LatticeGeom(2)
    grid = [1.5, 2.0, 2.5, 3.0]
    table, failures = sweep(grid, SweepSettings(geom, n_layers=1, starts=4))
    assert not failures
    exact = np.array([ed_ground_energy(EDSpec(2, g)).energy for g in grid])
    relative = (table["E"].to_numpy() - exact) / np.abs(exact)
    assert np.all(relative >= -1e-9)
    assert np.all(np.diff(relative) < 1e-10)


@pytest.mark.slow
def test_warm_started_sweep_matches_cold_start():
    settings = SweepSettings(LatticeGeom(2), n_layers=1, starts=4)
    grid = [1.0, 1.5]
    cold, _ = sweep(grid, settings)
    warm, _ = sweep(grid, settings, warm_start=True)
    assert np.allclose(warm["E"], cold["E"], rtol=0.0, atol=1e-7)
