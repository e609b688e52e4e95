import numpy as np
import pytest

from ansatz import (PARAM_BOUND, Ansatz, LayerParams, dt_matrix, first_trace_term, log_norm_grad, log_norm_sq,
                    norm_sq, t_matrix)
from estimators import layer_inverses, log_norm_grad_from_inverse
from exact import config_indices, enumerate_configs, gauge_permutations, gray_walk
from lattice import LatticeGeom, gauge_transform, random_config, vertex_coords


def test_t_matrix_layout():
    s = 1.0 / np.sqrt(2.0)
    T = t_matrix(2.0, 3.0)
    assert T.shape == (4, 4)
    assert np.isclose(T[0, 1], 2.0) and np.isclose(T[1, 0], -2.0)
    assert np.isclose(T[2, 3], 2.0) and np.isclose(T[3, 2], -2.0)
    assert np.isclose(T[0, 2], 3.0 * s) and np.isclose(T[3, 1], -3.0 * s)
    assert np.allclose(t_matrix(0.5, -1.5), 0.5 * dt_matrix("y") - 1.5 * dt_matrix("z"))
    with pytest.raises(ValueError):
        dt_matrix("w")


def test_layer_params_validation():
    with pytest.raises(ValueError):
        LayerParams(float("nan"), 0.0)
    assert LayerParams(20.0, -15.0).clamped() == LayerParams(PARAM_BOUND, -PARAM_BOUND)


def test_initial_ansatz(geom2):
    A = Ansatz.initial(geom2, 3, 0.1, 0.2, jitter=0.01, rng=np.random.default_rng(5))
    assert A.n_layers == 3
    assert A.n_params == 6
    assert A.parameter_labels() == ["y1", "z1", "y2", "z2", "y3", "z3"]
    assert np.all(np.abs(A.parameters[0::2] - 0.1) <= 0.01)
    assert np.all(np.abs(A.parameters[1::2] - 0.2) <= 0.01)
    with pytest.raises(ValueError):
        Ansatz(geom2, [])


def test_set_parameters_clamps_and_rebuilds(geom2):
    A = Ansatz.initial(geom2, 1)
    version = A.version
    A.set_parameters([12.0, -0.5])
    assert np.allclose(A.parameters, [PARAM_BOUND, -0.5])
    assert A.version == version + 1
    with pytest.raises(ValueError):
        A.set_parameters([1.0])


def test_stale_caches_are_detected(geom2):
    A = Ansatz.initial(geom2, 1)
    A.set_parameters([0.7, 0.1], rebuild=False)
    with pytest.raises(RuntimeError):
        A.check_caches()
    with pytest.raises(RuntimeError):
        log_norm_sq(np.zeros(geom2.n_links, dtype=np.int64), A)
    A.rebuild()
    A.check_caches()


def test_flat_distribution_at_zero_parameters(geom2, rng):
    A = Ansatz(geom2, [LayerParams(0.0, 0.0), LayerParams(0.0, 0.0)])
    reference, _ = log_norm_sq(np.zeros(geom2.n_links, dtype=np.int64), A)
    for _ in range(10):
        value, _ = log_norm_sq(random_config(geom2, rng), A)
        assert np.isclose(value, reference, atol=1e-10)


@pytest.mark.parametrize("n_layers", [1, 2])
def test_gauge_invariance_sampled(make_ansatz, geom2, rng, n_layers):
    A = make_ansatz(n_layers)
    for _ in range(5):
        G = random_config(geom2, rng)
        reference, _ = log_norm_sq(G, A)
        for v in range(geom2.n_vertices):
            value, _ = log_norm_sq(gauge_transform(geom2, G, vertex_coords(geom2, v)), A)
            assert np.isclose(value, reference, atol=1e-9)


@pytest.mark.slow
@pytest.mark.parametrize("n_layers", [1, 2, 3])
def test_gauge_invariance_exhaustive(make_ansatz, geom2, n_layers):
    """|Ψ(G)|² постоянна на каждой калибровочной орбите, все 6561 конфигураций"""
    A = make_ansatz(n_layers)
    configs = enumerate_configs(geom2)
    log_weights = np.full(len(configs), np.nan)
    for G, _, log_weight in gray_walk(A, gauge_fix=False):
        log_weights[config_indices(geom2, G[None, :])[0]] = log_weight
    assert not np.any(np.isnan(log_weights))
    for perm in gauge_permutations(geom2, configs):
        assert np.allclose(log_weights[perm], log_weights, atol=1e-9)


@pytest.mark.parametrize("alpha", ["y", "z"])
def test_log_norm_grad_matches_finite_difference(make_ansatz, geom2, rng, alpha):
    A = make_ansatz(2)
    G = random_config(geom2, rng)
    h = 1e-6
    for i in range(A.n_layers):
        slot = A.param_slot(i, alpha)
        base = A.parameters
        shifted = []
        for sign in (1, -1):
            B = A.copy()
            params = base.copy()
            params[slot] += sign * h
            B.set_parameters(params)
            shifted.append(log_norm_sq(G, B)[0])
        numeric = (shifted[0] - shifted[1]) / (2 * h)
        assert np.isclose(log_norm_grad(G, A, i, alpha), numeric, rtol=1e-5, atol=1e-7)


def test_log_norm_grad_from_inverse_agrees(make_ansatz, geom2, rng):
    A = make_ansatz(2)
    G = random_config(geom2, rng)
    inverses = layer_inverses(G, A)
    for i in range(A.n_layers):
        for a, alpha in enumerate(("y", "z")):
            assert np.isclose(log_norm_grad_from_inverse(inverses[i], A.dD_blocks[i][a]),
                              log_norm_grad(G, A, i, alpha), rtol=1e-8, atol=1e-10)


def test_first_trace_term_vanishes(make_ansatz):
    A = make_ansatz(2)
    for i in range(A.n_layers):
        for alpha in ("y", "z"):
            assert abs(first_trace_term(A, i, alpha)) < 1e-10


def test_ansatz_l4_builds():
    A = Ansatz.initial(LatticeGeom(4), 1)
    assert A.dim == 16 * 16
    assert A.layer_D(0).shape == (256, 256)


def test_norm_sq_per_layer_product(make_ansatz, geom2, rng):
    A = make_ansatz(2)
    G = random_config(geom2, rng)
    total, per_layer = norm_sq(G, A)
    assert len(per_layer) == 2
    assert np.isclose(total, np.prod(per_layer))
    assert np.isclose(np.log(total), log_norm_sq(G, A)[0])


def test_rebuild_rejects_nonvanishing_first_trace(monkeypatch, geom2):
    import ansatz
    from errors import ConventionError
    from gstate import vertex_D_block

    monkeypatch.setattr(ansatz, "d_vertex_D_block", lambda T, dT: vertex_D_block(T)[0])
    with pytest.raises(ConventionError):
        Ansatz(geom2, [LayerParams(0.3, 0.2)])


def test_norm_sq_invariant_under_layer_permutation(make_ansatz, geom2, rng):
    A = make_ansatz(3)
    swapped = A.with_layers([A.layers[2], A.layers[0], A.layers[1]])
    for _ in range(3):
        G = random_config(geom2, rng)
        assert np.isclose(log_norm_sq(G, swapped)[0], log_norm_sq(G, A)[0], rtol=1e-12, atol=1e-12)


def test_identical_layers_square_the_norm(geom2, rng):
    layer = LayerParams(0.45, -0.3)
    single = Ansatz(geom2, [layer])
    double = Ansatz(geom2, [layer, layer])
    for _ in range(3):
        G = random_config(geom2, rng)
        assert np.isclose(norm_sq(G, double)[0], norm_sq(G, single)[0] ** 2, rtol=1e-10)


@pytest.mark.parametrize("alpha", ["y", "z"])
def test_log_norm_grad_depends_only_on_own_layer(make_ansatz, geom2, rng, alpha):
    A = make_ansatz(2)
    other = A.with_layers([A.layers[0], LayerParams(-0.7, 0.55)])
    G = random_config(geom2, rng)
    assert np.isclose(log_norm_grad(G, other, 0, alpha), log_norm_grad(G, A, 0, alpha), rtol=1e-12, atol=1e-14)
    assert not np.isclose(log_norm_grad(G, other, 1, alpha), log_norm_grad(G, A, 1, alpha))
