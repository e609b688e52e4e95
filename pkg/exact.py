#!/usr/bin/env python3
"""
Эталонные вычисления для малых систем:
- точная свёртка (EC) - полная сумма по конфигурациям в модульном коде Грея
- перекрёстная проверка ⟨P⟩ через смешанные перекрытия и полные Pfaffian-ы
- точная диагонализация гамильтониана Z_N в калибровочно-инвариантном секторе
- игрушечное кольцо из двух вершин, вычисляемое буквально в пространстве Фока
"""

import itertools
import json
import logging
import os
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import eigsh

from ansatz import Ansatz
from errors import ConventionError, LanczosError, SamplingError, StateSpaceTooLargeError
from estimators import EnergyResult, ObservableSet, SampleEvaluator, SampleSet, energy_and_grad
from galg import CachedInverse, lowrank_pfaffian_ratio, pfaffian
from gstate import (assemble_Gamma_in, closed_form_transition_at, fock_covariance, fock_space, link_block_at,
                    link_in_block, link_state, link_support, link_transition_block)
from lattice import (Direction, LatticeGeom, gauge_moves, maximal_tree, path_arrays, plaquette_links,
                     vertex_coords, zero_config)

logger = logging.getLogger(__name__)

MAX_EC_CONFIGS = 10 ** 7
MAX_ED_DIM = 2 * 10 ** 5
RESIDUAL_TOL = 1e-9
GAUSS_TOL = 1e-10


# --- точная свёртка --------------------------------------------------------

def gray_code(n_digits: int, radix: int) -> Iterator[Tuple[int, int]]:
    """
    Модульный код Грея: после нулевого слова выдаёт (позиция, новая цифра),
    каждый шаг увеличивает одну цифру на 1 по модулю radix.
    """
    digits = [0] * n_digits
    counter = [0] * n_digits
    for _ in range(radix ** n_digits - 1):
        position = 0
        while counter[position] == radix - 1:
            counter[position] = 0
            position += 1
        counter[position] += 1
        digits[position] = (digits[position] + 1) % radix
        yield position, digits[position]


def free_links(geom: LatticeGeom, gauge_fix: bool = True) -> List[int]:
    """Звенья, по которым идёт сумма; при фиксации калибровки звенья дерева держатся в q = 0"""
    if not gauge_fix:
        return list(range(geom.n_links))
    tree = set(maximal_tree(geom))
    return [index for index in range(geom.n_links) if index not in tree]


def _check_feasible(geom: LatticeGeom, n_free: int):
    count = geom.N ** n_free
    if count > MAX_EC_CONFIGS:
        raise StateSpaceTooLargeError(
            f"{count} конфигураций для L={geom.L}, N={geom.N}: точная свёртка невозможна, используйте mode=mc"
        )


def gray_walk(A: Ansatz, gauge_fix: bool = True,
              recompute_interval: int = 1000) -> Iterator[Tuple[np.ndarray, List[np.ndarray], float]]:
    """
    Обходит все конфигурации (по одной на калибровочную орбиту при gauge_fix),
    выдавая (G, обратные матрицы слоёв, log|Ψ(G)|²). Каждый шаг - одно блочное обновление.
    """
    A.check_caches()
    geom = A.geom
    free = free_links(geom, gauge_fix)
    _check_feasible(geom, len(free))

    G = zero_config(geom)
    gamma_in = assemble_Gamma_in(geom, G)
    caches = [CachedInverse(A.layer_matrix(G, i, gamma_in), recompute_interval) for i in range(A.n_layers)]
    offset = A.dim * np.log(2.0)

    def current():
        for cache in caches:
            if np.real(cache.sign) < 0:
                raise ConventionError(f"Отрицательный det(Γ_in + D) на конфигурации {G.tolist()}")
        log_weight = sum(0.5 * (cache.log_abs_det - offset) for cache in caches)
        return G, [cache.inverse for cache in caches], float(log_weight)

    yield current()
    for position, digit in gray_code(len(free), geom.N):
        index = free[position]
        G[index] = digit
        block = link_block_at(geom, index, digit)
        S = link_support(geom, index)
        for cache in caches:
            if cache.stale:
                cache.refresh()
            cache.update(S, block)
        yield current()


def _normalized_weights(log_weights: Sequence[float]) -> np.ndarray:
    log_weights = np.asarray(log_weights)
    weights = np.exp(log_weights - log_weights.max())
    return weights / weights.sum()


def exact_samples(A: Ansatz, observables: Optional[ObservableSet] = None, gauge_fix: bool = True,
                  recompute_interval: int = 1000) -> SampleSet:
    """Все конфигурации с весами p(G) = |Ψ(G)|²/Σ|Ψ|²"""
    evaluator = SampleEvaluator(A, observables or ObservableSet())
    log_weights = []
    for G, inverses, log_weight in gray_walk(A, gauge_fix, recompute_interval):
        if not evaluator.record(G, inverses):
            raise SamplingError(f"Вырожденный знаменатель в точной свёртке на {G.tolist()}")
        log_weights.append(log_weight)
    return evaluator.sample_set(_normalized_weights(log_weights))


def exact_contract(A: Ansatz, g: float, observables: Optional[ObservableSet] = None,
                   gauge_fix: bool = True) -> EnergyResult:
    """Точные энергия, градиент, ⟨P⟩, ⟨W⟩ полной суммой по конфигурациям"""
    samples = exact_samples(A, observables, gauge_fix)
    result = energy_and_grad(samples, A.geom, g)
    logger.debug(f"EC: g={g}, E={result.energy:.12f}, |∇E|∞={result.gradient_norm:.3e}")
    return result


def exact_expectation(A: Ansatz, observable: Callable[[np.ndarray], complex], gauge_fix: bool = True) -> complex:
    """Σ_G F(G)|Ψ(G)|²/Σ_G|Ψ(G)|² для калибровочно-инвариантной диагональной F"""
    values, log_weights = [], []
    for G, _, log_weight in gray_walk(A, gauge_fix):
        values.append(observable(G))
        log_weights.append(log_weight)
    return complex(np.dot(_normalized_weights(log_weights), values))


def mixed_overlap_expectation(A: Ansatz, link: int, gauge_fix: bool = True) -> complex:
    """
    ⟨P_ℓ⟩ = Σ Ψ*(G, q−1)Ψ(G, q)/Σ|Ψ(G)|² через Tr(ρ_X Y) = 2⁻ⁿ Tr Y·Pf(Γ_X)Pf(M_Y − Γ_X⁻¹):
    числитель и знаменатель считаются полными Pfaffian-ами без обновлений, блок звена в
    числителе - замкнутая форма M(Φ) ⊕ M(−Φ), а не конструктор в пространстве Фока.
    """
    A.check_caches()
    geom = A.geom
    free = free_links(geom, gauge_fix)
    _check_feasible(geom, len(free))
    S = link_support(geom, link)
    D = [A.layer_D(i) for i in range(A.n_layers)]
    pf_D = [pfaffian(d) for d in D]
    numerator = 0.0 + 0.0j
    denominator = 0.0 + 0.0j
    for values in itertools.product(range(geom.N), repeat=len(free)):
        G = zero_config(geom)
        G[free] = values
        gamma_in = assemble_Gamma_in(geom, G)
        block, prefactor = closed_form_transition_at(geom, link, G[link])
        modified = gamma_in.astype(np.complex128)
        modified[np.ix_(S, S)] = block
        num, den = 1.0 + 0.0j, 1.0 + 0.0j
        for d, pf_d in zip(D, pf_D):
            num *= prefactor * pf_d * pfaffian(modified + d)
            den *= pf_d * pfaffian(gamma_in + d)
        numerator += num
        denominator += den
    return complex(numerator / denominator)


# --- точная диагонализация -------------------------------------------------

@dataclass(frozen=True)
class EDSpec:
    L: int
    g: float
    N: int = 3

    @property
    def key(self) -> str:
        return f"L={self.L},N={self.N},g={self.g!r}"


@dataclass
class EDResult:
    energy: float
    sector_dim: int
    residual: float
    gauss_residual: float
    vector: Optional[np.ndarray] = None
    cached: bool = False

    def to_dict(self) -> Dict:
        return {
            "energy": self.energy,
            "sector_dim": self.sector_dim,
            "residual": self.residual,
            "gauss_residual": self.gauss_residual,
        }


def enumerate_configs(geom: LatticeGeom) -> np.ndarray:
    """Все конфигурации, первое звено - старший разряд"""
    if geom.n_configs > MAX_ED_DIM:
        raise StateSpaceTooLargeError(f"Гильбертово пространство {geom.n_configs} слишком велико для ED")
    return np.array(list(itertools.product(range(geom.N), repeat=geom.n_links)), dtype=np.int64)


def _place_values(geom: LatticeGeom) -> np.ndarray:
    return geom.N ** np.arange(geom.n_links - 1, -1, -1, dtype=np.int64)


def config_indices(geom: LatticeGeom, configs: np.ndarray) -> np.ndarray:
    return configs @ _place_values(geom)


def build_hamiltonian(geom: LatticeGeom, g: float, configs: Optional[np.ndarray] = None) -> sparse.csr_matrix:
    """
    H = (g²/2) Σ_ℓ (2 − P_ℓ − P_ℓ†) + (1/2g²) Σ_p (2 − W_p − W_p†)
    в базисе групповых элементов; P|q⟩ = |q − 1⟩.
    """
    configs = enumerate_configs(geom) if configs is None else configs
    dim = len(configs)
    index = config_indices(geom, configs)
    place = _place_values(geom)

    diagonal = np.full(dim, geom.n_links * g * g)
    for v in range(geom.n_vertices):
        idx, signs = path_arrays(geom, plaquette_links(geom, vertex_coords(geom, v)))
        phase = geom.delta * (configs[:, idx] @ signs)
        diagonal += (2.0 - 2.0 * np.cos(phase)) / (2.0 * g * g)

    rows, cols = [np.arange(dim)], [index]
    values = [diagonal]
    for link in range(geom.n_links):
        q = configs[:, link]
        for step in (-1, 1):
            target = index + (((q + step) % geom.N) - q) * place[link]
            rows.append(target)
            cols.append(index)
            values.append(np.full(dim, -0.5 * g * g))
    H = sparse.coo_matrix((np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(dim, dim))
    return H.tocsr()


def gauge_permutations(geom: LatticeGeom, configs: np.ndarray) -> List[np.ndarray]:
    """Для каждой вершины x: номер конфигурации Θ(x)|G⟩ для всех G"""
    place = _place_values(geom)
    index = config_indices(geom, configs)
    perms = []
    for v in range(geom.n_vertices):
        shifted = index.copy()
        for link, step in gauge_moves(geom, vertex_coords(geom, v)):
            q = configs[:, link]
            shifted += (((q + step) % geom.N) - q) * place[link]
        perms.append(shifted)
    return perms


def gauge_sector_isometry(geom: LatticeGeom, configs: Optional[np.ndarray] = None) -> sparse.csr_matrix:
    """
    Изометрия V (N^{2L²} × число орбит): столбец - равномерная суперпозиция орбиты
    калибровочной группы, т.е. проекция на сектор Θ(x) = 1.
    """
    configs = enumerate_configs(geom) if configs is None else configs
    perms = gauge_permutations(geom, configs)
    label = np.arange(len(configs))
    while True:
        previous = label
        for perm in perms:
            label = np.minimum(label, label[perm])
        if np.array_equal(label, previous):
            break
    _, orbit, sizes = np.unique(label, return_inverse=True, return_counts=True)
    values = 1.0 / np.sqrt(sizes[orbit])
    return sparse.csr_matrix((values, (np.arange(len(configs)), orbit)), shape=(len(configs), len(sizes)))


def _load_ed_cache(cache_file: Optional[str]) -> Dict:
    if not cache_file or not os.path.exists(cache_file):
        return {}
    try:
        with open(cache_file, "r", encoding="utf-8") as f:
            return json.load(f)
    except Exception as e:
        logger.warning(f"⚠️ Кэш ED не прочитан ({cache_file}): {e}")
        return {}


def _save_ed_cache(cache_file: str, cache: Dict):
    directory = os.path.dirname(cache_file)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(cache_file, "w", encoding="utf-8") as f:
        json.dump(cache, f, ensure_ascii=False, indent=2, default=str)


def ed_ground_energy(spec: EDSpec, cache_file: Optional[str] = None) -> EDResult:
    """Основное состояние в секторе Θ(x) = 1 методом Ланцоша (scipy eigsh)"""
    cache = _load_ed_cache(cache_file)
    if spec.key in cache:
        entry = cache[spec.key]
        logger.info(f"📂 ED из кэша: {spec.key} → E₀ = {entry['energy']:.10f}")
        return EDResult(entry["energy"], entry["sector_dim"], entry["residual"], entry["gauss_residual"],
                        cached=True)

    geom = LatticeGeom(spec.L, spec.N)
    configs = enumerate_configs(geom)
    H = build_hamiltonian(geom, spec.g, configs)
    V = gauge_sector_isometry(geom, configs)
    H_sector = (V.T @ H @ V).tocsr()
    sector_dim = H_sector.shape[0]
    logger.info(f"🔍 ED: L={spec.L}, N={spec.N}, g={spec.g}, сектор {sector_dim} из {len(configs)}")

    v0 = np.ones(sector_dim)
    if sector_dim > 2:
        energies, vectors = eigsh(H_sector, k=1, which="SA", v0=v0, tol=0)
        energy, sector_vector = float(energies[0]), vectors[:, 0]
    else:
        energies, vectors = np.linalg.eigh(H_sector.toarray())
        energy, sector_vector = float(energies[0]), vectors[:, 0]

    vector = V @ sector_vector
    vector /= np.linalg.norm(vector)
    scale = max(1.0, float(abs(H).sum(axis=1).max()))
    residual = float(np.linalg.norm(H @ vector - energy * vector))
    if residual > RESIDUAL_TOL * scale:
        raise LanczosError("Ланцош не сошёлся", residual)
    gauss_residual = max(float(np.linalg.norm(vector[perm] - vector)) for perm in gauge_permutations(geom, configs))
    if gauss_residual > GAUSS_TOL:
        raise ConventionError(f"Основное состояние нарушает закон Гаусса: {gauss_residual:.3e}")

    result = EDResult(energy, sector_dim, residual, gauss_residual, vector)
    if cache_file:
        cache[spec.key] = result.to_dict()
        _save_ed_cache(cache_file, cache)
    logger.info(f"✅ ED: E₀ = {energy:.10f}, невязка {residual:.2e}")
    return result


# --- игрушечное кольцо -----------------------------------------------------
# Две вершины на кольце длины 2, у каждой только горизонтальные моды {l+, l-, r+, r-};
# звено ℓ_v выходит из вершины v вправо в вершину 1 − v.

TOY_MODES = ("l+", "l-", "r+", "r-")
TOY_INDEX = {name: k for k, name in enumerate(TOY_MODES)}
TOY_VERTICES = 2
TOY_PARITY = (1, -1)


@dataclass(frozen=True)
class ToyRing:
    y: float
    N: int = 3

    @property
    def delta(self) -> float:
        return 2.0 * np.pi / self.N


def _toy_mode(v: int, name: str) -> int:
    return len(TOY_MODES) * v + TOY_INDEX[name]


def _toy_vertex_terms(y: float, v: int = 0):
    """exp(y·l+†r+† − y·r-†l-†) - пары с зарядами, компенсируемыми вдоль кольца"""
    return [
        (y, ((_toy_mode(v, "l+"), True), (_toy_mode(v, "r+"), True))),
        (-y, ((_toy_mode(v, "r-"), True), (_toy_mode(v, "l-"), True))),
    ]


def _toy_link_terms(v: int):
    partner = 1 - v
    return [
        (1.0, ((_toy_mode(partner, "l+"), True), (_toy_mode(v, "r-"), True))),
        (1.0, ((_toy_mode(partner, "l-"), True), (_toy_mode(v, "r+"), True))),
    ]


def fock_amplitude_oracle(ring: ToyRing, qs: Sequence[int]) -> complex:
    """Ψ(q) = ⟨Ω|∏ω ∏U ∏A|Ω⟩ буквально в 256-мерном пространстве Фока"""
    n_modes = len(TOY_MODES) * TOY_VERTICES
    space = fock_space(n_modes)
    A_terms = [term for v in range(TOY_VERTICES) for term in _toy_vertex_terms(ring.y, v)]
    state = space.prepare([A_terms])
    thetas = np.zeros(n_modes)
    for v, q in enumerate(qs):
        phi = TOY_PARITY[v] * q * ring.delta
        thetas[_toy_mode(v, "r+")] += phi
        thetas[_toy_mode(v, "r-")] -= phi
    state = space.number_phase(state, thetas)
    bond = space.prepare([[term for v in range(TOY_VERTICES) for term in _toy_link_terms(v)]])
    return complex(np.vdot(bond, state))


def _toy_support(v: int) -> np.ndarray:
    partner = 1 - v
    modes = [_toy_mode(v, "r+"), _toy_mode(v, "r-"), _toy_mode(partner, "l+"), _toy_mode(partner, "l-")]
    return np.array([2 * m + c for m in modes for c in (0, 1)], dtype=np.int64)


def toy_covariances(ring: ToyRing, qs: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, float, float]:
    """Γ_in, D, ⟨A|A⟩ и ⟨B|B⟩ кольца"""
    dim = 2 * len(TOY_MODES) * TOY_VERTICES
    block, vertex_norm = fock_covariance(len(TOY_MODES), [_toy_vertex_terms(ring.y)])
    D = np.kron(np.eye(TOY_VERTICES), block.real)
    gamma_in = np.zeros((dim, dim))
    link_norm = 1.0
    for v, q in enumerate(qs):
        S = _toy_support(v)
        gamma_in[np.ix_(S, S)] = link_in_block(q % ring.N, Direction.HORIZONTAL, TOY_PARITY[v], ring.N)
        state = link_state(q % ring.N, Direction.HORIZONTAL, TOY_PARITY[v], ring.N)
        link_norm *= float(np.vdot(state, state).real)
    return gamma_in, D, vertex_norm ** TOY_VERTICES, link_norm


def toy_norm_sq(ring: ToyRing, qs: Sequence[int]) -> float:
    """|Ψ(q)|² = ⟨A|A⟩⟨B|B⟩·√det((Γ_in + D)/2)"""
    gamma_in, D, norm_A, norm_B = toy_covariances(ring, qs)
    return float(norm_A * norm_B * np.sqrt(np.linalg.det((gamma_in + D) / 2.0)))


def toy_mixed_product(ring: ToyRing, qs: Sequence[int], qs_new: Sequence[int]) -> complex:
    """Ψ*(q′)Ψ(q) = ⟨A|A⟩·2⁻ⁿ⟨B_q|B_q′⟩·Pf(D)·Pf(M̃ + D) полными Pfaffian-ами"""
    gamma_in, D, norm_A, _ = toy_covariances(ring, qs)
    modified = gamma_in.astype(np.complex128)
    overlap = 1.0 + 0.0j
    for v, (q, q_new) in enumerate(zip(qs, qs_new)):
        S = _toy_support(v)
        block, _ = link_transition_block(q % ring.N, q_new % ring.N, Direction.HORIZONTAL, TOY_PARITY[v], ring.N)
        modified[np.ix_(S, S)] = block
        bra = link_state(q % ring.N, Direction.HORIZONTAL, TOY_PARITY[v], ring.N)
        ket = link_state(q_new % ring.N, Direction.HORIZONTAL, TOY_PARITY[v], ring.N)
        overlap *= np.vdot(bra, ket)
    n_dirac = len(TOY_MODES) * TOY_VERTICES
    return complex(norm_A * 2.0 ** (-n_dirac) * overlap * pfaffian(D) * pfaffian(modified + D))


def toy_electric_estimator(ring: ToyRing, qs: Sequence[int], v: int) -> complex:
    """Конвейер оценщика: c·Pf-отношение ранга 8 для q_v → q_v − 1"""
    gamma_in, D, _, _ = toy_covariances(ring, qs)
    B_inv = np.linalg.inv(gamma_in + D)
    S = _toy_support(v)
    q = qs[v] % ring.N
    transition, prefactor = link_transition_block(q, (q - 1) % ring.N, Direction.HORIZONTAL, TOY_PARITY[v], ring.N)
    delta = transition - link_in_block(q, Direction.HORIZONTAL, TOY_PARITY[v], ring.N)
    return complex(prefactor * lowrank_pfaffian_ratio(B_inv[np.ix_(S, S)], delta))
