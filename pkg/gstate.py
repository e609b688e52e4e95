#!/usr/bin/env python3
"""
Майорановские ковариационные матрицы гауссовых объектов GGPEPS.

Источник истины - явный конструктор в пространстве Фока (≤ 12 мод, Jordan-Wigner):
- блок D вершины: A(x)|Ω⟩, A = exp(Σ T_ij a†_i b†_j)
- блок Γ_in звена: U_G(ℓ)† exp(X_ℓ)|Ω⟩
- переходный блок звена для оценки ⟨P⟩

Соглашения: γ(1) = c + c†, γ(2) = i(c − c†), Γ_ab = (i/2)⟨[γ_a, γ_b]⟩,
порядок мод вершины {l+, l-, r+, r-, u+, u-, d+, d-}, майорана = 2·мода + компонента.
"""

import logging
from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np
import scipy.sparse as sparse
from scipy.linalg import block_diag
from scipy.sparse.linalg import expm_multiply

from errors import ConventionError
from lattice import Direction, LatticeGeom, LinkId, link_from_index, shift, staggering_sign, vertex_index

logger = logging.getLogger(__name__)

MAX_FOCK_MODES = 12
PURITY_TOL = 1e-10

VERTEX_MODES = ("l+", "l-", "r+", "r-", "u+", "u-", "d+", "d-")
MODE_INDEX = {name: k for k, name in enumerate(VERTEX_MODES)}
A_MODES = ("l+", "r-", "u-", "d+")
B_MODES = ("l-", "r+", "u+", "d-")
MAJORANAS_PER_VERTEX = 2 * len(VERTEX_MODES)

# Моноид: (коэффициент, ((мода, dagger), ...)); шаг программы - экспонента суммы мономов
Monomial = Tuple[complex, Tuple[Tuple[int, bool], ...]]
Program = Sequence[Sequence[Monomial]]


class FockSpace:
    """Пространство Фока n мод с операторами Jordan-Wigner (мода 0 - старший бит)"""

    def __init__(self, n_modes: int):
        if n_modes > MAX_FOCK_MODES:
            raise ValueError(f"Слишком много мод для пространства Фока: {n_modes} > {MAX_FOCK_MODES}")
        self.n_modes = n_modes
        self.dim = 2 ** n_modes

        lower = sparse.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
        string = sparse.csr_matrix(np.diag([1.0, -1.0]))
        ident = sparse.identity(2, format="csr")

        self.annihilators = []
        for j in range(n_modes):
            factors = [string] * j + [lower] + [ident] * (n_modes - j - 1)
            op = factors[0]
            for factor in factors[1:]:
                op = sparse.kron(op, factor, format="csr")
            self.annihilators.append(op.astype(np.complex128))

        self.majoranas = []
        for c in self.annihilators:
            c_dag = c.conj().T.tocsr()
            self.majoranas.append((c + c_dag).tocsr())
            self.majoranas.append((1j * (c - c_dag)).tocsr())

        bits = (np.arange(self.dim)[:, None] >> np.arange(n_modes - 1, -1, -1)[None, :]) & 1
        self.occupations = bits.astype(np.float64)

    def vacuum(self) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.complex128)
        vec[0] = 1.0
        return vec

    def operator(self, terms: Sequence[Monomial]) -> sparse.csr_matrix:
        total = sparse.csr_matrix((self.dim, self.dim), dtype=np.complex128)
        for coef, ops in terms:
            op = sparse.identity(self.dim, dtype=np.complex128, format="csr")
            for mode, dagger in ops:
                c = self.annihilators[mode]
                op = op @ (c.conj().T if dagger else c)
            total = total + coef * op
        return total.tocsr()

    def apply_exponential(self, vec: np.ndarray, terms: Sequence[Monomial]) -> np.ndarray:
        if not terms:
            return vec
        return expm_multiply(self.operator(terms), vec)

    def prepare(self, program: Program) -> np.ndarray:
        """Применяет шаги программы к вакууму"""
        vec = self.vacuum()
        for step in program:
            vec = self.apply_exponential(vec, step)
        return vec

    def number_phase(self, vec: np.ndarray, thetas: Sequence[float]) -> np.ndarray:
        """exp(i Σ θ_k n_k)|vec⟩"""
        phases = np.exp(1j * (self.occupations @ np.asarray(thetas, dtype=np.float64)))
        return phases * vec

    def _majorana_images(self, vec: np.ndarray) -> np.ndarray:
        return np.column_stack([gamma @ vec for gamma in self.majoranas])

    def covariance(self, vec: np.ndarray) -> Tuple[np.ndarray, float]:
        """Γ_ab = i⟨γ_a γ_b⟩/⟨ψ|ψ⟩ (a ≠ b) и квадрат нормы состояния"""
        norm_sq = float(np.vdot(vec, vec).real)
        if norm_sq < 1e-300:
            raise ConventionError("Состояние в пространстве Фока имеет нулевую норму")
        images = self._majorana_images(vec)
        gram = images.conj().T @ images
        gamma = 1j * gram / norm_sq
        np.fill_diagonal(gamma, 0.0)
        return 0.5 * (gamma - gamma.T), norm_sq

    def transition(self, bra: np.ndarray, ket: np.ndarray) -> Tuple[np.ndarray, complex]:
        """
        Грассманово представление оператора |ket⟩⟨bra|:
        M_ab = i⟨bra|γ_a γ_b|ket⟩/⟨bra|ket⟩ и перекрытие ⟨bra|ket⟩.
        """
        overlap = complex(np.vdot(bra, ket))
        if abs(overlap) < 1e-300:
            raise ConventionError("Нулевое перекрытие в переходном блоке")
        gram = self._majorana_images(bra).conj().T @ self._majorana_images(ket)
        M = 1j * gram / overlap
        np.fill_diagonal(M, 0.0)
        return 0.5 * (M - M.T), overlap


@lru_cache(maxsize=None)
def fock_space(n_modes: int) -> FockSpace:
    return FockSpace(n_modes)


def fock_covariance(n_modes: int, program: Program) -> Tuple[np.ndarray, float]:
    """Ковариация и квадрат нормы состояния, построенного программой из вакуума"""
    space = fock_space(n_modes)
    return space.covariance(space.prepare(program))


def _real_block(block: np.ndarray, what: str) -> np.ndarray:
    residue = float(np.abs(block.imag).max()) if block.size else 0.0
    if residue > PURITY_TOL:
        raise ConventionError(f"{what}: мнимая часть физической ковариации {residue:.2e}")
    return np.ascontiguousarray(block.real)


def _readonly(block: np.ndarray) -> np.ndarray:
    block.setflags(write=False)
    return block


# --- вершина ---------------------------------------------------------------

def pairing_terms(T: np.ndarray) -> List[Monomial]:
    rows = [MODE_INDEX[name] for name in A_MODES]
    cols = [MODE_INDEX[name] for name in B_MODES]
    return [
        (complex(T[i, j]), ((rows[i], True), (cols[j], True)))
        for i in range(4) for j in range(4)
        if T[i, j] != 0
    ]


def vertex_state(T: np.ndarray) -> np.ndarray:
    space = fock_space(len(VERTEX_MODES))
    return space.prepare([pairing_terms(T)])


def vertex_D_block(T: np.ndarray) -> Tuple[np.ndarray, float]:
    """Блок 16×16 ковариации A(x)|Ω⟩ и квадрат нормы"""
    space = fock_space(len(VERTEX_MODES))
    gamma, norm_sq = space.covariance(vertex_state(T))
    return _real_block(gamma, "D"), norm_sq


def d_vertex_D_block(T: np.ndarray, dT: np.ndarray) -> np.ndarray:
    """
    Производная блока D: ∂A = (Σ dT_ij a†_i b†_j)·A, так как все a†b† коммутируют;
    нормированная ковариация дифференцируется по правилу частного.
    """
    if not np.any(dT):
        return np.zeros((MAJORANAS_PER_VERTEX, MAJORANAS_PER_VERTEX))
    space = fock_space(len(VERTEX_MODES))
    psi = vertex_state(T)
    d_psi = space.operator(pairing_terms(dT)) @ psi

    norm_sq = float(np.vdot(psi, psi).real)
    d_norm_sq = 2.0 * float(np.vdot(psi, d_psi).real)
    images = space._majorana_images(psi)
    d_images = space._majorana_images(d_psi)
    gram = images.conj().T @ images
    d_gram = d_images.conj().T @ images + images.conj().T @ d_images

    d_gamma = 1j * (d_gram / norm_sq - gram * d_norm_sq / norm_sq ** 2)
    np.fill_diagonal(d_gamma, 0.0)
    return _real_block(0.5 * (d_gamma - d_gamma.T), "dD")


def virtual_charges(parity: int = 1) -> np.ndarray:
    """Заряды мод вершины под s·G₀: -1 на модах a, +1 на модах b"""
    charges = np.zeros(len(VERTEX_MODES))
    for name in A_MODES:
        charges[MODE_INDEX[name]] = -parity
    for name in B_MODES:
        charges[MODE_INDEX[name]] = parity
    return charges


# --- звено -----------------------------------------------------------------
# Локальный порядок мод звена: [g+, g-, p+, p-], g - моды вправо/вверх базовой вершины,
# p - противоположные моды соседа (l для горизонтального, d для вертикального).

LINK_MODES = 4


def _link_pairing(direction: Direction) -> List[Monomial]:
    if direction == Direction.HORIZONTAL:
        # l+† r-† + l-† r+†
        return [(1.0, ((2, True), (1, True))), (1.0, ((3, True), (0, True)))]
    # u+† d-† + u-† d+†
    return [(1.0, ((0, True), (3, True))), (1.0, ((1, True), (2, True)))]


def link_phase(q: int, parity: int, N: int) -> float:
    return parity * q * 2.0 * np.pi / N


def link_state(q: int, direction: Direction, parity: int, N: int) -> np.ndarray:
    """U_q† exp(X)|Ω⟩, U_q = exp(iΦ(n_g+ - n_g-)), Φ = (-1)^x·q·2π/N"""
    space = fock_space(LINK_MODES)
    vec = space.prepare([_link_pairing(Direction(direction))])
    phi = link_phase(q, parity, N)
    return space.number_phase(vec, [-phi, phi, 0.0, 0.0])


@lru_cache(maxsize=None)
def link_in_block(q: int, direction: Direction, parity: int, N: int) -> np.ndarray:
    """Блок 8×8 ковариации нормированного состояния звена"""
    space = fock_space(LINK_MODES)
    gamma, _ = space.covariance(link_state(q % N, direction, parity, N))
    return _readonly(_real_block(gamma, "Γ_in"))


@lru_cache(maxsize=None)
def link_transition_block(q: int, q_new: int, direction: Direction, parity: int,
                          N: int) -> Tuple[np.ndarray, complex]:
    """
    Грассманов блок оператора |b_{q_new}⟩⟨b_q| звена и префактор ⟨b_q|b_{q_new}⟩/⟨b_q|b_q⟩.
    При q_new = q-1 префактор равен ½(1 + cos 2π/N).
    """
    space = fock_space(LINK_MODES)
    bra = link_state(q % N, direction, parity, N)
    ket = link_state(q_new % N, direction, parity, N)
    block, overlap = space.transition(bra, ket)
    prefactor = overlap / float(np.vdot(bra, bra).real)
    return _readonly(block), prefactor


def modified_block(phi: float) -> Tuple[np.ndarray, float]:
    """
    Замкнутая форма переходного блока M(Φ) ⊕ M(-Φ) для пар (+) и (-) при q = 0
    в порядке (θ_r1, θ_r2, θ_l1, θ_l2) каждой пары; префактор ½(1 + cos Φ).

    Блок представляет |b_{q-1}⟩⟨b_q| (тот же оператор, что link_transition_block),
    поэтому элемент (r1, r2) равен -i·tan(Φ/2). Запись с +i·tan(Φ/2) - комплексно
    сопряжённый блок, то есть оператор |b_q⟩⟨b_{q-1}|.
    """
    if np.isclose(np.cos(phi), -1.0):
        raise ValueError("Φ = π: t = tan(Φ/2) не определён")

    def pair_block(angle: float) -> np.ndarray:
        t = np.tan(angle / 2.0)
        return np.array([
            [0.0, -1j * t, -t, -1.0],
            [1j * t, 0.0, -1.0, t],
            [t, 1.0, 0.0, -1j * t],
            [1.0, -t, 1j * t, 0.0],
        ], dtype=np.complex128)

    block = np.zeros((8, 8), dtype=np.complex128)
    block[:4, :4] = pair_block(phi)
    block[4:, 4:] = pair_block(-phi)
    return block, 0.5 * (1.0 + np.cos(phi))


# Пара (+) горизонтального звена - (r+, l-), пара (-) - (r-, l+)
PAIR_ORDER_TO_LINK_ORDER = np.array([0, 1, 6, 7, 2, 3, 4, 5])


def modified_block_link_order(phi: float) -> Tuple[np.ndarray, float]:
    """modified_block, переставленный в локальный порядок горизонтального звена"""
    block, prefactor = modified_block(phi)
    out = np.zeros_like(block)
    out[np.ix_(PAIR_ORDER_TO_LINK_ORDER, PAIR_ORDER_TO_LINK_ORDER)] = block
    return out, prefactor


def mode_rotation(thetas: Sequence[float]) -> np.ndarray:
    """R с exp(iΣθ n) γ exp(-iΣθ n) = R γ: поворот пары майоран каждой моды на θ_k"""
    return block_diag(*[np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]]) for t in thetas])


def closed_form_transition_block(q: int, direction: Direction, parity: int, N: int) -> Tuple[np.ndarray, float]:
    """
    Блок q → q-1 без пространства Фока: замкнутая форма при q = 0, повёрнутая фазами U_q.
    Вертикальное спаривание равно горизонтальному с фазой π на модах p.
    """
    base, prefactor = modified_block_link_order(link_phase(1, parity, N))
    phi = link_phase(q % N, parity, N)
    turn = np.pi if Direction(direction) == Direction.VERTICAL else 0.0
    R = mode_rotation([-phi, phi, turn, turn])
    return R.T @ base @ R, prefactor


# --- глобальная сборка -----------------------------------------------------

def majorana_index(geom: LatticeGeom, x, mode: str, component: int) -> int:
    return MAJORANAS_PER_VERTEX * vertex_index(geom, x) + 2 * MODE_INDEX[mode] + component


def link_majoranas(geom: LatticeGeom, link: LinkId) -> np.ndarray:
    """8 майорановских индексов звена в локальном порядке [g+, g-, p+, p-]"""
    x = link.vertex
    if link.direction == Direction.HORIZONTAL:
        partner = shift(geom, x, Direction.HORIZONTAL)
        modes = [(x, "r+"), (x, "r-"), (partner, "l+"), (partner, "l-")]
    else:
        partner = shift(geom, x, Direction.VERTICAL)
        modes = [(x, "u+"), (x, "u-"), (partner, "d+"), (partner, "d-")]
    return np.array([majorana_index(geom, v, mode, c) for v, mode in modes for c in (0, 1)], dtype=np.int64)


@lru_cache(maxsize=None)
def _link_table(geom: LatticeGeom) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Индексы майоран, направления и чётности всех звеньев"""
    links = [link_from_index(geom, i) for i in range(geom.n_links)]
    S = np.array([link_majoranas(geom, link) for link in links], dtype=np.int64)
    directions = np.array([int(link.direction) for link in links], dtype=np.int64)
    parities = np.array([staggering_sign(link.vertex) for link in links], dtype=np.int64)
    for arr in (S, directions, parities):
        arr.setflags(write=False)
    return S, directions, parities


def link_support(geom: LatticeGeom, index: int) -> np.ndarray:
    return _link_table(geom)[0][index]


def link_block_at(geom: LatticeGeom, index: int, q: int) -> np.ndarray:
    _, directions, parities = _link_table(geom)
    return link_in_block(int(q) % geom.N, Direction(int(directions[index])), int(parities[index]), geom.N)


def link_transition_at(geom: LatticeGeom, index: int, q: int, q_new: int) -> Tuple[np.ndarray, complex]:
    _, directions, parities = _link_table(geom)
    return link_transition_block(int(q) % geom.N, int(q_new) % geom.N,
                                 Direction(int(directions[index])), int(parities[index]), geom.N)


def assemble_Gamma_in(geom: LatticeGeom, G: np.ndarray) -> np.ndarray:
    """Γ_in(G) размерности 16L²: прямая сумма блоков звеньев"""
    dim = MAJORANAS_PER_VERTEX * geom.n_vertices
    gamma = np.zeros((dim, dim))
    coverage = np.zeros(dim, dtype=np.int64)
    for index in range(geom.n_links):
        S = link_support(geom, index)
        gamma[np.ix_(S, S)] = link_block_at(geom, index, G[index])
        coverage[S] += 1
    if not np.all(coverage == 1):
        raise ConventionError(f"Коллизия индексов майоран при сборке Γ_in: покрытие {np.unique(coverage)}")
    return gamma


def closed_form_transition_at(geom: LatticeGeom, index: int, q: int) -> Tuple[np.ndarray, float]:
    _, directions, parities = _link_table(geom)
    return closed_form_transition_block(int(q) % geom.N, Direction(int(directions[index])),
                                        int(parities[index]), geom.N)
