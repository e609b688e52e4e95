#!/usr/bin/env python3
"""
Оценщики по конфигурациям калибровочного поля:
- петли Вильсона и магнитная энергия плакета
- электрическая энергия ⟨P⟩ через отношение Pfaffian-ов
- явные производные оценщиков и логарифмические производные нормы
- сборка градиента ⟨∂F⟩ + ⟨F·R⟩ − ⟨F⟩⟨R⟩ и энергии с ошибками (jackknife по бинам)
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ansatz import PARAM_NAMES, Ansatz
from errors import HermiticityError, SingularMatrixError
from galg import inverse, lowrank_pfaffian_ratio, pfaffian
from gstate import MAJORANAS_PER_VERTEX, assemble_Gamma_in, link_block_at, link_support, link_transition_at
from lattice import (Direction, LatticeGeom, LinkId, Vertex, link_index, path_arrays, plaquette_links,
                     shift, vertex_coords, wilson_path)

logger = logging.getLogger(__name__)

REPRESENTATIVE_MODES = ("sublattice", "origin", "all")
Loop = Tuple[int, int]
IMAG_SIGMAS = 5.0
IMAG_FLOOR = 1e-10


# --- диагональные наблюдаемые ----------------------------------------------

def wilson_estimator(geom: LatticeGeom, G: np.ndarray, path) -> complex:
    """∏ exp(i·sign·q(ℓ)·2π/N) вдоль замкнутого пути"""
    indices, signs = path_arrays(geom, path)
    return complex(np.exp(1j * geom.delta * np.dot(signs, np.asarray(G)[indices])))


def magnetic_energy_estimator(geom: LatticeGeom, G: np.ndarray, g: float,
                              plaquettes: Optional[Sequence[Vertex]] = None) -> float:
    """(1/2g²)(2 − 2 Re W) для плакета, усреднённое по представителям"""
    if g <= 0:
        raise ValueError(f"Константа связи должна быть положительной: {g}")
    plaquettes = plaquettes or [(0, 0)]
    values = [wilson_estimator(geom, G, plaquette_links(geom, p)).real for p in plaquettes]
    return float((2.0 - 2.0 * np.mean(values)) / (2.0 * g * g))


@dataclass(frozen=True)
class Representatives:
    links: Tuple[int, ...]
    plaquettes: Tuple[Vertex, ...]


def representatives(geom: LatticeGeom, mode: str = "sublattice", origin: Vertex = (0, 0)) -> Representatives:
    """
    Представительные звенья и плакеты.
    sublattice - по одному звену каждого класса трансляций (2,0), (0,2), (1,1);
    origin - горизонтальное звено и плакет в origin; all - все.
    """
    if mode not in REPRESENTATIVE_MODES:
        raise ValueError(f"Неизвестный режим представителей: {mode}")
    if mode == "origin":
        return Representatives((link_index(geom, LinkId(origin, Direction.HORIZONTAL)),), (origin,))
    if mode == "all":
        return Representatives(tuple(range(geom.n_links)),
                               tuple(vertex_coords(geom, v) for v in range(geom.n_vertices)))
    neighbour = shift(geom, origin, Direction.HORIZONTAL)
    links = tuple(
        link_index(geom, LinkId(x, d))
        for x in (origin, neighbour)
        for d in (Direction.HORIZONTAL, Direction.VERTICAL)
    )
    return Representatives(links, (origin, neighbour))


def translated_paths(geom: LatticeGeom, R1: int, R2: int) -> Tuple[np.ndarray, np.ndarray]:
    """Индексы и знаки пути R1×R2 для всех L² начал"""
    rows = [path_arrays(geom, wilson_path(geom, vertex_coords(geom, v), R1, R2)) for v in range(geom.n_vertices)]
    return np.array([r[0] for r in rows]), np.array([r[1] for r in rows])


# --- электрический оценщик -------------------------------------------------

def _link_ordinal(geom: LatticeGeom, link: Union[int, LinkId]) -> int:
    return link if isinstance(link, (int, np.integer)) else link_index(geom, link)


def link_replacement(geom: LatticeGeom, G: np.ndarray, link: Union[int, LinkId]) -> Tuple[np.ndarray, np.ndarray, complex]:
    """Носитель S звена, разность Δ = M̃ − Γ_in|_S и префактор c для q → q − 1"""
    index = _link_ordinal(geom, link)
    q = int(G[index])
    transition, prefactor = link_transition_at(geom, index, q, q - 1)
    delta = transition - link_block_at(geom, index, q)
    return link_support(geom, index), delta, prefactor


def layer_inverses(G: np.ndarray, A: Ansatz) -> List[np.ndarray]:
    gamma_in = assemble_Gamma_in(A.geom, G)
    return [inverse(A.layer_matrix(G, i, gamma_in)) for i in range(A.n_layers)]


def electric_terms(G: np.ndarray, link: Union[int, LinkId], A: Ansatz,
                   inverses: Optional[Sequence[np.ndarray]] = None,
                   gradients: bool = True) -> Tuple[complex, np.ndarray]:
    """F_el(G, ℓ) и ∂_α log F_el по всем параметрам через кэш обратных матриц слоёв"""
    A.check_caches()
    inverses = inverses if inverses is not None else layer_inverses(G, A)
    S, delta, prefactor = link_replacement(A.geom, G, link)
    value = 1.0 + 0.0j
    log_derivatives = np.zeros(A.n_params, dtype=np.complex128)
    for i, B_inv in enumerate(inverses):
        X = B_inv[np.ix_(S, S)]
        value *= prefactor * lowrank_pfaffian_ratio(X, delta)
        if not gradients:
            continue
        K = inverse(np.eye(len(S)) + delta @ X)
        for a, dD_block in enumerate(A.dD_blocks[i]):
            if np.any(dD_block):
                log_derivatives[len(PARAM_NAMES) * i + a] = _electric_log_derivative(B_inv, S, delta, dD_block, K)
    return complex(value), log_derivatives


def electric_estimator(G: np.ndarray, link: Union[int, LinkId], A: Ansatz,
                       inverses: Optional[Sequence[np.ndarray]] = None, method: str = "lowrank") -> complex:
    """
    F_el(G, ℓ) = conj(Ψ(G, q−1)/Ψ(G, q)) = ∏_i c·Pf(Γ̃_in + D_i)/Pf(Γ_in + D_i).
    lowrank - через кэш обратной матрицы, direct - через полные Pfaffian-ы.
    """
    if method == "lowrank":
        return electric_terms(G, link, A, inverses, gradients=False)[0]
    A.check_caches()
    S, delta, prefactor = link_replacement(A.geom, G, link)
    value = 1.0 + 0.0j
    if method == "direct":
        gamma_in = assemble_Gamma_in(A.geom, G)
        for i in range(A.n_layers):
            B = A.layer_matrix(G, i, gamma_in)
            B_mod = B.astype(np.complex128)
            B_mod[np.ix_(S, S)] += delta
            value *= prefactor * pfaffian(B_mod) / pfaffian(B)
        return complex(value)
    raise ValueError(f"Неизвестный метод: {method}")


def _apply_block_diagonal(block: np.ndarray, M: np.ndarray) -> np.ndarray:
    """(1 ⊗ block) @ M без сборки полной матрицы"""
    n_v = M.shape[0] // MAJORANAS_PER_VERTEX
    stacked = M.reshape(n_v, MAJORANAS_PER_VERTEX, -1)
    return np.einsum("ab,ibk->iak", block, stacked).reshape(M.shape)


def _block_diagonal_trace(B_inv: np.ndarray, block: np.ndarray) -> float:
    """Tr(B⁻¹ (1 ⊗ block))"""
    n_v = B_inv.shape[0] // MAJORANAS_PER_VERTEX
    diagonal = np.einsum("iaib->iab", B_inv.reshape(n_v, MAJORANAS_PER_VERTEX, n_v, MAJORANAS_PER_VERTEX))
    return float(np.einsum("iab,ba->", diagonal, block).real)


def _electric_log_derivative(B_inv: np.ndarray, S: np.ndarray, delta: np.ndarray,
                             dD_block: np.ndarray, K: np.ndarray) -> complex:
    """∂ log F_i = −½ Tr(K Δ (B⁻¹ ∂D B⁻¹)_SS), K = (1 + Δ B⁻¹_SS)⁻¹"""
    Y = B_inv[S, :] @ _apply_block_diagonal(dD_block, B_inv[:, S])
    return -0.5 * np.trace(K @ delta @ Y)


def electric_grad_estimator(G: np.ndarray, link: Union[int, LinkId], A: Ansatz, i: int, alpha: str,
                            inverses: Optional[Sequence[np.ndarray]] = None) -> complex:
    """Явная производная F_el по параметру α слоя i (производная попадает только в i-й множитель)"""
    A.check_caches()
    if not np.any(A.dD_blocks[i][PARAM_NAMES.index(alpha)]):
        return 0.0 + 0.0j
    value, log_derivatives = electric_terms(G, link, A, inverses)
    return complex(value * log_derivatives[A.param_slot(i, alpha)])


def log_norm_grad_from_inverse(B_inv: np.ndarray, dD_block: np.ndarray) -> float:
    """∂ log|Ψ_i|² = ½ Tr((Γ_in + D_i)⁻¹ ∂D_i)"""
    return 0.5 * _block_diagonal_trace(B_inv, dD_block)


# --- выборки ---------------------------------------------------------------

@dataclass
class ObservableSet:
    """Что измерять на каждом сэмпле"""
    representatives: str = "sublattice"
    origin: Vertex = (0, 0)
    gradients: bool = True
    wilson_loops: Sequence[Loop] = ()


@dataclass
class SampleSet:
    """Значения по сэмплам; weights=None означает равновесные MC-сэмплы"""
    electric: np.ndarray
    plaquette: np.ndarray
    d_electric: np.ndarray
    log_grad: np.ndarray
    wilson: Dict[Loop, np.ndarray] = field(default_factory=dict)
    weights: Optional[np.ndarray] = None
    n_excluded: int = 0

    def __len__(self) -> int:
        return len(self.electric)

    def mean(self, values: np.ndarray) -> np.ndarray:
        if self.weights is None:
            return values.mean(axis=0)
        return np.tensordot(self.weights, values, axes=(0, 0))

    @classmethod
    def concatenate(cls, parts: Sequence["SampleSet"]) -> "SampleSet":
        loops = parts[0].wilson.keys()
        return cls(
            electric=np.concatenate([p.electric for p in parts]),
            plaquette=np.concatenate([p.plaquette for p in parts]),
            d_electric=np.concatenate([p.d_electric for p in parts]),
            log_grad=np.concatenate([p.log_grad for p in parts]),
            wilson={loop: np.concatenate([p.wilson[loop] for p in parts]) for loop in loops},
            weights=None,
            n_excluded=sum(p.n_excluded for p in parts),
        )


class SampleEvaluator:
    """Вычисляет все наблюдаемые одного сэмпла по обратным матрицам слоёв"""

    def __init__(self, A: Ansatz, observables: ObservableSet):
        self.A = A
        self.geom = A.geom
        self.observables = observables
        reps = representatives(self.geom, observables.representatives, observables.origin)
        self.links = reps.links
        self.plaquette_paths = [path_arrays(self.geom, plaquette_links(self.geom, p)) for p in reps.plaquettes]
        self.loops = list(observables.wilson_loops)
        self.loop_paths = [translated_paths(self.geom, R1, R2) for R1, R2 in self.loops]
        self._rows: List[tuple] = []
        self.n_excluded = 0

    def _phases(self, G: np.ndarray, indices: np.ndarray, signs: np.ndarray) -> np.ndarray:
        return np.exp(1j * self.geom.delta * np.sum(signs * G[indices], axis=-1))

    def evaluate(self, G: np.ndarray, inverses: Sequence[np.ndarray]) -> Optional[tuple]:
        """Строка сэмпла или None, если знаменатель почти вырожден"""
        A = self.A
        n_params = A.n_params
        electric = 0.0 + 0.0j
        d_electric = np.zeros(n_params, dtype=np.complex128)
        try:
            for link in self.links:
                value, log_derivatives = electric_terms(G, link, A, inverses, self.observables.gradients)
                electric += value
                d_electric += value * log_derivatives
        except SingularMatrixError as e:
            logger.warning(f"⚠️ Сэмпл исключён: {e}")
            return None
        electric /= len(self.links)
        d_electric /= len(self.links)

        log_grad = np.zeros(n_params)
        if self.observables.gradients:
            for i, B_inv in enumerate(inverses):
                for a in range(len(PARAM_NAMES)):
                    log_grad[2 * i + a] = log_norm_grad_from_inverse(B_inv, A.dD_blocks[i][a])

        plaquette = np.mean([self._phases(G, idx, sg) for idx, sg in self.plaquette_paths])
        wilson = np.array([self._phases(G, idx, sg).mean() for idx, sg in self.loop_paths], dtype=np.complex128)
        return electric, plaquette, d_electric, log_grad, wilson

    @property
    def n_recorded(self) -> int:
        return len(self._rows)

    def record(self, G: np.ndarray, inverses: Sequence[np.ndarray]) -> bool:
        row = self.evaluate(G, inverses)
        if row is None:
            self.n_excluded += 1
            return False
        self._rows.append(row)
        return True

    def sample_set(self, weights: Optional[np.ndarray] = None) -> SampleSet:
        n_params = self.A.n_params
        if not self._rows:
            empty = np.zeros(0, dtype=np.complex128)
            return SampleSet(empty, empty.copy(), np.zeros((0, n_params), dtype=np.complex128),
                             np.zeros((0, n_params)), {loop: empty.copy() for loop in self.loops},
                             weights, self.n_excluded)
        electric, plaquette, d_electric, log_grad, wilson = (np.array(col) for col in zip(*self._rows))
        return SampleSet(
            electric=electric,
            plaquette=plaquette,
            d_electric=d_electric,
            log_grad=log_grad,
            wilson={loop: wilson[:, k] for k, loop in enumerate(self.loops)},
            weights=weights,
            n_excluded=self.n_excluded,
        )


# --- статистика ------------------------------------------------------------

def bin_means(values: np.ndarray, n_bins: int) -> np.ndarray:
    values = np.asarray(values)
    if n_bins < 2 or len(values) < 2 * n_bins:
        raise ValueError(f"Слишком мало сэмплов: {len(values)} для {n_bins} бинов")
    size = len(values) // n_bins
    return values[: size * n_bins].reshape((n_bins, size) + values.shape[1:]).mean(axis=1)


def jackknife(columns: Sequence[np.ndarray], statistic: Callable[..., np.ndarray],
              n_bins: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Jackknife по бинам: значение статистики по средним бинов и ошибки
    отдельно для вещественной и мнимой частей.
    """
    binned = [bin_means(c, n_bins) for c in columns]
    totals = [b.sum(axis=0) for b in binned]
    value = np.asarray(statistic(*[t / n_bins for t in totals]))
    leave_one_out = np.array([
        statistic(*[(t - b[k]) / (n_bins - 1) for t, b in zip(totals, binned)])
        for k in range(n_bins)
    ])
    spread = leave_one_out - leave_one_out.mean(axis=0)
    factor = (n_bins - 1) / n_bins
    err_re = np.sqrt(factor * np.sum(spread.real ** 2, axis=0))
    err_im = np.sqrt(factor * np.sum(np.imag(spread) ** 2, axis=0))
    return value, err_re, err_im


def gradient_assemble(F: np.ndarray, dF: np.ndarray, R: np.ndarray,
                      weights: Optional[np.ndarray] = None) -> np.ndarray:
    """∂⟨F⟩ = ⟨∂F⟩ + ⟨F·R⟩ − ⟨F⟩⟨R⟩ по параметрам"""
    F = np.asarray(F)
    if len(F) < 2 and weights is None:
        raise ValueError("Для сборки градиента нужно хотя бы 2 сэмпла")
    if weights is None:
        weights = np.full(len(F), 1.0 / len(F))
    mean = lambda values: np.tensordot(weights, values, axes=(0, 0))
    return connected_derivative(mean(F), mean(dF), mean(R), mean(F[:, None] * R))


def connected_derivative(F, dF, R, FR):
    """Та же сборка по уже усреднённым ⟨F⟩, ⟨∂F⟩, ⟨R⟩, ⟨F·R⟩ (для jackknife)"""
    return dF + FR - F * R


def energy_from_expectations(geom: LatticeGeom, g: float, electric, plaquette):
    """n_links·(g²/2)(2 − 2⟨F_el⟩) + n_plaq·(1/2g²)(2 − 2⟨F_W⟩), комплексное до взятия Re"""
    return (geom.n_links * (g * g / 2.0) * (2.0 - 2.0 * electric)
            + geom.n_plaquettes / (2.0 * g * g) * (2.0 - 2.0 * plaquette))


def energy_gradient(geom: LatticeGeom, g: float, d_electric, d_plaquette):
    """∂E = −n_links g² ∂⟨F_el⟩ − (n_plaq/g²) ∂⟨F_W⟩"""
    return -geom.n_links * g * g * d_electric - (geom.n_plaquettes / (g * g)) * d_plaquette


@dataclass
class EnergyResult:
    energy: float
    energy_density: float
    gradient: np.ndarray
    electric: complex
    plaquette: complex
    energy_imag: float
    n_samples: int
    n_excluded: int = 0
    energy_error: float = 0.0
    gradient_error: Optional[np.ndarray] = None
    electric_error: Tuple[float, float] = (0.0, 0.0)
    plaquette_error: Tuple[float, float] = (0.0, 0.0)
    wilson: Dict[Loop, complex] = field(default_factory=dict)
    wilson_error: Dict[Loop, Tuple[float, float]] = field(default_factory=dict)

    @property
    def gradient_norm(self) -> float:
        return float(np.max(np.abs(self.gradient))) if len(self.gradient) else 0.0


def _energy_statistic(geom: LatticeGeom, g: float):
    def statistic(F_el, F_W, dF_el, R, F_el_R, F_W_R):
        energy = energy_from_expectations(geom, g, F_el, F_W)
        gradient = energy_gradient(geom, g, connected_derivative(F_el, dF_el, R, F_el_R),
                                   connected_derivative(F_W, 0.0, R, F_W_R))
        return np.concatenate([[energy], gradient])

    return statistic


def check_imaginary(what: str, value: float, error: float, scale: float = 1.0):
    """Мнимая часть обязана исчезать в пределах IMAG_SIGMAS ошибок"""
    if abs(value) > IMAG_SIGMAS * error + IMAG_FLOOR * (1.0 + abs(scale)):
        raise HermiticityError(what, value, error)


def energy_and_grad(samples: SampleSet, geom: LatticeGeom, g: float, n_bins: int = 50) -> EnergyResult:
    """
    E = n_links·(g²/2)(2 − 2Re⟨F_el⟩) + n_plaq·(1/2g²)(2 − 2Re⟨F_W⟩) и её градиент.
    Ошибки - jackknife по бинам для равновесных MC-сэмплов; мнимые части
    энергии и градиента проверяются на 5σ.
    """
    if len(samples) < 2:
        raise ValueError(f"Недостаточно сэмплов для оценки энергии: {len(samples)}")
    R = samples.log_grad
    electric = complex(samples.mean(samples.electric))
    plaquette = complex(samples.mean(samples.plaquette))
    energy_complex = complex(energy_from_expectations(geom, g, electric, plaquette))
    gradient_complex = energy_gradient(
        geom, g,
        gradient_assemble(samples.electric, samples.d_electric, R, samples.weights),
        gradient_assemble(samples.plaquette, np.zeros_like(samples.d_electric), R, samples.weights),
    )

    result = EnergyResult(
        energy=float(energy_complex.real),
        energy_density=float(energy_complex.real / geom.n_plaquettes),
        gradient=np.real(gradient_complex).astype(np.float64),
        electric=electric,
        plaquette=plaquette,
        energy_imag=float(energy_complex.imag),
        n_samples=len(samples),
        n_excluded=samples.n_excluded,
        wilson={loop: complex(samples.mean(values)) for loop, values in samples.wilson.items()},
    )

    if samples.weights is None and len(samples) >= 2 * n_bins:
        columns = [
            samples.electric,
            samples.plaquette,
            samples.d_electric,
            R,
            samples.electric[:, None] * R,
            samples.plaquette[:, None] * R,
        ]
        _, err_re, err_im = jackknife(columns, _energy_statistic(geom, g), n_bins)
        result.energy_error = float(err_re[0])
        result.gradient_error = err_re[1:]
        _, el_re, el_im = jackknife([samples.electric], lambda x: x, n_bins)
        _, pl_re, pl_im = jackknife([samples.plaquette], lambda x: x, n_bins)
        result.electric_error = (float(el_re), float(el_im))
        result.plaquette_error = (float(pl_re), float(pl_im))
        for loop, values in samples.wilson.items():
            _, w_re, w_im = jackknife([values], lambda x: x, n_bins)
            result.wilson_error[loop] = (float(w_re), float(w_im))

        check_imaginary("энергия", result.energy_imag, float(err_im[0]), result.energy)
        for k, (value, error) in enumerate(zip(np.imag(gradient_complex), err_im[1:])):
            check_imaginary(f"градиент[{k}]", float(value), float(error), result.gradient[k])
    return result
