#!/usr/bin/env python3
"""
Вариационное семейство GGPEPS: матрица T(y, z), параметры слоёв,
кэши блоков D и их производных, квадрат нормы и логарифмические производные.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import ConventionError
from galg import inverse, pfaffian
from gstate import MAJORANAS_PER_VERTEX, assemble_Gamma_in, d_vertex_D_block, vertex_D_block
from lattice import LatticeGeom

logger = logging.getLogger(__name__)

PARAM_BOUND = 10.0
PARAM_NAMES = ("y", "z")
DET_NOISE = 1e-12
FIRST_TRACE_TOL = 1e-8

_S = 1.0 / np.sqrt(2.0)
_T_Y = np.array([
    [0.0, 1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0, 0.0],
])
_T_Z = np.array([
    [0.0, 0.0, _S, _S],
    [0.0, 0.0, -_S, _S],
    [-_S, _S, 0.0, 0.0],
    [-_S, -_S, 0.0, 0.0],
])


def t_matrix(y: float, z: float) -> np.ndarray:
    """Матрица T: строки {l+, r-, u-, d+}, столбцы {l-, r+, u+, d-}"""
    return (y * _T_Y + z * _T_Z).astype(np.complex128)


def dt_matrix(alpha: str) -> np.ndarray:
    """∂T/∂α - T линейна по параметрам"""
    if alpha == "y":
        return _T_Y.astype(np.complex128)
    if alpha == "z":
        return _T_Z.astype(np.complex128)
    raise ValueError(f"Неизвестный параметр: {alpha}")


@dataclass
class LayerParams:
    y: float
    z: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ValueError(f"Параметр {name} не конечен: {value}")
            setattr(self, name, value)

    def clamped(self) -> "LayerParams":
        return LayerParams(float(np.clip(self.y, -PARAM_BOUND, PARAM_BOUND)),
                           float(np.clip(self.z, -PARAM_BOUND, PARAM_BOUND)))


class Ansatz:
    """
    Многослойное вариационное состояние. Кэши блоков D пересчитываются только
    явным вызовом rebuild(); оценщики проверяют их актуальность.
    """

    def __init__(self, geom: LatticeGeom, layers: Sequence[LayerParams]):
        if not layers:
            raise ValueError("Нужен хотя бы один слой")
        self.geom = geom
        self.layers = [LayerParams(p.y, p.z) for p in layers]
        self.version = 0
        self.rebuild()

    @classmethod
    def initial(cls, geom: LatticeGeom, n_layers: int, init_y: float = 0.1, init_z: float = 0.1,
                jitter: float = 0.01, rng: Optional[np.random.Generator] = None) -> "Ansatz":
        """Стартовая точка y = init_y, z = init_z с разбросом ±jitter на слой"""
        rng = rng if rng is not None else np.random.default_rng(0)
        layers = []
        for _ in range(n_layers):
            dy, dz = rng.uniform(-jitter, jitter, size=2) if jitter > 0 else (0.0, 0.0)
            layers.append(LayerParams(init_y + dy, init_z + dz))
        return cls(geom, layers)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_params(self) -> int:
        return len(PARAM_NAMES) * self.n_layers

    @property
    def dim(self) -> int:
        return MAJORANAS_PER_VERTEX * self.geom.n_vertices

    @property
    def parameters(self) -> np.ndarray:
        return np.array([value for p in self.layers for value in (p.y, p.z)])

    def parameter_labels(self) -> List[str]:
        return [f"{name}{i + 1}" for i in range(self.n_layers) for name in PARAM_NAMES]

    def set_parameters(self, values: Sequence[float], rebuild: bool = True):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.n_params,):
            raise ValueError(f"Ожидалось {self.n_params} параметров, получено {values.shape}")
        self.layers = [LayerParams(values[2 * i], values[2 * i + 1]).clamped() for i in range(self.n_layers)]
        if rebuild:
            self.rebuild()

    def copy(self) -> "Ansatz":
        return Ansatz(self.geom, self.layers)

    def with_layers(self, layers: Sequence[LayerParams]) -> "Ansatz":
        return Ansatz(self.geom, layers)

    def rebuild(self):
        """Пересчитывает блоки D, их производные и знаки Pf(D) для всех слоёв"""
        self.D_blocks = []
        self.vertex_norms = []
        self.dD_blocks = []
        self.pf_D = []
        for p in self.layers:
            T = t_matrix(p.y, p.z)
            block, norm_sq = vertex_D_block(T)
            self.D_blocks.append(block)
            self.vertex_norms.append(norm_sq)
            self.dD_blocks.append([d_vertex_D_block(T, dt_matrix(alpha)) for alpha in PARAM_NAMES])
            self.pf_D.append(float(np.real(pfaffian(block))) ** self.geom.n_vertices)
        for i in range(self.n_layers):
            for a, alpha in enumerate(PARAM_NAMES):
                trace = first_trace_term(self, i, alpha)
                if abs(trace) > FIRST_TRACE_TOL * max(1.0, float(np.abs(self.dD_blocks[i][a]).sum())):
                    raise ConventionError(f"Tr(D⁻¹ ∂D/∂{alpha}) = {trace:.3e} не исчезает: блок D не чистый")
        self._built = self.parameters.copy()
        self.version += 1
        logger.debug(f"Кэши анзаца пересобраны (версия {self.version}): {self._built}")

    def check_caches(self):
        if not np.array_equal(self._built, self.parameters):
            raise RuntimeError("Кэши анзаца устарели: вызовите rebuild() после смены параметров")

    def layer_D(self, i: int) -> np.ndarray:
        return np.kron(np.eye(self.geom.n_vertices), self.D_blocks[i])

    def layer_dD(self, i: int, a: int) -> np.ndarray:
        return np.kron(np.eye(self.geom.n_vertices), self.dD_blocks[i][a])

    def layer_matrix(self, G: np.ndarray, i: int, gamma_in: Optional[np.ndarray] = None) -> np.ndarray:
        """Γ_in(G) + D_i - матрица, которую кэширует сэмплер"""
        gamma_in = assemble_Gamma_in(self.geom, G) if gamma_in is None else gamma_in
        return gamma_in + self.layer_D(i)

    def param_slot(self, i: int, alpha: str) -> int:
        return len(PARAM_NAMES) * i + PARAM_NAMES.index(alpha)


def first_trace_term(A: "Ansatz", i: int, alpha: str) -> float:
    """Tr(D⁻¹ ∂D) с D⁻¹ = −D; тождественно нулевой член производной"""
    a = PARAM_NAMES.index(alpha)
    return float(-np.trace(A.D_blocks[i] @ A.dD_blocks[i][a]) * A.geom.n_vertices)


def _layer_log_norm_sq(gamma_in: np.ndarray, D: np.ndarray) -> float:
    """log √det((1 − Γ_in D)/2) с проверкой знака"""
    dim = gamma_in.shape[0]
    K = np.eye(dim) - gamma_in @ D
    sign, logabs = np.linalg.slogdet(K)
    log_half_det = logabs - dim * np.log(2.0)
    if sign < 0:
        if log_half_det > np.log(DET_NOISE):
            raise ConventionError(f"Отрицательный det((1 − Γ_in D)/2) = -{np.exp(log_half_det):.3e}")
        return -np.inf
    if sign == 0:
        return -np.inf
    return 0.5 * log_half_det


def log_norm_sq(G: np.ndarray, A: Ansatz) -> Tuple[float, List[float]]:
    """log |Ψ(G)|² (без постоянных префакторов) и список по слоям"""
    A.check_caches()
    gamma_in = assemble_Gamma_in(A.geom, G)
    per_layer = [_layer_log_norm_sq(gamma_in, A.layer_D(i)) for i in range(A.n_layers)]
    return float(np.sum(per_layer)), per_layer


def norm_sq(G: np.ndarray, A: Ansatz) -> Tuple[float, List[float]]:
    """|Ψ(G)|² = ∏ n_i, n_i = √det((1 − Γ_in D_i)/2)"""
    total, per_layer = log_norm_sq(G, A)
    return float(np.exp(total)), [float(np.exp(v)) for v in per_layer]


def log_norm_grad(G: np.ndarray, A: Ansatz, i: int, alpha: str) -> float:
    """∂_α|Ψ_i|²/|Ψ_i|² = −½ Tr(Γ_in ∂D (1 − Γ_in D)⁻¹)"""
    A.check_caches()
    gamma_in = assemble_Gamma_in(A.geom, G)
    dD = A.layer_dD(i, PARAM_NAMES.index(alpha))
    if not np.any(dD):
        return 0.0
    K_inv = inverse(np.eye(A.dim) - gamma_in @ A.layer_D(i))
    value = -0.5 * np.trace(gamma_in @ dD @ K_inv)
    if abs(np.imag(value)) > 1e-9:
        raise ConventionError(f"Мнимая часть логарифмической производной нормы: {np.imag(value):.3e}")
    return float(np.real(value))
