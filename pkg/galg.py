#!/usr/bin/env python3
"""
Плотная антисимметричная линейная алгебра:
- Pfaffian (Parlett–Reid через pfapack)
- определители, обратные матрицы с оценкой обусловленности
- отношения определителей и Pfaffian-ов при замене блока S×S
- кэш обратной матрицы с обновлениями Вудбери
"""

import logging
from functools import lru_cache
from typing import Sequence

import numpy as np
from pfapack import pfaffian as pfapack_pfaffian

from errors import SingularMatrixError, StaleCacheError

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12


def antisymmetrize(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A)
    return 0.5 * (A - A.T)


def pfaffian(A: np.ndarray) -> complex:
    """Pfaffian антисимметричной матрицы, разложение Parlett–Reid с выбором ведущего элемента"""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"Ожидалась квадратная матрица, получено {A.shape}")
    n = A.shape[0]
    if n % 2:
        raise ValueError(f"Pfaffian не определён для нечётной размерности {n}")
    if n == 0:
        return 1.0
    dtype = np.complex128 if np.iscomplexobj(A) else np.float64
    work = np.array(antisymmetrize(A), dtype=dtype)
    return pfapack_pfaffian.pfaffian(work, overwrite_a=True, method="P")


def det(A: np.ndarray) -> complex:
    return np.linalg.det(A)


def log_abs_det(A: np.ndarray) -> float:
    _, logabs = np.linalg.slogdet(A)
    return float(logabs)


def inverse(A: np.ndarray, max_condition: float = MAX_CONDITION) -> np.ndarray:
    """Обратная матрица; при cond > max_condition бросает SingularMatrixError"""
    A = np.asarray(A)
    try:
        A_inv = np.linalg.inv(A)
    except np.linalg.LinAlgError as e:
        raise SingularMatrixError(f"Матрица {A.shape} вырождена: {e}")
    condition = float(np.linalg.norm(A, 1) * np.linalg.norm(A_inv, 1))
    logger.debug(f"Обусловленность матрицы {A.shape}: {condition:.3e}")
    if not np.isfinite(condition) or condition > max_condition:
        raise SingularMatrixError(f"Матрица {A.shape} почти вырождена", condition)
    return A_inv


def block_det_ratio(A_inv: np.ndarray, S: Sequence[int], delta: np.ndarray) -> complex:
    """
    det(A')/det(A) для A' = A + E_S Δ E_Sᵀ (замена блока S×S) по лемме
    об определителе матрицы: det(1 + Δ·(A⁻¹)_SS).
    """
    S = np.asarray(S)
    core = np.eye(len(S)) + delta @ A_inv[np.ix_(S, S)]
    return np.linalg.det(core)


@lru_cache(maxsize=None)
def _symplectic_unit(k: int) -> np.ndarray:
    eye = np.eye(k)
    zero = np.zeros((k, k))
    return np.block([[zero, -eye], [eye, zero]])


@lru_cache(maxsize=None)
def _symplectic_unit_pfaffian(k: int) -> complex:
    return pfaffian(_symplectic_unit(k))


def lowrank_pfaffian_ratio(A_inv_SS: np.ndarray, delta: np.ndarray) -> complex:
    """
    Pf(A + E_S Δ E_Sᵀ)/Pf(A) для антисимметричных A и Δ.

    Δ = U W⁻¹ Uᵀ с U = E_S[1, -Δ/2], W = [[0, -1], [1, 0]]; после дополнения
    Шура по A остаётся Pf(W + Uᵀ A⁻¹ U)/Pf(W) размера 2|S|. Обратимость Δ не нужна.
    """
    X = np.asarray(A_inv_SS)
    k = X.shape[0]
    half = 0.5 * delta
    gram = np.block([[X, -X @ half], [half @ X, -half @ X @ half]])
    reduced = _symplectic_unit(k) + gram
    return pfaffian(reduced) / _symplectic_unit_pfaffian(k)


class CachedInverse:
    """
    Кэшированная обратная матрица с отслеживанием log|det|.
    Обновления блока S×S по формуле Вудбери; после recompute_interval обновлений
    кэш считается устаревшим и требует refresh().
    """

    def __init__(self, matrix: np.ndarray, recompute_interval: int = 1000,
                 max_condition: float = MAX_CONDITION):
        self.matrix = np.array(matrix, copy=True)
        self.recompute_interval = recompute_interval
        self.max_condition = max_condition
        self.refresh_count = 0
        self.refresh()

    def refresh(self):
        """Пересчитывает обратную матрицу и определитель с нуля"""
        self.inverse = inverse(self.matrix, self.max_condition)
        sign, logabs = np.linalg.slogdet(self.matrix)
        self.sign = sign
        self.log_abs_det = float(logabs)
        self.updates_since_refresh = 0
        self.refresh_count += 1
        logger.debug(f"Refresh факторизации #{self.refresh_count}, log|det| = {self.log_abs_det:.6f}")

    @property
    def stale(self) -> bool:
        return self.updates_since_refresh >= self.recompute_interval

    def block(self, S: Sequence[int]) -> np.ndarray:
        return self.matrix[np.ix_(S, S)]

    def det_ratio(self, S: Sequence[int], new_block: np.ndarray) -> complex:
        if self.stale:
            raise StaleCacheError(
                f"{self.updates_since_refresh} обновлений без пересчёта (интервал {self.recompute_interval})"
            )
        delta = new_block - self.block(S)
        return block_det_ratio(self.inverse, S, delta)

    def update(self, S: Sequence[int], new_block: np.ndarray) -> complex:
        """Заменяет блок S×S и обновляет обратную матрицу; возвращает отношение определителей"""
        S = np.asarray(S)
        delta = new_block - self.block(S)
        core = np.eye(len(S)) + delta @ self.inverse[np.ix_(S, S)]
        ratio = np.linalg.det(core)
        if abs(ratio) < 1e-300:
            raise SingularMatrixError("Обновление блока делает матрицу вырожденной")

        correction = np.linalg.solve(core, delta @ self.inverse[S, :])
        dtype = np.result_type(self.inverse, correction)
        self.inverse = self.inverse.astype(dtype, copy=False) - self.inverse[:, S] @ correction
        self.matrix = self.matrix.astype(np.result_type(self.matrix, new_block), copy=False)
        self.matrix[np.ix_(S, S)] = new_block

        self.log_abs_det += float(np.log(abs(ratio)))
        self.sign = self.sign * ratio / abs(ratio)
        self.updates_since_refresh += 1
        return ratio
