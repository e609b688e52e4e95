#!/usr/bin/env python3
"""
Исключения движка вариационного Монте-Карло
"""

from typing import Any, Dict, Optional


class GaugeVMCError(Exception):
    """Базовое исключение проекта"""


class ConfigError(GaugeVMCError):
    """Ошибка валидации конфигурации с путём поля"""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ConventionError(GaugeVMCError):
    """Нарушение соглашений формализма (отрицательный детерминант и т.п.)"""


class HermiticityError(ConventionError):
    """Мнимая часть энергии или градиента вне статистической ошибки"""

    def __init__(self, what: str, value: float, error: float):
        self.what = what
        self.value = value
        self.error = error
        super().__init__(f"{what}: мнимая часть {value:.3e} при ошибке {error:.3e}")


class SingularMatrixError(GaugeVMCError):
    """Почти вырожденная матрица"""

    def __init__(self, message: str, condition: float = float("inf")):
        self.condition = condition
        super().__init__(f"{message} (cond ≈ {condition:.3e})")


class StaleCacheError(GaugeVMCError):
    """Кэш обратной матрицы обновлялся слишком много раз без пересчёта"""


class StateSpaceTooLargeError(GaugeVMCError):
    """Точная свёртка невозможна: слишком много конфигураций"""


class SamplingError(GaugeVMCError):
    """Сбой марковской цепи (доля сингулярных сэмплов и т.п.)"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class OptimizationError(GaugeVMCError):
    """Сбой оптимизатора; хранит последний checkpoint"""

    def __init__(self, message: str, checkpoint: Optional[Dict[str, Any]] = None):
        self.checkpoint = checkpoint
        super().__init__(message)


class UnresolvableRegimeError(GaugeVMCError):
    """Недостаточно разрешимых петель Вильсона для фита"""


class LanczosError(GaugeVMCError):
    """Ланцош не сошёлся"""

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual = {residual:.3e})")
