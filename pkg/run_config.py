#!/usr/bin/env python3
"""
Конфигурация прогона: плоский JSON с ключами вида "lattice.L",
слияние с дефолтами, валидация с путём поля и сборка настроек модулей
"""

import json
import logging
import os
from typing import Any, Dict, List, Optional

import numpy as np

from errors import ConfigError
from estimators import REPRESENTATIVE_MODES, ObservableSet
from lattice import LatticeGeom, loop_set
from optimize import DescentSchedule, SweepSettings, parse_grid
from sampler import MIN_BINS, MCConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG: Dict[str, Any] = {
    "lattice.L": 2,
    "lattice.N": 3,
    "ansatz.layers": 1,
    "ansatz.init_y": 0.1,
    "ansatz.init_z": 0.1,
    "ansatz.jitter": 0.01,
    "mode": "exact",
    "coupling.g": 1.0,
    "coupling.grid": None,
    "mc.warmup": 10_000,
    "mc.samples": 100_000,
    "mc.recompute_interval": 1000,
    "mc.chains": 1,
    "mc.bins": 50,
    "mc.thinning": 1,
    "mc.workers": 1,
    "opt.kind": "auto",
    "opt.xi0": 0.01,
    "opt.decay": 0.99,
    "opt.max_iters": 300,
    "opt.grad_tol": 1e-4,
    "opt.starts": 8,
    "opt.start_spread": 0.3,
    "opt.gtol": 1e-8,
    "opt.warm_start": False,
    "estimator.representatives": "sublattice",
    "wilson.max_size": 1,
    "wilson.rule": "le1",
    "wilson.samples": 1_000_000,
    "exact.gauge_fix": True,
    "seed": 0,
    "out_dir": "data",
    "log_file": "gauge_vmc.log",
}

MODES = ("exact", "mc")
OPTIMIZERS = ("auto", "bfgs", "gd")
LOOP_RULES = ("le1", "eq")


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Читает JSON-конфиг и сливает с DEFAULT_CONFIG; манифест прогона тоже принимается
    (берётся его ключ "config"). overrides (флаги CLI) перекрывают файл.
    """
    config: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError("config", f"файл не найден: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                config = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"некорректный JSON в {path}: {e}")
        if isinstance(config.get("config"), dict) and "schema_version" in config:
            logger.info(f"📂 Replay: конфигурация взята из манифеста {path}")
            config = config["config"]
        logger.info(f"Конфигурация загружена из {path}")

    unknown = sorted(set(config) - set(DEFAULT_CONFIG) - {"description"})
    if unknown:
        raise ConfigError(unknown[0], "неизвестный ключ конфигурации")

    merged = {**DEFAULT_CONFIG, **config}
    merged.pop("description", None)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return validate_config(merged)


def _require_int(config: Dict[str, Any], key: str, minimum: int):
    value = config[key]
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(key, f"ожидалось целое число, получено {value!r}")
    if value < minimum:
        raise ConfigError(key, f"должно быть не меньше {minimum}, получено {value}")


def _require_float(config: Dict[str, Any], key: str, positive: bool = False):
    value = config[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
        raise ConfigError(key, f"ожидалось конечное число, получено {value!r}")
    if positive and value <= 0:
        raise ConfigError(key, f"должно быть положительным, получено {value}")
    config[key] = float(value)


def _require_choice(config: Dict[str, Any], key: str, choices):
    if config[key] not in choices:
        raise ConfigError(key, f"допустимые значения {list(choices)}, получено {config[key]!r}")


def validate_config(config: Dict[str, Any]) -> Dict[str, Any]:
    """Проверяет все поля; ошибка указывает путь поля"""
    config = dict(config)
    _require_int(config, "lattice.L", 2)
    if config["lattice.L"] % 2:
        raise ConfigError("lattice.L", f"L должно быть чётным (шахматная раскраска), получено {config['lattice.L']}")
    _require_int(config, "lattice.N", 2)
    _require_int(config, "ansatz.layers", 1)
    for key in ("ansatz.init_y", "ansatz.init_z", "ansatz.jitter", "opt.start_spread"):
        _require_float(config, key)
    if config["ansatz.jitter"] < 0:
        raise ConfigError("ansatz.jitter", "разброс не может быть отрицательным")

    _require_choice(config, "mode", MODES)
    _require_choice(config, "opt.kind", OPTIMIZERS)
    if config["mode"] == "mc" and config["opt.kind"] == "bfgs":
        raise ConfigError("opt.kind", "BFGS требует точного градиента, в режиме mc используйте 'gd'")
    _require_choice(config, "estimator.representatives", REPRESENTATIVE_MODES)
    _require_choice(config, "wilson.rule", LOOP_RULES)

    _require_float(config, "coupling.g", positive=True)
    if config["coupling.grid"] is not None:
        try:
            grid = grid_values(config)
        except ValueError as e:
            raise ConfigError("coupling.grid", str(e))
        if np.any(grid <= 0):
            raise ConfigError("coupling.grid", "все значения g должны быть положительными")

    _require_int(config, "mc.warmup", 0)
    for key in ("mc.samples", "mc.recompute_interval", "mc.chains", "mc.thinning", "mc.workers",
                "opt.max_iters", "opt.starts", "wilson.samples"):
        _require_int(config, key, 1)
    _require_int(config, "mc.bins", MIN_BINS)
    for key in ("opt.xi0", "opt.grad_tol", "opt.gtol"):
        _require_float(config, key, positive=True)
    _require_float(config, "opt.decay", positive=True)
    if config["opt.decay"] > 1:
        raise ConfigError("opt.decay", f"должно быть в (0, 1], получено {config['opt.decay']}")

    _require_int(config, "wilson.max_size", 1)
    if config["wilson.max_size"] > config["lattice.L"] // 2:
        raise ConfigError("wilson.max_size", f"петли больше L/2 = {config['lattice.L'] // 2} не допускаются")
    _require_int(config, "seed", 0)
    for key in ("opt.warm_start", "exact.gauge_fix"):
        if not isinstance(config[key], bool):
            raise ConfigError(key, f"ожидалось true/false, получено {config[key]!r}")
    for key in ("out_dir", "log_file"):
        if not isinstance(config[key], str) or not config[key]:
            raise ConfigError(key, "ожидалась непустая строка")
    return config


def grid_values(config: Dict[str, Any]) -> np.ndarray:
    """Сетка g: строка 'a:b:n' или явный список; без сетки - одна точка coupling.g"""
    grid = config.get("coupling.grid")
    if grid is None:
        return np.array([float(config["coupling.g"])])
    if isinstance(grid, str):
        return parse_grid(grid)
    values = np.asarray(grid, dtype=np.float64)
    if values.ndim != 1 or len(values) == 0:
        raise ValueError(f"Сетка g должна быть непустым списком, получено {grid!r}")
    return values


def geometry(config: Dict[str, Any]) -> LatticeGeom:
    return LatticeGeom(config["lattice.L"], config["lattice.N"])


def mc_config(config: Dict[str, Any], sample_steps: Optional[int] = None) -> MCConfig:
    return MCConfig(
        warmup_steps=config["mc.warmup"],
        sample_steps=sample_steps or config["mc.samples"],
        seed=config["seed"],
        recompute_interval=config["mc.recompute_interval"],
        chains=config["mc.chains"],
        n_bins=config["mc.bins"],
        thinning=config["mc.thinning"],
        workers=config["mc.workers"],
    )


def descent_schedule(config: Dict[str, Any]) -> DescentSchedule:
    return DescentSchedule(
        xi0=config["opt.xi0"],
        decay=config["opt.decay"],
        max_iters=config["opt.max_iters"],
        grad_tol=config["opt.grad_tol"],
    )


def wilson_loops(config: Dict[str, Any]) -> List:
    return loop_set(geometry(config), config["wilson.max_size"], config["wilson.rule"])


def observable_set(config: Dict[str, Any], loops=()) -> ObservableSet:
    return ObservableSet(representatives=config["estimator.representatives"], wilson_loops=tuple(loops))


def sweep_settings(config: Dict[str, Any]) -> SweepSettings:
    return SweepSettings(
        geom=geometry(config),
        n_layers=config["ansatz.layers"],
        mode=config["mode"],
        kind=optimizer_kind(config),
        init_y=config["ansatz.init_y"],
        init_z=config["ansatz.init_z"],
        jitter=config["ansatz.jitter"],
        seed=config["seed"],
        mc=mc_config(config),
        schedule=descent_schedule(config),
        starts=config["opt.starts"],
        start_spread=config["opt.start_spread"],
        gtol=config["opt.gtol"],
        observables=observable_set(config),
        gauge_fix=config["exact.gauge_fix"],
        workers=config["mc.workers"],
    )


def optimizer_kind(config: Dict[str, Any]) -> str:
    """auto: BFGS для точной свёртки, градиентный спуск для MC"""
    if config["opt.kind"] != "auto":
        return config["opt.kind"]
    return "bfgs" if config["mode"] == "exact" else "gd"
