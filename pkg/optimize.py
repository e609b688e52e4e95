#!/usr/bin/env python3
"""
Вариационные оптимизаторы:
- градиентный спуск с расписанием ξ(i) = ξ₀·r^i для режима MC
- BFGS с несколькими стартами для режима точной свёртки
- проход по сетке констант связи с тёплым стартом
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from ansatz import PARAM_BOUND, Ansatz, LayerParams
from errors import OptimizationError
from estimators import EnergyResult, ObservableSet
from exact import exact_contract
from lattice import LatticeGeom
from sampler import MCConfig, sample_energy

logger = logging.getLogger(__name__)

Evaluator = Callable[[Ansatz], EnergyResult]


@dataclass
class DescentSchedule:
    xi0: float = 0.01
    decay: float = 0.99
    max_iters: int = 300
    grad_tol: float = 1e-4
    patience: int = 5

    def __post_init__(self):
        if self.xi0 <= 0:
            raise ValueError(f"xi0 должно быть положительным: {self.xi0}")
        if not 0 < self.decay <= 1:
            raise ValueError(f"decay должно быть в (0, 1]: {self.decay}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters должно быть положительным: {self.max_iters}")

    def step_size(self, iteration: int) -> float:
        return self.xi0 * self.decay ** iteration


@dataclass
class OptimizationResult:
    params: np.ndarray
    energy: float
    energy_density: float
    gradient: np.ndarray
    iterations: int
    converged: bool
    history: List[Dict[str, Any]] = field(default_factory=list)
    message: str = ""
    energy_error: float = 0.0

    @property
    def gradient_norm(self) -> float:
        return float(np.max(np.abs(self.gradient))) if len(self.gradient) else 0.0

    def layers(self) -> List[LayerParams]:
        return [LayerParams(self.params[2 * i], self.params[2 * i + 1]) for i in range(len(self.params) // 2)]


def checkpoint_record(iteration: int, g: float, A: Ansatz, result: EnergyResult, grad_norm: float) -> Dict[str, Any]:
    record: Dict[str, Any] = {"iteration": iteration, "g": g}
    record.update(dict(zip(A.parameter_labels(), A.parameters.tolist())))
    record["energy"] = result.energy
    record["grad_norm"] = grad_norm
    return record


# --- оценщики энергии для оптимизаторов ------------------------------------

class ExactEvaluator:
    def __init__(self, g: float, observables: Optional[ObservableSet] = None, gauge_fix: bool = True):
        self.g = g
        self.observables = observables
        self.gauge_fix = gauge_fix

    def __call__(self, A: Ansatz) -> EnergyResult:
        return exact_contract(A, self.g, self.observables, self.gauge_fix)


class MCEvaluator:
    """Каждый вызов - новые цепи с сидом, выведенным из (seed, номер вызова)"""

    def __init__(self, g: float, cfg: MCConfig, observables: Optional[ObservableSet] = None):
        self.g = g
        self.cfg = cfg
        self.observables = observables
        self.calls = 0

    def __call__(self, A: Ansatz) -> EnergyResult:
        seed = int(np.random.SeedSequence((self.cfg.seed, self.calls)).generate_state(1)[0])
        self.calls += 1
        cfg = MCConfig(**{**self.cfg.__dict__, "seed": seed})
        return sample_energy(A, self.g, cfg, self.observables).result


# --- градиентный спуск -----------------------------------------------------

def gradient_descent(A0: Ansatz, evaluate: Evaluator, schedule: DescentSchedule, g: float,
                     on_checkpoint: Optional[Callable[[Dict[str, Any]], None]] = None) -> OptimizationResult:
    """
    α ← α − ξ(i)·∂E/∂α; остановка по max_iters или после patience итераций подряд
    с max|∇E|/n_plaq ниже порога.
    """
    A = A0.copy()
    n_plaq = A.geom.n_plaquettes
    history: List[Dict[str, Any]] = []
    below = 0
    converged = False
    result = None
    evaluated_params = A.parameters

    for iteration in range(schedule.max_iters):
        result = evaluate(A)
        gradient = np.asarray(result.gradient, dtype=np.float64)
        if not (np.all(np.isfinite(gradient)) and np.isfinite(result.energy)):
            raise OptimizationError(f"Нефинитный градиент на итерации {iteration}",
                                    history[-1] if history else None)

        grad_norm = float(np.max(np.abs(gradient))) / n_plaq if len(gradient) else 0.0
        record = checkpoint_record(iteration, g, A, result, grad_norm)
        history.append(record)
        if on_checkpoint:
            on_checkpoint(record)
        logger.info(f"📊 Итерация {iteration}: E = {result.energy:.8f}, |∇E|/n_plaq = {grad_norm:.3e}")

        evaluated_params = A.parameters
        below = below + 1 if grad_norm < schedule.grad_tol else 0
        if below >= schedule.patience:
            converged = True
            break
        A.set_parameters(A.parameters - schedule.step_size(iteration) * gradient)

    return OptimizationResult(
        params=evaluated_params,
        energy=result.energy,
        energy_density=result.energy_density,
        gradient=np.asarray(result.gradient),
        iterations=len(history),
        converged=converged,
        history=history,
        message="grad-norm ниже порога" if converged else "достигнут max_iters",
        energy_error=result.energy_error,
    )


# --- BFGS ------------------------------------------------------------------

def bfgs_minimize(A0: Ansatz, g: float, starts: int = 8, start_spread: float = 0.3, gtol: float = 1e-8,
                  seed: int = 0, max_restarts: int = 3, evaluate: Optional[Evaluator] = None,
                  extra_starts: Sequence[np.ndarray] = ()) -> OptimizationResult:
    """
    Квазиньютоновская минимизация точной энергии (scipy BFGS, точный градиент).
    Первый старт - параметры A0, остальные - A0 с гауссовым разбросом; возвращается лучший.
    """
    evaluate = evaluate or ExactEvaluator(g)
    A = A0.copy()
    rng = np.random.default_rng(seed)
    cache: Dict[bytes, EnergyResult] = {}

    def objective(x: np.ndarray) -> Tuple[float, np.ndarray]:
        key = np.asarray(x, dtype=np.float64).tobytes()
        if key not in cache:
            A.set_parameters(x)
            cache[key] = evaluate(A)
        result = cache[key]
        return result.energy, np.asarray(result.gradient, dtype=np.float64)

    base = A0.parameters
    points = [base] + [np.asarray(p, dtype=np.float64) for p in extra_starts]
    points += [base + rng.normal(0.0, start_spread, size=base.shape) for _ in range(max(starts - len(points), 0))]

    best: Optional[OptimizationResult] = None
    for k, x0 in enumerate(points):
        x0 = np.clip(x0, -PARAM_BOUND, PARAM_BOUND)
        total_iterations = 0
        history: List[Dict[str, Any]] = []
        converged = False
        for attempt in range(max_restarts + 1):
            res = minimize(objective, x0, jac=True, method="BFGS", options={"gtol": gtol, "maxiter": 2000})
            total_iterations += int(res.nit)
            energy, gradient = objective(res.x)
            history.append({"start": k, "attempt": attempt, "energy": energy, "nit": int(res.nit),
                            "message": str(res.message)})
            converged = bool(res.success) or float(np.max(np.abs(gradient))) < gtol
            if converged:
                break
            logger.warning(f"⚠️ BFGS старт {k}, попытка {attempt}: {res.message}; перезапуск из возмущённой точки")
            x0 = np.clip(res.x + rng.normal(0.0, 1e-3, size=res.x.shape), -PARAM_BOUND, PARAM_BOUND)

        x_best = np.clip(res.x, -PARAM_BOUND, PARAM_BOUND)
        energy, gradient = objective(x_best)
        result = cache[x_best.tobytes()]
        candidate = OptimizationResult(
            params=x_best, energy=energy, energy_density=result.energy_density, gradient=gradient,
            iterations=total_iterations, converged=converged, history=history,
            message=str(res.message),
        )
        logger.info(f"🔍 BFGS старт {k}: E = {energy:.12f}, итераций {total_iterations}, сошёлся {converged}")
        if best is None or candidate.energy < best.energy:
            best = candidate
    return best


def extend_with_zero_layer(params: np.ndarray, n_layers: int) -> np.ndarray:
    """Дополняет параметры нулевыми слоями: слой с y = z = 0 не меняет состояние"""
    params = np.asarray(params, dtype=np.float64)
    missing = 2 * n_layers - len(params)
    return np.concatenate([params, np.zeros(max(missing, 0))])


# --- проход по константе связи ---------------------------------------------

@dataclass
class SweepSettings:
    geom: LatticeGeom
    n_layers: int = 1
    mode: str = "exact"
    kind: str = "bfgs"
    init_y: float = 0.1
    init_z: float = 0.1
    jitter: float = 0.01
    seed: int = 0
    mc: MCConfig = field(default_factory=MCConfig)
    schedule: DescentSchedule = field(default_factory=DescentSchedule)
    starts: int = 8
    start_spread: float = 0.3
    gtol: float = 1e-8
    observables: ObservableSet = field(default_factory=ObservableSet)
    gauge_fix: bool = True
    layer_warm_start: bool = True
    workers: int = 1


def initial_ansatz(settings: SweepSettings, n_layers: Optional[int] = None, stream: int = 0) -> Ansatz:
    rng = np.random.default_rng([settings.seed, stream])
    return Ansatz.initial(settings.geom, n_layers or settings.n_layers, settings.init_y, settings.init_z,
                          settings.jitter, rng)


def minimize_point(settings: SweepSettings, g: float, start: Optional[np.ndarray] = None, stream: int = 0,
                   on_checkpoint: Optional[Callable[[Dict[str, Any]], None]] = None) -> OptimizationResult:
    """Минимизация при одном g в выбранном режиме"""
    A0 = initial_ansatz(settings, stream=stream)
    if start is not None:
        A0.set_parameters(start)

    if settings.mode == "mc":
        evaluator = MCEvaluator(g, MCConfig(**{**settings.mc.__dict__, "seed": settings.seed + stream}),
                                settings.observables)
        return gradient_descent(A0, evaluator, settings.schedule, g, on_checkpoint)

    evaluator = ExactEvaluator(g, settings.observables, settings.gauge_fix)
    if settings.kind == "gd":
        return gradient_descent(A0, evaluator, settings.schedule, g, on_checkpoint)
    seed = settings.seed + stream
    if settings.layer_warm_start and settings.n_layers > 1 and start is None:
        previous: Optional[OptimizationResult] = None
        for k in range(1, settings.n_layers + 1):
            Ak = initial_ansatz(settings, k, stream)
            extra = [extend_with_zero_layer(previous.params, k)] if previous is not None else []
            result = bfgs_minimize(Ak, g, settings.starts, settings.start_spread, settings.gtol, seed,
                                   evaluate=evaluator, extra_starts=extra)
            logger.info(f"📊 g={g}: {k} слоёв, E = {result.energy:.12f}")
            previous = result
        return previous
    return bfgs_minimize(A0, g, settings.starts, settings.start_spread, settings.gtol, seed, evaluate=evaluator)


def parse_grid(text: str) -> np.ndarray:
    """'a:b:n' → n равномерных точек от a до b включительно"""
    try:
        start, stop, count = text.split(":")
        grid = np.linspace(float(start), float(stop), int(count))
    except Exception as e:
        raise ValueError(f"Неверный формат сетки '{text}', ожидалось a:b:n ({e})")
    return grid


def _sweep_point(args: Tuple[SweepSettings, float, int]) -> Tuple[Optional[OptimizationResult], Optional[str]]:
    settings, g, index = args
    try:
        return minimize_point(settings, g, stream=index), None
    except Exception as e:
        logger.error(f"❌ Точка g={g}: {e}")
        return None, str(e)


def sweep_columns(n_layers: int) -> List[str]:
    labels = [f"{name}{i + 1}" for i in range(n_layers) for name in ("y", "z")]
    return ["g", "E", "E_density"] + labels + ["iters", "converged"]


def sweep(g_grid: Sequence[float], settings: SweepSettings, warm_start: bool = False) -> Tuple[pd.DataFrame, List[Dict]]:
    """Таблица (g, E, E_density, y_i, z_i, iters, converged) и список сбоев"""
    g_grid = [float(g) for g in g_grid]
    if any(b <= a for a, b in zip(g_grid, g_grid[1:])):
        raise ValueError("Сетка g должна строго возрастать")

    outcomes: List[Tuple[Optional[OptimizationResult], Optional[str]]] = []
    if warm_start:
        start = None
        for index, g in enumerate(g_grid):
            try:
                result = minimize_point(settings, g, start=start, stream=index)
                start = result.params
                outcomes.append((result, None))
            except Exception as e:
                logger.error(f"❌ Точка g={g}: {e}")
                outcomes.append((None, str(e)))
    elif settings.workers > 1 and len(g_grid) > 1:
        with ProcessPoolExecutor(max_workers=settings.workers) as pool:
            outcomes = list(pool.map(_sweep_point, [(settings, g, i) for i, g in enumerate(g_grid)]))
    else:
        outcomes = [_sweep_point((settings, g, i)) for i, g in enumerate(g_grid)]

    columns = sweep_columns(settings.n_layers)
    rows, failures = [], []
    for g, (result, error) in zip(g_grid, outcomes):
        if result is None:
            rows.append({**{c: np.nan for c in columns}, "g": g, "iters": 0, "converged": False})
            failures.append({"g": g, "error": error})
            continue
        row = {"g": g, "E": result.energy, "E_density": result.energy_density}
        row.update(dict(zip(columns[3:-2], result.params.tolist())))
        row.update({"iters": result.iterations, "converged": result.converged})
        rows.append(row)
    table = pd.DataFrame(rows, columns=columns)
    logger.info(f"✅ Проход по {len(g_grid)} точкам завершён, сбоев: {len(failures)}")
    return table, failures
