#!/usr/bin/env python3
"""
Цепь Метрополиса по конфигурациям калибровочного поля:
одно звено за шаг, отношения |Ψ|² через обновления блока обратной матрицы,
прогрев, измерения, биннинг и jackknife.

ГСЧ: numpy PCG64, независимые цепи получают потоки через SeedSequence.spawn.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ansatz import Ansatz
from errors import ConventionError, SamplingError, StaleCacheError
from estimators import EnergyResult, ObservableSet, SampleEvaluator, SampleSet, energy_and_grad, jackknife
from galg import CachedInverse
from gstate import assemble_Gamma_in, link_block_at, link_support
from lattice import zero_config

logger = logging.getLogger(__name__)

NEGATIVE_RATIO_TOL = 1e-10
MIN_BINS = 20


@dataclass
class MCConfig:
    warmup_steps: int = 10_000
    sample_steps: int = 100_000
    seed: int = 0
    recompute_interval: int = 1000
    chains: int = 1
    n_bins: int = 50
    thinning: int = 1
    workers: int = 1
    max_singular_rate: float = 1e-6
    drift_tol: float = 1e-6

    def __post_init__(self):
        for name in ("sample_steps", "recompute_interval", "chains", "thinning", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"MCConfig.{name} должно быть положительным: {getattr(self, name)}")
        if self.warmup_steps < 0:
            raise ValueError(f"MCConfig.warmup_steps отрицательно: {self.warmup_steps}")
        if self.drift_tol <= 0:
            raise ValueError(f"MCConfig.drift_tol должно быть положительным: {self.drift_tol}")
        if self.n_bins < MIN_BINS:
            raise ValueError(f"MCConfig.n_bins должно быть не меньше {MIN_BINS}: {self.n_bins}")


@dataclass
class MCEstimate:
    mean: complex
    stderr: float
    stderr_imag: float
    n_samples: int
    n_bins: int
    acceptance_rate: float

    def to_dict(self) -> Dict:
        return {
            "mean_re": self.mean.real,
            "mean_im": self.mean.imag,
            "stderr": self.stderr,
            "stderr_imag": self.stderr_imag,
            "n_samples": self.n_samples,
            "n_bins": self.n_bins,
            "acceptance_rate": self.acceptance_rate,
        }


class ChainState:
    """Состояние одной цепи: конфигурация, кэши обратных матриц по слоям, ГСЧ"""

    def __init__(self, A: Ansatz, rng: np.random.Generator, recompute_interval: int = 1000,
                 G: Optional[np.ndarray] = None):
        A.check_caches()
        self.A = A
        self.geom = A.geom
        self.rng = rng
        self.G = zero_config(self.geom) if G is None else np.array(G, dtype=np.int64)
        gamma_in = assemble_Gamma_in(self.geom, self.G)
        self.caches = [CachedInverse(A.layer_matrix(self.G, i, gamma_in), recompute_interval)
                       for i in range(A.n_layers)]
        self.accepted = 0
        self.proposed = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0

    @property
    def inverses(self) -> List[np.ndarray]:
        return [cache.inverse for cache in self.caches]

    def log_norm_sq(self) -> float:
        """log |Ψ(G)|² из кэшированных log|det|, в нормировке log_norm_sq анзаца"""
        dim = self.A.dim
        return float(sum(0.5 * (cache.log_abs_det - dim * np.log(2.0)) for cache in self.caches))

    def refresh(self):
        for cache in self.caches:
            cache.refresh()


def acceptance_probability(state: ChainState, index: int, new_block: np.ndarray) -> float:
    """min(1, |Ψ(G′)|²/|Ψ(G)|²) = min(1, ∏ √det-ratio)"""
    S = link_support(state.geom, index)
    probability = 1.0
    for cache in state.caches:
        try:
            ratio = cache.det_ratio(S, new_block)
        except StaleCacheError as e:
            logger.debug(f"🔍 Принудительный refresh: {e}")
            cache.refresh()
            ratio = cache.det_ratio(S, new_block)
        ratio = float(np.real(ratio))
        if ratio < -NEGATIVE_RATIO_TOL:
            raise ConventionError(f"Отрицательное отношение детерминантов: {ratio:.3e}")
        probability *= np.sqrt(max(ratio, 0.0))
    return min(1.0, probability)


def metropolis_step(state: ChainState) -> bool:
    """Случайное звено, q′ равномерно среди N − 1 других значений"""
    geom = state.geom
    rng = state.rng
    index = int(rng.integers(geom.n_links))
    q_new = int((state.G[index] + rng.integers(1, geom.N)) % geom.N)
    new_block = link_block_at(geom, index, q_new)

    probability = acceptance_probability(state, index, new_block)
    state.proposed += 1
    if rng.random() >= probability:
        return False

    S = link_support(geom, index)
    for cache in state.caches:
        if cache.stale:
            cache.refresh()
        cache.update(S, new_block)
    state.G[index] = q_new
    state.accepted += 1
    return True


@dataclass
class ChainResult:
    samples: SampleSet
    acceptance_rate: float
    n_steps: int
    refreshes: int
    final_config: np.ndarray
    log_norm_drift: float = 0.0


def chain_generators(seed: int, chains: int) -> List[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(chains)]


def run_chain(A: Ansatz, observables: ObservableSet, cfg: MCConfig,
              rng: Optional[np.random.Generator] = None) -> ChainResult:
    """Прогрев от |0⟩ на всех звеньях, затем измерение на каждом thinning-м шаге"""
    rng = rng if rng is not None else chain_generators(cfg.seed, 1)[0]
    state = ChainState(A, rng, cfg.recompute_interval)
    evaluator = SampleEvaluator(A, observables)

    for _ in range(cfg.warmup_steps):
        metropolis_step(state)
    logger.debug(f"Прогрев завершён, acceptance {state.acceptance_rate:.3f}")

    for step in range(cfg.sample_steps):
        metropolis_step(state)
        if step % cfg.thinning:
            continue
        if any(cache.stale for cache in state.caches):
            state.refresh()
        evaluator.record(state.G, state.inverses)

    measured = evaluator.n_recorded + evaluator.n_excluded
    rate = evaluator.n_excluded / max(measured, 1)
    if evaluator.n_excluded and rate > cfg.max_singular_rate:
        raise SamplingError(
            f"Доля сингулярных сэмплов {rate:.2e} превышает порог {cfg.max_singular_rate:.0e}",
            {"excluded": evaluator.n_excluded, "measured": measured, "config": state.G.tolist()},
        )

    cached = state.log_norm_sq()
    state.refresh()
    fresh = state.log_norm_sq()
    drift = abs(cached - fresh)
    logger.debug(f"Дрейф кэшированного log|Ψ|²: {drift:.3e}")
    if drift > cfg.drift_tol * max(1.0, abs(fresh)):
        raise StaleCacheError(
            f"Кэшированный log|Ψ|² = {cached:.12f} расходится с пересчётом {fresh:.12f} "
            f"(дрейф {drift:.3e}, интервал пересчёта {cfg.recompute_interval})"
        )

    return ChainResult(
        samples=evaluator.sample_set(),
        acceptance_rate=state.acceptance_rate,
        n_steps=cfg.warmup_steps + cfg.sample_steps,
        refreshes=sum(cache.refresh_count for cache in state.caches),
        final_config=state.G.copy(),
        log_norm_drift=drift,
    )


def _run_chain_task(args: Tuple[Ansatz, ObservableSet, MCConfig, np.random.Generator]) -> ChainResult:
    return run_chain(*args)


def run_chains(A: Ansatz, observables: ObservableSet, cfg: MCConfig) -> Tuple[SampleSet, float]:
    """Несколько независимых цепей; слияние сэмплов в порядке номеров цепей"""
    generators = chain_generators(cfg.seed, cfg.chains)
    tasks = [(A, observables, cfg, rng) for rng in generators]
    if cfg.workers > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_chain_task, tasks))
    else:
        results = [_run_chain_task(task) for task in tasks]
    acceptance = float(np.mean([r.acceptance_rate for r in results]))
    return SampleSet.concatenate([r.samples for r in results]), acceptance


def binned_error(samples: np.ndarray, n_bins: int = 50) -> Tuple[float, float]:
    """Стандартная ошибка среднего jackknife по бинам (вещественная, мнимая)"""
    if len(samples) < 2 * n_bins:
        raise ValueError(f"binned_error: нужно не меньше {2 * n_bins} сэмплов, получено {len(samples)}")
    _, err_re, err_im = jackknife([np.asarray(samples)], lambda x: x, n_bins)
    return float(err_re), float(err_im)


def estimate(samples: np.ndarray, n_bins: int, acceptance_rate: float) -> MCEstimate:
    samples = np.asarray(samples)
    err_re, err_im = binned_error(samples, n_bins)
    return MCEstimate(
        mean=complex(samples.mean()),
        stderr=err_re,
        stderr_imag=err_im,
        n_samples=len(samples),
        n_bins=n_bins,
        acceptance_rate=acceptance_rate,
    )


@dataclass
class MCRun:
    result: EnergyResult
    estimates: Dict[str, MCEstimate] = field(default_factory=dict)
    acceptance_rate: float = 0.0


def sample_energy(A: Ansatz, g: float, cfg: MCConfig, observables: Optional[ObservableSet] = None) -> MCRun:
    """Энергия, градиент и наблюдаемые по MC-цепям"""
    observables = observables or ObservableSet()
    samples, acceptance = run_chains(A, observables, cfg)
    result = energy_and_grad(samples, A.geom, g, cfg.n_bins)
    estimates = {
        "P": estimate(samples.electric, cfg.n_bins, acceptance),
        "W(1,1)": estimate(samples.plaquette, cfg.n_bins, acceptance),
    }
    for (R1, R2), values in samples.wilson.items():
        estimates[f"W({R1},{R2})"] = estimate(values, cfg.n_bins, acceptance)
    logger.info(f"📊 MC: E = {result.energy:.6f} ± {result.energy_error:.6f}, "
                f"acceptance {acceptance:.3f}, сэмплов {len(samples)}")
    return MCRun(result=result, estimates=estimates, acceptance_rate=acceptance)

