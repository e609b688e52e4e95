#!/usr/bin/env python3
"""
Вариационный Монте-Карло для чистой калибровочной теории Z_N на решётке L×L
с калиброванными гауссовыми фермионными PEPS.

Подкоманды:
  minimize  - минимизация энергии при одном g (checkpoint-поток в CSV)
  sweep     - проход по сетке g
  measure   - петли Вильсона для оптимальных параметров
  fit       - натяжение струны σ и константа периметра κ_p
  exact     - точная свёртка для заданных параметров
  ed        - точная диагонализация (эталон E₀)
  selftest  - быстрый набор проверок инвариантов
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from analyze_data import WILSON_COLUMNS, WilsonAnalyzer
from ansatz import Ansatz, LayerParams
from errors import ConfigError
from exact import EDSpec, ed_ground_energy, exact_contract
from optimize import initial_ansatz, minimize_point, sweep, sweep_columns
from run_config import (geometry, grid_values, load_config, mc_config, observable_set, sweep_settings,
                        wilson_loops)
from sampler import sample_energy

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
COMMANDS = ("minimize", "sweep", "measure", "fit", "exact", "ed", "selftest")
FIT_COLUMNS = ["model", "sigma", "sigma_err", "kappa", "kappa_err", "intercept", "intercept_err",
               "chi2", "chi2_dof", "n_points"]
ED_COLUMNS = ["g", "E0", "E0_density", "sector_dim", "residual"]
SELFTEST_FILES = ["test_lattice.py", "test_galg.py", "test_gstate.py", "test_ansatz.py", "test_estimators.py",
                  "test_sampler.py", "test_exact.py", "test_optimize.py", "test_analyze_data.py"]


def setup_logging(log_file: Optional[str] = None):
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def code_version() -> str:
    """sha256 исходников пакета (все .py рядом с этим файлом, кроме тестов)"""
    digest = hashlib.sha256()
    root = os.path.dirname(os.path.abspath(__file__))
    for name in sorted(os.listdir(root)):
        if name.endswith(".py") and not name.startswith("test_"):
            with open(os.path.join(root, name), "rb") as f:
                digest.update(name.encode("utf-8"))
                digest.update(f.read())
    return digest.hexdigest()


def load_parameters(params_file: str) -> Dict[str, Any]:
    """
    Параметры анзаца из JSON (результат minimize) или из checkpoint CSV
    (последняя строка, колонки y1, z1, ...)
    """
    if not os.path.exists(params_file):
        raise ConfigError("params_file", f"файл не найден: {params_file}")
    if params_file.endswith(".csv"):
        df = pd.read_csv(params_file)
        if df.empty:
            raise ConfigError("params_file", f"пустой checkpoint: {params_file}")
        last = df.iloc[-1]
        n_layers = sum(1 for c in df.columns if c.startswith("y") and c[1:].isdigit())
        params = [float(last[f"{name}{i + 1}"]) for i in range(n_layers) for name in ("y", "z")]
        g = float(last["g"]) if "g" in df.columns else None
        return {"params": params, "n_layers": n_layers, "g": g}
    with open(params_file, "r", encoding="utf-8") as f:
        data = json.load(f)
    if "params" not in data:
        raise ConfigError("params_file", f"нет ключа 'params' в {params_file}")
    data.setdefault("n_layers", len(data["params"]) // 2)
    return data


class GaugeVMCRunner:
    def __init__(self, config: Dict[str, Any], command: str, params_file: Optional[str] = None,
                 data_file: Optional[str] = None, perimeter_term: bool = False):
        self.config = config
        self.command = command
        self.params_file = params_file
        self.data_file = data_file
        self.perimeter_term = perimeter_term
        self.out_dir = config["out_dir"]
        self.outputs: List[str] = []
        self.timings: Dict[str, float] = {}
        self.result: Dict[str, Any] = {}
        os.makedirs(self.out_dir, exist_ok=True)

    # --- вывод -------------------------------------------------------------

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def write_csv(self, df: pd.DataFrame, name: str) -> str:
        file_path = self.path(name)
        df.to_csv(file_path, index=False)
        self.outputs.append(file_path)
        logger.info(f"📁 Таблица сохранена: {file_path}")
        return file_path

    def write_json(self, data: Any, name: str) -> str:
        file_path = self.path(name)
        with open(file_path, "w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False, indent=2, default=str)
        self.outputs.append(file_path)
        logger.info(f"📁 JSON сохранён: {file_path}")
        return file_path

    def write_manifest(self, status: str, error: Optional[str] = None) -> str:
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "status": status,
            "error": error,
            "config": self.config,
            "seeds": {"seed": self.config["seed"], "chains": self.config["mc.chains"]},
            "code_version": code_version(),
            "timings": self.timings,
            "outputs": list(self.outputs),
            "params_file": self.params_file,
            "data_file": self.data_file,
        }
        file_path = self.path(f"manifest_{self.command}.json")
        with open(file_path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, ensure_ascii=False, indent=2, default=str)
        logger.info(f"📁 Манифест прогона: {file_path}")
        return file_path

    # --- анзац -------------------------------------------------------------

    def ansatz(self) -> Ansatz:
        geom = geometry(self.config)
        if not self.params_file:
            return initial_ansatz(sweep_settings(self.config))
        data = load_parameters(self.params_file)
        params = np.asarray(data["params"], dtype=np.float64)
        layers = [LayerParams(params[2 * i], params[2 * i + 1]) for i in range(len(params) // 2)]
        logger.info(f"📂 Параметры загружены из {self.params_file}: {params.tolist()}")
        return Ansatz(geom, layers)

    def coupling(self) -> float:
        if self.params_file:
            g = load_parameters(self.params_file).get("g")
            if g is not None:
                return float(g)
        return self.config["coupling.g"]

    # --- подкоманды --------------------------------------------------------

    def run_minimize(self) -> bool:
        settings = sweep_settings(self.config)
        g = self.config["coupling.g"]
        checkpoint_file = self.path("checkpoint.csv")
        if os.path.exists(checkpoint_file):
            os.remove(checkpoint_file)

        def on_checkpoint(record: Dict[str, Any]):
            pd.DataFrame([record]).to_csv(checkpoint_file, mode="a", index=False,
                                          header=not os.path.exists(checkpoint_file))

        logger.info(f"🚀 Минимизация: L={settings.geom.L}, слоёв {settings.n_layers}, g={g}, режим {settings.mode}")
        result = minimize_point(settings, g, on_checkpoint=on_checkpoint)
        if not os.path.exists(checkpoint_file):
            A = initial_ansatz(settings)
            A.set_parameters(result.params)
            record = {"iteration": result.iterations, "g": g}
            record.update(dict(zip(A.parameter_labels(), result.params.tolist())))
            record.update({"energy": result.energy, "grad_norm": result.gradient_norm / settings.geom.n_plaquettes})
            on_checkpoint(record)
        self.outputs.append(checkpoint_file)

        columns = sweep_columns(settings.n_layers)
        row = {"g": g, "E": result.energy, "E_density": result.energy_density}
        row.update(dict(zip(columns[3:-2], result.params.tolist())))
        row.update({"iters": result.iterations, "converged": result.converged})
        self.write_csv(pd.DataFrame([row], columns=columns), "minimize.csv")

        self.result = {
            "g": g,
            "n_layers": settings.n_layers,
            "params": result.params.tolist(),
            "energy": result.energy,
            "energy_density": result.energy_density,
            "energy_error": result.energy_error,
            "gradient": np.asarray(result.gradient).tolist(),
            "iterations": result.iterations,
            "converged": result.converged,
            "message": result.message,
        }
        self.write_json(self.result, "minimize.json")
        logger.info(f"✅ E = {result.energy:.10f}, E/n_plaq = {result.energy_density:.10f}, "
                    f"сошёлся: {result.converged}")
        return True

    def run_sweep(self) -> bool:
        settings = sweep_settings(self.config)
        grid = grid_values(self.config)
        logger.info(f"🚀 Проход по {len(grid)} значениям g от {grid[0]} до {grid[-1]}")
        table, failures = sweep(grid, settings, warm_start=self.config["opt.warm_start"])
        self.write_csv(table, "sweep.csv")
        self.result = {"rows": table.to_dict(orient="records"), "failures": failures}
        self.write_json(self.result, "sweep.json")
        if failures:
            logger.error(f"❌ Сбоев в проходе: {len(failures)}")
        return not failures

    def run_measure(self) -> bool:
        A = self.ansatz()
        g = self.coupling()
        loops = wilson_loops(self.config)
        cfg = mc_config(self.config, sample_steps=self.config["wilson.samples"])
        observables = observable_set(self.config, loops)
        observables.gradients = False
        logger.info(f"🚀 Измерение петель Вильсона {loops} при g={g}, {cfg.sample_steps} шагов")
        run = sample_energy(A, g, cfg, observables)

        rows = []
        for R1, R2 in loops:
            estimate = run.estimates[f"W({R1},{R2})"]
            rows.append({
                "R1": R1, "R2": R2,
                "W_re": estimate.mean.real, "W_im": estimate.mean.imag,
                "err_re": estimate.stderr, "err_im": estimate.stderr_imag,
                "n_samples": estimate.n_samples, "n_bins": estimate.n_bins,
                "acceptance": estimate.acceptance_rate,
            })
        self.write_csv(pd.DataFrame(rows, columns=WILSON_COLUMNS), "wilson_loops.csv")
        self.result = {
            "g": g,
            "params": A.parameters.tolist(),
            "loop_rule": self.config["wilson.rule"],
            "energy": run.result.energy,
            "energy_error": run.result.energy_error,
            "estimates": {name: est.to_dict() for name, est in run.estimates.items()},
        }
        self.write_json(self.result, "wilson_loops.json")
        return True

    def run_fit(self) -> bool:
        data_file = self.data_file or self.path("wilson_loops.csv")
        self.data_file = data_file
        analyzer = WilsonAnalyzer(data_file)
        if analyzer.df.empty:
            logger.error(f"❌ Нет данных для фита: {data_file}")
            return False
        fits = analyzer.fit_all(self.perimeter_term)
        summary = analyzer.export_summary(self.path("fits.json"), fits)
        self.outputs.append(self.path("fits.json"))
        rows = [{c: fits[name].get(c) for c in FIT_COLUMNS} for name in ("area", "perimeter")
                if "error" not in fits[name]]
        self.write_csv(pd.DataFrame(rows, columns=FIT_COLUMNS), "fits.csv")
        self.result = summary
        return bool(rows)

    def run_exact(self) -> bool:
        A = self.ansatz()
        g = self.coupling()
        loops = wilson_loops(self.config)
        result = exact_contract(A, g, observable_set(self.config, loops), self.config["exact.gauge_fix"])
        self.result = {
            "g": g,
            "params": A.parameters.tolist(),
            "energy": result.energy,
            "energy_density": result.energy_density,
            "electric_re": result.electric.real,
            "electric_im": result.electric.imag,
            "plaquette_re": result.plaquette.real,
            "plaquette_im": result.plaquette.imag,
            "gradient": result.gradient.tolist(),
            "wilson": {f"W({R1},{R2})": [w.real, w.imag] for (R1, R2), w in result.wilson.items()},
        }
        row = {k: self.result[k] for k in ("g", "energy", "energy_density", "electric_re", "electric_im",
                                           "plaquette_re", "plaquette_im")}
        self.write_csv(pd.DataFrame([row]), "exact.csv")
        self.write_json(self.result, "exact.json")
        print(f"E = {result.energy:.12f}  E/n_plaq = {result.energy_density:.12f}  ⟨P⟩ = {result.electric:.10f}")
        return True

    def run_ed(self) -> bool:
        L, N = self.config["lattice.L"], self.config["lattice.N"]
        rows = []
        for g in grid_values(self.config):
            res = ed_ground_energy(EDSpec(L, float(g), N), cache_file=self.path("ed_cache.json"))
            rows.append({"g": float(g), "E0": res.energy, "E0_density": res.energy / (L * L),
                         "sector_dim": res.sector_dim, "residual": res.residual})
            print(f"g = {g}: E0 = {res.energy:.12f}, размерность сектора {res.sector_dim}")
        df = pd.DataFrame(rows, columns=ED_COLUMNS)
        self.write_csv(df, "ed.csv")
        self.result = {"rows": rows}
        self.write_json(self.result, "ed.json")
        return True

    def run_selftest(self) -> bool:
        import pytest

        root = os.path.dirname(os.path.abspath(__file__))
        files = [os.path.join(root, name) for name in SELFTEST_FILES if os.path.exists(os.path.join(root, name))]
        code = pytest.main(["-q", "-m", "not slow", *files])
        self.result = {"pytest_exit_code": int(code)}
        return int(code) == 0

    def run(self) -> bool:
        """Выполняет подкоманду, пишет манифест; False при любом сбое"""
        handler = getattr(self, f"run_{self.command}")
        started = time.perf_counter()
        status, error = "error", None
        try:
            success = handler()
            status = "success" if success else "error"
            return success
        except Exception as e:
            error = str(e)
            logger.error(f"❌ Ошибка {self.command}: {e}")
            return False
        finally:
            self.timings[self.command] = time.perf_counter() - started
            self.write_manifest(status, error)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="VMC для калибровочной теории Z_N с гауссовыми PEPS")
    parser.add_argument("command", choices=COMMANDS, help="Подкоманда")
    parser.add_argument("--config", default=None, help="JSON-конфиг или манифест прогона (replay)")
    parser.add_argument("--L", type=int, default=None, help="Размер решётки")
    parser.add_argument("--N", type=int, default=None, help="Порядок группы Z_N")
    parser.add_argument("--layers", type=int, default=None, help="Число слоёв анзаца")
    parser.add_argument("--g", type=float, default=None, help="Константа связи")
    parser.add_argument("--g-grid", default=None, help="Сетка g в формате a:b:n")
    parser.add_argument("--mode", choices=("exact", "mc"), default=None, help="Точная свёртка или MC")
    parser.add_argument("--seed", type=int, default=None, help="Сид ГСЧ")
    parser.add_argument("--out-dir", default=None, help="Каталог результатов")
    parser.add_argument("--params-file", default=None, help="Параметры анзаца (JSON или checkpoint CSV)")
    parser.add_argument("--data-file", default=None, help="CSV с петлями Вильсона для fit")
    parser.add_argument("--perimeter-term", action="store_true", help="Член периметра в фите площади")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "lattice.L": args.L,
        "lattice.N": args.N,
        "ansatz.layers": args.layers,
        "coupling.g": args.g,
        "coupling.grid": args.g_grid,
        "mode": args.mode,
        "seed": args.seed,
        "out_dir": args.out_dir,
    }


def main(argv: Optional[List[str]] = None):
    """Главная функция"""
    args = build_parser().parse_args(argv)

    try:
        config = load_config(args.config, overrides_from_args(args))
    except ConfigError as e:
        setup_logging()
        logger.error(f"❌ Ошибка конфигурации: {e}")
        sys.exit(1)

    setup_logging(config["log_file"])
    runner = GaugeVMCRunner(config, args.command, args.params_file, args.data_file, args.perimeter_term)

    try:
        success = runner.run()
        if success:
            print(f"✅ {args.command} завершен успешно!")
            sys.exit(0)
        else:
            print(f"❌ {args.command} завершен с ошибками")
            sys.exit(1)
    except KeyboardInterrupt:
        logger.info("Прогон прерван пользователем")
        sys.exit(1)
    except Exception as e:
        logger.error(f"Неожиданная ошибка: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
