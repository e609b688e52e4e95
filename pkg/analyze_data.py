#!/usr/bin/env python3
"""
Скрипт для анализа измеренных петель Вильсона:
фиты закона площади (натяжение струны σ) и закона периметра (κ_p)
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import curve_fit

from errors import UnresolvableRegimeError

logger = logging.getLogger(__name__)

WILSON_COLUMNS = ["R1", "R2", "W_re", "W_im", "err_re", "err_im", "n_samples", "n_bins", "acceptance"]
MIN_SIGNAL = 3.0


@dataclass
class FitResult:
    model: str
    sigma: float = 0.0
    sigma_err: float = 0.0
    kappa: float = 0.0
    kappa_err: float = 0.0
    intercept: float = 0.0
    intercept_err: float = 0.0
    covariance: List[List[float]] = field(default_factory=list)
    loops: List[Tuple[int, int]] = field(default_factory=list)
    chi2: float = 0.0
    chi2_dof: float = float("nan")
    n_points: int = 0

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["loops"] = [list(loop) for loop in self.loops]
        return data


def resolvable(table: pd.DataFrame, min_signal: float = MIN_SIGNAL) -> pd.DataFrame:
    """Петли с Re⟨W⟩ > min_signal·stderr"""
    mask = table["W_re"] > min_signal * table["err_re"]
    return table[mask & (table["W_re"] > 0)].sort_values(["R1", "R2"]).reset_index(drop=True)


def _linear_model(x, *coefficients):
    intercept, slopes = coefficients[0], coefficients[1:]
    return intercept + sum(s * row for s, row in zip(slopes, np.atleast_2d(x)))


Regressor = Callable[[pd.DataFrame], np.ndarray]


def _fit(table: pd.DataFrame, regressors: Dict[str, Regressor], model: str, min_signal: float) -> FitResult:
    data = resolvable(table, min_signal)
    n_params = 1 + len(regressors)
    needed = max(3, n_params)
    if len(data) < needed:
        raise UnresolvableRegimeError(
            f"Разрешимых петель {len(data)} < {needed}: сигнал Вильсона не отделяется от шума"
        )

    y = np.log(data["W_re"].to_numpy(dtype=np.float64))
    sigma_y = data["err_re"].to_numpy(dtype=np.float64) / data["W_re"].to_numpy(dtype=np.float64)
    weighted = bool(np.all(sigma_y > 0))
    X = np.vstack([regressors[name](data) for name in regressors])

    popt, pcov = curve_fit(_linear_model, X, y, p0=np.zeros(n_params),
                           sigma=sigma_y if weighted else None, absolute_sigma=weighted)
    errors = np.sqrt(np.clip(np.diag(pcov), 0.0, None))
    residuals = y - _linear_model(X, *popt)
    chi2 = float(np.sum((residuals / sigma_y) ** 2)) if weighted else float(np.sum(residuals ** 2))
    dof = len(data) - n_params

    result = FitResult(
        model=model,
        intercept=float(popt[0]),
        intercept_err=float(errors[0]),
        covariance=pcov.tolist(),
        loops=[(int(r1), int(r2)) for r1, r2 in zip(data["R1"], data["R2"])],
        chi2=chi2,
        chi2_dof=chi2 / dof if dof > 0 else float("nan"),
        n_points=len(data),
    )
    for k, name in enumerate(regressors, start=1):
        # регрессоры входят с минусом: ln W = c − σ·A − κ·P
        setattr(result, name, float(-popt[k]))
        setattr(result, f"{name}_err", float(errors[k]))
    return result


def _area(data: pd.DataFrame) -> np.ndarray:
    return (data["R1"] * data["R2"]).to_numpy(dtype=np.float64)


def _perimeter(data: pd.DataFrame) -> np.ndarray:
    return (2 * (data["R1"] + data["R2"])).to_numpy(dtype=np.float64)


def fit_area_law(table: pd.DataFrame, perimeter_term: bool = False, min_signal: float = MIN_SIGNAL) -> FitResult:
    """ln Re⟨W⟩ = c − σ·R1R2 (и − κ·2(R1+R2) при perimeter_term)"""
    regressors = {"sigma": _area}
    if perimeter_term:
        regressors["kappa"] = _perimeter
    return _fit(table, regressors, "area+perimeter" if perimeter_term else "area", min_signal)


def fit_perimeter_law(table: pd.DataFrame, min_signal: float = MIN_SIGNAL) -> FitResult:
    """ln Re⟨W⟩ = c − κ_p·2(R1+R2)"""
    return _fit(table, {"kappa": _perimeter}, "perimeter", min_signal)


def _goodness(fit: Dict) -> float:
    """χ²/dof; без степеней свободы - сырое χ²"""
    value = fit["chi2_dof"]
    return fit["chi2"] if np.isnan(value) else value


def compare_models(table: pd.DataFrame, perimeter_term: bool = False, min_signal: float = MIN_SIGNAL) -> Dict:
    """
    Фиты закона площади и периметра и выбор модели по χ²/dof.
    Неразрешимый режим записывается в модель как ошибка, а не исключение.
    """
    fits: Dict = {}
    for name, fitter in (
        ("area", lambda: fit_area_law(table, perimeter_term, min_signal)),
        ("perimeter", lambda: fit_perimeter_law(table, min_signal)),
    ):
        try:
            fits[name] = fitter().to_dict()
        except UnresolvableRegimeError as e:
            logger.warning(f"⚠️ Фит {name}: {e}")
            fits[name] = {"error": str(e)}
    valid = {k: v for k, v in fits.items() if "error" not in v}
    if valid:
        fits["preferred"] = min(valid, key=lambda k: _goodness(valid[k]))
    return fits


class WilsonAnalyzer:
    def __init__(self, data_file="data/wilson_loops.csv"):
        self.data_file = data_file
        self.df = self.load_data()

    def load_data(self):
        """Загружает таблицу петель Вильсона из CSV"""
        if not os.path.exists(self.data_file):
            logger.error(f"❌ Файл данных не найден: {self.data_file}")
            return pd.DataFrame(columns=WILSON_COLUMNS)
        try:
            df = pd.read_csv(self.data_file)
            missing = [c for c in ("R1", "R2", "W_re", "err_re") if c not in df.columns]
            if missing:
                raise ValueError(f"нет колонок {missing}")
            logger.info(f"✅ Загружено {len(df)} петель из {self.data_file}")
            return df
        except Exception as e:
            logger.error(f"❌ Ошибка загрузки данных: {e}")
            return pd.DataFrame(columns=WILSON_COLUMNS)

    def basic_stats(self):
        """Выводит таблицу петель и отношение сигнал/шум"""
        if self.df.empty:
            print("❌ Нет данных для анализа")
            return
        print("\n📊 ПЕТЛИ ВИЛЬСОНА")
        print("=" * 60)
        for _, row in self.df.iterrows():
            snr = row["W_re"] / row["err_re"] if row["err_re"] > 0 else float("inf")
            print(f"W({int(row['R1'])},{int(row['R2'])}) = {row['W_re']:+.6f} ± {row['err_re']:.6f} "
                  f"(Im {row.get('W_im', 0.0):+.2e}) | S/N {snr:.1f}")

    def fit_all(self, perimeter_term: bool = False, min_signal: float = MIN_SIGNAL) -> Dict:
        """Все фиты по загруженной таблице"""
        return compare_models(self.df, perimeter_term, min_signal)

    def export_summary(self, output_file: str, fits: Optional[Dict] = None) -> Dict:
        """Экспортирует фиты в JSON"""
        summary = {
            "data_file": self.data_file,
            "n_loops": len(self.df),
            "fits": fits if fits is not None else self.fit_all(),
        }
        directory = os.path.dirname(output_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(output_file, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, ensure_ascii=False, default=str)
        logger.info(f"✅ Сводка фитов экспортирована в {output_file}")
        return summary


def main():
    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s',
                        handlers=[logging.StreamHandler(sys.stdout)])
    parser = argparse.ArgumentParser(description='Фиты петель Вильсона')
    parser.add_argument('--data-file', default='data/wilson_loops.csv',
                        help='Путь к CSV с петлями Вильсона')
    parser.add_argument('--perimeter-term', action='store_true',
                        help='Добавить член периметра в фит площади')
    parser.add_argument('--export', default=None,
                        help='Экспортировать фиты в JSON')

    args = parser.parse_args()

    analyzer = WilsonAnalyzer(args.data_file)
    if analyzer.df.empty:
        print("❌ Нет данных для анализа")
        sys.exit(1)

    analyzer.basic_stats()
    fits = analyzer.fit_all(args.perimeter_term)
    print(json.dumps(fits, indent=2, ensure_ascii=False, default=str))
    if args.export:
        analyzer.export_summary(args.export, fits)

    print("\n✅ Анализ завершен!")


if __name__ == "__main__":
    main()
