import json

import numpy as np
import pandas as pd
import pytest

from analyze_data import (WILSON_COLUMNS, WilsonAnalyzer, compare_models, fit_area_law, fit_perimeter_law,
                          resolvable)
from errors import UnresolvableRegimeError

LOOPS = [(1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)]


def wilson_table(sigma=0.0, kappa=0.0, intercept=0.0, rel_err=0.01, rng=None, loops=LOOPS):
    rows = []
    for R1, R2 in loops:
        value = np.exp(intercept - sigma * R1 * R2 - kappa * 2 * (R1 + R2))
        err = rel_err * value
        measured = value + rng.normal(0.0, err) if rng is not None else value
        rows.append({"R1": R1, "R2": R2, "W_re": measured, "W_im": 0.0, "err_re": err, "err_im": err,
                     "n_samples": 100000, "n_bins": 50, "acceptance": 0.4})
    return pd.DataFrame(rows, columns=WILSON_COLUMNS)


def test_area_law_recovers_string_tension():
    result = fit_area_law(wilson_table(sigma=0.4))
    assert result.model == "area"
    assert abs(result.sigma - 0.4) < max(result.sigma_err, 1e-8)
    assert abs(result.intercept) < 1e-6
    assert result.n_points == len(LOOPS)
    assert result.chi2 < 1e-10


def test_area_law_with_noise():
    result = fit_area_law(wilson_table(sigma=0.4, rng=np.random.default_rng(17)))
    assert abs(result.sigma - 0.4) < 0.02
    assert result.sigma_err > 0.0
    assert np.isfinite(result.chi2_dof)


def test_perimeter_law_recovers_kappa():
    result = fit_perimeter_law(wilson_table(kappa=0.1))
    assert abs(result.kappa - 0.1) < 0.01
    assert abs(result.intercept) < 1e-6


def test_area_plus_perimeter_on_perimeter_data():
    result = fit_area_law(wilson_table(kappa=0.1), perimeter_term=True)
    assert result.model == "area+perimeter"
    assert abs(result.sigma) < 2 * result.sigma_err + 1e-8
    assert abs(result.kappa - 0.1) < 0.01


def test_compare_models_prefers_true_law():
    assert compare_models(wilson_table(sigma=0.4))["preferred"] == "area"
    assert compare_models(wilson_table(kappa=0.1))["preferred"] == "perimeter"


def test_unresolvable_regime():
    with pytest.raises(UnresolvableRegimeError):
        fit_area_law(wilson_table(sigma=0.4, loops=[(1, 1)]))
    noisy = wilson_table(sigma=0.4)
    noisy["err_re"] = 10.0
    assert resolvable(noisy).empty
    with pytest.raises(UnresolvableRegimeError):
        fit_perimeter_law(noisy)


def test_analyzer_missing_file(tmp_path):
    analyzer = WilsonAnalyzer(str(tmp_path / "missing.csv"))
    assert analyzer.df.empty
    assert list(analyzer.df.columns) == WILSON_COLUMNS


def test_analyzer_fit_and_export(tmp_path):
    data_file = tmp_path / "wilson_loops.csv"
    wilson_table(sigma=0.4).to_csv(data_file, index=False)
    analyzer = WilsonAnalyzer(str(data_file))
    fits = analyzer.fit_all()
    assert fits["preferred"] == "area"
    assert abs(fits["area"]["sigma"] - 0.4) < 1e-6
    summary = analyzer.export_summary(str(tmp_path / "out" / "fits.json"), fits)
    assert summary["n_loops"] == len(LOOPS)
    with open(tmp_path / "out" / "fits.json", encoding="utf-8") as f:
        assert json.load(f)["fits"]["area"]["loops"][0] == [1, 1]
    assert WilsonAnalyzer(str(data_file)).fit_all() == fits


def test_fit_all_records_unresolvable_as_error(tmp_path):
    data_file = tmp_path / "wilson_loops.csv"
    wilson_table(sigma=0.4, loops=[(1, 1)]).to_csv(data_file, index=False)
    fits = WilsonAnalyzer(str(data_file)).fit_all()
    assert "error" in fits["area"] and "error" in fits["perimeter"]
    assert "preferred" not in fits


def test_compare_models_records_unresolvable_fits():
    fits = compare_models(wilson_table(sigma=0.4, loops=[(1, 1), (1, 2)]))
    assert "error" in fits["area"] and "error" in fits["perimeter"]
    assert "preferred" not in fits


def test_fit_all_matches_compare_models(tmp_path):
    data_file = tmp_path / "wilson_loops.csv"
    wilson_table(sigma=0.2, kappa=0.05).to_csv(data_file, index=False)
    fits = WilsonAnalyzer(str(data_file)).fit_all(perimeter_term=True)
    assert fits == compare_models(pd.read_csv(data_file), perimeter_term=True)
    assert fits["area"]["model"] == "area+perimeter"
    assert fits["preferred"] == "area"
