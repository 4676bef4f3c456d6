import csv
import importlib
import json
import sys
import types

import numpy as np
import pytest

import main
from core.errors import ConfigError, InputError
from core.metrics import error_metrics
from core.optimizer import VARIANTS
from harness.experiment import derive_seed, plan, run_experiment
from harness.records import dumps_record, loads_record, record_filename
from harness.reporting import (
    RUNS_DIR,
    STATISTICS_FILE,
    SUMMARY_FILE,
    emit_plot_data,
    load_results,
)
from harness.settings import get_config_path, load_config, parse_config, save_config

CHEAP = {"pop_size": 6, "generations": 2, "kappa_init": 2}

TINY = {
    "problems": [{"dims": [1], "peaks": 3}],
    "algorithms": [{"name": "DETO", **CHEAP}, {"name": "RBO", **CHEAP}],
    "T": 2,
    "repetitions": 3,
    "master_seed": 7,
}


def _table(path):
    with open(path, encoding="utf-8") as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    directory = tmp_path_factory.mktemp("sweep")
    result = run_experiment(parse_config(TINY), output_dir=directory, workers=1)
    return directory, result


def test_minimal_config_is_fully_defaulted(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{}", encoding="utf-8")
    config = load_config(path)
    assert config.repetitions == 31 and config.T == 10 and config.baseline == "RBO"
    [instance] = config.instances()
    assert instance.id == "mpb-cone-n3-h1-s1" and instance.m == 5
    assert [name for name, _ in config.algorithm_configs()] == ["DETO", "RBO"]


def test_invalid_fields_are_named(tmp_path):
    with pytest.raises(ConfigError, match="repetitions"):
        parse_config({"repetitions": 0})
    with pytest.raises(ConfigError, match="colour"):
        parse_config({"colour": "blue"})
    with pytest.raises(ConfigError, match="baseline"):
        parse_config({"algorithms": [{"name": "DETO"}]})
    with pytest.raises(ConfigError, match="unknown variant"):
        parse_config({"algorithms": [{"name": "GA"}], "baseline": None})
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(broken)


def test_config_round_trip(tmp_path):
    config = parse_config(TINY)
    save_config(config, tmp_path / "config.json")
    assert load_config(tmp_path / "config.json") == config


def test_algorithm_overrides_reach_the_core_config():
    config = parse_config(
        {
            "algorithms": [
                {"name": "HM", "variant": "DETO", "sigma": 3, "omega": 1.0},
                {"name": "HM-explore", "variant": "DETO", "exploit_first": False},
                {"name": "RBO"},
            ]
        }
    )
    algorithms = dict(config.algorithm_configs())
    assert algorithms["HM"].name == "HM" and algorithms["HM"].exploit_first
    assert not algorithms["HM-explore"].exploit_first
    assert algorithms["HM"].warm_start.sigma == 3 and algorithms["HM"].acq.omega == 1.0
    assert algorithms["RBO"] == VARIANTS["RBO"]


def test_seeds_depend_only_on_run_identity(tmp_path):
    a = {(t.instance.id, t.algorithm.name, t.repetition): t.seed for t in plan(parse_config(TINY), tmp_path)}
    more = dict(TINY, algorithms=TINY["algorithms"] + [{"name": "CBO", **CHEAP}])
    b = {(t.instance.id, t.algorithm.name, t.repetition): t.seed for t in plan(parse_config(more), tmp_path)}
    assert all(b[key] == seed for key, seed in a.items())
    assert derive_seed(1, "x") != derive_seed(2, "x")
    assert 0 <= derive_seed(0, "x", 1) < 2 ** 63


def test_sweep_writes_one_record_per_run_and_a_summary(sweep):
    directory, result = sweep
    assert not result.failures
    assert len(list((directory / RUNS_DIR).glob("*.csv"))) == 6
    assert (directory / SUMMARY_FILE).exists() and (directory / STATISTICS_FILE).exists()
    assert json.loads((directory / "failures.json").read_text(encoding="utf-8")) == []
    assert len(_table(directory / SUMMARY_FILE)) == 6


def test_summary_matches_recomputation_from_records(sweep):
    directory, _ = sweep
    results = load_results(directory)
    for row in _table(directory / SUMMARY_FILE):
        record = results.runs[(row["problem"], row["algorithm"], int(row["repetition"]))]
        report = error_metrics(record)
        assert float(row["eps_f"]) == report.eps_f
        assert float(row["eps_t"]) == report.eps_t


def test_runs_of_one_repetition_share_the_landscape(sweep):
    directory, _ = sweep
    results = load_results(directory)
    problem = results.problems[0]
    for repetition in (1, 2, 3):
        deto = results.runs[(problem, "DETO", repetition)]
        rbo = results.runs[(problem, "RBO", repetition)]
        assert deto.optima() == rbo.optima()


def test_statistics_compare_against_the_baseline(sweep):
    directory, _ = sweep
    rows = {row["algorithm"]: row for row in _table(directory / STATISTICS_FILE)}
    assert rows["DETO"]["baseline"] == "RBO" and rows["DETO"]["pairs"] == "3"
    assert 0.0 < float(rows["DETO"]["eps_t_p"]) <= 1.0
    assert float(rows["RBO"]["rho_t"]) == 1.0


def test_repeated_sweep_gives_identical_summary(sweep, tmp_path):
    directory, _ = sweep
    run_experiment(parse_config(TINY), output_dir=tmp_path, workers=1)
    assert (tmp_path / SUMMARY_FILE).read_bytes() == (directory / SUMMARY_FILE).read_bytes()


def test_plot_tables(sweep):
    directory, _ = sweep
    results = load_results(directory)
    per_run = next(iter(results.runs.values())).total_evaluations

    trajectory = _table(emit_plot_data(directory, "trajectory"))
    assert len(trajectory) == 2 * per_run

    bars = {row["algorithm"]: row for row in _table(emit_plot_data(directory, "bars"))}
    summary = _table(directory / SUMMARY_FILE)
    for name, row in bars.items():
        values = [float(s["eps_t"]) for s in summary if s["algorithm"] == name]
        assert float(row["eps_t_mean"]) == pytest.approx(np.mean(values))

    rho = _table(emit_plot_data(directory, "rho"))
    assert {row["algorithm"] for row in rho} == {"DETO", "RBO"}
    with pytest.raises(InputError):
        emit_plot_data(directory, "heatmap")


def test_single_repetition_band_is_zero(tmp_path):
    run_experiment(parse_config(dict(TINY, repetitions=1, algorithms=[{"name": "RBO", **CHEAP}])), tmp_path, 1)
    for row in _table(emit_plot_data(tmp_path, "trajectory")):
        assert row["band_low"] == row["band_high"] == row["mean_loss"]


def test_empty_results_are_rejected(tmp_path):
    with pytest.raises(InputError):
        load_results(tmp_path)


def test_record_text_round_trip(sweep):
    directory, _ = sweep
    path = next((directory / RUNS_DIR).glob("*.csv"))
    text = path.read_text(encoding="utf-8")
    record, header = loads_record(text)
    extra = {k: header[k] for k in ("repetition", "problem_seed", "problem_params")}
    assert dumps_record(record, extra) == text
    assert record_filename("p", "DETO", 4) == "p__DETO__r004.csv"


def test_record_header_carries_problem_parameters(sweep):
    directory, _ = sweep
    for path in (directory / RUNS_DIR).glob("*.csv"):
        _, header = loads_record(path.read_text(encoding="utf-8"))
        assert header["problem_params"] == {
            "shape": "cone",
            "n": 1,
            "m": 3,
            "lower": 0.0,
            "upper": 100.0,
            "height_severity": 1.0,
            "shift_severity": 1.0,
            "width_severity": 0.5,
        }


def test_cli_bench_dump_and_eval(tmp_path, capsys):
    assert main.main(["bench", "dump", "--n", "2", "--m", "3", "--seed", "4", "--advances", "2"]) == 0
    dump = capsys.readouterr().out
    assert "shape=cone n=2 m=3 t=3" in dump
    path = tmp_path / "instance.txt"
    path.write_text(dump, encoding="utf-8")

    assert main.main(["bench", "eval", str(path), "50,50", "--optimum"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "point,value" and len(lines) == 3
    *_, f_star = lines[-1].split(",")
    assert float(lines[1].split(",")[-1]) <= float(f_star)


def test_cli_reports_and_rejects_bad_input(sweep, tmp_path, capsys):
    directory, _ = sweep
    assert main.main(["report", str(directory)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("problem,algorithm,repetition")
    assert main.main(["plotdata", str(directory), "--kind", "bars"]) == 0
    assert main.main(["run", str(tmp_path / "missing.json")]) == 2
    assert main.main(["report", str(tmp_path)]) == 2


def test_frozen_build_reads_config_next_to_the_executable(monkeypatch, tmp_path):
    monkeypatch.setattr(sys, "frozen", True, raising=False)
    monkeypatch.setattr(sys, "executable", str(tmp_path / "deto"))
    assert get_config_path() == tmp_path / "config.json"
    (tmp_path / "config.json").write_text('{"T": 3}', encoding="utf-8")
    assert load_config().T == 3


def test_build_does_not_bundle_the_config(monkeypatch):
    arguments = []
    entry = types.ModuleType("PyInstaller.__main__")
    entry.run = arguments.extend
    package = types.ModuleType("PyInstaller")
    package.__main__ = entry
    monkeypatch.setitem(sys.modules, "PyInstaller", package)
    monkeypatch.setitem(sys.modules, "PyInstaller.__main__", entry)
    monkeypatch.delitem(sys.modules, "build_exe", raising=False)
    importlib.import_module("build_exe").build()
    assert "main.py" in arguments and "--onefile" in arguments
    assert not any(argument.startswith("--add-data") for argument in arguments)
