import json

import pytest

from modules.circulator.cli import EXIT_CONFIG, EXIT_OK, build_parser, main


def test_parser_rejects_unknown_experiment():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--experiment", "everything"])


def test_power_budget_run(tmp_path):
    out = tmp_path / "out"
    assert main(["--experiment", "power-budget", "--out", str(out)]) == EXIT_OK
    assert (out / "power-budget.csv").exists()
    assert (out / "plot_power-budget.py").exists()
    assert not (out / "error.json").exists()


def test_config_file_overrides(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"output": {"formats": ["json"], "plot_stub": False}}), encoding="utf-8")
    out = tmp_path / "out"
    assert main(["--config", str(config), "--experiment", "phasor-demo", "--out", str(out)]) == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == ["phasor-demo.json"]


def test_invalid_config_writes_error_file(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"solver": {"truncation": 0}}), encoding="utf-8")
    out = tmp_path / "out"
    assert main(["--config", str(config), "--out", str(out)]) == EXIT_CONFIG

    error = json.loads((out / "error.json").read_text(encoding="utf-8"))
    assert error["status"] == "error"
    assert error["kind"] == "config"
    assert error["details"][0]["field"] == "truncation"
