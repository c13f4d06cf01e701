import json
import math

import pytest

from modules.circulator.config import DEFAULT_DEVICE
from modules.circulator.errors import ConfigError
from modules.circulator.model_core import PHI0
from modules.circulator.pipeline import (
    _write_accept_artifacts,
    build_device,
    check_determinism,
    load_run_config,
    make_context,
    merge_config,
    run_experiment,
)


def test_merge_config_fills_defaults():
    merged = merge_config({"device": {"n_squids": 10}})
    assert merged["device"]["n_squids"] == 10
    assert merged["device"]["capacitance"] == DEFAULT_DEVICE["capacitance"]
    assert merged["experiment"]["name"] == "phasor-demo"


def test_merge_config_does_not_share_defaults():
    merged = merge_config({})
    merged["experiment"]["gradiometric_fluxes"].append(0.5)
    assert 0.5 not in merge_config({})["experiment"]["gradiometric_fluxes"]


def test_load_run_config_from_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"solver": {"truncation": 7}}), encoding="utf-8")
    config = load_run_config(path, {"experiment": {"name": "spectrum"}})
    assert config["solver"]["truncation"] == 7
    assert config["experiment"]["name"] == "spectrum"


def test_load_run_config_rejects_bad_json(tmp_path):
    path = tmp_path / "run.json"
    path.write_text("{device: 1", encoding="utf-8")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_run_config(path)
    with pytest.raises(ConfigError, match="cannot read"):
        load_run_config(tmp_path / "missing.json")


def test_load_run_config_collects_every_problem(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"device": {"n_squid": 12, "uniform_flux": 0.6}}), encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        load_run_config(path)
    assert {row["field"] for row in excinfo.value.details} == {"n_squid", "uniform_flux"}
    assert str(excinfo.value) == "2 config problem(s)"


def test_build_device_loss_models():
    device = merge_config({})["device"]
    measured = build_device(device)
    assert measured.params.internal_q == 400.0
    assert measured.params.parasitic_resistance == 0.01
    assert measured.flux.uniform_flux == pytest.approx(0.37 * PHI0)

    lossless = build_device({**device, "geometric_inductance": 50e-12}, loss_model="lossless")
    assert lossless.params.internal_q == math.inf
    assert lossless.params.parasitic_resistance == 0.0
    assert lossless.params.geometric_inductance == 0.0


def test_build_device_lossless_from_config():
    device = {**merge_config({})["device"], "loss_model": "lossless", "geometric_inductance": 50e-12}
    built = build_device(device)
    assert built.params.geometric_inductance == 0.0
    assert built.params.internal_q == math.inf
    assert built.params.parasitic_resistance == 0.0


def test_build_device_with_explicit_bridge():
    device = {**merge_config({})["device"], "base_inductance": 2.5e-9, "imbalance": 0.15, "internal_q": 1e3}
    built = build_device(device)
    assert (built.params.l0, built.params.delta0) == (2.5e-9, 0.15)
    assert built.params.internal_q == 1e3


def test_make_context_auto_threads():
    config = merge_config({"solver": {"threads": 0}})
    assert make_context(config).threads >= 1


def test_make_context_reads_refine_tolerance():
    assert make_context(merge_config({"solver": {"refine_tolerance": 1e-6}})).refine_tolerance == 1e-6


def test_power_budget_experiment(run_config):
    config = merge_config(run_config)
    frame, report, paths = run_experiment(config)
    assert frame["stage"].iloc[-1] == "total"
    assert report["passed"] is True
    assert report["total_heat_load_W"] == pytest.approx(0.5 + 5e-5 + 1e-10)
    assert sorted(p.name for p in paths) == ["power-budget.csv", "power-budget.json"]


def test_phasor_demo_experiment(run_config):
    run_config["experiment"]["name"] = "phasor-demo"
    frame, report, paths = run_experiment(merge_config(run_config))
    assert report["passed"]
    assert report["S21"] == pytest.approx(-1, abs=1e-12)
    assert set(frame["stage"]) >= {"5 combined"}
    saved = json.loads(paths[1].read_text(encoding="utf-8"))
    assert saved["experiment"] == "phasor-demo"
    assert saved["S21"]["re"] == pytest.approx(-1.0)


def test_accept_closed_form_criteria(run_config):
    run_config["experiment"].update(name="accept", accept_skip=[5, 6, 7, 8, 9])
    frame, report, _ = run_experiment(merge_config(run_config))
    assert frame["criterion"].tolist() == list(range(1, 12))
    assert report["passed"], frame[~frame["passed"]].to_dict("records")
    assert report["failed_criteria"] == []


def test_sweep_sparams_records_truncation_drift(run_config):
    run_config["experiment"].update(name="sweep-sparams", tune=False, f_points=5)
    run_config["solver"] = {"truncation": 3, "refine_tolerance": 1.0}
    frame, _, _ = run_experiment(merge_config(run_config))
    for suffix in ("ccw", "cw"):
        assert (frame[f"truncation_drift_{suffix}"] < 1.0).all()
        assert (frame[f"error_{suffix}"] == "").all()


def test_accept_artifacts_are_written_to_disk(run_config, tmp_path):
    ctx = make_context(merge_config(run_config), loss_model="lossless")
    artifacts = _write_accept_artifacts(ctx, tmp_path / "run", 2)
    assert sorted(artifacts) == [
        "accept-sweep.csv", "accept-sweep.json", "accept.csv", "accept.json",
        "plot_accept-sweep.py", "plot_accept.py",
    ]
    assert artifacts["accept.csv"] == (tmp_path / "run" / "accept.csv").read_bytes()


def test_determinism_compares_serial_and_threaded_files(run_config):
    row = check_determinism(make_context(merge_config(run_config), loss_model="lossless"))
    assert row["passed"], row["description"]
    assert row["value"] == 0.0


@pytest.mark.slow
def test_accept_power_handling_in_picowatt_band(run_config):
    run_config["experiment"].update(name="accept", accept_skip=[c for c in range(1, 12) if c != 9])
    frame, _, _ = run_experiment(merge_config(run_config))
    row = frame[frame["criterion"] == 9].iloc[0]
    assert row["passed"], row["description"]
    assert 1e-13 <= row["value"] <= 1e-11
