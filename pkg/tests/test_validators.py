import math

from modules.circulator.config import DEFAULT_DEVICE, DEFAULT_EXPERIMENT, DEFAULT_OUTPUT, DEFAULT_SOLVER
from modules.circulator.pipeline import merge_config
from modules.circulator.validators import (
    generate_error_report,
    unknown_keys,
    validate_device,
    validate_experiment,
    validate_output,
    validate_solver,
)


def fields(errors):
    return [field for field, _ in errors]


def test_defaults_are_valid():
    assert validate_device(DEFAULT_DEVICE) == []
    assert validate_solver(DEFAULT_SOLVER) == []
    assert validate_experiment(DEFAULT_EXPERIMENT) == []
    assert validate_output(DEFAULT_OUTPUT) == []
    assert generate_error_report({}, merge_config({})).empty


def test_flux_beyond_half_quantum():
    device = {**DEFAULT_DEVICE, "uniform_flux": 0.45, "gradiometric_flux": 0.06}
    assert fields(validate_device(device)) == ["uniform_flux"]


def test_device_field_checks():
    device = {
        **DEFAULT_DEVICE,
        "n_squids": 0,
        "capacitance": -1e-12,
        "loss_model": "lumpy",
        "pairing": "crossed",
        "base_inductance": 1e-9,
    }
    assert set(fields(validate_device(device))) == {
        "n_squids", "capacitance", "loss_model", "pairing", "base_inductance",
    }


def test_booleans_are_not_counts():
    assert "n_squids" in fields(validate_device({**DEFAULT_DEVICE, "n_squids": True}))
    assert "linearized" in fields(validate_solver({**DEFAULT_SOLVER, "linearized": 1}))


def test_solver_checks():
    solver = {**DEFAULT_SOLVER, "truncation": 0, "points_per_period": 10, "flux_model": "exact", "threads": -1}
    assert set(fields(validate_solver(solver))) == {"truncation", "points_per_period", "flux_model", "threads"}
    assert validate_solver({**DEFAULT_SOLVER, "threads": 0}) == []


def test_experiment_checks():
    experiment = {
        **DEFAULT_EXPERIMENT,
        "name": "everything",
        "f_start_hz": 5e9,
        "f_stop_hz": 4e9,
        "delay_floor": -1.0,
        "accept_skip": [12],
        "cost_weights": {"insertion_loss": 0.0, "isolation": 0.0, "bandwidth": 0.0},
    }
    assert set(fields(validate_experiment(experiment))) == {
        "name", "f_start_hz", "delay_floor", "accept_skip", "cost_weights",
    }


def test_output_checks():
    assert fields(validate_output({**DEFAULT_OUTPUT, "formats": ["pdf"]})) == ["formats"]
    assert fields(validate_output({**DEFAULT_OUTPUT, "formats": []})) == ["formats"]


def test_unknown_keys():
    raw = {"device": {"n_squid": 12}, "plots": {}, "solver": 5}
    assert unknown_keys(raw) == [
        ("device", "n_squid", "unknown key"),
        ("plots", "*", "unknown section"),
        ("solver", "*", "section must be an object"),
    ]


def test_error_report_rows():
    raw = {"device": {"n_squid": 12, "capacitance": math.nan}}
    report = generate_error_report(raw, merge_config(raw))
    assert list(report.columns) == ["section", "field", "issue", "value"]
    assert report["field"].tolist() == ["n_squid", "capacitance"]
    assert report["value"].tolist() == [12, "nan"]
