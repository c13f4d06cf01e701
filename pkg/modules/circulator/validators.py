import math
from numbers import Number

import pandas as pd

from modules.circulator.config import (
    CONFIG_SECTIONS,
    EXPERIMENTS,
    FLUX_MODELS,
    LOSS_PRESETS,
    OUTPUT_FORMATS,
    PAIRINGS,
)


def _is_number(value):
    return isinstance(value, Number) and not isinstance(value, bool)


def _positive(value):
    return _is_number(value) and value > 0


def _positive_int(value):
    return isinstance(value, int) and not isinstance(value, bool) and value > 0


def _number_list(value):
    return isinstance(value, list) and len(value) > 0 and all(_is_number(v) for v in value)


def validate_device(device):
    errors = []

    if not _positive_int(device.get("n_squids")):
        errors.append(("n_squids", "SQUID count must be a positive integer"))

    for field in ("junction_critical_current", "capacitance", "line_impedance", "modulation_frequency_hz"):
        if not _positive(device.get(field)):
            errors.append((field, f"{field} must be positive"))

    uniform = device.get("uniform_flux")
    gradiometric = device.get("gradiometric_flux")
    if not _is_number(uniform):
        errors.append(("uniform_flux", "uniform flux must be a number (flux quanta)"))
    if not _is_number(gradiometric):
        errors.append(("gradiometric_flux", "gradiometric flux must be a number (flux quanta)"))
    if _is_number(uniform) and _is_number(gradiometric) and abs(uniform) + abs(gradiometric) >= 0.5:
        errors.append(("uniform_flux", "|Φu| + |Φg| must stay below Φ0/2"))

    if not _is_number(device.get("phase")):
        errors.append(("phase", "phase must be a number (rad)"))

    if not _is_number(device.get("geometric_inductance")) or device.get("geometric_inductance") < 0:
        errors.append(("geometric_inductance", "geometric inductance must be non-negative"))

    if device.get("loss_model") not in LOSS_PRESETS:
        errors.append(("loss_model", f"loss model must be one of {sorted(LOSS_PRESETS)}"))

    if device.get("pairing") not in PAIRINGS:
        errors.append(("pairing", f"pairing must be one of {PAIRINGS}"))

    if device.get("internal_q") is not None and not _positive(device.get("internal_q")):
        errors.append(("internal_q", "internal Q must be positive"))

    resistance = device.get("parasitic_resistance")
    if resistance is not None and (not _is_number(resistance) or resistance < 0):
        errors.append(("parasitic_resistance", "parasitic resistance must be non-negative"))

    base = device.get("base_inductance")
    imbalance = device.get("imbalance")
    if base is not None and not _positive(base):
        errors.append(("base_inductance", "base inductance must be positive"))
    if imbalance is not None and (not _is_number(imbalance) or not abs(imbalance) < 1):
        errors.append(("imbalance", "bridge imbalance out of range"))
    if (base is None) != (imbalance is None):
        errors.append(("base_inductance", "base_inductance and imbalance must be given together"))

    return errors


def validate_solver(solver):
    errors = []

    if not _positive_int(solver.get("truncation")):
        errors.append(("truncation", "truncation M must be a positive integer"))

    if not isinstance(solver.get("points_per_period"), int) or solver.get("points_per_period") < 20:
        errors.append(("points_per_period", "at least 20 points per period are required"))

    for field in ("settle_beats", "record_beats", "max_beats"):
        value = solver.get(field)
        if not isinstance(value, int) or isinstance(value, bool) or value < (0 if field == "settle_beats" else 1):
            errors.append((field, f"{field} must be a non-negative integer"))

    for field in ("refine_tolerance", "newton_tolerance", "settle_tolerance"):
        if not _positive(solver.get(field)):
            errors.append((field, f"{field} must be positive"))

    if not isinstance(solver.get("linearized"), bool):
        errors.append(("linearized", "linearized must be true or false"))

    if solver.get("flux_model") not in FLUX_MODELS:
        errors.append(("flux_model", f"flux model must be one of {FLUX_MODELS}"))

    threads = solver.get("threads")
    if not isinstance(threads, int) or isinstance(threads, bool) or threads < 0:
        errors.append(("threads", "threads must be a non-negative integer (0 = auto)"))

    return errors


def validate_experiment(experiment):
    errors = []

    if experiment.get("name") not in EXPERIMENTS:
        errors.append(("name", f"unknown experiment: {experiment.get('name')}"))

    if not _positive(experiment.get("target_frequency_hz")):
        errors.append(("target_frequency_hz", "target frequency must be positive"))

    for field in ("target_frequencies_hz", "gradiometric_fluxes", "uniform_fluxes", "powers_dbm",
                  "noise_temperatures_k"):
        if not _number_list(experiment.get(field)):
            errors.append((field, f"{field} must be a non-empty list of numbers"))

    start, stop = experiment.get("f_start_hz"), experiment.get("f_stop_hz")
    if not _positive(start) or not _positive(stop) or not start < stop:
        errors.append(("f_start_hz", "frequency grid needs 0 < f_start_hz < f_stop_hz"))

    for field, minimum in (("f_points", 3), ("phase_points", 2), ("accept_transient_points", 1)):
        value = experiment.get(field)
        if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
            errors.append((field, f"{field} must be an integer ≥ {minimum}"))

    floor = experiment.get("delay_floor")
    if floor is not None and not _positive(floor):
        errors.append(("delay_floor", "delay floor must be positive (s)"))

    weights = experiment.get("cost_weights")
    if not isinstance(weights, dict) or any(not _is_number(w) or w < 0 for w in weights.values()):
        errors.append(("cost_weights", "cost weights must be non-negative numbers"))
    elif not any(weights.values()):
        errors.append(("cost_weights", "cost weights must not all be zero"))

    for field in ("single_direction", "tune", "with_power_handling"):
        if not isinstance(experiment.get(field), bool):
            errors.append((field, f"{field} must be true or false"))

    skip = experiment.get("accept_skip")
    if not isinstance(skip, list) or any(not isinstance(k, int) or not 1 <= k <= 11 for k in skip):
        errors.append(("accept_skip", "accept_skip lists criterion numbers 1-11"))

    return errors


def validate_output(output):
    errors = []

    if not isinstance(output.get("directory"), str) or not output.get("directory"):
        errors.append(("directory", "output directory must be a non-empty string"))

    formats = output.get("formats")
    if not isinstance(formats, list) or not formats or any(f not in OUTPUT_FORMATS for f in formats):
        errors.append(("formats", f"formats must be a non-empty subset of {OUTPUT_FORMATS}"))

    if not isinstance(output.get("plot_stub"), bool):
        errors.append(("plot_stub", "plot_stub must be true or false"))

    return errors


SECTION_VALIDATORS = {
    "device": validate_device,
    "solver": validate_solver,
    "experiment": validate_experiment,
    "output": validate_output,
}


def unknown_keys(raw):
    errors = []
    for section, values in raw.items():
        if section not in CONFIG_SECTIONS:
            errors.append((section, "*", "unknown section"))
            continue
        if not isinstance(values, dict):
            errors.append((section, "*", "section must be an object"))
            continue
        for key in values:
            if key not in CONFIG_SECTIONS[section]:
                errors.append((section, key, "unknown key"))
    return errors


def generate_error_report(raw, merged):
    """Every schema problem of a run config as one table (section, field, issue, value)."""
    error_rows = []

    for section, field, message in unknown_keys(raw):
        value = raw.get(section, {}).get(field, "") if isinstance(raw.get(section), dict) else ""
        error_rows.append({"section": section, "field": field, "issue": message, "value": value})

    for section, validator in SECTION_VALIDATORS.items():
        values = merged.get(section, {})
        for field, message in validator(values):
            value = values.get(field, "")
            if isinstance(value, float) and not math.isfinite(value):
                value = str(value)
            error_rows.append({"section": section, "field": field, "issue": message, "value": value})

    return pd.DataFrame(error_rows, columns=["section", "field", "issue", "value"])
