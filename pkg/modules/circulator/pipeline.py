import copy
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Tuple

import numpy as np
import pandas as pd

from modules.circulator import aux_physics, phasor_model
from modules.circulator.analysis import (
    balanced_reflection,
    db,
    dbm_to_watts,
    photons_per_inverse_bandwidth,
    power_db,
    sideband_suppression,
)
from modules.circulator.config import (
    CONFIG_SECTIONS,
    DEFAULT_STAGES,
    LOSS_PRESETS,
    NOISE_ATTENUATION_SCHEDULE,
    BIAS_FILTER_INDUCTANCE,
)
from modules.circulator.errors import CirculatorError, ConfigError
from modules.circulator.exporter import export_experiment
from modules.circulator.floquet_solver import (
    build_circulator_network,
    build_delay_network,
    delay_network_peak,
    dominant_resonance,
    group_delay,
    mixed_mode_transmission,
    refine_truncation,
    solve,
    sweep,
)
from modules.circulator.model_core import (
    PHI0,
    CircuitParams,
    FluxControl,
    SquidArraySpec,
    circuit_params_from_flux,
    resonant_delay_duration,
    resonant_frequency,
    static_bridge_params,
)
from modules.circulator.transient_solver import (
    REFERENCE_POWER,
    Drive,
    TransientOptions,
    find_compression_point,
    find_expansion_point,
    power_sweep,
    simulate,
    squid_arrays,
)
from modules.circulator.tuneup import OperatingPoint, evaluate, phase_sweep, tune
from modules.circulator.validators import generate_error_report


logger = logging.getLogger(__name__)

ACCEPT_SEED = 2024
ORACLE_POINTS_PER_PERIOD = 400
DELAY_FLOOR_CHECK = 3e-9
DETERMINISM_POINTS = 9


# ---------------------------------------------------
# Configuration
# ---------------------------------------------------
def merge_config(raw):
    merged = {}
    for section, defaults in CONFIG_SECTIONS.items():
        values = raw.get(section, {}) if isinstance(raw.get(section), dict) else {}
        merged[section] = {**copy.deepcopy(defaults), **copy.deepcopy(values)}
    return merged


def load_run_config(path=None, overrides=None):
    """Read, merge and validate a run config; raises ConfigError with every problem found."""
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")

    for section, values in (overrides or {}).items():
        raw.setdefault(section, {})
        if isinstance(raw[section], dict):
            raw[section].update(values)

    merged = merge_config(raw)
    report = generate_error_report(raw, merged)
    if not report.empty:
        for _, row in report.iterrows():
            logger.error("config %s.%s: %s", row["section"], row["field"], row["issue"])
        raise ConfigError(f"{len(report)} config problem(s)", details=report.to_dict("records"))
    return merged


# ---------------------------------------------------
# Device
# ---------------------------------------------------
@dataclass(frozen=True)
class Device:
    spec: SquidArraySpec
    flux: FluxControl
    template: CircuitParams
    params: CircuitParams
    pairing: str


def build_device(device, loss_model=None):
    spec = SquidArraySpec(device["n_squids"], device["junction_critical_current"])
    loss_model = loss_model or device["loss_model"]
    preset = LOSS_PRESETS[loss_model]
    internal_q = device["internal_q"] if device["internal_q"] is not None else preset["internal_q"]
    resistance = (
        device["parasitic_resistance"]
        if device["parasitic_resistance"] is not None
        else preset["parasitic_resistance"]
    )
    if loss_model == "lossless":
        internal_q, resistance = math.inf, 0.0

    omega = 2 * math.pi * device["modulation_frequency_hz"]
    flux = FluxControl(
        device["uniform_flux"] * PHI0,
        device["gradiometric_flux"] * PHI0,
        omega,
        device["phase"],
    )
    template = CircuitParams(
        base_inductance=spec.zero_flux_inductance,
        imbalance_amplitude=0.0,
        capacitance=device["capacitance"],
        line_impedance=device["line_impedance"],
        modulation=omega,
        phase=device["phase"],
        geometric_inductance=0.0 if loss_model == "lossless" else device["geometric_inductance"],
        internal_q=internal_q,
        parasitic_resistance=resistance,
    )
    if device["base_inductance"] is not None:
        params = replace(
            template,
            base_inductance=device["base_inductance"],
            imbalance_amplitude=device["imbalance"],
        )
    else:
        params = circuit_params_from_flux(flux, spec, template)
    return Device(spec, flux, template, params, device["pairing"])


@dataclass
class RunContext:
    config: Dict
    device: Device
    options: TransientOptions
    truncation: int
    threads: int
    refine_tolerance: float
    points: Dict[float, Tuple[OperatingPoint, OperatingPoint]] = field(default_factory=dict)

    @property
    def experiment(self):
        return self.config["experiment"]

    def frequency_grid(self):
        exp = self.experiment
        return 2 * math.pi * np.linspace(exp["f_start_hz"], exp["f_stop_hz"], exp["f_points"])


def make_context(config, loss_model=None):
    solver = config["solver"]
    threads = solver["threads"] or (os.cpu_count() or 1)
    return RunContext(
        config=config,
        device=build_device(config["device"], loss_model),
        options=TransientOptions.from_config(solver),
        truncation=solver["truncation"],
        threads=threads,
        refine_tolerance=solver["refine_tolerance"],
    )


def attach_power_handling(ctx, point):
    net = build_circulator_network(point.params, ctx.device.pairing)
    arrays = squid_arrays(net, ctx.device.spec, ctx.options.flux_model, point.flux)
    compression = find_compression_point(net, point, ctx.options, arrays)
    expansion = find_expansion_point(net, point, ctx.options, arrays)
    point.metrics.compression_1dB = compression.power
    point.metrics.expansion_20dB = expansion.power
    if compression.lower_bound or expansion.lower_bound:
        point.flags.append("power-handling lower bound")


def operating_points(ctx, target_hz=None, delay_floor=None):
    """(cw, ccw) operating points at the target, tuned or taken from the device section."""
    exp = ctx.experiment
    target = 2 * math.pi * (target_hz or exp["target_frequency_hz"])
    floor = delay_floor if delay_floor is not None else exp["delay_floor"]
    key = (target, floor)
    if key in ctx.points:
        return ctx.points[key]

    device = ctx.device
    if exp["tune"]:
        cw, ccw = tune(
            target,
            device.template,
            device.spec,
            weights=exp["cost_weights"],
            delay_floor=floor,
            single_direction=exp["single_direction"],
            initial_gradiometric=device.flux.gradiometric_amplitude or 0.06 * PHI0,
            truncation=ctx.truncation,
            threads=ctx.threads,
            pairing=device.pairing,
        )
    else:
        found = {}
        for direction, phase in (("ccw", device.params.phase), ("cw", 2 * math.pi - device.params.phase)):
            params = device.params.with_phase(phase % (2 * math.pi))
            metrics = evaluate(params, target, ctx.truncation, ctx.threads, device.pairing)[direction]
            found[direction] = OperatingPoint(
                device.flux.with_phase(params.phase), params.modulation, params.phase,
                direction, metrics, params, ["untuned"],
            )
        cw, ccw = found["cw"], found["ccw"]

    if exp["with_power_handling"]:
        for point in (cw, ccw):
            attach_power_handling(ctx, point)

    ctx.points[key] = (cw, ccw)
    return cw, ccw


# ---------------------------------------------------
# Experiments
# ---------------------------------------------------
def run_phasor_demo(ctx):
    omega = ctx.device.params.modulation
    arm_a, arm_b = phasor_model.canonical_gyrator(omega)
    table = phasor_model.propagation_table(arm_a, arm_b, omega)
    matrix = phasor_model.gyrator_matrix(arm_a, arm_b, omega)
    s21, s12 = complex(matrix[1, 0]), complex(matrix[0, 1])
    passed = abs(s21 + 1) < 1e-12 and abs(s12 - 1) < 1e-12
    return table, {"S21": s21, "S12": s12, "passed": passed}


def run_sweep_sparams(ctx):
    cw, ccw = operating_points(ctx)
    omegas = ctx.frequency_grid()
    frame = pd.DataFrame({"f_Hz": omegas / (2 * math.pi)})
    for suffix, point in (("ccw", ccw), ("cw", cw)):
        result = sweep(point.params, omegas, ctx.truncation, ctx.threads, ctx.device.pairing,
                       ctx.refine_tolerance)
        for name, (mu, nu) in (("S21", (1, 0)), ("S12", (0, 1)), ("S11", (0, 0)), ("S22", (1, 1))):
            frame[f"{name}_dB_{suffix}"] = [db(v) for v in result.carrier(mu, nu)]
        frame[f"truncation_drift_{suffix}"] = result.drifts
        frame[f"error_{suffix}"] = result.errors
    return frame, {"operating_points": [cw.to_dict(), ccw.to_dict()]}


def run_delay_map(ctx):
    exp, device = ctx.experiment, ctx.device
    rows, arches = [], []
    for uniform in exp["uniform_fluxes"]:
        for gradiometric in exp["gradiometric_fluxes"]:
            if gradiometric == 0:
                logger.info("skipping Φg=0 at Φu=%.3f Φ0: resonator decoupled", uniform)
                continue
            l0, delta = static_bridge_params(uniform * PHI0, gradiometric * PHI0, device.spec)
            p = replace(device.template, base_inductance=l0, imbalance_amplitude=delta)
            net = build_delay_network(p)
            pole = dominant_resonance(net)
            omegas = np.linspace(pole.real + 6 * pole.imag, pole.real - 6 * pole.imag, exp["f_points"])
            result = sweep(net, omegas, 0, ctx.threads)
            tau = group_delay(mixed_mode_transmission(result.carriers()), omegas)
            f_eq4 = resonant_frequency(p) / (2 * math.pi)
            for w, t in zip(omegas, tau):
                rows.append({
                    "uniform_flux": uniform,
                    "gradiometric_flux": gradiometric,
                    "f_Hz": w / (2 * math.pi),
                    "group_delay_ns": t * 1e9,
                    "f_eq4_Hz": f_eq4,
                })
            peak = int(np.argmax(tau))
            arches.append({
                "uniform_flux": uniform,
                "gradiometric_flux": gradiometric,
                "peak_f_Hz": omegas[peak] / (2 * math.pi),
                "peak_delay_ns": tau[peak] * 1e9,
                "eq5_delay_ns": resonant_delay_duration(p) * 1e9,
            })
    return pd.DataFrame(rows), {"arches": arches}


def run_phase_map(ctx):
    exp = ctx.experiment
    _, ccw = operating_points(ctx)
    phases = np.linspace(0.0, 2 * math.pi, exp["phase_points"], endpoint=False)
    phase_map = phase_sweep(ccw.params, ctx.frequency_grid(), phases, ctx.truncation, ctx.threads,
                            ctx.device.pairing)
    return phase_map.to_frame(), {"regions": phase_map.low_cost_regions(), "errors": phase_map.errors}


def run_amp_map(ctx):
    exp, device = ctx.experiment, ctx.device
    _, ccw = operating_points(ctx)
    omegas = ctx.frequency_grid()
    rows = []
    for gradiometric in exp["gradiometric_fluxes"]:
        flux = replace(ccw.flux, gradiometric_amplitude=gradiometric * PHI0)
        p = circuit_params_from_flux(flux, device.spec, device.template)
        result = sweep(p, omegas, ctx.truncation, ctx.threads, device.pairing, ctx.refine_tolerance)
        differential = mixed_mode_transmission(result.carriers())
        for k, w in enumerate(omegas):
            rows.append({
                "gradiometric_flux": gradiometric,
                "f_Hz": w / (2 * math.pi),
                "S21_dB": db(result.carrier(1, 0)[k]),
                "S12_dB": db(result.carrier(0, 1)[k]),
                "S11_dB": db(result.carrier(0, 0)[k]),
                "Sdd21_dB": db(differential[k]),
                "truncation_drift": result.drifts[k],
                "error": result.errors[k],
            })
    return pd.DataFrame(rows), {"phase_rad": ccw.phase, "uniform_flux_phi0": ccw.flux.uniform_flux / PHI0}


def _point_rows(points, target_hz=None):
    rows = []
    for point in points:
        row = {"target_frequency_Hz": target_hz} if target_hz is not None else {}
        row.update({k: v for k, v in point.to_dict().items() if k not in ("metrics", "flags")})
        row.update(point.metrics.to_dict())
        row["flags"] = ";".join(point.flags)
        rows.append(row)
    return rows


def run_tuneup(ctx):
    cw, ccw = operating_points(ctx)
    return pd.DataFrame(_point_rows([cw, ccw])), {"operating_points": [cw.to_dict(), ccw.to_dict()]}


def run_spectrum(ctx):
    _, ccw = operating_points(ctx)
    net = build_circulator_network(ccw.params, ctx.device.pairing)
    s = solve(net, ccw.probe_frequency, ctx.truncation)
    rows = [
        {
            "m": int(m),
            "f_Hz": s.frequency(int(m)) / (2 * math.pi),
            "power_dB": power_db(abs(s.element(int(m), ccw.through_port, ccw.drive_port)) ** 2),
        }
        for m in s.orders()
    ]
    report = {
        "sideband_suppression_dB": sideband_suppression(s, ccw.through_port, ccw.drive_port),
        "even_sideband_suppression_dB": sideband_suppression(s, ccw.through_port, ccw.drive_port, even_only=True),
    }
    return pd.DataFrame(rows), report


def run_power_sweep(ctx):
    _, ccw = operating_points(ctx)
    net = build_circulator_network(ccw.params, ctx.device.pairing)
    arrays = squid_arrays(net, ctx.device.spec, ctx.options.flux_model, ccw.flux)
    powers = [dbm_to_watts(p) for p in ctx.experiment["powers_dbm"]]
    frame = power_sweep(net, ccw, powers, ctx.options, arrays, ctx.threads)
    report = {"compression_1dB_W": ccw.metrics.compression_1dB, "expansion_20dB_W": ccw.metrics.expansion_20dB}
    return frame, report


def run_metadata(ctx):
    rows = []
    for target_hz in ctx.experiment["target_frequencies_hz"]:
        cw, ccw = operating_points(ctx, target_hz)
        rows.extend(_point_rows([cw, ccw], target_hz))
    return pd.DataFrame(rows), {"targets_hz": ctx.experiment["target_frequencies_hz"]}


def run_noise_budget(ctx):
    exp, device = ctx.experiment, ctx.device
    _, ccw = operating_points(ctx)
    budget = aux_physics.power_budget(aux_physics.stages_from_config())
    bias_current = float(budget["bias_current_A"].dropna().iloc[-1])
    p_1db = ccw.metrics.compression_1dB if ccw.metrics.compression_1dB not in (None, math.inf) else 1e-12
    i_1db = aux_physics.i_1db_from_power(p_1db, device.template.line_impedance)

    ds_dig, ds_dphi = aux_physics.transmission_derivatives(
        ccw.flux, device.spec, bias_current, ccw.probe_frequency, device.template,
        ctx.truncation, (ccw.through_port, ccw.drive_port), device.pairing,
    )
    rows = []
    for temperature in exp["noise_temperatures_k"]:
        photons, fraction = aux_physics.added_noise_photons(
            ds_dig, ds_dphi, bias_current, i_1db, temperature,
            device.template.line_impedance, ccw.probe_frequency,
        )
        rows.append({
            "temperature_K": temperature,
            "johnson_noise_A2_per_Hz": aux_physics.johnson_noise_current(temperature, device.template.line_impedance),
            "photons": photons,
            "amplitude_noise_fraction": fraction,
        })
    effective = aux_physics.attenuated_noise_temperature(NOISE_ATTENUATION_SCHEDULE[0][0], NOISE_ATTENUATION_SCHEDULE)
    report = {
        "bias_current_A": bias_current,
        "i_1dB_A": i_1db,
        "effective_temperature_K": effective,
        "bias_filter_ohm_at_modulation": aux_physics.bias_filter_impedance(
            BIAS_FILTER_INDUCTANCE, device.template.modulation / (2 * math.pi)
        ),
    }
    return pd.DataFrame(rows), report


def run_power_budget(ctx):
    frame = aux_physics.power_budget(aux_physics.stages_from_config(DEFAULT_STAGES))
    total = float(frame["heat_load_W"].iloc[-1])
    return frame, {"total_heat_load_W": total, "passed": not bool(frame["exceeds_cooling_power"].iloc[-1])}


# ---------------------------------------------------
# Acceptance suite
# ---------------------------------------------------
def _row(criterion, description, value, threshold, passed):
    return {
        "criterion": criterion,
        "description": description,
        "value": float(value),
        "threshold": float(threshold),
        "passed": bool(passed),
    }


def check_gyrator(ctx):
    omega = ctx.device.params.modulation
    arm_a, arm_b = phasor_model.canonical_gyrator(omega)
    probe = phasor_model.SpectralSignal.tone(0.0)
    forward = phasor_model.propagate_two_arm_network(arm_a, arm_b, probe, "forward", omega)
    backward = phasor_model.propagate_two_arm_network(arm_a, arm_b, probe, "backward", omega)
    error = max(
        abs(forward.amplitude(0) + 1),
        abs(backward.amplitude(0) - 1),
        *(abs(forward.amplitude(m)) for m in (-2, 2)),
        *(abs(backward.amplitude(m)) for m in (-2, 2)),
    )
    return _row(1, "ideal gyrator S21=-1, S12=+1, no m=±2 sidebands", error, 1e-12, error < 1e-12)


def check_phase_law(ctx):
    cases = [
        ((math.pi / 2, math.pi / 2), (1.0, 0.0)),
        ((math.pi / 2, 3 * math.pi / 2), (0.0, 1.0)),
        ((math.pi / 2, 0.0), (0.5, 0.5)),
    ]
    error = max(
        max(abs(a - b) for a, b in zip(phasor_model.generalized_transmission(*args), expected))
        for args, expected in cases
    )
    return _row(2, "generalized phase law at three reference points", error, 1e-12, error < 1e-12)


def check_balanced_bridge(ctx):
    z0 = ctx.device.template.line_impedance
    p = CircuitParams(1e-9, 0.0, ctx.device.template.capacitance, z0, ctx.device.template.modulation)
    net = build_circulator_network(p)
    error = 0.0
    for omega in 2 * math.pi * np.linspace(1e9, 10e9, 50):
        expected = balanced_reflection(omega, p.l0, z0)
        got = solve(net, omega, 0).carrier[0, 0]
        error = max(error, abs(got - expected) / abs(expected))
    return _row(3, "balanced bridge reflection vs closed form, 50 frequencies", error, 1e-9, error < 1e-9)


def check_resonance_and_delay(ctx):
    template = ctx.device.template
    resonance_error, ratios = 0.0, []
    for delta in (0.1, 0.2, 0.3):
        p = CircuitParams(1e-9, delta, 1e-12, template.line_impedance, template.modulation)
        pole = dominant_resonance(build_delay_network(p, delta / math.sqrt(2)))
        resonance_error = max(resonance_error, abs(pole.real / resonant_frequency(p) - 1))
        ratios.append(delay_network_peak(p, delta)[1] / resonant_delay_duration(p))
    delay_ok = all(0.5 <= r <= 2.0 for r in ratios)
    description = (
        "static resonance vs closed form; peak delay ratio "
        + ", ".join(f"{r:.3f}" for r in ratios)
    )
    return _row(4, description, resonance_error, 5e-3, resonance_error < 5e-3 and delay_ok)


def check_oracle(ctx):
    rng = np.random.default_rng(ACCEPT_SEED)
    omega = ctx.device.template.modulation
    options = replace(ctx.options, points_per_period=ORACLE_POINTS_PER_PERIOD, linearized=False,
                      flux_model="harmonic")
    worst = 0.0
    for _ in range(ctx.experiment["accept_transient_points"]):
        delta = float(rng.uniform(0.15, 0.2))
        multiple = int(rng.integers(32, 45))
        phase = float(rng.uniform(0.0, 2 * math.pi))
        p = CircuitParams(2.5e-9, delta, 1e-12, ctx.device.template.line_impedance, omega, phase)
        net = build_circulator_network(p)
        probe = multiple * omega
        harmonic = solve(net, probe, ctx.truncation)
        transient = simulate(net, Drive(0, probe, REFERENCE_POWER), options, spec=ctx.device.spec)
        scale = np.linalg.norm(harmonic.carrier[:, 0])
        for m in transient.harmonics:
            for mu in range(net.n_ports):
                worst = max(worst, abs(transient.scattering(m, mu) - harmonic.element(m, mu, 0)) / scale)
    return _row(5, "transient small-signal projections vs harmonic balance", worst, 0.01, worst < 0.01)


def check_circulation(ctx):
    cw, ccw = operating_points(ctx, delay_floor=None)
    net = build_circulator_network(ccw.params, ctx.device.pairing)
    s, drift = refine_truncation(net, ccw.probe_frequency, max(ctx.truncation, 2), ctx.refine_tolerance)
    suppression = sideband_suppression(s, ccw.through_port, ccw.drive_port, even_only=True)
    metrics = ccw.metrics
    passed = (
        metrics.insertion_loss < 1.0
        and metrics.isolation_bandwidth_20dB >= 10e6
        and suppression > 40.0
        and drift <= ctx.refine_tolerance
    )
    description = (
        f"tuned ccw: IL {metrics.insertion_loss:.3f} dB, 20 dB band "
        f"{metrics.isolation_bandwidth_20dB / 1e6:.2f} MHz, even sidebands {suppression:.1f} dB, "
        f"truncation drift {drift:.2g}"
    )
    return _row(6, description, metrics.insertion_loss, 1.0, passed)


def check_reconfiguration(ctx):
    _, ccw = operating_points(ctx, delay_floor=None)
    target = ccw.probe_frequency
    omegas = np.linspace(target - 0.5 * ccw.modulation, target + 0.5 * ccw.modulation, 21)
    worst = 0.0
    for phase in (math.pi / 3, math.pi / 2, 2 * math.pi / 3):
        plus = sweep(ccw.params.with_phase(phase), omegas, ctx.truncation, ctx.threads, ctx.device.pairing,
                     ctx.refine_tolerance)
        minus = sweep(ccw.params.with_phase(-phase % (2 * math.pi)), omegas, ctx.truncation, ctx.threads,
                      ctx.device.pairing, ctx.refine_tolerance)
        worst = max(
            worst,
            float(np.max(np.abs(np.abs(plus.carrier(1, 0)) - np.abs(minus.carrier(0, 1))))),
            float(np.max(np.abs(np.abs(plus.carrier(0, 1)) - np.abs(minus.carrier(1, 0))))),
        )
    return _row(7, "φ → -φ exchanges |S21| and |S12|", worst, 1e-6, worst < 1e-6)


def check_tune_phases(ctx):
    cw, ccw = operating_points(ctx, delay_floor=None)
    deviation = max(abs(ccw.phase - math.pi / 2), abs(cw.phase - 3 * math.pi / 2))
    limited = operating_points(ctx, delay_floor=DELAY_FLOOR_CHECK)
    in_band = all(
        0.6 * math.pi <= point.phase <= 0.8 * math.pi or 1.2 * math.pi <= point.phase <= 1.4 * math.pi
        for point in limited
    )
    description = (
        f"free phases ({ccw.phase:.4f}, {cw.phase:.4f}) rad; 3 ns floor phases "
        f"({limited[1].phase / math.pi:.3f}π, {limited[0].phase / math.pi:.3f}π)"
    )
    return _row(8, description, deviation, 0.05, deviation < 0.05 and in_band)


def check_power_handling(ctx):
    _, ccw = operating_points(ctx, delay_floor=None)
    net = build_circulator_network(ccw.params, ctx.device.pairing)
    arrays = squid_arrays(net, ctx.device.spec, "harmonic")
    options = replace(ctx.options, linearized=False, flux_model="harmonic")
    compression = find_compression_point(net, ccw, options, arrays)
    expansion = find_expansion_point(net, ccw, options, arrays)
    photons = photons_per_inverse_bandwidth(1e-12, 2 * math.pi * 4.044e9, 50e6)
    passed = (
        1e-13 <= compression.power <= 1e-11
        and 1e-13 <= expansion.power <= 1e-11
        and photons > 1e3
    )
    description = (
        f"1 dB compression {compression.power:.3g} W, 20 dB expansion {expansion.power:.3g} W, "
        f"{photons:.4g} photons per inverse bandwidth"
    )
    return _row(9, description, compression.power, 1e-11, passed)


def check_appendix_formulas(ctx):
    checks = []
    checks.append(round(aux_physics.bias_filter_impedance(20e-9, 120e6), 1) == 15.1)
    checks.append(aux_physics.bias_filter_impedance(20e-9, 4e9) > 500)
    xi_c, xi_d = aux_physics.coherence_lengths(aux_physics.NormalMetalFilm.default())
    checks.append(abs(xi_c - 5.7e-6) < 0.05e-6)
    checks.append(abs(xi_d - 1.06e-6) < 0.01e-6)
    heat = aux_physics.power_budget(aux_physics.stages_from_config(DEFAULT_STAGES))["heat_load_W"].iloc[:3]
    checks.append(all(
        float(f"{got:.3g}") == expected for got, expected in zip(heat, (5e-1, 5e-5, 1e-10))
    ))
    hot = aux_physics.added_noise_photons(1.0, 1.0, 1e-4, 1e-7, 300.0, 50.0, 2 * math.pi * 4e9)[0]
    cold = aux_physics.added_noise_photons(1.0, 1.0, 1e-4, 1e-7, 7.0, 50.0, 2 * math.pi * 4e9)[0]
    ratio_error = abs(cold / hot - 7 / 300)
    checks.append(ratio_error < 1e-12)
    failed = len(checks) - sum(checks)
    return _row(10, "bias filter, coherence lengths, power budget, noise ratio", failed, 0, failed == 0)


CHEAP_CHECKS = [check_gyrator, check_phase_law, check_balanced_bridge, check_resonance_and_delay,
                check_appendix_formulas]


def _write_accept_artifacts(ctx, directory, threads):
    output = {"directory": str(directory), "formats": ["csv", "json"], "plot_stub": True}
    frame = pd.DataFrame([check(ctx) for check in CHEAP_CHECKS])
    paths = export_experiment("accept", frame, {"passed": bool(frame["passed"].all())}, ctx.config, output)

    p = ctx.device.params
    target = 2 * math.pi * ctx.experiment["target_frequency_hz"]
    omegas = np.linspace(target - 0.5 * p.modulation, target + 0.5 * p.modulation, DETERMINISM_POINTS)
    result = sweep(p, omegas, ctx.truncation, threads, ctx.device.pairing)
    paths += export_experiment("accept-sweep", result.to_frame(), {"ok": result.ok()}, ctx.config, output)
    return {path.name: path.read_bytes() for path in paths}


def check_determinism(ctx):
    """Write the artifacts twice, serial then threaded, and compare them byte for byte."""
    with tempfile.TemporaryDirectory() as scratch:
        first = _write_accept_artifacts(ctx, Path(scratch) / "first", 1)
        second = _write_accept_artifacts(ctx, Path(scratch) / "second", max(ctx.threads, 2))
    differing = sorted(name for name in first.keys() | second.keys() if first.get(name) != second.get(name))
    description = "repeated runs write byte-identical artifacts"
    if differing:
        description += f"; differing: {', '.join(differing)}"
    return _row(11, description, len(differing), 0, not differing)


ACCEPT_CHECKS: Dict[int, Callable] = {
    1: check_gyrator,
    2: check_phase_law,
    3: check_balanced_bridge,
    4: check_resonance_and_delay,
    5: check_oracle,
    6: check_circulation,
    7: check_reconfiguration,
    8: check_tune_phases,
    9: check_power_handling,
    10: check_appendix_formulas,
    11: check_determinism,
}


def run_accept(ctx):
    """Idealized-device acceptance criteria; failing rows do not abort the suite."""
    skip = set(ctx.experiment["accept_skip"])
    config = copy.deepcopy(ctx.config)
    config["experiment"].update(tune=True, with_power_handling=False, delay_floor=None)
    ideal = make_context(config, loss_model="lossless")

    rows = []
    for number, check in ACCEPT_CHECKS.items():
        if number in skip:
            rows.append({"criterion": number, "description": "skipped", "value": math.nan,
                         "threshold": math.nan, "passed": True})
            continue
        try:
            rows.append(check(ideal))
        except CirculatorError as exc:
            logger.error("criterion %d raised: %s", number, exc)
            rows.append({"criterion": number, "description": f"error: {exc}", "value": math.nan,
                         "threshold": math.nan, "passed": False})
        logger.info("criterion %d: %s", number, "passed" if rows[-1]["passed"] else "FAILED")

    frame = pd.DataFrame(rows)
    failed = [int(r["criterion"]) for r in rows if not r["passed"]]
    return frame, {"passed": not failed, "failed_criteria": failed}


EXPERIMENT_RUNNERS: Dict[str, Callable] = {
    "phasor-demo": run_phasor_demo,
    "sweep-sparams": run_sweep_sparams,
    "delay-map": run_delay_map,
    "phase-map": run_phase_map,
    "amp-map": run_amp_map,
    "tuneup": run_tuneup,
    "spectrum": run_spectrum,
    "power-sweep": run_power_sweep,
    "metadata": run_metadata,
    "noise-budget": run_noise_budget,
    "power-budget": run_power_budget,
    "accept": run_accept,
}


# ---------------------------------------------------
# MAIN PIPELINE CONTROLLER
# ---------------------------------------------------
def run_experiment(config):
    """
    Main orchestration function.

    Returns:
        result frame,
        report dict,
        written paths
    """
    name = config["experiment"]["name"]

    # 1. Device and solver context
    ctx = make_context(config)
    logger.info(
        "experiment %s: l0=%.4g H, δ0=%.4f, Ω/2π=%.4g Hz",
        name, ctx.device.params.l0, ctx.device.params.delta0, ctx.device.params.modulation / (2 * math.pi),
    )

    # 2. Run
    frame, report = EXPERIMENT_RUNNERS[name](ctx)

    # 3. Operating points touched on the way
    if ctx.points and "operating_points" not in report:
        report["operating_points"] = [
            point.to_dict() for pair in ctx.points.values() for point in pair
        ]

    # 4. Export
    paths = export_experiment(name, frame, report, config, config["output"])
    return frame, report, paths
