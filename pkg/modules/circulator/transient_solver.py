import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.optimize import brentq

from modules.circulator.analysis import db, watts_to_dbm
from modules.circulator.config import (
    DEFAULT_SOLVER,
    FLUX_MODELS,
    ISOLATION_THRESHOLD_DB,
    MAX_COMMENSURATE_DENOMINATOR,
    TRANSIENT_HARMONICS,
)
from modules.circulator.errors import ParameterError, TransientError
from modules.circulator.floquet_solver import GROUND, NetworkDescription, nodal_matrices
from modules.circulator.model_core import PHI0_REDUCED, FluxControl, SquidArraySpec

if TYPE_CHECKING:
    from modules.circulator.tuneup import OperatingPoint


logger = logging.getLogger(__name__)

MAX_NEWTON_ITERATIONS = 50
FACTOR_CACHE_BYTES = 256 * 2 ** 20
REFERENCE_POWER = 1e-18
COMPRESSION_DB = 1.0


# ---------------------------------------------------
# Types
# ---------------------------------------------------
@dataclass(frozen=True)
class TransientOptions:
    points_per_period: int = DEFAULT_SOLVER["points_per_period"]
    settle_beats: int = DEFAULT_SOLVER["settle_beats"]
    record_beats: int = DEFAULT_SOLVER["record_beats"]
    max_beats: int = DEFAULT_SOLVER["max_beats"]
    newton_tolerance: float = DEFAULT_SOLVER["newton_tolerance"]
    settle_tolerance: float = DEFAULT_SOLVER["settle_tolerance"]
    linearized: bool = DEFAULT_SOLVER["linearized"]
    flux_model: str = DEFAULT_SOLVER["flux_model"]

    def __post_init__(self):
        if self.points_per_period < 20:
            raise ParameterError("step size must resolve each harmonic by at least 20 points per period")
        if self.record_beats < 1 or self.max_beats < 1:
            raise ParameterError("record and maximum beat counts must be positive")
        if self.flux_model not in FLUX_MODELS:
            raise ParameterError(f"unknown flux model: {self.flux_model}")

    @classmethod
    def from_config(cls, solver: Dict) -> "TransientOptions":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in solver.items() if k in names})


@dataclass(frozen=True)
class Drive:
    port: int
    probe_frequency: float
    power: float

    @property
    def amplitude(self) -> float:
        return math.sqrt(2 * self.power)


@dataclass(frozen=True)
class NonlinearSquidArray:
    """N series SQUIDs carrying one collective phase ψ/(Nφ0).

    The critical current comes from the instantaneous flux when given
    (2I0|cos(Φ/2φ0)| per SQUID) and otherwise from an inverse-inductance
    law, I_c = Nφ0/l(t), which keeps the small-signal limit of a linear
    branch.
    """

    n_squids: int
    junction_critical_current: float
    inverse_inductance: Optional[Callable[[float], float]] = None
    instantaneous_flux: Optional[Callable[[float], float]] = None

    @property
    def phase_scale(self) -> float:
        return self.n_squids * PHI0_REDUCED

    def critical_current(self, t: float) -> float:
        if self.instantaneous_flux is not None:
            flux = self.instantaneous_flux(t)
            return 2 * self.junction_critical_current * abs(math.cos(flux / (2 * PHI0_REDUCED)))
        if self.inverse_inductance is not None:
            return self.phase_scale * self.inverse_inductance(t)
        return 2 * self.junction_critical_current

    def linear_inductance(self, t: float) -> float:
        return self.phase_scale / self.critical_current(t)

    def current(self, flux: float, t: float, linearized: bool = False) -> float:
        u = flux / self.phase_scale
        return self.critical_current(t) * (u if linearized else math.sin(u))


@dataclass
class TransientResult:
    times: np.ndarray
    port_voltages: np.ndarray
    incident: np.ndarray
    outgoing: np.ndarray
    harmonics: Dict[int, np.ndarray]
    drive: Drive
    probe_frequency: float
    modulation_frequency: float
    commensuration: Tuple[int, int]
    beats: int
    overdriven: bool
    energy: Dict[str, float] = field(default_factory=dict)

    def scattering(self, m: int, out_port: int) -> complex:
        if m not in self.harmonics:
            return 0j
        return complex(self.harmonics[m][out_port] / self.drive.amplitude)

    def transmission_db(self, out_port: int) -> float:
        return db(self.scattering(0, out_port))


@dataclass(frozen=True)
class PowerPoint:
    power: float
    power_dbm: float
    kind: str
    lower_bound: bool = False


# ---------------------------------------------------
# Set-up helpers
# ---------------------------------------------------
def commensurate_probe(probe_frequency: float, modulation_frequency: float,
                       max_denominator: int = MAX_COMMENSURATE_DENOMINATOR) -> Tuple[float, Tuple[int, int]]:
    """Snap ω_p to the nearest rational multiple p/q of Ω."""
    if probe_frequency <= 0 or modulation_frequency <= 0:
        raise ParameterError("probe and modulation frequencies must be positive")
    ratio = Fraction(probe_frequency / modulation_frequency).limit_denominator(max_denominator)
    if ratio <= 0:
        raise ParameterError("probe frequency too low to snap onto the modulation grid")
    snapped = modulation_frequency * ratio.numerator / ratio.denominator
    if abs(snapped - probe_frequency) > 1e-9 * probe_frequency:
        logger.info(
            "probe snapped %.9g → %.9g Hz (%d/%d of Ω)",
            probe_frequency / (2 * math.pi), snapped / (2 * math.pi),
            ratio.numerator, ratio.denominator,
        )
    return snapped, (ratio.numerator, ratio.denominator)


def _harmonic_law(branch, modulation_frequency):
    base = 1.0 / branch.value
    mod = branch.modulation
    if mod is None or mod.depth == 0:
        return lambda t: base
    return lambda t: base * (1 + mod.sign * mod.depth * math.cos(modulation_frequency * t + mod.phase))


def _flux_law(branch, flux: FluxControl):
    mod = branch.modulation
    if mod is None or mod.depth == 0:
        return lambda t: flux.uniform_flux
    return lambda t: flux.uniform_flux + mod.sign * flux.gradiometric_amplitude * math.cos(
        flux.drive_frequency * t + mod.phase
    )


def squid_arrays(net: NetworkDescription, spec: Optional[SquidArraySpec] = None,
                 flux_model: str = "harmonic",
                 flux: Optional[FluxControl] = None) -> Dict[int, NonlinearSquidArray]:
    """One nonlinear array per modulated-inductor branch, keyed by branch index."""
    spec = spec or SquidArraySpec()
    if flux_model == "full" and flux is None:
        raise ParameterError("the full flux model needs a FluxControl")

    arrays = {}
    for k, branch in enumerate(net.branches):
        if branch.kind != "modulated_inductor":
            continue
        if flux_model == "full":
            arrays[k] = NonlinearSquidArray(
                spec.n_squids, spec.junction_critical_current, instantaneous_flux=_flux_law(branch, flux)
            )
        else:
            arrays[k] = NonlinearSquidArray(
                spec.n_squids, spec.junction_critical_current,
                inverse_inductance=_harmonic_law(branch, net.modulation_frequency),
            )
    return arrays


def _linear_matrices(net: NetworkDescription, arrays: Dict[int, NonlinearSquidArray]):
    n = net.n_nodes
    gamma = np.zeros((n, n))
    internal = np.zeros((n, n))

    def stamp(matrix, a, b, value):
        if a != GROUND:
            matrix[a, a] += value
        if b != GROUND:
            matrix[b, b] += value
        if a != GROUND and b != GROUND:
            matrix[a, b] -= value
            matrix[b, a] -= value

    incidence = np.zeros((n, len(arrays)))
    for column, k in enumerate(sorted(arrays)):
        a, b = net.branches[k].nodes
        if a != GROUND:
            incidence[a, column] = 1.0
        if b != GROUND:
            incidence[b, column] = -1.0

    for k, branch in enumerate(net.branches):
        if k in arrays:
            continue
        a, b = branch.nodes
        if branch.kind in ("modulated_inductor", "series_inductor"):
            if branch.modulation is not None and branch.modulation.depth != 0:
                raise ParameterError("modulated branches need a nonlinear array in the transient model")
            stamp(gamma, a, b, 1.0 / branch.value)
        elif branch.kind == "resistor":
            stamp(internal, a, b, 1.0 / branch.value)
    return gamma, internal, incidence


# ---------------------------------------------------
# Integration
# ---------------------------------------------------
def simulate(
    net: NetworkDescription,
    drive: Drive,
    options: Optional[TransientOptions] = None,
    arrays: Optional[Dict[int, NonlinearSquidArray]] = None,
    spec: Optional[SquidArraySpec] = None,
    flux: Optional[FluxControl] = None,
) -> TransientResult:
    """Integrate the network under a single-tone drive until periodic, then project.

    Trapezoidal companion model on node fluxes with exact KCL at each step;
    array branches are solved by Newton iteration (or directly in the
    linearized mode).
    """
    options = options or TransientOptions()
    if not 0 <= drive.port < net.n_ports:
        raise ParameterError(f"drive port out of range: {drive.port}")
    if drive.power <= 0:
        raise ParameterError(f"drive power must be positive: {drive.power}")
    arrays = arrays if arrays is not None else squid_arrays(net, spec, options.flux_model, flux)

    # beat period and step grid
    omega_mod = net.modulation_frequency
    if omega_mod > 0:
        probe, (p_num, q_den) = commensurate_probe(drive.probe_frequency, omega_mod)
        period = 2 * math.pi * q_den / omega_mod
        orders = [m for m in range(-TRANSIENT_HARMONICS, TRANSIENT_HARMONICS + 1)
                  if probe + m * omega_mod > 0]
        cycles = p_num + TRANSIENT_HARMONICS * q_den
    else:
        probe, (p_num, q_den) = drive.probe_frequency, (1, 1)
        period = 2 * math.pi / probe
        orders = [0]
        cycles = 1
    steps = int(math.ceil(options.points_per_period * cycles / q_den)) * q_den
    steps_per_modulation = steps // q_den
    h = period / steps
    omegas = np.array([probe + m * omega_mod for m in orders])

    # matrices
    mats = nodal_matrices(net)
    gamma_lin, g_internal, incidence = _linear_matrices(net, arrays)
    cap, cond = mats.capacitance, mats.conductance
    base = (4 / h ** 2) * cap + (2 / h) * cond + gamma_lin
    bank = [arrays[k] for k in sorted(arrays)]
    scale = np.array([a.phase_scale for a in bank])
    table = np.array([[a.critical_current(k * h) for a in bank] for k in range(steps_per_modulation)])
    table = table.reshape(steps_per_modulation, len(bank))
    table_rate = (np.roll(table, -1, axis=0) - np.roll(table, 1, axis=0)) / (2 * h)
    if steps_per_modulation == 1:
        table_rate = np.zeros_like(table)

    z0 = mats.port_impedance
    sqrt_z0 = np.sqrt(z0)
    injection = mats.port_incidence.T[:, drive.port] * (2.0 / sqrt_z0[drive.port])
    amplitude = drive.amplitude

    factor_cache = {}
    cache_ok = options.linearized and steps_per_modulation * base.size * 16 <= FACTOR_CACHE_BYTES

    def solve_linearized(k, rhs):
        if cache_ok and k in factor_cache:
            return scipy.linalg.lu_solve(factor_cache[k], rhs)
        jac = base + (incidence * (table[k] / scale)) @ incidence.T
        factors = scipy.linalg.lu_factor(jac)
        if cache_ok:
            factor_cache[k] = factors
        return scipy.linalg.lu_solve(factors, rhs)

    def solve_newton(k, rhs, guess):
        ic = table[k]
        psi = guess.copy()
        for _ in range(MAX_NEWTON_ITERATIONS):
            u = incidence.T @ psi / scale
            residual = base @ psi + incidence @ (ic * np.sin(u)) - rhs
            jac = base + (incidence * (ic * np.cos(u) / scale)) @ incidence.T
            step = np.linalg.solve(jac, -residual)
            psi = psi + step
            if np.linalg.norm(step) <= options.newton_tolerance * np.linalg.norm(psi):
                return psi
        raise TransientError(f"Newton iteration did not converge at step {k}")

    n = net.n_nodes
    psi = np.zeros(n)
    vel = np.zeros(n)
    acc = np.zeros(n)
    n_ports = net.n_ports

    previous = None
    settled_at = None
    overdriven = False
    beat = 0
    recorded = {"projections": [], "times": [], "voltages": [], "incident": [], "outgoing": []}
    energy = {"incident": 0.0, "outgoing": 0.0, "dissipated": 0.0, "drive_work": 0.0}

    while True:
        recording = settled_at is not None
        projection = np.zeros((len(orders), n_ports), dtype=complex)
        if recording:
            beat_times = np.zeros(steps)
            beat_voltages = np.zeros((steps, n_ports))
            beat_incident = np.zeros((steps, n_ports))
            beat_outgoing = np.zeros((steps, n_ports))

        for j in range(steps):
            index = beat * steps + j + 1
            t = index * h
            envelope = 1.0 if t >= period else 0.5 * (1 - math.cos(math.pi * t / period))
            wave = envelope * amplitude * math.cos(probe * t)

            rhs = (
                injection * wave
                + cap @ ((4 / h ** 2) * psi + (4 / h) * vel + acc)
                + cond @ ((2 / h) * psi + vel)
            )
            k = index % steps_per_modulation
            if options.linearized:
                new_psi = solve_linearized(k, rhs)
            else:
                new_psi = solve_newton(k, rhs, psi + h * vel)

            new_vel = (2 / h) * (new_psi - psi) - vel
            acc = (2 / h) * (new_vel - vel) - acc
            psi, vel = new_psi, new_vel

            u = incidence.T @ psi / scale
            if not overdriven and u.size and np.max(np.abs(u)) > math.pi / 2:
                overdriven = True
                logger.warning("junction overdriven at t=%.4g s", t)

            voltages = mats.port_incidence @ vel
            incident = np.zeros(n_ports)
            incident[drive.port] = wave
            outgoing = voltages / sqrt_z0 - incident
            projection += np.exp(1j * omegas * t)[:, None] * outgoing[None, :]

            if recording:
                beat_times[j] = t
                beat_voltages[j] = voltages
                beat_incident[j] = incident
                beat_outgoing[j] = outgoing
                rate = table_rate[k]
                if options.linearized:
                    stored = rate * scale * u ** 2 / 2
                else:
                    stored = rate * scale * (1 - np.cos(u))
                energy["incident"] += float(incident @ incident)
                energy["outgoing"] += float(outgoing @ outgoing)
                energy["dissipated"] += float(vel @ g_internal @ vel)
                energy["drive_work"] += float(np.sum(stored))

        projection *= 2.0 / steps
        beat += 1

        if recording:
            recorded["projections"].append(projection)
            recorded["times"].append(beat_times)
            recorded["voltages"].append(beat_voltages)
            recorded["incident"].append(beat_incident)
            recorded["outgoing"].append(beat_outgoing)
            if len(recorded["projections"]) >= options.record_beats:
                break
            continue

        if previous is not None and beat > 1 + options.settle_beats:
            change = np.linalg.norm(projection - previous) / max(np.linalg.norm(projection), 1e-300)
            if change < options.settle_tolerance:
                settled_at = beat
                logger.debug("settled after %d beats (change %.2g)", beat, change)
        previous = projection

        if settled_at is None and beat >= options.max_beats:
            raise TransientError("transient did not settle")

    samples = steps * options.record_beats
    energy = {key: value / samples for key, value in energy.items()}
    if energy["incident"] > 0:
        balance = energy["incident"] - energy["outgoing"] - energy["dissipated"] + energy["drive_work"]
        energy["residual"] = balance / energy["incident"]

    mean_projection = np.mean(recorded["projections"], axis=0)
    return TransientResult(
        times=np.concatenate(recorded["times"]),
        port_voltages=np.concatenate(recorded["voltages"]),
        incident=np.concatenate(recorded["incident"]),
        outgoing=np.concatenate(recorded["outgoing"]),
        harmonics={m: mean_projection[i] for i, m in enumerate(orders)},
        drive=drive,
        probe_frequency=probe,
        modulation_frequency=omega_mod,
        commensuration=(p_num, q_den),
        beats=beat,
        overdriven=overdriven,
        energy=energy,
    )


# ---------------------------------------------------
# Power handling
# ---------------------------------------------------
def _transmission(net, probe, in_port, out_port, power, options, arrays):
    result = simulate(net, Drive(in_port, probe, power), options, arrays)
    return abs(result.scattering(0, out_port)), result.overdriven


def _bracket_and_bisect(kind, objective, start_power, max_power):
    """Step up in decades until the objective changes sign, then root-find on log10 P."""
    low = math.log10(start_power)
    value, overdriven = objective(low)
    if value >= 0:
        return PowerPoint(start_power, watts_to_dbm(start_power), kind, lower_bound=False)

    high = low
    while True:
        if overdriven:
            power = 10 ** low
            logger.warning("%s not reached before junction overdriven: lower bound %.3g W", kind, power)
            return PowerPoint(power, watts_to_dbm(power), kind, lower_bound=True)
        high = low + 1
        if high > math.log10(max_power):
            logger.warning("%s not reached below %.3g W", kind, max_power)
            return PowerPoint(10 ** low, watts_to_dbm(10 ** low), kind, lower_bound=True)
        value, overdriven = objective(high)
        if value >= 0:
            break
        low = high

    root = brentq(lambda x: objective(x)[0], low, high, xtol=1e-3)
    power = 10 ** root
    return PowerPoint(power, watts_to_dbm(power), kind)


def find_compression_point(
    net: NetworkDescription,
    point: "OperatingPoint",
    options: Optional[TransientOptions] = None,
    arrays: Optional[Dict[int, NonlinearSquidArray]] = None,
    start_power: float = 1e-15,
    max_power: float = 1e-6,
) -> PowerPoint:
    """Input power where transmission falls 1 dB below its small-signal value."""
    options = options or TransientOptions()
    if options.linearized:
        return PowerPoint(math.inf, math.inf, "compression")

    probe, drive_port, through_port = point.probe_frequency, point.drive_port, point.through_port
    linear, _ = _transmission(net, probe, drive_port, through_port, REFERENCE_POWER, options, arrays)
    if linear == 0:
        raise TransientError("no small-signal transmission to compress")

    def objective(log_power):
        value, overdriven = _transmission(net, probe, drive_port, through_port, 10 ** log_power, options, arrays)
        return (db(linear) - db(value)) - COMPRESSION_DB, overdriven

    found = _bracket_and_bisect("compression", objective, start_power, max_power)
    logger.info("1 dB compression at %.3g W (%.1f dBm)", found.power, found.power_dbm)
    return found


def find_expansion_point(
    net: NetworkDescription,
    point: "OperatingPoint",
    options: Optional[TransientOptions] = None,
    arrays: Optional[Dict[int, NonlinearSquidArray]] = None,
    start_power: float = 1e-15,
    max_power: float = 1e-6,
    threshold: float = ISOLATION_THRESHOLD_DB,
) -> PowerPoint:
    """Input power where isolation drops below the threshold."""
    options = options or TransientOptions()
    if options.linearized:
        return PowerPoint(math.inf, math.inf, "expansion")

    probe, drive_port, through_port = point.probe_frequency, point.drive_port, point.through_port
    reverse, _ = _transmission(net, probe, through_port, drive_port, REFERENCE_POWER, options, arrays)
    if -db(reverse) < threshold:
        raise TransientError(f"small-signal isolation below {threshold:g} dB")

    def objective(log_power):
        value, overdriven = _transmission(net, probe, through_port, drive_port, 10 ** log_power, options, arrays)
        return threshold + db(value), overdriven

    found = _bracket_and_bisect("expansion", objective, start_power, max_power)
    logger.info("%g dB expansion at %.3g W (%.1f dBm)", threshold, found.power, found.power_dbm)
    return found


def power_sweep(
    net: NetworkDescription,
    point: "OperatingPoint",
    powers: Sequence[float],
    options: Optional[TransientOptions] = None,
    arrays: Optional[Dict[int, NonlinearSquidArray]] = None,
    threads: int = 1,
) -> pd.DataFrame:
    options = options or TransientOptions()
    probe, drive_port, through_port = point.probe_frequency, point.drive_port, point.through_port

    def run(power):
        forward = simulate(net, Drive(drive_port, probe, power), options, arrays)
        backward = simulate(net, Drive(through_port, probe, power), options, arrays)
        return {
            "power_W": power,
            "power_dBm": watts_to_dbm(power),
            "S21_dB": forward.transmission_db(through_port),
            "isolation_dB": -backward.transmission_db(drive_port),
            "overdriven": forward.overdriven or backward.overdriven,
        }

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows: List[Dict] = list(pool.map(run, powers))
    else:
        rows = [run(power) for power in powers]
    return pd.DataFrame(rows)
