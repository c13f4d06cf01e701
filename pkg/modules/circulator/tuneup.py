import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq, minimize_scalar

from modules.circulator.analysis import DIRECTION_PORTS, MetricsRecord, db, transmission_metrics
from modules.circulator.config import (
    DEFAULT_COST_WEIGHTS,
    GRADIOMETRIC_REFINE_BRACKET,
    ISOLATION_COST_CAP_DB,
    MAX_IMBALANCE,
    METRIC_WINDOW_FRACTION,
    METRIC_WINDOW_POINTS,
    PHASE_SCAN_HALF_WIDTH,
    PHASE_SCAN_POINTS,
    TUNE_ITERATIONS,
)
from modules.circulator.errors import CirculatorError, ParameterError, TuneError
from modules.circulator.floquet_solver import delay_network_peak, sweep
from modules.circulator.model_core import (
    BESSEL_GUARD,
    PHI0,
    CircuitParams,
    FluxControl,
    SquidArraySpec,
    circuit_params_from_flux,
    resonant_frequency,
)
from modules.circulator.phasor_model import optimal_phase


logger = logging.getLogger(__name__)

UNIFORM_SCAN_POINTS = 201
GRADIOMETRIC_SCAN_POINTS = 25
FLUX_MARGIN = 1e-3
FAILED_COST = 1e9


# ---------------------------------------------------
# Operating point
# ---------------------------------------------------
@dataclass
class OperatingPoint:
    flux: FluxControl
    modulation: float
    phase: float
    direction: str
    metrics: MetricsRecord
    params: CircuitParams
    flags: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.direction not in DIRECTION_PORTS:
            raise ParameterError(f"unknown direction: {self.direction}")
        if self.modulation <= 0:
            raise ParameterError("operating point needs a positive modulation frequency")

    @property
    def probe_frequency(self) -> float:
        return 2 * math.pi * self.metrics.operation_frequency

    @property
    def drive_port(self) -> int:
        return DIRECTION_PORTS[self.direction][0]

    @property
    def through_port(self) -> int:
        return DIRECTION_PORTS[self.direction][1]

    def to_dict(self) -> Dict:
        return {
            "direction": self.direction,
            "uniform_flux_phi0": self.flux.uniform_flux / PHI0,
            "gradiometric_flux_phi0": self.flux.gradiometric_amplitude / PHI0,
            "modulation_hz": self.modulation / (2 * math.pi),
            "phase_rad": self.phase,
            "base_inductance": self.params.l0,
            "imbalance": self.params.delta0,
            "metrics": self.metrics.to_dict(),
            "flags": list(self.flags),
        }


# ---------------------------------------------------
# Cost
# ---------------------------------------------------
def _check_weights(weights: Dict[str, float]) -> Dict[str, float]:
    merged = {**DEFAULT_COST_WEIGHTS, **(weights or {})}
    if any(w < 0 for w in merged.values()):
        raise ParameterError("cost weights must be non-negative")
    if not any(merged.values()):
        raise ParameterError("cost weights must not all be zero")
    return merged


def direction_cost(metrics: MetricsRecord, weights: Optional[Dict[str, float]] = None,
                   iso_cap: float = ISOLATION_COST_CAP_DB) -> float:
    w = _check_weights(weights)
    return (
        w["insertion_loss"] * metrics.insertion_loss
        - w["isolation"] * min(metrics.max_isolation, iso_cap)
        - w["bandwidth"] * metrics.isolation_bandwidth_20dB / 1e6
    )


def cost(metrics_cw: MetricsRecord, metrics_ccw: MetricsRecord,
         weights: Optional[Dict[str, float]] = None) -> float:
    return direction_cost(metrics_cw, weights) + direction_cost(metrics_ccw, weights)


def evaluate(p: CircuitParams, target: float, truncation: int = 5, threads: int = 1,
             pairing: str = "diagonal") -> Dict[str, MetricsRecord]:
    """Both directions' metrics over the window around the target frequency."""
    half = METRIC_WINDOW_FRACTION * p.modulation
    omegas = np.linspace(target - half, target + half, METRIC_WINDOW_POINTS)
    result = sweep(p, omegas, truncation, threads, pairing)
    return {direction: transmission_metrics(result, direction) for direction in ("cw", "ccw")}


# ---------------------------------------------------
# Step 1: uniform flux
# ---------------------------------------------------
def _params(uniform, gradiometric, phase, spec, template) -> CircuitParams:
    return circuit_params_from_flux(
        FluxControl(uniform, gradiometric, template.modulation, phase), spec, template
    )


def tune_uniform_flux(target: float, gradiometric: float, spec: SquidArraySpec,
                      template: CircuitParams) -> float:
    """Φu placing the resonant-delay center on the target."""

    def mismatch(uniform):
        try:
            return resonant_frequency(_params(uniform, gradiometric, template.phase, spec, template)) - target
        except ParameterError:
            return math.nan

    upper = (0.5 - FLUX_MARGIN) * PHI0 - abs(gradiometric)
    grid = np.linspace(0.0, upper, UNIFORM_SCAN_POINTS)
    values = [mismatch(x) for x in grid]
    for a, b, fa, fb in zip(grid, grid[1:], values, values[1:]):
        if math.isfinite(fa) and math.isfinite(fb) and fa * fb <= 0:
            return float(brentq(mismatch, a, b, xtol=1e-12 * PHI0))
    raise TuneError(f"target out of tunable range: {target / (2 * math.pi):.6g} Hz")


# ---------------------------------------------------
# Step 2: gradiometric flux
# ---------------------------------------------------
def _gradiometric_limit(uniform: float, spec: SquidArraySpec, template: CircuitParams) -> float:
    limit = min((0.5 - FLUX_MARGIN) * PHI0 - abs(uniform), 0.999 * BESSEL_GUARD * PHI0 / math.pi)
    for candidate in np.linspace(limit, 0.0, 200, endpoint=False):
        try:
            if abs(_params(uniform, candidate, template.phase, spec, template).delta0) <= MAX_IMBALANCE:
                return float(candidate)
        except ParameterError:
            continue
    raise TuneError("no usable gradiometric flux range")


def averaged_delay(p: CircuitParams) -> float:
    """Peak delay of the static network at the time-averaged imbalance δ0/√2."""
    return delay_network_peak(p, p.delta0 / math.sqrt(2))[1]


def tune_gradiometric_flux(uniform: float, target_delay: float, spec: SquidArraySpec,
                           template: CircuitParams) -> Tuple[float, bool]:
    """(Φg, reached) with the averaged resonant delay equal to the target.

    The delay comes from the static delay network held at the rms imbalance
    δ0/√2 (see ``averaged_delay``), not from the modulated circuit;
    ``refine_gradiometric_flux`` and ``scan_phase`` settle Φg and φ on the
    modulated circuit afterwards. ``reached`` is False when no flux on the
    scan grid brackets the target, and the flux with the shortest delay is
    returned instead.
    """

    def mismatch(gradiometric):
        p = _params(uniform, gradiometric, template.phase, spec, template)
        return averaged_delay(p) - target_delay

    upper = _gradiometric_limit(uniform, spec, template)
    grid = np.linspace(upper / GRADIOMETRIC_SCAN_POINTS, upper, GRADIOMETRIC_SCAN_POINTS)
    values = []
    for x in grid:
        try:
            values.append(mismatch(x))
        except CirculatorError:
            values.append(math.nan)

    for a, b, fa, fb in zip(grid, grid[1:], values, values[1:]):
        if math.isfinite(fa) and math.isfinite(fb) and fa * fb <= 0:
            return float(brentq(mismatch, a, b, xtol=1e-6 * PHI0)), True

    finite = [(v, x) for v, x in zip(values, grid) if math.isfinite(v)]
    if not finite:
        raise TuneError("resonant delay undefined over the gradiometric range")
    shortest = min(finite)
    logger.warning(
        "delay target %.3g s unreachable: shortest delay %.3g s at Φg=%.4f Φ0",
        target_delay, shortest[0] + target_delay, shortest[1] / PHI0,
    )
    return float(shortest[1]), False


def refine_gradiometric_flux(gradiometric: float, uniform: float, target: float, spec: SquidArraySpec,
                             template: CircuitParams, weights=None, single_direction: bool = False,
                             truncation: int = 5, threads: int = 1, pairing: str = "diagonal") -> float:
    """Bounded golden-section refinement of Φg on the cost at φ = π/2 and 3π/2."""
    upper = _gradiometric_limit(uniform, spec, template)
    low = GRADIOMETRIC_REFINE_BRACKET[0] * gradiometric
    high = min(GRADIOMETRIC_REFINE_BRACKET[1] * gradiometric, upper)
    if high <= low:
        return gradiometric

    def objective(x):
        try:
            ccw = evaluate(_params(uniform, x, math.pi / 2, spec, template), target, truncation, threads, pairing)
            value = direction_cost(ccw["ccw"], weights)
            if not single_direction:
                cw = evaluate(_params(uniform, x, 3 * math.pi / 2, spec, template),
                              target, truncation, threads, pairing)
                value += direction_cost(cw["cw"], weights)
            return value
        except CirculatorError:
            return FAILED_COST

    result = minimize_scalar(objective, bounds=(low, high), method="bounded",
                             options={"xatol": 1e-5 * PHI0})
    best = float(result.x) if result.fun <= objective(gradiometric) else gradiometric
    logger.debug("Φg refined %.5f → %.5f Φ0", gradiometric / PHI0, best / PHI0)
    return best


# ---------------------------------------------------
# Step 3: phase
# ---------------------------------------------------
def _parabolic_vertex(x, y) -> float:
    (x0, x1, x2), (y0, y1, y2) = x, y
    denominator = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denominator
    b = (x2 ** 2 * (y0 - y1) + x1 ** 2 * (y2 - y0) + x0 ** 2 * (y1 - y2)) / denominator
    if a <= 0:
        return x1
    return min(max(-b / (2 * a), x0), x2)


def scan_phase(params: CircuitParams, target: float, weights=None, truncation: int = 5,
               threads: int = 1, pairing: str = "diagonal") -> Dict[str, float]:
    """Best phase per direction from grids around π/2 and 3π/2, refined parabolically."""
    offsets = np.linspace(-PHASE_SCAN_HALF_WIDTH, PHASE_SCAN_HALF_WIDTH, PHASE_SCAN_POINTS)
    grid = np.concatenate([math.pi / 2 + offsets, 3 * math.pi / 2 + offsets])
    cache: Dict[float, Dict[str, float]] = {}

    def costs(phi):
        if phi not in cache:
            try:
                metrics = evaluate(params.with_phase(phi), target, truncation, threads, pairing)
                cache[phi] = {d: direction_cost(m, weights) for d, m in metrics.items()}
            except CirculatorError:
                cache[phi] = {"cw": FAILED_COST, "ccw": FAILED_COST}
        return cache[phi]

    chosen = {}
    for direction in ("ccw", "cw"):
        values = np.array([costs(phi)[direction] for phi in grid])
        best = int(np.argmin(values))
        phi = float(grid[best])
        neighbours = (best - 1, best, best + 1)
        same_block = best // PHASE_SCAN_POINTS
        if all(0 <= k < grid.size and k // PHASE_SCAN_POINTS == same_block for k in neighbours):
            vertex = _parabolic_vertex(grid[list(neighbours)], values[list(neighbours)])
            if costs(vertex)[direction] < values[best]:
                phi = float(vertex)
        chosen[direction] = phi % (2 * math.pi)
    return chosen


def _delay_limited_phases(params: CircuitParams, omega_tau: float, target: float, weights,
                          truncation: int, threads: int, pairing: str) -> Dict[str, float]:
    phi = optimal_phase(omega_tau, weights)
    mirrored = (2 * math.pi - phi) % (2 * math.pi)

    # orientation: which half of the circle carries ccw transmission
    at_quarter = evaluate(params.with_phase(math.pi / 2), target, truncation, threads, pairing)
    at_three_quarter = evaluate(params.with_phase(3 * math.pi / 2), target, truncation, threads, pairing)
    low_half = math.pi / 2 if phi < math.pi else 3 * math.pi / 2
    ccw_low = direction_cost(at_quarter["ccw"], weights) <= direction_cost(at_three_quarter["ccw"], weights)
    if (low_half == math.pi / 2) == ccw_low:
        return {"ccw": phi, "cw": mirrored}
    return {"ccw": mirrored, "cw": phi}


# ---------------------------------------------------
# Tune-up driver
# ---------------------------------------------------
def tune(
    target_frequency: float,
    p0: CircuitParams,
    spec: SquidArraySpec,
    weights: Optional[Dict[str, float]] = None,
    delay_floor: Optional[float] = None,
    single_direction: bool = False,
    initial_gradiometric: float = 0.06 * PHI0,
    truncation: int = 5,
    threads: int = 1,
    pairing: str = "diagonal",
) -> Tuple[OperatingPoint, OperatingPoint]:
    """Three-step tune-up: Φu on the resonance, Φg on the delay, then φ per direction.

    Returns the (cw, ccw) operating points.
    """
    weights = _check_weights(weights)
    omega = p0.modulation
    if omega <= 0:
        raise ParameterError("tune-up needs a positive modulation frequency")

    quarter_delay = math.pi / (2 * omega)
    limited = delay_floor is not None and delay_floor > quarter_delay
    target_delay = delay_floor if limited else quarter_delay

    gradiometric = initial_gradiometric
    for iteration in range(TUNE_ITERATIONS):
        uniform = tune_uniform_flux(target_frequency, gradiometric, spec, p0)
        gradiometric, reached = tune_gradiometric_flux(uniform, target_delay, spec, p0)
        if not reached:
            limited = True
        if not limited:
            gradiometric = refine_gradiometric_flux(
                gradiometric, uniform, target_frequency, spec, p0, weights,
                single_direction, truncation, threads, pairing,
            )
        logger.info(
            "tune-up pass %d: Φu=%.5f Φ0, Φg=%.5f Φ0", iteration + 1, uniform / PHI0, gradiometric / PHI0
        )
    uniform = tune_uniform_flux(target_frequency, gradiometric, spec, p0)

    params = _params(uniform, gradiometric, p0.phase, spec, p0)
    flags = []
    if limited:
        flags.append("delay-limited")
        omega_tau = omega * max(target_delay, averaged_delay(params))
        phases = _delay_limited_phases(params, omega_tau, target_frequency, weights, truncation, threads, pairing)
    else:
        phases = scan_phase(params, target_frequency, weights, truncation, threads, pairing)

    points = {}
    for direction in ("cw", "ccw"):
        tuned = params.with_phase(phases[direction])
        metrics = evaluate(tuned, target_frequency, truncation, threads, pairing)[direction]
        points[direction] = OperatingPoint(
            flux=FluxControl(uniform, gradiometric, omega, phases[direction]),
            modulation=omega,
            phase=phases[direction],
            direction=direction,
            metrics=metrics,
            params=tuned,
            flags=list(flags),
        )
        logger.info(
            "%s: φ=%.4f rad, IL=%.2f dB, isolation=%.1f dB",
            direction, phases[direction], metrics.insertion_loss, metrics.max_isolation,
        )
    return points["cw"], points["ccw"]


# ---------------------------------------------------
# Phase maps
# ---------------------------------------------------
@dataclass
class PhaseMap:
    frequencies: np.ndarray
    phases: np.ndarray
    s21: np.ndarray
    s12: np.ndarray
    errors: List[str] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for i, phi in enumerate(self.phases):
            for j, w in enumerate(self.frequencies):
                rows.append({
                    "f_Hz": w / (2 * math.pi),
                    "phi_rad": phi,
                    "S21_dB": db(self.s21[i, j]),
                    "S12_dB": db(self.s12[i, j]),
                })
        return pd.DataFrame(rows)

    def linecut(self, frequency_index: int) -> pd.DataFrame:
        return pd.DataFrame({
            "phi_rad": self.phases,
            "ccw_dB": [db(v) for v in self.s21[:, frequency_index]],
            "cw_dB": [db(v) for v in self.s12[:, frequency_index]],
        })

    def low_cost_regions(self, contrast_db: float = 10.0) -> List[Dict]:
        """Contiguous φ ranges where one direction beats the other by the contrast somewhere in band."""
        with np.errstate(divide="ignore"):
            contrast = 20 * np.log10(np.abs(self.s21) + 1e-300) - 20 * np.log10(np.abs(self.s12) + 1e-300)
        labels = []
        for row in contrast:
            if np.max(row) >= contrast_db:
                labels.append("ccw")
            elif np.min(row) <= -contrast_db:
                labels.append("cw")
            else:
                labels.append(None)

        runs = []
        k = 0
        while k < len(labels):
            if labels[k] is None:
                k += 1
                continue
            start = k
            while k + 1 < len(labels) and labels[k + 1] == labels[start]:
                k += 1
            runs.append([labels[start], start, k])
            k += 1

        # the φ grid wraps around
        if len(runs) > 1 and runs[0][1] == 0 and runs[-1][2] == len(labels) - 1 and runs[0][0] == runs[-1][0]:
            last = runs.pop()
            runs[0] = [last[0], last[1], runs[0][2] + len(labels)]

        period = 2 * math.pi
        step = self.phases[1] - self.phases[0] if len(self.phases) > 1 else period
        regions = []
        for direction, start, stop in runs:
            phi_start = self.phases[start]
            phi_stop = phi_start + (stop - start) * step
            regions.append({
                "direction": direction,
                "phi_start": float(phi_start),
                "phi_stop": float(phi_stop % period),
                "center": float(((phi_start + phi_stop) / 2) % period),
            })
        return regions


def phase_sweep(p: CircuitParams, omegas: Sequence[float], phases: Sequence[float], truncation: int = 5,
                threads: int = 1, pairing: str = "diagonal") -> PhaseMap:
    omegas = np.asarray(omegas, dtype=float)
    phases = np.asarray(phases, dtype=float)
    if omegas.size == 0 or phases.size == 0:
        raise ParameterError("phase sweep needs non-empty grids")

    s21 = np.zeros((phases.size, omegas.size), dtype=complex)
    s12 = np.zeros_like(s21)
    errors = []
    for i, phi in enumerate(phases):
        result = sweep(p.with_phase(float(phi)), omegas, truncation, threads, pairing)
        s21[i] = result.carrier(1, 0)
        s12[i] = result.carrier(0, 1)
        errors.extend(e for e in result.errors if e)
    return PhaseMap(omegas, phases, s21, s12, errors)


