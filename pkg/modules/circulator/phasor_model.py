import cmath
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar

from modules.circulator.config import DEFAULT_COST_WEIGHTS, ISOLATION_COST_CAP_DB
from modules.circulator.errors import ParameterError


logger = logging.getLogger(__name__)

# Components below this magnitude are treated as exact cancellations.
CANCELLATION_FLOOR = 1e-14

# Conversion gain of a power-preserving multiplier inside the two-arm network.
MATCHED_GAIN = math.sqrt(2)

DIRECTIONS = ("forward", "backward")


# ---------------------------------------------------
# Types
# ---------------------------------------------------
@dataclass(frozen=True)
class SpectralSignal:
    """Rotating-frame phasors at ω_p + mΩ, keyed by detuning index m."""

    reference_frequency: float
    components: Dict[int, complex] = field(default_factory=dict)
    modulation: Optional[float] = None

    @classmethod
    def tone(cls, reference_frequency: float, amplitude: complex = 1.0) -> "SpectralSignal":
        return cls(reference_frequency, {0: complex(amplitude)})

    def amplitude(self, m: int) -> complex:
        return self.components.get(m, 0j)

    def power(self) -> float:
        return float(sum(abs(a) ** 2 for a in self.components.values()))

    def indices(self) -> List[int]:
        return sorted(self.components)

    def as_list(self) -> List[Tuple[int, complex]]:
        return [(m, self.components[m]) for m in self.indices()]

    def pruned(self, floor: float = CANCELLATION_FLOOR) -> "SpectralSignal":
        kept = {m: a for m, a in self.components.items() if abs(a) > floor}
        return SpectralSignal(self.reference_frequency, kept, self.modulation)

    def scaled(self, factor: complex) -> "SpectralSignal":
        return SpectralSignal(
            self.reference_frequency,
            {m: a * factor for m, a in self.components.items()},
            self.modulation,
        )

    def __add__(self, other: "SpectralSignal") -> "SpectralSignal":
        merged = dict(self.components)
        for m, a in other.components.items():
            merged[m] = merged.get(m, 0j) + a
        return SpectralSignal(self.reference_frequency, merged, self.modulation or other.modulation)


@dataclass(frozen=True)
class ArmConfig:
    first_multiplier_phase: float
    second_multiplier_phase: float
    delay: float

    def __post_init__(self):
        if self.delay < 0:
            raise ParameterError(f"arm delay must be non-negative: {self.delay}")


# ---------------------------------------------------
# Elementary operations
# ---------------------------------------------------
def multiply(s: SpectralSignal, modulation: float, bias_phase: float,
             gain: float = 1.0) -> SpectralSignal:
    """Multiply by g·cos(Ωt + bias_phase): (m, a) → (m±1, g·a/2·e^{±i·bias_phase})."""
    if not s.components:
        raise ParameterError("cannot multiply an empty signal")

    up = 0.5 * gain * cmath.exp(1j * bias_phase)
    down = 0.5 * gain * cmath.exp(-1j * bias_phase)
    out: Dict[int, complex] = {}
    for m, a in s.components.items():
        out[m + 1] = out.get(m + 1, 0j) + a * up
        out[m - 1] = out.get(m - 1, 0j) + a * down
    return SpectralSignal(s.reference_frequency, out, modulation)


def apply_delay(s: SpectralSignal, tau: float) -> SpectralSignal:
    if tau < 0:
        raise ParameterError(f"delay must be non-negative: {tau}")
    if tau == 0 or all(m == 0 for m in s.components):
        return s
    if s.modulation is None:
        raise ParameterError("signal with sidebands carries no modulation frequency")

    return SpectralSignal(
        s.reference_frequency,
        {m: a * cmath.exp(1j * m * s.modulation * tau) for m, a in s.components.items()},
        s.modulation,
    )


def propagate_arm(arm: ArmConfig, signal: SpectralSignal, modulation: float,
                  direction: str = "forward", gain: float = 1.0) -> SpectralSignal:
    """Multiply, delay, multiply; backward propagation meets the multipliers in reverse order."""
    if direction not in DIRECTIONS:
        raise ParameterError(f"unknown direction: {direction}")

    first, second = arm.first_multiplier_phase, arm.second_multiplier_phase
    if direction == "backward":
        first, second = second, first

    out = multiply(signal, modulation, first, gain)
    out = apply_delay(out, arm.delay)
    return multiply(out, modulation, second, gain)


def propagate_two_arm_network(arm_a: ArmConfig, arm_b: ArmConfig, signal: SpectralSignal,
                              direction: str, modulation: float,
                              gain: float = MATCHED_GAIN) -> SpectralSignal:
    split = 1 / math.sqrt(2)
    out_a = propagate_arm(arm_a, signal.scaled(split), modulation, direction, gain)
    out_b = propagate_arm(arm_b, signal.scaled(split), modulation, direction, gain)
    combined = (out_a + out_b).scaled(split)
    return combined.pruned(CANCELLATION_FLOOR * max(1.0, math.sqrt(signal.power())))


def canonical_gyrator(modulation: float) -> Tuple[ArmConfig, ArmConfig]:
    """Arm pair whose forward path gains a π phase and whose backward path is unchanged."""
    tau = math.pi / (2 * modulation)
    return (
        ArmConfig(0.0, -math.pi / 2, tau),
        ArmConfig(math.pi / 2, 0.0, tau),
    )


def gyrator_matrix(arm_a: ArmConfig, arm_b: ArmConfig, modulation: float) -> np.ndarray:
    """Carrier scattering matrix [[S11, S12], [S21, S22]] of the two-arm network."""
    probe = SpectralSignal.tone(0.0)
    s21 = propagate_two_arm_network(arm_a, arm_b, probe, "forward", modulation).amplitude(0)
    s12 = propagate_two_arm_network(arm_a, arm_b, probe, "backward", modulation).amplitude(0)
    return np.array([[0, s12], [s21, 0]], dtype=complex)


def propagation_table(arm_a: ArmConfig, arm_b: ArmConfig, modulation: float,
                      gain: float = MATCHED_GAIN) -> pd.DataFrame:
    """Stage-by-stage components for both arms and both directions."""
    rows = []
    split = 1 / math.sqrt(2)

    def add_rows(stage, arm_name, direction, signal):
        for m, a in signal.as_list():
            rows.append({
                "stage": stage,
                "arm": arm_name,
                "direction": direction,
                "m": m,
                "amplitude": abs(a),
                "phase_rad": cmath.phase(a) if abs(a) > CANCELLATION_FLOOR else 0.0,
            })

    for direction in DIRECTIONS:
        source = SpectralSignal.tone(0.0).scaled(split)
        outputs = []
        for arm_name, arm in (("A", arm_a), ("B", arm_b)):
            first, second = arm.first_multiplier_phase, arm.second_multiplier_phase
            if direction == "backward":
                first, second = second, first
            add_rows("1 split", arm_name, direction, source)
            stage = multiply(source, modulation, first, gain)
            add_rows("2 first multiplier", arm_name, direction, stage)
            stage = apply_delay(stage, arm.delay)
            add_rows("3 delay", arm_name, direction, stage)
            stage = multiply(stage, modulation, second, gain)
            add_rows("4 second multiplier", arm_name, direction, stage)
            outputs.append(stage)
        combined = (outputs[0] + outputs[1]).scaled(split).pruned()
        add_rows("5 combined", "A+B", direction, combined)

    return pd.DataFrame(rows)


# ---------------------------------------------------
# Phase law
# ---------------------------------------------------
def generalized_transmission(omega_tau: float, phi: float) -> Tuple[float, float]:
    s21 = (1 - math.cos(omega_tau + phi)) / 2
    s12 = (1 - math.cos(omega_tau - phi)) / 2
    return s21, s12


def _weight_db(weight: float) -> float:
    return -20 * math.log10(max(weight, 1e-15))


def phase_law_cost(omega_tau: float, phi: float, weights: Optional[Dict[str, float]] = None,
                   iso_cap: float = ISOLATION_COST_CAP_DB) -> float:
    """Single-direction cost of the S21-transmitting direction under the phase law."""
    weights = weights or DEFAULT_COST_WEIGHTS
    s21, s12 = generalized_transmission(omega_tau, phi)
    insertion_loss = _weight_db(s21)
    isolation = min(_weight_db(s12), iso_cap)
    return weights["insertion_loss"] * insertion_loss - weights["isolation"] * isolation


def optimal_phase(omega_tau: float, weights: Optional[Dict[str, float]] = None,
                  iso_cap: float = ISOLATION_COST_CAP_DB, grid_points: int = 3601) -> float:
    """Phase in [0, 2π) minimizing the phase-law cost for S21 transmission.

    Dense grid first, then a bounded refinement one grid step either side.
    Ties resolve to the lowest phase.
    """
    grid = np.linspace(0.0, 2 * math.pi, grid_points, endpoint=False)
    costs = np.array([phase_law_cost(omega_tau, phi, weights, iso_cap) for phi in grid])
    best = int(np.argmin(costs))
    step = grid[1] - grid[0]

    result = minimize_scalar(
        lambda phi: phase_law_cost(omega_tau, phi, weights, iso_cap),
        bounds=(grid[best] - step, grid[best] + step),
        method="bounded",
        options={"xatol": 1e-10},
    )
    phi = float(result.x) if result.fun <= costs[best] else float(grid[best])
    logger.debug("phase-law optimum at Ωτ=%.4f: φ=%.6f", omega_tau, phi)
    return phi % (2 * math.pi)
