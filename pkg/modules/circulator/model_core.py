import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

from scipy import constants as cst
from scipy.special import jv

from modules.circulator.errors import ParameterError


logger = logging.getLogger(__name__)

# Bessel arguments beyond this are outside the first-harmonic flux mapping.
BESSEL_GUARD = 2.0
POLE_TOLERANCE = 1e-12


# ---------------------------------------------------
# Physical constants
# ---------------------------------------------------
@dataclass(frozen=True)
class PhysicalConstants:
    reduced_planck: float = cst.hbar
    electron_charge: float = cst.e
    boltzmann: float = cst.k
    vacuum_permeability: float = cst.mu_0

    @property
    def reduced_flux_quantum(self) -> float:
        return self.reduced_planck / (2 * self.electron_charge)

    @property
    def flux_quantum(self) -> float:
        return 2 * math.pi * self.reduced_flux_quantum


CONSTANTS = PhysicalConstants()
PHI0_REDUCED = CONSTANTS.reduced_flux_quantum
PHI0 = CONSTANTS.flux_quantum


# ---------------------------------------------------
# Device parameter types
# ---------------------------------------------------
@dataclass(frozen=True)
class SquidArraySpec:
    n_squids: int = 12
    junction_critical_current: float = 2e-6

    def __post_init__(self):
        if int(self.n_squids) != self.n_squids or self.n_squids < 1:
            raise ParameterError(f"SQUID count must be a positive integer: {self.n_squids}")
        if self.junction_critical_current <= 0:
            raise ParameterError(
                f"junction critical current must be positive: {self.junction_critical_current}"
            )

    @property
    def zero_flux_inductance(self) -> float:
        return self.n_squids * PHI0_REDUCED / (2 * self.junction_critical_current)


@dataclass(frozen=True)
class FluxControl:
    """Experimental knobs of the two bias-line pairs.

    Fluxes are in Wb, the drive frequency in rad/s and the phase offset in rad.
    """

    uniform_flux: float
    gradiometric_amplitude: float
    drive_frequency: float
    drive_phase_offset: float = math.pi / 2

    def __post_init__(self):
        if self.drive_frequency < 0:
            raise ParameterError(f"drive frequency must be non-negative: {self.drive_frequency}")

    def validity_boundary(self) -> bool:
        """True once |Φu| + |Φg| reaches Φ0/2, where the bridges start to rebalance."""
        return abs(self.uniform_flux) + abs(self.gradiometric_amplitude) >= PHI0 / 2

    def with_phase(self, phase: float) -> "FluxControl":
        return replace(self, drive_phase_offset=phase)


@dataclass(frozen=True)
class CircuitParams:
    base_inductance: float
    imbalance_amplitude: float
    capacitance: float = 1e-12
    line_impedance: float = 50.0
    modulation: float = 2 * math.pi * 120e6
    phase: float = math.pi / 2
    geometric_inductance: float = 0.0
    internal_q: float = math.inf
    parasitic_resistance: float = 0.0

    def __post_init__(self):
        if not abs(self.imbalance_amplitude) < 1:
            raise ParameterError(f"bridge imbalance out of range: {self.imbalance_amplitude}")
        for name in ("base_inductance", "capacitance", "line_impedance"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive: {getattr(self, name)}")
        if self.geometric_inductance < 0:
            raise ParameterError(f"geometric inductance must be non-negative: {self.geometric_inductance}")
        if self.modulation < 0:
            raise ParameterError(f"modulation frequency must be non-negative: {self.modulation}")
        if self.internal_q <= 0:
            raise ParameterError(f"internal Q must be positive: {self.internal_q}")
        if self.parasitic_resistance < 0:
            raise ParameterError(f"parasitic resistance must be non-negative: {self.parasitic_resistance}")

    # short aliases used throughout the solvers
    @property
    def l0(self) -> float:
        return self.base_inductance

    @property
    def delta0(self) -> float:
        return self.imbalance_amplitude

    def with_phase(self, phase: float) -> "CircuitParams":
        return replace(self, phase=phase)


# ---------------------------------------------------
# Closed-form device formulas
# ---------------------------------------------------
def squid_array_inductance(spec: SquidArraySpec, flux: float) -> float:
    cos_term = math.cos(flux / (2 * PHI0_REDUCED))
    if abs(cos_term) < POLE_TOLERANCE:
        raise ParameterError(f"flux at inductance divergence: {flux / PHI0:.6g} Φ0")
    return spec.zero_flux_inductance / abs(cos_term)


def flux_to_bridge_params(fc: FluxControl, spec: SquidArraySpec) -> Tuple[float, float]:
    """Map (Φu, Φg) to the bridge's (l0, δ0) through the first-harmonic expansion.

    α = πΦu/Φ0 and β = πΦg/Φ0; δ0 = −2 tan(α) J1(β)/J0(β) and
    l0 = N φ0/(2 I0) / (cos(α) J0(β)).
    """
    alpha = math.pi * fc.uniform_flux / PHI0
    beta = math.pi * fc.gradiometric_amplitude / PHI0

    if abs(math.cos(alpha)) < POLE_TOLERANCE or abs(alpha) >= math.pi / 2:
        raise ParameterError(f"uniform flux at inductance pole: α = {alpha:.6g}")
    if abs(beta) >= BESSEL_GUARD:
        raise ParameterError(f"gradiometric flux beyond Bessel guard: β = {beta:.6g}")

    j0 = float(jv(0, beta))
    j1 = float(jv(1, beta))
    if abs(j0) < POLE_TOLERANCE:
        raise ParameterError("gradiometric flux at Bessel zero")

    if fc.validity_boundary():
        logger.warning(
            "flux bias at validity boundary: |Φu| + |Φg| = %.4g Φ0",
            (abs(fc.uniform_flux) + abs(fc.gradiometric_amplitude)) / PHI0,
        )

    delta0 = -2.0 * math.tan(alpha) * j1 / j0
    l0 = spec.zero_flux_inductance / (math.cos(alpha) * j0)
    return l0, delta0


def static_bridge_params(uniform_flux: float, gradiometric_flux: float,
                         spec: SquidArraySpec) -> Tuple[float, float]:
    """Bridge (l0, δ) under a static gradiometric flux.

    Opposite arms see Φu ± Φg, so 1/l± ∝ cos(α ∓ β) exactly: l0 follows from
    cos(α)cos(β) and δ = tan(α) tan(β).
    """
    alpha = math.pi * uniform_flux / PHI0
    beta = math.pi * gradiometric_flux / PHI0
    denominator = math.cos(alpha) * math.cos(beta)
    if denominator <= POLE_TOLERANCE:
        raise ParameterError("flux at inductance divergence")
    delta = math.tan(alpha) * math.tan(beta)
    if abs(delta) >= 1:
        raise ParameterError(f"bridge imbalance out of range: {delta}")
    return spec.zero_flux_inductance / denominator, delta


def bridge_inductances(l0: float, delta: float) -> Tuple[float, float]:
    if not abs(delta) < 1:
        raise ParameterError(f"bridge imbalance out of range: {delta}")
    return l0 / (1 + delta), l0 / (1 - delta)


def resonant_frequency(p: CircuitParams) -> float:
    return math.sqrt((4 - p.delta0 ** 2) / (2 * p.l0 * p.capacitance))


def resonant_delay_duration(p: CircuitParams) -> float:
    if p.delta0 == 0:
        raise ParameterError("undercoupled: delay diverges")
    return 8 * p.line_impedance * p.capacitance / p.delta0 ** 2


def circuit_params_from_flux(
    fc: FluxControl,
    spec: SquidArraySpec,
    template: Optional[CircuitParams] = None,
) -> CircuitParams:
    """Build CircuitParams for a flux setting, keeping the template's other fields."""
    l0, delta0 = flux_to_bridge_params(fc, spec)
    if template is None:
        return CircuitParams(
            base_inductance=l0,
            imbalance_amplitude=delta0,
            modulation=fc.drive_frequency,
            phase=fc.drive_phase_offset,
        )
    return replace(
        template,
        base_inductance=l0,
        imbalance_amplitude=delta0,
        modulation=fc.drive_frequency,
        phase=fc.drive_phase_offset,
    )


def internal_loss_conductance(p: CircuitParams) -> float:
    """Shunt conductance across each capacitor realizing Q_int at ω0."""
    if math.isinf(p.internal_q):
        return 0.0
    return resonant_frequency(p) * p.capacitance / p.internal_q
