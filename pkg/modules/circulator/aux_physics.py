import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import pandas as pd

from modules.circulator.config import (
    DEFAULT_FILM,
    DEFAULT_STAGES,
    NOISE_STEP_CURRENT_FRACTION,
    NOISE_STEP_PHASE,
    SHIELD_SEPARATION,
)
from modules.circulator.errors import ParameterError
from modules.circulator.model_core import (
    CONSTANTS,
    PHI0_REDUCED,
    CircuitParams,
    FluxControl,
    SquidArraySpec,
    circuit_params_from_flux,
)


logger = logging.getLogger(__name__)


# ---------------------------------------------------
# Types
# ---------------------------------------------------
@dataclass(frozen=True)
class NormalMetalFilm:
    thickness: float
    sheet_resistance: float
    squares_in_parallel: float
    mean_free_path: float
    fermi_velocity: float
    inelastic_length: float
    temperature: float
    link_length: float
    squares_in_series: float = 2.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value <= 0:
                raise ParameterError(f"film {name} must be positive: {value}")

    @classmethod
    def default(cls, **overrides) -> "NormalMetalFilm":
        return cls(**{**DEFAULT_FILM, **overrides})

    @property
    def normal_resistance(self) -> float:
        return self.sheet_resistance * self.squares_in_series / self.squares_in_parallel


@dataclass(frozen=True)
class SnsLink:
    critical_current: float
    josephson_energy: float
    resistance: float
    normal_resistance: float

    def lr_time(self, array_inductance: float) -> float:
        return array_inductance / self.resistance


@dataclass(frozen=True)
class CryostatStage:
    temperature: float
    attenuation_into_stage: float = 0.0
    bias_current_at_stage: Optional[float] = None
    effective_resistance: float = 50.0
    cooling_power: float = math.inf

    def __post_init__(self):
        if self.attenuation_into_stage < 0:
            raise ParameterError(f"attenuation must be non-negative: {self.attenuation_into_stage}")
        if self.temperature <= 0 or self.effective_resistance < 0:
            raise ParameterError(f"invalid cryostat stage at {self.temperature} K")


def stages_from_config(rows: Optional[Iterable[Dict]] = None) -> List[CryostatStage]:
    return [CryostatStage(**row) for row in (rows if rows is not None else DEFAULT_STAGES)]


# ---------------------------------------------------
# Bias-line coupling
# ---------------------------------------------------
def bias_filter_impedance(inductance: float, frequency_hz: float) -> float:
    if inductance < 0 or frequency_hz < 0:
        raise ParameterError("inductance and frequency must be non-negative")
    return 2 * math.pi * frequency_hz * inductance


def induced_current(participation_ratio: float, mutual_ratio: float, source_current: float) -> float:
    """Current induced in a shielded loop: (2π/(10p))·(M_A/M_a)·I_s."""
    if participation_ratio <= 0:
        raise ParameterError(f"participation ratio must be positive: {participation_ratio}")
    return 2 * math.pi / (10 * participation_ratio) * mutual_ratio * source_current


def quadrupole_field(current: float, distance: float, separation: float = SHIELD_SEPARATION) -> float:
    """Leading-order field of a shielded line pair: dipole field times (ε/r)²."""
    if not distance > separation > 0:
        raise ParameterError("expansion invalid: need r > ε > 0")
    dipole = CONSTANTS.vacuum_permeability * current / (2 * math.pi * distance)
    return dipole * (separation / distance) ** 2


# ---------------------------------------------------
# SNS proximity links
# ---------------------------------------------------
def coherence_lengths(film: NormalMetalFilm) -> Tuple[float, float]:
    """(ξ_c, ξ_d): clean thermal length and its dirty-limit geometric mean with l_n."""
    xi_c = CONSTANTS.reduced_planck * film.fermi_velocity / (
        2 * math.pi * CONSTANTS.boltzmann * film.temperature
    )
    if film.mean_free_path >= xi_c:
        raise ParameterError(
            f"dirty limit invalid: mean free path {film.mean_free_path:.3g} m ≥ ξ_c {xi_c:.3g} m"
        )
    xi_d = math.sqrt(film.mean_free_path * xi_c / 3)
    return xi_c, xi_d


def sns_link(film: NormalMetalFilm, xi_d: Optional[float] = None) -> SnsLink:
    if xi_d is None:
        _, xi_d = coherence_lengths(film)
    length = film.link_length
    if length <= xi_d:
        raise ParameterError("formula out of validity range: link length must exceed ξ_d")

    kt = CONSTANTS.boltzmann * film.temperature
    r_n = film.normal_resistance
    current = (
        2 * math.pi * kt / (r_n * CONSTANTS.electron_charge)
        * (xi_d / length) ** 2
        * math.exp(-length / xi_d)
        * math.exp(-length / film.inelastic_length)
    )
    energy = PHI0_REDUCED * current
    resistance = r_n * math.exp(-energy / kt)
    logger.debug("SNS link l=%.3g m: I_n=%.3g A, R=%.3g Ω", length, current, resistance)
    return SnsLink(current, energy, resistance, r_n)


# ---------------------------------------------------
# Noise
# ---------------------------------------------------
def johnson_noise_current(temperature: float, line_impedance: float = 50.0) -> float:
    if temperature < 0:
        raise ParameterError(f"temperature must be non-negative: {temperature}")
    return 4 * CONSTANTS.boltzmann * temperature / line_impedance


def added_noise_photons(
    ds21_dig: complex,
    ds21_dphi: complex,
    bias_current: float,
    i_1db: float,
    temperature: float,
    line_impedance: float,
    probe_frequency: float,
) -> Tuple[float, float]:
    """(photon number, amplitude-noise fraction) of the sidebands from bias-line Johnson noise."""
    if bias_current <= 0:
        raise ParameterError(f"bias current must be positive: {bias_current}")

    s_i = johnson_noise_current(temperature, line_impedance)
    amplitude = abs(ds21_dig * i_1db) ** 2 * s_i
    phase = abs(ds21_dphi * i_1db / bias_current) ** 2 * s_i
    total = amplitude + phase
    if total == 0:
        return 0.0, 0.0

    photons = total / (2 * CONSTANTS.reduced_planck * probe_frequency / line_impedance)
    return photons, amplitude / total


def transmission_derivatives(
    fc: FluxControl,
    spec: SquidArraySpec,
    bias_current: float,
    probe_frequency: float,
    template: Optional[CircuitParams] = None,
    truncation: int = 5,
    ports: Tuple[int, int] = (1, 0),
    pairing: str = "diagonal",
) -> Tuple[complex, complex]:
    """Central differences of S[0] for (I_g, φ); I_g is taken proportional to Φg."""
    from modules.circulator.floquet_solver import build_circulator_network, solve

    out_port, in_port = ports

    def carrier(flux: FluxControl) -> complex:
        p = circuit_params_from_flux(flux, spec, template)
        return solve(build_circulator_network(p, pairing), probe_frequency, truncation).carrier[out_port, in_port]

    step = NOISE_STEP_CURRENT_FRACTION
    upper = replace(fc, gradiometric_amplitude=fc.gradiometric_amplitude * (1 + step))
    lower = replace(fc, gradiometric_amplitude=fc.gradiometric_amplitude * (1 - step))
    ds_dig = (carrier(upper) - carrier(lower)) / (2 * step * bias_current)

    dphi = NOISE_STEP_PHASE
    ds_dphi = (
        carrier(fc.with_phase(fc.drive_phase_offset + dphi))
        - carrier(fc.with_phase(fc.drive_phase_offset - dphi))
    ) / (2 * dphi)
    return complex(ds_dig), complex(ds_dphi)


def i_1db_from_power(power: float, line_impedance: float = 50.0) -> float:
    """On-chip signal current amplitude for an input power: sqrt(2P/Z0)."""
    if power < 0:
        raise ParameterError(f"power must be non-negative: {power}")
    return math.sqrt(2 * power / line_impedance)


def attenuated_current(source_current: float, attenuations_db: Union[float, Sequence[float]]) -> float:
    if isinstance(attenuations_db, (int, float)):
        attenuations_db = [attenuations_db]
    current = source_current
    for attenuation in attenuations_db:
        if attenuation < 0:
            raise ParameterError(f"attenuation must be non-negative: {attenuation}")
        current *= 10 ** (-attenuation / 20)
    return current


def attenuated_noise_temperature(source_temperature: float,
                                 schedule: Sequence[Tuple[float, float]]) -> float:
    """Noise temperature after (stage temperature, attenuation dB) pads in order."""
    temperature = source_temperature
    for stage_temperature, attenuation in schedule:
        if attenuation < 0:
            raise ParameterError(f"attenuation must be non-negative: {attenuation}")
        loss = 10 ** (attenuation / 10)
        temperature = temperature / loss + stage_temperature * (1 - 1 / loss)
    return temperature


def photon_ratio(temperature: float, reference_temperature: float) -> float:
    if reference_temperature <= 0:
        raise ParameterError("reference temperature must be positive")
    return temperature / reference_temperature


def thermal_photons(reference_photons: float, reference_temperature: float, temperature: float) -> float:
    """Added photons rescaled to another bias-line temperature."""
    return reference_photons * photon_ratio(temperature, reference_temperature)


# ---------------------------------------------------
# Cryostat power budget
# ---------------------------------------------------
def power_budget(stages: Sequence[CryostatStage]) -> pd.DataFrame:
    if not stages:
        raise ParameterError("power budget needs at least one stage")
    for upper, lower in zip(stages, stages[1:]):
        if lower.temperature >= upper.temperature:
            raise ParameterError("stage temperatures must decrease down the chain")

    rows = []
    current = None
    for k, stage in enumerate(stages):
        if stage.bias_current_at_stage is not None:
            current = stage.bias_current_at_stage
        elif current is None:
            raise ParameterError("first stage needs an explicit bias current")
        else:
            current = attenuated_current(current, stage.attenuation_into_stage)

        heat = current ** 2 * stage.effective_resistance
        margin = stage.cooling_power - heat
        if margin < 0:
            logger.warning("stage %.3g K: heat load %.3g W exceeds cooling power", stage.temperature, heat)
        rows.append({
            "stage": f"stage {k + 1}",
            "temperature_K": stage.temperature,
            "bias_current_A": current,
            "heat_load_W": heat,
            "cooling_power_W": stage.cooling_power,
            "margin_W": margin,
            "exceeds_cooling_power": bool(margin < 0),
        })

    frame = pd.DataFrame(rows)
    total = {
        "stage": "total",
        "temperature_K": math.nan,
        "bias_current_A": math.nan,
        "heat_load_W": float(frame["heat_load_W"].sum()),
        "cooling_power_W": math.nan,
        "margin_W": math.nan,
        "exceeds_cooling_power": bool(frame["exceeds_cooling_power"].any()),
    }
    return pd.concat([frame, pd.DataFrame([total])], ignore_index=True)
