import logging
import math
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from modules.circulator.config import ISOLATION_THRESHOLD_DB, SUPPRESSION_CEILING_DB
from modules.circulator.errors import ParameterError
from modules.circulator.model_core import CONSTANTS

if TYPE_CHECKING:
    from modules.circulator.floquet_solver import HarmonicScatteringMatrix, SweepResult


logger = logging.getLogger(__name__)

DB_FLOOR = -SUPPRESSION_CEILING_DB

# ccw circulates port 1 → port 2, cw the reverse (0-based indices)
DIRECTION_PORTS = {"ccw": (0, 1), "cw": (1, 0)}


# ---------------------------------------------------
# dB helpers
# ---------------------------------------------------
def db(amplitude: float) -> float:
    """20·log10|x|, floored so tables never carry −inf."""
    magnitude = abs(amplitude)
    if magnitude <= 10 ** (DB_FLOOR / 20):
        return DB_FLOOR
    return 20 * math.log10(magnitude)


def power_db(power: float) -> float:
    if power <= 10 ** (DB_FLOOR / 10):
        return DB_FLOOR
    return 10 * math.log10(power)


def watts_to_dbm(power: float) -> float:
    if power <= 0:
        return -math.inf
    return 10 * math.log10(power / 1e-3)


def dbm_to_watts(power_dbm: float) -> float:
    return 1e-3 * 10 ** (power_dbm / 10)


# ---------------------------------------------------
# Metrics record
# ---------------------------------------------------
@dataclass
class MetricsRecord:
    direction: str
    operation_frequency: float
    insertion_loss: float
    max_isolation: float
    isolation_bandwidth_20dB: float
    sideband_suppression: float
    dissipation: float
    reflection: float = math.nan
    sideband_power_dB: float = math.nan
    compression_1dB: Optional[float] = None
    expansion_20dB: Optional[float] = None

    def to_dict(self) -> Dict:
        return asdict(self)


# ---------------------------------------------------
# Figures of merit
# ---------------------------------------------------
def dissipation(reflection: float, transmission: float) -> float:
    total = abs(reflection) ** 2 + abs(transmission) ** 2
    if total <= 0:
        return math.inf
    return -10 * math.log10(total)


def isolation_bandwidth(isolation_db: Sequence[float], frequencies_hz: Sequence[float],
                        threshold: float = ISOLATION_THRESHOLD_DB) -> float:
    """Width of the widest contiguous band above threshold, crossings interpolated in dB."""
    iso = np.asarray(isolation_db, dtype=float)
    freq = np.asarray(frequencies_hz, dtype=float)
    if iso.size < 2 or iso.size != freq.size:
        raise ParameterError("isolation bandwidth needs at least 2 samples")

    def crossing(i, j):
        # threshold crossing between samples i (below) and j (above)
        return freq[i] + (threshold - iso[i]) / (iso[j] - iso[i]) * (freq[j] - freq[i])

    above = iso >= threshold
    widest = 0.0
    k = 0
    while k < iso.size:
        if not above[k]:
            k += 1
            continue
        start = k
        while k + 1 < iso.size and above[k + 1]:
            k += 1
        stop = k
        left = freq[start] if start == 0 else crossing(start - 1, start)
        right = freq[stop] if stop == iso.size - 1 else crossing(stop + 1, stop)
        widest = max(widest, abs(right - left))
        k += 1
    return float(widest)


def sideband_suppression(s: "HarmonicScatteringMatrix", through_port: int, in_port: int = 0,
                         even_only: bool = False) -> float:
    """Carrier over the largest spurious sideband at the through port, in dB."""
    if s.truncation < 2:
        raise ParameterError("sideband suppression needs truncation M ≥ 2")

    carrier = abs(s.element(0, through_port, in_port)) ** 2
    if carrier == 0:
        return DB_FLOOR
    spurious = max(
        abs(s.element(m, through_port, in_port)) ** 2
        for m in s.orders() if m != 0 and (m % 2 == 0 or not even_only)
    )
    if spurious == 0:
        return SUPPRESSION_CEILING_DB
    return min(10 * math.log10(carrier / spurious), SUPPRESSION_CEILING_DB)


# ---------------------------------------------------
# Calibration
# ---------------------------------------------------
def balanced_reflection(omega: float, inductance: float, line_impedance: float = 50.0) -> complex:
    """Reflection of the bridge network biased to balance: (iωl + 2Z0)/(iωl − 4Z0)."""
    x = 1j * omega * inductance
    return (x + 2 * line_impedance) / (x - 4 * line_impedance)


def reflection_calibration(r_op: complex, r_bal: complex, omega: float, inductance: float,
                           line_impedance: float = 50.0) -> complex:
    if r_bal == 0:
        raise ParameterError("calibration undefined: balanced reference reading is zero")
    return balanced_reflection(omega, inductance, line_impedance) * r_op / r_bal


def raw_reflection(gamma_op: complex, r_bal: complex, omega: float, inductance: float,
                   line_impedance: float = 50.0) -> complex:
    """Inverse of reflection_calibration: the reading that calibrates to gamma_op."""
    if r_bal == 0:
        raise ParameterError("calibration undefined: balanced reference reading is zero")
    return gamma_op * r_bal / balanced_reflection(omega, inductance, line_impedance)


def photons_per_inverse_bandwidth(power: float, omega: float, bandwidth: float) -> float:
    if power <= 0 or omega <= 0 or bandwidth <= 0:
        raise ParameterError("power, frequency and bandwidth must be positive")
    return power / (CONSTANTS.reduced_planck * omega * bandwidth)


def deembed(samples, omegas, tau_d: float) -> np.ndarray:
    """Multiply each sample by e^{iωτ_d}."""
    samples = np.asarray(samples, dtype=complex)
    return samples * np.exp(1j * np.asarray(omegas, dtype=float) * tau_d)


def delay_frame(omegas: Sequence[float], samples: Sequence[complex], de_embed_delay: float = 0.0) -> pd.DataFrame:
    from modules.circulator.floquet_solver import group_delay

    omegas = np.asarray(omegas, dtype=float)
    samples = np.asarray(samples, dtype=complex)
    return pd.DataFrame({
        "f_Hz": omegas / (2 * math.pi),
        "magnitude_dB": [db(s) for s in samples],
        "phase_rad": np.unwrap(np.angle(samples)),
        "group_delay_s": group_delay(samples, omegas, de_embed_delay),
    })


# ---------------------------------------------------
# Sweep → MetricsRecord
# ---------------------------------------------------
def transmission_metrics(
    sweep: "SweepResult",
    direction: str = "ccw",
    threshold: float = ISOLATION_THRESHOLD_DB,
    strict: bool = False,
) -> MetricsRecord:
    """Figures of merit of one circulation direction over a frequency sweep.

    The operation frequency is the transmission peak. Sideband power is
    kept out of the dissipation budget unless ``strict`` is set.
    """
    if direction not in DIRECTION_PORTS:
        raise ParameterError(f"unknown direction: {direction}")
    drive, through = DIRECTION_PORTS[direction]

    valid = [k for k, m in enumerate(sweep.matrices) if m is not None]
    if len(valid) < 2:
        raise ParameterError("metrics need at least 2 solved sweep points")

    omegas = sweep.frequencies[valid]
    forward = np.abs(sweep.carrier(through, drive)[valid])
    reverse = np.abs(sweep.carrier(drive, through)[valid])
    isolation = np.array([-db(r) for r in reverse])

    peak = int(np.argmax(forward))
    matrix = sweep.matrices[valid[peak]]
    column = matrix.carrier[:, drive]
    transmitted = math.sqrt(sum(abs(column[mu]) ** 2 for mu in range(len(column)) if mu != drive))
    sidebands = matrix.sideband_power(drive)
    if strict:
        transmitted = math.sqrt(transmitted ** 2 + sidebands)

    suppression = (
        sideband_suppression(matrix, through, drive) if matrix.truncation >= 2 else math.nan
    )
    record = MetricsRecord(
        direction=direction,
        operation_frequency=float(omegas[peak] / (2 * math.pi)),
        insertion_loss=-db(forward[peak]),
        max_isolation=float(np.max(isolation)),
        isolation_bandwidth_20dB=isolation_bandwidth(isolation, omegas / (2 * math.pi), threshold),
        sideband_suppression=suppression,
        dissipation=dissipation(abs(column[drive]), transmitted),
        reflection=-db(column[drive]),
        sideband_power_dB=power_db(sidebands),
    )
    logger.debug("%s metrics: %s", direction, record)
    return record
