import math

import numpy as np
import pytest

from modules.circulator.analysis import (
    balanced_reflection,
    db,
    dbm_to_watts,
    deembed,
    delay_frame,
    dissipation,
    isolation_bandwidth,
    photons_per_inverse_bandwidth,
    power_db,
    raw_reflection,
    reflection_calibration,
    sideband_suppression,
    transmission_metrics,
    watts_to_dbm,
)
from modules.circulator.errors import ParameterError
from modules.circulator.floquet_solver import HarmonicScatteringMatrix, SweepResult
from modules.circulator.model_core import CONSTANTS


def harmonic_matrix(carrier, sidebands, truncation=2):
    """Two-port matrix driven at port 0; ``sidebands`` maps m to the port-1 amplitude."""
    entries = np.zeros((2 * truncation + 1, 2, 2), dtype=complex)
    entries[truncation] = carrier
    for m, amplitude in sidebands.items():
        entries[m + truncation, 1, 0] = amplitude
    return HarmonicScatteringMatrix(2 * math.pi * 4e9, truncation, entries, 2 * math.pi * 120e6)


def test_db_helpers():
    assert db(0.1) == pytest.approx(-20.0)
    assert db(0.0) == -300.0
    assert power_db(0.0) == -300.0
    assert power_db(1e-3) == pytest.approx(-30.0)
    assert watts_to_dbm(1e-3) == pytest.approx(0.0)
    assert watts_to_dbm(0.0) == -math.inf
    assert dbm_to_watts(-90.0) == pytest.approx(1e-12)


def test_dissipation_examples():
    assert dissipation(math.sqrt(0.5), math.sqrt(0.5)) == pytest.approx(0.0, abs=1e-12)
    assert dissipation(math.sqrt(0.4), math.sqrt(0.5)) == pytest.approx(0.458, abs=1e-3)
    assert dissipation(0.0, 10 ** -0.05) == pytest.approx(1.0)
    assert dissipation(0.0, 0.0) == math.inf


def test_isolation_bandwidth_constant():
    freqs = np.linspace(4.0e9, 4.1e9, 11)
    assert isolation_bandwidth(np.full(11, 30.0), freqs) == pytest.approx(100e6)
    assert isolation_bandwidth(np.full(11, 10.0), freqs) == 0.0


def test_isolation_bandwidth_lorentzian():
    # 40 dB peak with half width γ: the 20 dB crossing sits at |Δ| = γ·sqrt(10² − 1)
    gamma = 1e6
    freqs = np.linspace(4.0e9 - 20e6, 4.0e9 + 20e6, 4001)
    detuning = freqs - 4.0e9
    iso = 40.0 - 10 * np.log10(1 + (detuning / gamma) ** 2)
    width = 2 * gamma * math.sqrt(99)
    step = freqs[1] - freqs[0]
    assert isolation_bandwidth(iso, freqs) == pytest.approx(width, abs=step)


def test_isolation_bandwidth_picks_widest_band():
    freqs = np.arange(10) * 1e6
    iso = np.array([25, 25, 5, 5, 25, 25, 25, 25, 5, 5], dtype=float)
    assert isolation_bandwidth(iso, freqs) == pytest.approx(3.5e6)


def test_isolation_bandwidth_needs_samples():
    with pytest.raises(ParameterError):
        isolation_bandwidth([30.0], [1e9])


def test_sideband_suppression():
    carrier = np.array([[0, 0], [1, 0]], dtype=complex)
    s = harmonic_matrix(carrier, {-1: 0.01, 1: 0.005, 2: 0.001})
    assert sideband_suppression(s, 1) == pytest.approx(40.0)
    assert sideband_suppression(s, 1, even_only=True) == pytest.approx(60.0)
    assert sideband_suppression(harmonic_matrix(carrier, {}), 1) == 300.0
    with pytest.raises(ParameterError, match="M ≥ 2"):
        sideband_suppression(harmonic_matrix(carrier, {}, truncation=1), 1)


def test_balanced_reflection():
    assert balanced_reflection(0.0, 1e-9) == pytest.approx(-0.5)
    assert abs(balanced_reflection(2 * math.pi * 5e9, 1e-9, 50.0)) == pytest.approx(0.518, abs=1e-3)


def test_reflection_calibration_round_trip():
    omega = 2 * math.pi * 4.5e9
    r_bal = 0.3 - 0.2j
    assert reflection_calibration(r_bal, r_bal, omega, 1e-9) == pytest.approx(balanced_reflection(omega, 1e-9))
    gamma = reflection_calibration(0.1 + 0.05j, r_bal, omega, 1e-9)
    assert raw_reflection(gamma, r_bal, omega, 1e-9) == pytest.approx(0.1 + 0.05j)
    with pytest.raises(ParameterError):
        reflection_calibration(0.1, 0.0, omega, 1e-9)


def test_photons_per_inverse_bandwidth():
    omega, bandwidth = 2 * math.pi * 4e9, 50e6
    quantum = CONSTANTS.reduced_planck * omega * bandwidth
    assert photons_per_inverse_bandwidth(quantum, omega, bandwidth) == pytest.approx(1.0)
    count = photons_per_inverse_bandwidth(1e-12, 2 * math.pi * 4.044e9, 50e6)
    assert count == pytest.approx(7.5e3, rel=1e-2)
    assert photons_per_inverse_bandwidth(0.5e-12, 2 * math.pi * 4.044e9, 50e6) == pytest.approx(count / 2)
    with pytest.raises(ParameterError):
        photons_per_inverse_bandwidth(0.0, omega, bandwidth)


def test_deembed_removes_line_delay():
    omegas = 2 * math.pi * np.linspace(4e9, 5e9, 51)
    samples = np.exp(-1j * omegas * 62e-9)
    assert np.allclose(deembed(samples, omegas, 0.0), samples)
    assert np.allclose(deembed(samples, omegas, 62e-9), 1.0)


def test_delay_frame_columns():
    omegas = 2 * math.pi * np.linspace(4e9, 4.01e9, 11)
    frame = delay_frame(omegas, np.exp(1j * omegas * 5e-9))
    assert list(frame.columns) == ["f_Hz", "magnitude_dB", "phase_rad", "group_delay_s"]
    assert frame["group_delay_s"].to_numpy() == pytest.approx(np.full(11, 5e-9))


def synthetic_sweep(forward, reverse, freqs_hz, reflection=0.0):
    matrices = []
    for s21, s12 in zip(forward, reverse):
        carrier = np.array([[reflection, s12], [s21, reflection]], dtype=complex)
        matrices.append(harmonic_matrix(carrier, {}))
    return SweepResult(2 * math.pi * np.asarray(freqs_hz), matrices, [""] * len(matrices), 2, 2)


def test_transmission_metrics_from_sweep():
    freqs = np.linspace(4.40e9, 4.44e9, 5)
    forward = [0.5, 0.8, 10 ** -0.025, 0.8, 0.5]
    reverse = [0.5, 0.05, 0.01, 0.05, 0.5]
    record = transmission_metrics(synthetic_sweep(forward, reverse, freqs), "ccw")

    assert record.operation_frequency == pytest.approx(4.42e9)
    assert record.insertion_loss == pytest.approx(0.5)
    assert record.max_isolation == pytest.approx(40.0)
    assert record.isolation_bandwidth_20dB > 20e6
    assert record.sideband_suppression == 300.0
    assert record.reflection == 300.0


def test_transmission_metrics_reverse_direction():
    freqs = np.linspace(4.40e9, 4.44e9, 5)
    record = transmission_metrics(synthetic_sweep([0.01] * 5, [0.9] * 5, freqs), "cw")
    assert record.insertion_loss == pytest.approx(-20 * math.log10(0.9))
    assert record.max_isolation == pytest.approx(40.0)
    with pytest.raises(ParameterError):
        transmission_metrics(synthetic_sweep([0.01] * 5, [0.9] * 5, freqs), "sideways")
