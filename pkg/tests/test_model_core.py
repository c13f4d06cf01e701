import math

import pytest

from modules.circulator.errors import ParameterError
from modules.circulator.model_core import (
    PHI0,
    CircuitParams,
    FluxControl,
    SquidArraySpec,
    bridge_inductances,
    circuit_params_from_flux,
    flux_to_bridge_params,
    internal_loss_conductance,
    resonant_delay_duration,
    resonant_frequency,
    squid_array_inductance,
    static_bridge_params,
)


OMEGA = 2 * math.pi * 120e6


def test_single_squid_inductance_at_zero_flux():
    spec = SquidArraySpec(1, 2e-6)
    assert squid_array_inductance(spec, 0.0) == pytest.approx(8.23e-11, rel=1e-3)


def test_array_of_twelve_is_close_to_one_nanohenry():
    assert squid_array_inductance(SquidArraySpec(12, 2e-6), 0.0) == pytest.approx(0.987e-9, rel=1e-3)


def test_third_of_a_flux_quantum_doubles_inductance():
    spec = SquidArraySpec(1, 2e-6)
    assert squid_array_inductance(spec, PHI0 / 3) == pytest.approx(2 * squid_array_inductance(spec, 0.0))


def test_half_flux_quantum_is_a_pole():
    with pytest.raises(ParameterError):
        squid_array_inductance(SquidArraySpec(), PHI0 / 2)


def test_invalid_array_spec():
    with pytest.raises(ParameterError):
        SquidArraySpec(0, 2e-6)
    with pytest.raises(ParameterError):
        SquidArraySpec(12, -1e-6)


def test_zero_uniform_flux_gives_balanced_bridge(spec):
    _, delta = flux_to_bridge_params(FluxControl(0.0, 0.05 * PHI0, OMEGA), spec)
    assert delta == 0.0


def test_quarter_flux_quantum_mapping(spec):
    l0, delta = flux_to_bridge_params(FluxControl(0.25 * PHI0, 0.05 * PHI0, OMEGA), spec)
    assert delta == pytest.approx(-0.158, abs=1e-3)
    assert l0 / spec.zero_flux_inductance == pytest.approx(1.423, abs=1e-3)


def test_no_gradiometric_flux_keeps_static_array(spec):
    l0, delta = flux_to_bridge_params(FluxControl(0.38 * PHI0, 0.0, OMEGA), spec)
    assert delta == 0.0
    assert l0 == pytest.approx(spec.zero_flux_inductance / math.cos(0.38 * math.pi))


def test_uniform_flux_at_pole_raises(spec):
    with pytest.raises(ParameterError):
        flux_to_bridge_params(FluxControl(0.5 * PHI0, 0.01 * PHI0, OMEGA), spec)


def test_validity_boundary_is_flagged(spec, caplog):
    fc = FluxControl(0.45 * PHI0, 0.06 * PHI0, OMEGA)
    assert fc.validity_boundary()
    flux_to_bridge_params(fc, spec)
    assert "validity boundary" in caplog.text


def test_static_bridge_params_small_flux_agrees_with_first_harmonic(spec):
    # small Φg: tan α tan β and the first-harmonic amplitude agree up to sign
    _, static = static_bridge_params(0.3 * PHI0, 0.001 * PHI0, spec)
    _, modulated = flux_to_bridge_params(FluxControl(0.3 * PHI0, 0.001 * PHI0, OMEGA), spec)
    assert static == pytest.approx(-modulated, rel=1e-4)


def test_bridge_inductances():
    assert bridge_inductances(1e-9, 0.0) == (1e-9, 1e-9)
    plus, minus = bridge_inductances(1e-9, 0.2)
    assert plus == pytest.approx(0.833e-9, rel=1e-3)
    assert minus == pytest.approx(1.25e-9)
    with pytest.raises(ParameterError):
        bridge_inductances(1e-9, 1.0)


def test_resonant_frequency_examples():
    p = CircuitParams(1e-9, 0.0, 1e-12)
    assert resonant_frequency(p) == pytest.approx(4.472e10, rel=1e-4)
    assert resonant_frequency(CircuitParams(1e-9, 0.2, 1e-12)) / (2 * math.pi) == pytest.approx(7.08e9, rel=1e-3)
    assert resonant_frequency(CircuitParams(4e-9, 0.0, 1e-12)) == pytest.approx(resonant_frequency(p) / 2)


def test_resonant_delay_duration_examples():
    p = CircuitParams(1e-9, 0.2, 1e-12, 50.0)
    assert resonant_delay_duration(p) == pytest.approx(10e-9)
    assert resonant_delay_duration(CircuitParams(1e-9, 0.1, 1e-12, 50.0)) == pytest.approx(40e-9)
    with pytest.raises(ParameterError, match="undercoupled"):
        resonant_delay_duration(CircuitParams(1e-9, 0.0, 1e-12))


def test_circuit_params_validation():
    with pytest.raises(ParameterError):
        CircuitParams(1e-9, 1.2)
    with pytest.raises(ParameterError):
        CircuitParams(-1e-9, 0.1)
    with pytest.raises(ParameterError):
        CircuitParams(1e-9, 0.1, internal_q=0.0)


def test_params_from_flux_keep_template_fields(spec):
    template = CircuitParams(1e-9, 0.0, capacitance=2e-12, internal_q=400.0, parasitic_resistance=0.01)
    fc = FluxControl(0.3 * PHI0, 0.05 * PHI0, OMEGA, 1.0)
    p = circuit_params_from_flux(fc, spec, template)
    assert p.capacitance == 2e-12
    assert p.internal_q == 400.0
    assert p.phase == 1.0
    assert p.modulation == OMEGA
    assert (p.l0, p.delta0) == flux_to_bridge_params(fc, spec)


def test_internal_loss_conductance():
    assert internal_loss_conductance(CircuitParams(1e-9, 0.0)) == 0.0
    p = CircuitParams(1e-9, 0.0, 1e-12, internal_q=400.0)
    assert internal_loss_conductance(p) == pytest.approx(resonant_frequency(p) * 1e-12 / 400.0)
