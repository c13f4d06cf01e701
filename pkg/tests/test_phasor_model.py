import cmath
import math

import pytest

from modules.circulator.errors import ParameterError
from modules.circulator.phasor_model import (
    ArmConfig,
    SpectralSignal,
    apply_delay,
    canonical_gyrator,
    generalized_transmission,
    gyrator_matrix,
    multiply,
    optimal_phase,
    phase_law_cost,
    propagate_arm,
    propagate_two_arm_network,
    propagation_table,
)


OMEGA = 2 * math.pi * 120e6
QUARTER = math.pi / (2 * OMEGA)


def test_multiply_in_phase():
    out = multiply(SpectralSignal.tone(0.0), OMEGA, 0.0)
    assert out.indices() == [-1, 1]
    assert out.amplitude(1) == pytest.approx(0.5)
    assert out.amplitude(-1) == pytest.approx(0.5)


def test_multiply_quadrature():
    out = multiply(SpectralSignal.tone(0.0), OMEGA, math.pi / 2)
    assert out.amplitude(1) == pytest.approx(0.5j)
    assert out.amplitude(-1) == pytest.approx(-0.5j)


def test_two_multiplies_follow_product_to_sum():
    out = multiply(multiply(SpectralSignal.tone(0.0), OMEGA, 0.0), OMEGA, 0.0)
    assert out.amplitude(-2) == pytest.approx(0.25)
    assert out.amplitude(0) == pytest.approx(0.5)
    assert out.amplitude(2) == pytest.approx(0.25)


def test_multiply_empty_signal_raises():
    with pytest.raises(ParameterError):
        multiply(SpectralSignal(0.0), OMEGA, 0.0)


def test_delay_rotates_sidebands():
    sidebands = multiply(SpectralSignal.tone(0.0), OMEGA, 0.0)
    assert apply_delay(sidebands, 0.0) is sidebands

    delayed = apply_delay(sidebands, QUARTER)
    assert delayed.amplitude(1) == pytest.approx(0.5 * cmath.exp(1j * math.pi / 2))
    assert delayed.amplitude(-1) == pytest.approx(0.5 * cmath.exp(-1j * math.pi / 2))


def test_negative_delay_raises():
    with pytest.raises(ParameterError):
        apply_delay(SpectralSignal.tone(0.0), -1e-9)
    with pytest.raises(ParameterError):
        ArmConfig(0.0, 0.0, -1e-9)


def test_single_arm_leaves_sidebands():
    out = propagate_arm(ArmConfig(0.0, 0.0, QUARTER), SpectralSignal.tone(0.0), OMEGA)
    assert abs(out.amplitude(0)) < 1e-15
    assert out.amplitude(2) == pytest.approx(0.25 * cmath.exp(1j * math.pi / 2))
    assert out.amplitude(-2) == pytest.approx(0.25 * cmath.exp(-1j * math.pi / 2))


def test_canonical_gyrator_is_non_reciprocal():
    arm_a, arm_b = canonical_gyrator(OMEGA)
    forward = propagate_two_arm_network(arm_a, arm_b, SpectralSignal.tone(0.0), "forward", OMEGA)
    backward = propagate_two_arm_network(arm_a, arm_b, SpectralSignal.tone(0.0), "backward", OMEGA)

    assert forward.indices() == [0]
    assert forward.amplitude(0) == pytest.approx(-1, abs=1e-12)
    assert backward.indices() == [0]
    assert backward.amplitude(0) == pytest.approx(1, abs=1e-12)


def test_gyrator_matrix():
    matrix = gyrator_matrix(*canonical_gyrator(OMEGA), OMEGA)
    assert matrix[1, 0] == pytest.approx(-1, abs=1e-12)
    assert matrix[0, 1] == pytest.approx(1, abs=1e-12)


def test_unknown_direction_raises():
    with pytest.raises(ParameterError):
        propagate_arm(ArmConfig(0.0, 0.0, QUARTER), SpectralSignal.tone(0.0), OMEGA, "sideways")


def test_propagation_table_stages():
    table = propagation_table(*canonical_gyrator(OMEGA), OMEGA)
    assert list(table.columns) == ["stage", "arm", "direction", "m", "amplitude", "phase_rad"]

    combined = table[(table["stage"] == "5 combined") & (table["direction"] == "forward")]
    assert combined["m"].tolist() == [0]
    assert combined["amplitude"].iloc[0] == pytest.approx(1.0)
    assert abs(combined["phase_rad"].iloc[0]) == pytest.approx(math.pi)


@pytest.mark.parametrize(
    "phi, expected",
    [
        (math.pi / 2, (1.0, 0.0)),
        (3 * math.pi / 2, (0.0, 1.0)),
        (0.0, (0.5, 0.5)),
    ],
)
def test_generalized_transmission_reference_points(phi, expected):
    s21, s12 = generalized_transmission(math.pi / 2, phi)
    assert s21 == pytest.approx(expected[0], abs=1e-12)
    assert s12 == pytest.approx(expected[1], abs=1e-12)


def test_phase_law_symmetry():
    for phi in (0.3, 1.1, 2.5, 4.0):
        s21, s12 = generalized_transmission(1.2, phi)
        assert generalized_transmission(1.2, -phi) == pytest.approx((s12, s21))
        assert sum(generalized_transmission(math.pi / 2, phi)) == pytest.approx(1.0)


def test_optimal_phase_at_quarter_period_delay():
    assert optimal_phase(math.pi / 2) == pytest.approx(math.pi / 2, abs=1e-4)


def test_long_delay_moves_optimal_phase_above_quarter_turn():
    # 3 ns at 120 MHz; the capped isolation term lets insertion loss pull φ below Ωτ
    omega_tau = OMEGA * 3e-9
    phi = optimal_phase(omega_tau)
    assert 0.6 * math.pi <= phi <= 0.8 * math.pi
    cost = phase_law_cost(omega_tau, phi)
    for neighbour in (phi - 0.01, phi + 0.01, omega_tau, math.pi / 2):
        assert cost <= phase_law_cost(omega_tau, neighbour) + 1e-9
