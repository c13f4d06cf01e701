import math
from dataclasses import replace

import numpy as np
import pytest

from modules.circulator.analysis import balanced_reflection
from modules.circulator.errors import FloquetError, ParameterError
from modules.circulator.floquet_solver import (
    GROUND,
    Branch,
    Modulation,
    NetworkDescription,
    Port,
    bridge_layout,
    build_circulator_network,
    build_delay_network,
    delay_network_peak,
    dominant_resonance,
    group_delay,
    mixed_mode_transmission,
    refine_truncation,
    solve,
    static_resonance,
    sweep,
)
from modules.circulator.model_core import CircuitParams, resonant_delay_duration, resonant_frequency


PROBE = 2 * math.pi * 4.5e9


def test_circulator_netlist_shape(nominal_params):
    net = build_circulator_network(nominal_params)
    assert net.n_nodes == 8
    assert net.n_ports == 4
    assert net.count("modulated_inductor") == 16
    assert net.count("capacitor") == 2
    assert net.is_modulated


def test_parasitics_add_series_nodes(nominal_params):
    lossy = replace(nominal_params, parasitic_resistance=0.01, geometric_inductance=50e-12, internal_q=400.0)
    net = build_circulator_network(lossy)
    assert net.count("resistor") == 16 + 2
    assert net.count("series_inductor") == 16
    assert net.n_nodes == 8 + 32


def test_balanced_network_is_static(balanced_params):
    net = build_circulator_network(balanced_params)
    assert not net.is_modulated
    assert all(b.inverse_inductance_harmonics()[1] == 0 for b in net.branches)


def test_bridge_layouts():
    diagonal = {b["name"]: b for b in bridge_layout("diagonal")}
    assert diagonal["A_in"]["line"] == 0 and diagonal["B_out"]["line"] == 0
    assert diagonal["B_out"]["polarity"] == -1
    arm = {b["name"]: b for b in bridge_layout("arm")}
    assert arm["A_out"]["line"] == 0 and arm["B_in"]["line"] == 1
    with pytest.raises(ParameterError):
        bridge_layout("crossed")


def test_branch_harmonics():
    branch = Branch("modulated_inductor", (0, 1), 1e-9, Modulation(0.2, 1.0, math.pi / 2, -1))
    g0, down, up = branch.inverse_inductance_harmonics()
    assert g0 == pytest.approx(1e9)
    assert down == pytest.approx(-0.1e9 * np.exp(-1j * math.pi / 2))
    assert up == pytest.approx(-0.1e9 * np.exp(1j * math.pi / 2))


def test_network_validation():
    ports = (Port(0), Port(1))
    with pytest.raises(ParameterError, match="not connected"):
        NetworkDescription(("x", "y", "z"), (Branch("capacitor", (0, 1), 1e-12),), ports)
    with pytest.raises(ParameterError, match="positive value"):
        NetworkDescription(("x", "y"), (Branch("capacitor", (0, 1), -1e-12),), ports)
    with pytest.raises(ParameterError, match="missing node"):
        NetworkDescription(("x", "y"), (Branch("capacitor", (0, 5), 1e-12),), ports)
    with pytest.raises(ParameterError, match="unknown branch kind"):
        NetworkDescription(("x", "y"), (Branch("diode", (0, 1), 1.0),), ports)


def test_series_inductor_two_port():
    # one inductor between two ports: S21 = 2Z0 / (2Z0 − iωL)
    net = NetworkDescription(
        ("x", "y"),
        (Branch("series_inductor", (0, 1), 1e-9),),
        (Port(0, GROUND, 50.0), Port(1, GROUND, 50.0)),
    )
    s = solve(net, PROBE, 0).carrier
    expected = 100.0 / (100.0 - 1j * PROBE * 1e-9)
    assert s[1, 0] == pytest.approx(expected)
    assert s[0, 0] == pytest.approx(1 - expected)


def test_balanced_reflection_closed_form(balanced_params):
    net = build_circulator_network(balanced_params)
    for f in (1e9, 4e9, 9e9):
        omega = 2 * math.pi * f
        got = solve(net, omega, 0).carrier[0, 0]
        assert got == pytest.approx(balanced_reflection(omega, 1e-9, 50.0), rel=1e-9)


def test_static_lossless_network_is_unitary_and_reciprocal(balanced_params):
    s = solve(build_circulator_network(balanced_params), PROBE, 0).carrier
    assert np.allclose(s @ s.conj().T, np.eye(4), atol=1e-10)
    assert np.allclose(s, s.T, atol=1e-12)


def test_phase_reversal_transposes_carrier(nominal_params):
    forward = solve(build_circulator_network(nominal_params.with_phase(1.0)), PROBE, 4).carrier
    reverse = solve(build_circulator_network(nominal_params.with_phase(-1.0)), PROBE, 4).carrier
    assert np.allclose(forward, reverse.T, atol=1e-9)


def test_sideband_orders(nominal_params):
    s = solve(build_circulator_network(nominal_params), PROBE, 3)
    assert s.orders().tolist() == [-3, -2, -1, 0, 1, 2, 3]
    assert s.frequency(2) == pytest.approx(PROBE + 2 * nominal_params.modulation)
    assert np.all(s.sideband(7) == 0)
    assert s.sideband_power(0) > 0


def test_negative_sideband_frequency_raises(nominal_params):
    net = build_circulator_network(nominal_params)
    with pytest.raises(FloquetError, match="negative sideband"):
        solve(net, 2 * nominal_params.modulation, 5)
    with pytest.raises(FloquetError):
        solve(net, PROBE, 0)


def test_truncation_converges(nominal_params):
    fine, drift = refine_truncation(build_circulator_network(nominal_params), PROBE, 5)
    assert fine.truncation == 10
    assert drift < 1e-3


def test_mixed_mode_transmission():
    carrier = np.zeros((4, 4), dtype=complex)
    carrier[1, 0] = 1.0
    carrier[3, 2] = 1.0
    assert mixed_mode_transmission(carrier) == pytest.approx(1.0)
    stack = np.stack([carrier, 2 * carrier])
    assert mixed_mode_transmission(stack).tolist() == pytest.approx([1.0, 2.0])


def test_group_delay_of_constant_and_pure_delay():
    omegas = 2 * math.pi * np.linspace(4.0e9, 4.1e9, 101)
    assert np.allclose(group_delay(np.full(omegas.size, 0.3 + 0.1j), omegas), 0.0)

    tau_d = 62e-9
    line = np.exp(1j * omegas * tau_d)
    assert np.allclose(group_delay(line, omegas), tau_d)
    assert np.allclose(group_delay(line, omegas, de_embed_delay=tau_d), 0.0, atol=1e-15)


def test_group_delay_grid_checks():
    omegas = 2 * math.pi * np.array([1e9, 1.1e9, 1.3e9])
    with pytest.raises(ParameterError, match="uniform"):
        group_delay(np.ones(3), omegas)
    with pytest.raises(ParameterError):
        group_delay(np.ones(2), omegas[:2])
    coarse = 2 * math.pi * np.linspace(1e9, 2e9, 5)
    with pytest.raises(ParameterError, match="undersampled"):
        group_delay(np.ones(5), coarse, de_embed_delay=1e-6)


def test_static_resonance_needs_static_network(nominal_params):
    with pytest.raises(FloquetError):
        static_resonance(build_circulator_network(nominal_params))


def test_delay_network_resonance_matches_closed_form():
    p = CircuitParams(1e-9, 0.2, 1e-12)
    pole = dominant_resonance(build_delay_network(p, 0.2 / math.sqrt(2)))
    assert pole.real == pytest.approx(resonant_frequency(p), rel=5e-3)
    assert pole.imag < 0


def test_delay_network_peak_order_of_magnitude():
    p = CircuitParams(1e-9, 0.2, 1e-12)
    _, tau = delay_network_peak(p, 0.2)
    assert 0.5 <= tau / resonant_delay_duration(p) <= 2.0


def test_sweep_threads_and_errors(nominal_params):
    omegas = np.array([2 * math.pi * 0.3e9, PROBE, PROBE + 2 * math.pi * 10e6])
    serial = sweep(nominal_params, omegas, 3, threads=1)
    threaded = sweep(nominal_params, omegas, 3, threads=2)

    assert serial.matrices[0] is None
    assert "negative sideband" in serial.errors[0]
    assert not serial.ok()
    assert np.allclose(serial.carriers()[1:], threaded.carriers()[1:])

    frame = serial.to_frame()
    assert len(frame) == 3
    assert {"f_Hz", "S21_dB", "S21_deg", "SB1_dB", "error"} <= set(frame.columns)
    assert math.isnan(frame["S21_dB"].iloc[0])


def test_even_sidebands_cancel_only_in_the_ideal_circuit(nominal_params):
    ideal = solve(build_circulator_network(nominal_params), PROBE, 5)
    spread = solve(build_circulator_network(nominal_params, inductor_scale={("A_in", 0): 1.01}), PROBE, 5)
    for m in (-2, 2):
        assert abs(ideal.element(m, 1, 0)) < 1e-10
        assert abs(spread.element(m, 1, 0)) > 1e-6


def test_inductor_scale_changes_one_branch(nominal_params):
    net = build_circulator_network(nominal_params, inductor_scale={("B_out", 2): 1.05})
    values = {b.label: b.value for b in net.branches if b.kind == "modulated_inductor"}
    assert values["B_out.2"] == pytest.approx(1.05 * nominal_params.l0)
    assert values["A_in.0"] == pytest.approx(nominal_params.l0)


def test_modulated_lossless_network_conserves_power(nominal_params):
    s = solve(build_circulator_network(nominal_params), PROBE, 5)
    for port in range(4):
        assert s.total_power(port) == pytest.approx(1.0, abs=1e-3)


def test_sweep_refinement_records_drift(nominal_params):
    omegas = [PROBE, PROBE + 2 * math.pi * 5e6]
    loose = sweep(nominal_params, omegas, 3, refine_tolerance=1.0)
    assert loose.truncation == 6
    assert loose.matrices[0].truncation == 6
    assert all(0.0 <= d < 1.0 for d in loose.drifts)
    assert loose.ok()
    assert "truncation_drift" in loose.to_frame().columns

    strict = sweep(nominal_params, omegas, 3, refine_tolerance=0.0)
    assert all("not converged" in e for e in strict.errors)
    assert strict.matrices[0] is not None

    assert "truncation_drift" not in sweep(nominal_params, omegas, 3).to_frame().columns


def test_sweep_refinement_skips_static_networks():
    net = build_delay_network(CircuitParams(1e-9, 0.2, 1e-12))
    result = sweep(net, [PROBE], 0, refine_tolerance=1e-4)
    assert result.truncation == 0
    assert result.drifts == [0.0]
    assert result.ok()
