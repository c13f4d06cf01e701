import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg

from modules.circulator.analysis import db, deembed
from modules.circulator.config import DEFAULT_SOLVER
from modules.circulator.errors import FloquetError, ParameterError
from modules.circulator.model_core import CircuitParams, internal_loss_conductance


logger = logging.getLogger(__name__)

GROUND = -1
BRANCH_KINDS = ("modulated_inductor", "capacitor", "resistor", "series_inductor")
BRIDGES = ("A_in", "A_out", "B_in", "B_out")

# Port order of every four-port built here: P1, P2, P3, P4.
INPUT_PAIR = (0, 2)
OUTPUT_PAIR = (1, 3)


# ---------------------------------------------------
# Netlist types
# ---------------------------------------------------
@dataclass(frozen=True)
class Modulation:
    """1/l(t) = (1 + sign·depth·cos(Ωt + phase)) / l."""

    depth: float
    frequency: float
    phase: float
    sign: int = 1


@dataclass(frozen=True)
class Branch:
    kind: str
    nodes: Tuple[int, int]
    value: float
    modulation: Optional[Modulation] = None
    label: str = ""

    def inverse_inductance_harmonics(self) -> Tuple[float, complex, complex]:
        """(Γ0, coefficient of e^{-iΩt}, coefficient of e^{+iΩt})."""
        base = 1.0 / self.value
        if self.modulation is None or self.modulation.depth == 0:
            return base, 0j, 0j
        half = 0.5 * self.modulation.sign * self.modulation.depth * base
        return (
            base,
            half * np.exp(-1j * self.modulation.phase),
            half * np.exp(1j * self.modulation.phase),
        )


@dataclass(frozen=True)
class Port:
    node: int
    reference: int = GROUND
    impedance: float = 50.0
    label: str = ""


@dataclass(frozen=True)
class NetworkDescription:
    node_names: Tuple[str, ...]
    branches: Tuple[Branch, ...]
    ports: Tuple[Port, ...]
    modulation_frequency: float = 0.0

    def __post_init__(self):
        n = len(self.node_names)
        for branch in self.branches:
            if branch.kind not in BRANCH_KINDS:
                raise ParameterError(f"unknown branch kind: {branch.kind}")
            if any(node != GROUND and not 0 <= node < n for node in branch.nodes):
                raise ParameterError(f"branch {branch.label or branch.kind} references a missing node")
            if branch.value <= 0:
                raise ParameterError(f"branch {branch.label or branch.kind} needs a positive value")
        for port in self.ports:
            if not 0 <= port.node < n or (port.reference != GROUND and not 0 <= port.reference < n):
                raise ParameterError(f"port {port.label} references a missing node")
            if port.impedance <= 0:
                raise ParameterError(f"port {port.label} needs a positive impedance")
        if not self._connected():
            raise ParameterError("network graph is not connected")

    def _connected(self) -> bool:
        parent = list(range(len(self.node_names) + 1))
        ground = len(self.node_names)

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        edges = [b.nodes for b in self.branches] + [(p.node, p.reference) for p in self.ports]
        for a, b in edges:
            a = ground if a == GROUND else a
            b = ground if b == GROUND else b
            parent[find(a)] = find(b)
        return len({find(i) for i in range(ground + 1)}) == 1

    @property
    def n_nodes(self) -> int:
        return len(self.node_names)

    @property
    def n_ports(self) -> int:
        return len(self.ports)

    @property
    def is_modulated(self) -> bool:
        return any(
            b.modulation is not None and b.modulation.depth != 0 for b in self.branches
        )

    def count(self, kind: str) -> int:
        return sum(1 for b in self.branches if b.kind == kind)


# ---------------------------------------------------
# Circulator netlist
# ---------------------------------------------------
def bridge_layout(pairing: str = "diagonal") -> List[Dict]:
    """Bridge wiring: port pair, internal pair, bias line and polarity.

    Line 0 carries phase 0 and line 1 carries φ. The diagonal pairing drives
    the input bridge of arm A and the (inverted) output bridge of arm B from
    line 0; the arm pairing gives each arm its own line.
    """
    if pairing == "diagonal":
        lines = {"A_in": (0, 1), "A_out": (1, 1), "B_in": (1, 1), "B_out": (0, -1)}
    elif pairing == "arm":
        lines = {"A_in": (0, 1), "A_out": (0, 1), "B_in": (1, 1), "B_out": (1, 1)}
    else:
        raise ParameterError(f"unknown bias pairing: {pairing}")

    # output pair enters the ring as (P4, P2)
    wiring = {
        "A_in": ((0, 2), (4, 5)),
        "A_out": ((3, 1), (4, 5)),
        "B_in": ((0, 2), (6, 7)),
        "B_out": ((3, 1), (6, 7)),
    }
    return [
        {
            "name": name,
            "ports": wiring[name][0],
            "internal": wiring[name][1],
            "line": lines[name][0],
            "polarity": lines[name][1],
        }
        for name in BRIDGES
    ]


class _NetlistBuilder:
    def __init__(self, node_names):
        self.node_names = list(node_names)
        self.branches = []

    def node(self, name):
        self.node_names.append(name)
        return len(self.node_names) - 1

    def add(self, kind, a, b, value, modulation=None, label=""):
        self.branches.append(Branch(kind, (a, b), value, modulation, label))

    def add_arm_inductor(self, a, b, inductance, modulation, p: CircuitParams, label):
        # a -[r_au]- -[lg]- -[l(t)]- b
        start = a
        if p.parasitic_resistance > 0:
            mid = self.node(f"{label}.r")
            self.add("resistor", start, mid, p.parasitic_resistance, label=f"{label}.r_au")
            start = mid
        if p.geometric_inductance > 0:
            mid = self.node(f"{label}.g")
            self.add("series_inductor", start, mid, p.geometric_inductance, label=f"{label}.lg")
            start = mid
        self.add("modulated_inductor", start, b, inductance, modulation, label)


def _build_four_port(p: CircuitParams, bridge_imbalance: Dict[str, float], modulated: bool,
                     pairing: str, inductor_scale: Optional[Dict[Tuple[str, int], float]]):
    builder = _NetlistBuilder(["P1", "P2", "P3", "P4", "a", "a'", "b", "b'"])
    inductor_scale = inductor_scale or {}
    line_phase = {0: 0.0, 1: p.phase}

    for bridge in bridge_layout(pairing):
        name = bridge["name"]
        delta = bridge_imbalance[name]
        (pp, pq), (x, xp) = bridge["ports"], bridge["internal"]
        ring = [(pp, x, 1), (x, pq, -1), (pq, xp, 1), (xp, pp, -1)]

        for index, (u, v, arm_sign) in enumerate(ring):
            sign = arm_sign * bridge["polarity"]
            l0 = p.l0 * inductor_scale.get((name, index), 1.0)
            if modulated:
                modulation = Modulation(delta, p.modulation, line_phase[bridge["line"]], sign) if delta else None
                inductance = l0
            else:
                modulation = None
                inductance = l0 / (1 + sign * delta)
            builder.add_arm_inductor(u, v, inductance, modulation, p, f"{name}.{index}")

    loss = internal_loss_conductance(p)
    for label, (x, xp) in (("c_a", (4, 5)), ("c_b", (6, 7))):
        builder.add("capacitor", x, xp, p.capacitance, label=label)
        if loss > 0:
            builder.add("resistor", x, xp, 1.0 / loss, label=f"{label}.q_int")

    ports = tuple(
        Port(node, GROUND, p.line_impedance, f"P{node + 1}") for node in range(4)
    )
    return NetworkDescription(
        tuple(builder.node_names),
        tuple(builder.branches),
        ports,
        p.modulation if modulated else 0.0,
    )


def build_circulator_network(
    p: CircuitParams,
    pairing: str = "diagonal",
    inductor_scale: Optional[Dict[Tuple[str, int], float]] = None,
) -> NetworkDescription:
    """Four modulated bridges, two capacitors, four ports to ground.

    ``inductor_scale`` rescales single inductors, keyed by (bridge, ring index),
    to model fabrication spread.
    """
    imbalance = {name: p.delta0 for name in BRIDGES}
    net = _build_four_port(p, imbalance, True, pairing, inductor_scale)
    logger.debug(
        "circulator netlist: %d nodes, %d branches (%s pairing)",
        net.n_nodes, len(net.branches), pairing,
    )
    return net


def build_delay_network(p: CircuitParams, delta: Optional[float] = None,
                        pairing: str = "diagonal") -> NetworkDescription:
    """Static resonant-delay network: arm A bridges held at δ, arm B balanced."""
    delta = p.delta0 if delta is None else delta
    imbalance = {"A_in": delta, "A_out": delta, "B_in": 0.0, "B_out": 0.0}
    return _build_four_port(p, imbalance, False, pairing, None)


# ---------------------------------------------------
# Nodal matrices
# ---------------------------------------------------
@dataclass(frozen=True)
class NodalMatrices:
    inverse_inductance: np.ndarray
    raise_coupling: np.ndarray
    lower_coupling: np.ndarray
    capacitance: np.ndarray
    conductance: np.ndarray
    port_incidence: np.ndarray
    port_impedance: np.ndarray


def _stamp(matrix, a, b, value):
    if a != GROUND:
        matrix[a, a] += value
    if b != GROUND:
        matrix[b, b] += value
    if a != GROUND and b != GROUND:
        matrix[a, b] -= value
        matrix[b, a] -= value


@lru_cache(maxsize=64)
def nodal_matrices(net: NetworkDescription) -> NodalMatrices:
    n = net.n_nodes
    gamma0 = np.zeros((n, n))
    gamma_up = np.zeros((n, n), dtype=complex)
    gamma_down = np.zeros((n, n), dtype=complex)
    cap = np.zeros((n, n))
    cond = np.zeros((n, n))

    for branch in net.branches:
        a, b = branch.nodes
        if branch.kind in ("modulated_inductor", "series_inductor"):
            g0, g_up, g_down = branch.inverse_inductance_harmonics()
            _stamp(gamma0, a, b, g0)
            if g_up:
                _stamp(gamma_up, a, b, g_up)
                _stamp(gamma_down, a, b, g_down)
        elif branch.kind == "capacitor":
            _stamp(cap, a, b, branch.value)
        elif branch.kind == "resistor":
            _stamp(cond, a, b, 1.0 / branch.value)

    incidence = np.zeros((net.n_ports, n))
    for k, port in enumerate(net.ports):
        _stamp(cond, port.node, port.reference, 1.0 / port.impedance)
        incidence[k, port.node] = 1.0
        if port.reference != GROUND:
            incidence[k, port.reference] = -1.0

    return NodalMatrices(
        gamma0, gamma_up, gamma_down, cap, cond, incidence,
        np.array([port.impedance for port in net.ports]),
    )


# ---------------------------------------------------
# Harmonic scattering matrix
# ---------------------------------------------------
@dataclass
class HarmonicScatteringMatrix:
    probe_frequency: float
    truncation: int
    entries: np.ndarray
    modulation_frequency: float = 0.0

    @property
    def carrier(self) -> np.ndarray:
        return self.entries[self.truncation]

    @property
    def n_ports(self) -> int:
        return self.entries.shape[1]

    def sideband(self, m: int) -> np.ndarray:
        if abs(m) > self.truncation:
            return np.zeros_like(self.carrier)
        return self.entries[m + self.truncation]

    def element(self, m: int, out_port: int, in_port: int) -> complex:
        return complex(self.sideband(m)[out_port, in_port])

    def frequency(self, m: int) -> float:
        return self.probe_frequency + m * self.modulation_frequency

    def orders(self) -> np.ndarray:
        return np.arange(-self.truncation, self.truncation + 1)

    def total_power(self, in_port: int) -> float:
        """Σ over sidebands and ports of |S|² for a unit drive at ``in_port``."""
        return float(np.sum(np.abs(self.entries[:, :, in_port]) ** 2))

    def sideband_power(self, in_port: int, out_port: Optional[int] = None) -> float:
        mask = self.orders() != 0
        column = self.entries[mask, :, in_port]
        if out_port is not None:
            column = column[:, out_port]
        return float(np.sum(np.abs(column) ** 2))


def solve(net: NetworkDescription, probe_frequency: float, truncation: int = 5) -> HarmonicScatteringMatrix:
    """Block-tridiagonal harmonic balance in node-flux form.

    Block m: (Γ0 − ω_m² C − iω_m G) ψ_m + Γ₊ ψ_{m−1} + Γ₋ ψ_{m+1} = J_m,
    physics time convention e^{−iωt}.
    """
    if truncation < 0:
        raise FloquetError(f"truncation must be non-negative: {truncation}")
    if net.is_modulated and truncation < 1:
        raise FloquetError("a modulated network needs truncation M ≥ 1")

    omega_mod = net.modulation_frequency
    orders = np.arange(-truncation, truncation + 1)
    omegas = probe_frequency + orders * omega_mod
    if np.any(omegas <= 0):
        raise FloquetError(
            f"negative sideband frequency within truncation M={truncation} at ω_p={probe_frequency:.6g}"
        )

    mats = nodal_matrices(net)
    n = net.n_nodes
    blocks = len(orders)
    system = np.zeros((blocks * n, blocks * n), dtype=complex)
    for k, w in enumerate(omegas):
        rows = slice(k * n, (k + 1) * n)
        system[rows, rows] = mats.inverse_inductance - w ** 2 * mats.capacitance - 1j * w * mats.conductance
        if k > 0:
            system[rows, (k - 1) * n:k * n] = mats.raise_coupling
        if k < blocks - 1:
            system[rows, (k + 1) * n:(k + 2) * n] = mats.lower_coupling

    # unit incident wave: Thévenin source E = 2√Z0 seen as a Norton current E/Z0
    rhs = np.zeros((blocks * n, net.n_ports), dtype=complex)
    center = truncation * n
    rhs[center:center + n, :] = mats.port_incidence.T * (2.0 / np.sqrt(mats.port_impedance))

    try:
        flux = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise FloquetError("network resonance exactly at solve frequency with zero damping") from exc
    if not np.all(np.isfinite(flux)):
        raise FloquetError("network resonance exactly at solve frequency with zero damping")

    flux = flux.reshape(blocks, n, net.n_ports)
    voltages = -1j * omegas[:, None, None] * np.einsum("pn,knv->kpv", mats.port_incidence, flux)
    entries = voltages / np.sqrt(mats.port_impedance)[None, :, None]
    entries[truncation] -= np.eye(net.n_ports)

    return HarmonicScatteringMatrix(probe_frequency, truncation, entries, omega_mod)


def _drift_message(truncation: int, drift: float) -> str:
    return f"truncation M={truncation} not converged: |ΔS[0]| = {drift:.3g}"


def refine_truncation(
    net: NetworkDescription,
    probe_frequency: float,
    truncation: int = 5,
    tolerance: float = DEFAULT_SOLVER["refine_tolerance"],
    strict: bool = False,
) -> Tuple[HarmonicScatteringMatrix, float]:
    """Solve at M and 2M; return the 2M result and the largest change in |S[0]|."""
    coarse = solve(net, probe_frequency, truncation)
    fine = solve(net, probe_frequency, 2 * truncation)
    drift = float(np.max(np.abs(np.abs(fine.carrier) - np.abs(coarse.carrier))))
    if drift > tolerance:
        message = _drift_message(truncation, drift)
        if strict:
            raise FloquetError(message)
        logger.warning(message)
    return fine, drift


# ---------------------------------------------------
# Derived quantities
# ---------------------------------------------------
def mixed_mode_transmission(carrier: np.ndarray, in_pair: Tuple[int, int] = INPUT_PAIR,
                            out_pair: Tuple[int, int] = OUTPUT_PAIR) -> np.ndarray:
    """Differential-to-differential transmission; works on (..., P, P) stacks."""
    (i1, i2), (o1, o2) = in_pair, out_pair
    s = np.asarray(carrier)
    return (s[..., o1, i1] - s[..., o1, i2] - s[..., o2, i1] + s[..., o2, i2]) / 2


def group_delay(samples: Sequence[complex], omegas: Sequence[float], de_embed_delay: float = 0.0) -> np.ndarray:
    """τ = d∠S/dω after de-embedding; central differences, one-sided at the ends."""
    samples = np.asarray(samples, dtype=complex)
    omegas = np.asarray(omegas, dtype=float)
    if samples.size < 3 or samples.size != omegas.size:
        raise ParameterError("group delay needs at least 3 samples on the frequency grid")

    steps = np.diff(omegas)
    if steps[0] <= 0 or not np.allclose(steps, steps[0], rtol=1e-6, atol=0.0):
        raise ParameterError("group delay needs a uniform increasing frequency grid")
    if abs(de_embed_delay) * steps[0] > math.pi:
        raise ParameterError("undersampled phase")

    # a line delay τ_d shows up as +ωτ_d here, so it comes off with e^{-iωτ_d}
    phase = np.unwrap(np.angle(deembed(samples, omegas, -de_embed_delay)))
    tau = np.gradient(phase, omegas)
    if np.any(np.abs(tau) * steps[0] > math.pi):
        raise ParameterError("undersampled phase")
    return tau


def static_resonance(net: NetworkDescription) -> np.ndarray:
    """Natural frequencies of an unmodulated network, sorted by real part.

    Linearizes C ψ'' + G ψ' + Γ ψ = 0 to a generalized eigenproblem; with the
    e^{−iωt} convention damped modes have Im ω < 0.
    """
    if net.is_modulated:
        raise FloquetError("static pole analysis needs an unmodulated network")

    mats = nodal_matrices(net)
    n = net.n_nodes
    identity = np.eye(n)
    zeros = np.zeros((n, n))
    a = np.block([[zeros, identity], [-mats.inverse_inductance, -mats.conductance]])
    b = np.block([[identity, zeros], [zeros, mats.capacitance]])

    eigenvalues = scipy.linalg.eig(a, b, right=False)
    eigenvalues = eigenvalues[np.isfinite(eigenvalues)]
    omegas = 1j * eigenvalues
    omegas = omegas[omegas.real > 0]
    return omegas[np.argsort(omegas.real)]


def dominant_resonance(net: NetworkDescription) -> complex:
    """The damped resonance with the highest quality factor."""
    poles = static_resonance(net)
    damped = poles[poles.imag < -1e-9 * np.abs(poles)]
    if damped.size == 0:
        raise FloquetError("network has no damped resonance")
    quality = damped.real / (-2 * damped.imag)
    return complex(damped[int(np.argmax(quality))])


def delay_network_peak(p: CircuitParams, delta: Optional[float] = None, points: int = 401,
                       span: float = 6.0, pairing: str = "diagonal") -> Tuple[float, float]:
    """(ω at peak, peak group delay) of the differential transmission of the delay network."""
    net = build_delay_network(p, delta, pairing)
    pole = dominant_resonance(net)
    half_width = -pole.imag
    omegas = np.linspace(pole.real - span * half_width, pole.real + span * half_width, points)
    carriers = np.array([solve(net, w, 0).carrier for w in omegas])
    tau = group_delay(mixed_mode_transmission(carriers), omegas)
    peak = int(np.argmax(tau))
    return float(omegas[peak]), float(tau[peak])


# ---------------------------------------------------
# Sweeps
# ---------------------------------------------------
@dataclass
class SweepResult:
    frequencies: np.ndarray
    matrices: List[Optional[HarmonicScatteringMatrix]]
    errors: List[str]
    truncation: int
    n_ports: int
    labels: Dict[str, float] = field(default_factory=dict)
    drifts: List[float] = field(default_factory=list)

    def carrier(self, out_port: int, in_port: int) -> np.ndarray:
        return self.sideband(0, out_port, in_port)

    def sideband(self, m: int, out_port: int, in_port: int) -> np.ndarray:
        values = np.full(len(self.matrices), np.nan + 0j)
        for k, matrix in enumerate(self.matrices):
            if matrix is not None:
                values[k] = matrix.element(m, out_port, in_port)
        return values

    def carriers(self) -> np.ndarray:
        stack = np.full((len(self.matrices), self.n_ports, self.n_ports), np.nan + 0j)
        for k, matrix in enumerate(self.matrices):
            if matrix is not None:
                stack[k] = matrix.carrier
        return stack

    def ok(self) -> bool:
        return not any(self.errors)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for k, w in enumerate(self.frequencies):
            row = {"f_Hz": w / (2 * math.pi)}
            matrix = self.matrices[k]
            for mu in range(self.n_ports):
                for nu in range(self.n_ports):
                    key = f"S{mu + 1}{nu + 1}"
                    if matrix is None:
                        row[f"{key}_dB"] = np.nan
                        row[f"{key}_deg"] = np.nan
                    else:
                        value = matrix.carrier[mu, nu]
                        row[f"{key}_dB"] = db(abs(value))
                        row[f"{key}_deg"] = math.degrees(np.angle(value))
            for nu in range(self.n_ports):
                row[f"SB{nu + 1}_dB"] = (
                    np.nan if matrix is None else 10 * math.log10(max(matrix.sideband_power(nu), 1e-30))
                )
            if self.drifts:
                row["truncation_drift"] = self.drifts[k]
            row["error"] = self.errors[k]
            rows.append(row)
        return pd.DataFrame(rows)


def _solve_point(net, omega, truncation, refine_tolerance=None):
    try:
        if refine_tolerance is None or not net.is_modulated:
            return solve(net, omega, truncation), "", 0.0
        fine, drift = refine_truncation(net, omega, truncation, refine_tolerance)
        return fine, (_drift_message(truncation, drift) if drift > refine_tolerance else ""), drift
    except (FloquetError, ParameterError) as exc:
        logger.warning("sweep point %.6g Hz failed: %s", omega / (2 * math.pi), exc)
        return None, str(exc), math.nan


def sweep(
    target: Union[CircuitParams, NetworkDescription],
    omegas: Sequence[float],
    truncation: int = 5,
    threads: int = 1,
    pairing: str = "diagonal",
    refine_tolerance: Optional[float] = None,
) -> SweepResult:
    """Carrier and sideband scattering over a probe grid.

    With ``refine_tolerance`` each modulated point is solved at M and 2M; the
    2M result is kept, its drift recorded, and points above the tolerance
    carry an error message.
    """
    omegas = np.asarray(omegas, dtype=float)
    if omegas.size == 0:
        raise ParameterError("sweep grid is empty")

    net = target if isinstance(target, NetworkDescription) else build_circulator_network(target, pairing)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda w: _solve_point(net, w, truncation, refine_tolerance), omegas))
    else:
        results = [_solve_point(net, w, truncation, refine_tolerance) for w in omegas]

    refined = refine_tolerance is not None and net.is_modulated
    return SweepResult(
        omegas,
        [r[0] for r in results],
        [r[1] for r in results],
        2 * truncation if refined else truncation,
        net.n_ports,
        drifts=[r[2] for r in results] if refine_tolerance is not None else [],
    )
