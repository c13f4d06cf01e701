import math


# ---------------------------------------------------
# Device defaults (config file units: Hz, flux quanta)
# ---------------------------------------------------
DEFAULT_DEVICE = {
    "n_squids": 12,
    "junction_critical_current": 2e-6,
    "capacitance": 1e-12,
    "line_impedance": 50.0,
    "modulation_frequency_hz": 120e6,
    "uniform_flux": 0.37,
    "gradiometric_flux": 0.06,
    "phase": math.pi / 2,
    "geometric_inductance": 0.0,
    "loss_model": "measured",
    "internal_q": None,
    "parasitic_resistance": None,
    "pairing": "diagonal",
    "base_inductance": None,
    "imbalance": None,
}

# Q_int and r_au per loss model; explicit device keys override these.
LOSS_PRESETS = {
    "lossless": {"internal_q": math.inf, "parasitic_resistance": 0.0},
    "measured": {"internal_q": 400.0, "parasitic_resistance": 0.01},
}

PAIRINGS = ["diagonal", "arm"]


# ---------------------------------------------------
# Solver defaults
# ---------------------------------------------------
DEFAULT_SOLVER = {
    "truncation": 5,
    "refine_tolerance": 1e-4,
    "points_per_period": 200,
    "settle_beats": 4,
    "record_beats": 1,
    "max_beats": 400,
    "newton_tolerance": 1e-10,
    "settle_tolerance": 1e-4,
    "linearized": False,
    "flux_model": "harmonic",
    "threads": 1,
}

FLUX_MODELS = ["harmonic", "full"]

# Largest denominator allowed when snapping ω_p/Ω to a rational number.
MAX_COMMENSURATE_DENOMINATOR = 64

# Tracked sideband orders in transient harmonic projections.
TRANSIENT_HARMONICS = 2


# ---------------------------------------------------
# Tune-up and figure-of-merit defaults
# ---------------------------------------------------
DEFAULT_COST_WEIGHTS = {
    "insertion_loss": 1.0,   # per dB
    "isolation": 0.25,       # per dB
    "bandwidth": 0.05,       # per MHz
}

ISOLATION_COST_CAP_DB = 40.0
ISOLATION_THRESHOLD_DB = 20.0
SUPPRESSION_CEILING_DB = 300.0

# Metric window around the target, as a fraction of the modulation frequency.
METRIC_WINDOW_FRACTION = 0.6
METRIC_WINDOW_POINTS = 97

PHASE_SCAN_HALF_WIDTH = 0.3
PHASE_SCAN_POINTS = 13
GRADIOMETRIC_REFINE_BRACKET = (0.5, 2.0)
TUNE_ITERATIONS = 2
MAX_IMBALANCE = 0.9


# ---------------------------------------------------
# Experiment defaults
# ---------------------------------------------------
EXPERIMENTS = [
    "phasor-demo",
    "sweep-sparams",
    "delay-map",
    "phase-map",
    "amp-map",
    "tuneup",
    "spectrum",
    "power-sweep",
    "metadata",
    "noise-budget",
    "power-budget",
    "accept",
]

DEFAULT_EXPERIMENT = {
    "name": "phasor-demo",
    "target_frequency_hz": 4.5e9,
    "target_frequencies_hz": [4.2e9, 4.5e9, 4.8e9, 5.1e9],
    "f_start_hz": 4.3e9,
    "f_stop_hz": 4.7e9,
    "f_points": 201,
    "phase_points": 73,
    "gradiometric_fluxes": [0.0, 0.02, 0.04, 0.06, 0.08],
    "uniform_fluxes": [0.38, 0.33, 0.28],
    "powers_dbm": [-130.0, -120.0, -110.0, -100.0, -95.0, -90.0, -85.0, -80.0],
    "delay_floor": None,
    "single_direction": False,
    "tune": True,
    "cost_weights": dict(DEFAULT_COST_WEIGHTS),
    "noise_temperatures_k": [300.0, 7.0],
    "with_power_handling": False,
    "accept_transient_points": 10,
    "accept_skip": [],
}

DEFAULT_OUTPUT = {
    "directory": "output",
    "formats": ["csv", "json"],
    "plot_stub": True,
}

OUTPUT_FORMATS = ["csv", "json", "xlsx"]

CONFIG_SECTIONS = {
    "device": DEFAULT_DEVICE,
    "solver": DEFAULT_SOLVER,
    "experiment": DEFAULT_EXPERIMENT,
    "output": DEFAULT_OUTPUT,
}

FLOAT_FORMAT = "%.9g"
SIGNIFICANT_DIGITS = 9
CONFIG_HASH_LENGTH = 12


# ---------------------------------------------------
# Engineering budget defaults
# ---------------------------------------------------
DEFAULT_FILM = {
    "thickness": 225e-9,
    "sheet_resistance": 0.06,
    "squares_in_parallel": 11,
    "squares_in_series": 2.0,
    "mean_free_path": 600e-9,
    "fermi_velocity": 1.4e6,
    "inelastic_length": 2e-6,
    "temperature": 0.3,
    "link_length": 5e-6,
}

# Bias-line chain: source current at room temperature, then the attenuation
# placed in front of each colder stage.
DEFAULT_STAGES = [
    {"temperature": 300.0, "attenuation_into_stage": 0.0, "bias_current_at_stage": 1e-1,
     "effective_resistance": 50.0, "cooling_power": math.inf},
    {"temperature": 4.0, "attenuation_into_stage": 40.0, "bias_current_at_stage": None,
     "effective_resistance": 50.0, "cooling_power": 7.5e-1},
    {"temperature": 0.05, "attenuation_into_stage": 20.0, "bias_current_at_stage": None,
     "effective_resistance": 0.01, "cooling_power": 5e-5},
]

# Noise attenuators (dB) sitting at each stage temperature.
NOISE_ATTENUATION_SCHEDULE = [(300.0, 40.0), (4.0, 20.0)]

BIAS_FILTER_INDUCTANCE = 20e-9
SHIELD_SEPARATION = 17.5e-6
NOISE_STEP_CURRENT_FRACTION = 0.01
NOISE_STEP_PHASE = 0.01


# ---------------------------------------------------
# CSV column layouts
# ---------------------------------------------------
CSV_COLUMNS = {
    "phasor-demo": ["stage", "arm", "direction", "m", "amplitude", "phase_rad"],
    "sweep-sparams": [
        "f_Hz", "S21_dB_ccw", "S12_dB_ccw", "S11_dB_ccw", "S22_dB_ccw",
        "S21_dB_cw", "S12_dB_cw", "S11_dB_cw", "S22_dB_cw",
    ],
    "delay-map": ["uniform_flux", "gradiometric_flux", "f_Hz", "group_delay_ns", "f_eq4_Hz"],
    "phase-map": ["f_Hz", "phi_rad", "S21_dB", "S12_dB"],
    "amp-map": ["gradiometric_flux", "f_Hz", "S21_dB", "S12_dB", "S11_dB", "Sdd21_dB"],
    "spectrum": ["m", "f_Hz", "power_dB"],
    "power-sweep": ["power_W", "power_dBm", "S21_dB", "isolation_dB", "overdriven"],
    "power-budget": ["stage", "temperature_K", "bias_current_A", "heat_load_W", "cooling_power_W",
                     "margin_W", "exceeds_cooling_power"],
    "accept": ["criterion", "description", "value", "threshold", "passed"],
}
