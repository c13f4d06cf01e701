import hashlib
import json
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd
from openpyxl.styles import Font, PatternFill

from modules.circulator.config import CONFIG_HASH_LENGTH, CSV_COLUMNS, FLOAT_FORMAT, SIGNIFICANT_DIGITS


logger = logging.getLogger(__name__)

FAIL_FILL = PatternFill(fill_type="solid", fgColor="FFF2CC")
HEADER_FONT = Font(bold=True)


# ---------------------------------------------------
# Serialization helpers
# ---------------------------------------------------
def canonical(value):
    """JSON-safe copy with floats at fixed significant digits and non-finite values as strings."""
    if isinstance(value, dict):
        return {str(k): canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [canonical(v) for v in value]
    if isinstance(value, np.ndarray):
        return [canonical(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return str(value)
        return float(f"{value:.{SIGNIFICANT_DIGITS}g}")
    if isinstance(value, complex):
        return {"re": canonical(value.real), "im": canonical(value.imag)}
    if value is None or isinstance(value, str):
        return value
    return str(value)


def config_hash(config):
    text = json.dumps(canonical(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:CONFIG_HASH_LENGTH]


def order_columns(name, df):
    """Known experiment layouts first, any extra columns after, in their original order."""
    preferred = [c for c in CSV_COLUMNS.get(name, []) if c in df.columns]
    rest = [c for c in df.columns if c not in preferred]
    return df[preferred + rest]


# ---------------------------------------------------
# Writers
# ---------------------------------------------------
def write_csv(df, path, metadata):
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        for key in sorted(metadata):
            handle.write(f"# {key}: {json.dumps(canonical(metadata[key]), sort_keys=True)}\n")
        df.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_json(report, path):
    path = Path(path)
    path.write_text(json.dumps(canonical(report), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def failing_rows(df):
    """Row mask of entries to highlight: failed checks, solver errors, exceeded budgets."""
    mask = pd.Series(False, index=df.index)
    if "passed" in df.columns:
        mask |= ~df["passed"].astype(bool)
    if "error" in df.columns:
        mask |= df["error"].fillna("").astype(str).str.strip() != ""
    if "exceeds_cooling_power" in df.columns:
        mask |= df["exceeds_cooling_power"].astype(bool)
    return mask


def write_xlsx(df, path, sheet_name="results"):
    path = Path(path)
    with pd.ExcelWriter(path, engine="openpyxl") as writer:
        df.to_excel(writer, index=False, sheet_name=sheet_name)
        worksheet = writer.book[sheet_name]

        for cell in worksheet[1]:
            cell.font = HEADER_FONT

        for position, failed in enumerate(failing_rows(df).tolist(), start=2):
            if not failed:
                continue
            for cell in worksheet[position]:
                cell.fill = FAIL_FILL
    return path


PLOT_STUB = '''"""Plot {name}.csv with any plotting library."""
import pandas as pd

frame = pd.read_csv("{name}.csv", comment="#")
print(frame.columns.tolist())
# columns: {columns}
'''


def write_plot_stub(name, columns, directory):
    path = Path(directory) / f"plot_{name}.py"
    path.write_text(PLOT_STUB.format(name=name, columns=", ".join(columns)), encoding="utf-8")
    return path


# ---------------------------------------------------
# Experiment export
# ---------------------------------------------------
def export_experiment(name, frame, report, config, output):
    """Write the configured artifacts for one experiment; returns the written paths."""
    directory = Path(output["directory"])
    directory.mkdir(parents=True, exist_ok=True)

    frame = order_columns(name, frame)
    digest = config_hash(config)
    metadata = {"experiment": name, "config_hash": digest, "parameters": config}
    report = {**report, "experiment": name, "config_hash": digest, "config": config}

    written = []
    formats = output["formats"]
    if "csv" in formats:
        written.append(write_csv(frame, directory / f"{name}.csv", metadata))
    if "json" in formats:
        written.append(write_json(report, directory / f"{name}.json"))
    if "xlsx" in formats:
        written.append(write_xlsx(frame, directory / f"{name}.xlsx"))
    if output.get("plot_stub"):
        written.append(write_plot_stub(name, list(frame.columns), directory))

    for path in written:
        logger.info("wrote %s", path)
    return written
