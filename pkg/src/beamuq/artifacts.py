"""Plot-ready CSV/JSON artifact emission.

All writes are atomic (temp file in the target directory, then rename);
floats are written with repr, the shortest round-trip form.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .mlmc import QUANTILE_LEVELS, MLMCResult


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def write_json(path: Path, payload) -> None:
    atomic_write_text(Path(path), json.dumps(payload, indent=2, sort_keys=True) + "\n")


LEVELS_HEADER = ["level", "N", "meanY", "V", "C_norm", "seconds"]


def levels_rows(result: MLMCResult, frequency: float | None = None):
    rows = []
    for s in result.stats:
        row = [s.level, s.n_reported, s.mean_y, s.var_y, s.cost_norm,
               s.seconds_per_sample]
        if frequency is not None:
            row = [frequency] + row
        rows.append(row)
    return rows


def write_levels_csv(path: Path, results, frequencies=None) -> None:
    """`results` is one MLMCResult or a list; dynamic runs prepend the
    frequency column (one block of level rows per frequency)."""
    if isinstance(results, MLMCResult):
        write_csv(path, LEVELS_HEADER, levels_rows(results))
        return
    header = ["frequency"] + LEVELS_HEADER
    rows = []
    for freq, res in zip(frequencies, results):
        rows.extend(levels_rows(res, frequency=freq))
    write_csv(path, header, rows)


def quantile_headers() -> list[str]:
    return [f"q{int(round(q * 100)):02d}" for q in QUANTILE_LEVELS]


def write_field_stats_csv(path: Path, result: MLMCResult, axis_label: str) -> None:
    header = [axis_label, "mean", "std"] + quantile_headers()
    rows = []
    for i, x in enumerate(result.field_axis):
        rows.append([x, result.q_field[i], result.field_std[i]]
                    + list(result.field_quantiles[:, i]))
    write_csv(path, header, rows)


def write_frf_csv(path: Path, frequencies, results) -> None:
    """Per-frequency QoI-node statistics of a dynamic sweep."""
    header = ["frequency", "mean", "std"] + quantile_headers()
    rows = []
    for freq, res in zip(frequencies, results):
        node = res.qoi_node
        rows.append([freq, res.q, res.field_std[node]]
                    + list(res.field_quantiles[:, node]))
    write_csv(path, header, rows)


def write_cost_csv(path: Path, rows) -> None:
    header = ["epsilon", "mlmc_seconds", "mc_seconds", "mlmc_norm", "mc_norm"]
    write_csv(path, header, rows)


def write_rates_json(path: Path, entries) -> None:
    write_json(path, entries)


def write_samples_csv(path: Path, axis_label: str, axis, columns) -> None:
    header = [axis_label] + [f"s{i + 1:02d}" for i in range(len(columns))]
    rows = []
    for i, x in enumerate(axis):
        rows.append([x] + [col[i] for col in columns])
    write_csv(path, header, rows)
