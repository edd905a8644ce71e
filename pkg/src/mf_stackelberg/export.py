"""CSV output with round-trip exact number formatting."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def matrix_rows(times: np.ndarray, values: np.ndarray):
    """Flatten node-indexed arrays into (t, v...) rows, row-major."""
    flat = values.reshape(values.shape[0], -1)
    for t, v in zip(times, flat):
        yield [t, *v]


def matrix_header(prefix: str, shape: tuple[int, ...]) -> list[str]:
    if len(shape) == 1:
        return ["t"] + [f"{prefix}_{i}" for i in range(shape[0])]
    return ["t"] + [f"{prefix}_{i}_{j}" for i in range(shape[0]) for j in range(shape[1])]
