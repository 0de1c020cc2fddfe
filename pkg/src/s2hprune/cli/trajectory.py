"""Trajectory CSV: one row per epoch, floats at 17 significant digits."""

import csv
import io

from ..pruner.trainer import TrajectoryRecord
from .checkpoint import atomic_write

COLUMNS = TrajectoryRecord.columns()


def _fmt(v):
    if isinstance(v, int):
        return str(v)
    if v is None:
        return ""
    return format(float(v), ".17g")


def format_trajectory(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def log_trajectory(records, path):
    """Write ``records`` to ``path`` atomically."""
    epochs = [r.epoch for r in records]
    if any(b <= a for a, b in zip(epochs, epochs[1:])):
        raise ValueError("trajectory epochs must be strictly increasing")
    atomic_write(path, format_trajectory(records).encode())


def read_trajectory(path):
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        out = []
        for row in reader:
            vals = {c: (None if row[c] == "" else float(row[c])) for c in COLUMNS}
            vals["epoch"] = int(row["epoch"])
            out.append(TrajectoryRecord(**vals))
    return out


__all__ = ["COLUMNS", "format_trajectory", "log_trajectory", "read_trajectory"]
