"""CSV export of metrics traces and condition reports."""

from __future__ import annotations

import csv
import math
from pathlib import Path

from .exceptions import FormatError
from .sim import MetricsTrace, RoundRecord

__all__ = ["CSV_HEADER", "export_metrics", "read_metrics", "export_conditions", "format_number"]

# Frozen column contract; changing it is a breaking change.
CSV_HEADER = (
    "round,grad_norm_sq,loss,test_acc,stale_min,stale_mean,stale_max,"
    "inv_K,K_bar,K_hat_sq,fresh_count"
)
_COLUMNS = CSV_HEADER.split(",")
_INT_COLUMNS = {"round", "stale_min", "stale_max", "fresh_count"}


def format_number(v) -> str:
    """Shortest round-trip decimal; empty string for a missing value."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def export_metrics(trace: MetricsTrace, path) -> Path:
    path = Path(path)
    lines = [CSV_HEADER]
    for rec in trace.records:
        lines.append(",".join(format_number(getattr(rec, c)) for c in _COLUMNS))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def _parse(col, text):
    if text == "":
        return None
    if col in _INT_COLUMNS:
        return int(text)
    return float(text)


def read_metrics(path) -> list[RoundRecord]:
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if ",".join(header) != CSV_HEADER:
            raise FormatError(f"{path}: unexpected header {header!r}")
        return [RoundRecord(*(_parse(c, v) for c, v in zip(_COLUMNS, row))) for row in reader]


def export_conditions(report, path) -> Path:
    """One row per inequality, plus the two constants as trailing rows."""
    path = Path(path)
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theorem", "label", "lhs", "rhs", "relation", "pass"])
        for row in report.rows():
            w.writerow(
                [
                    row["theorem"],
                    row["label"],
                    format_number(row["lhs"]),
                    format_number(row["rhs"]),
                    row["relation"],
                    int(row["pass"]),
                ]
            )
        w.writerow([report.theorem, "alpha_L", format_number(report.alpha_L), "", "", ""])
        w.writerow([report.theorem, "alpha_G", format_number(report.alpha_G), "", "", ""])
    return path
