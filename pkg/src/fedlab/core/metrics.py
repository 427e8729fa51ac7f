"""Per-round metrics, the CSV ledger, and the end-of-run report."""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass

from ..errors import ParameterError

CSV_HEADER = ("round", "objective", "residual", "bytes_up", "bytes_down", "sampled_count")


@dataclass(frozen=True)
class RoundMetrics:
    round_index: int
    objective: float
    residual: float
    bytes_up: int
    bytes_down: int
    sampled: tuple[int, ...]

    @property
    def sampled_count(self) -> int:
        return len(self.sampled)


def _fmt(value: float) -> str:
    # 12 significant digits, enough to reproduce comparisons bit for bit
    return f"{value:.12g}"


def write_metrics_csv(metrics: list[RoundMetrics], path: str) -> None:
    """Write the round ledger atomically (temp file + rename)."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(prefix=".metrics-", suffix=".csv", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(CSV_HEADER)
            for row in metrics:
                writer.writerow(
                    [
                        row.round_index,
                        _fmt(row.objective),
                        _fmt(row.residual),
                        row.bytes_up,
                        row.bytes_down,
                        row.sampled_count,
                    ]
                )
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_metrics_csv(path: str) -> list[dict]:
    """Read a round ledger back as dicts with parsed numbers."""
    out = []
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_HEADER:
            raise ParameterError(
                f"unexpected CSV header {reader.fieldnames!r} in {path}"
            )
        for row in reader:
            out.append(
                {
                    "round": int(row["round"]),
                    "objective": float(row["objective"]),
                    "residual": float(row["residual"]),
                    "bytes_up": int(row["bytes_up"]),
                    "bytes_down": int(row["bytes_down"]),
                    "sampled_count": int(row["sampled_count"]),
                }
            )
    return out


@dataclass(frozen=True)
class RunReport:
    config_digest: str
    rounds: int
    final_objective: float
    oracle_objective: float | None
    oracle_gap: float | None
    tolerance: float
    rounds_to_tolerance: int | None
    bytes_up_total: int
    bytes_down_total: int


def build_report(
    metrics: list[RoundMetrics],
    config_digest: str,
    oracle_objective: float | None,
    tolerance: float,
) -> RunReport:
    """Summarize a finished run.

    rounds_to_tolerance is the first round whose objective gap to the
    oracle is at most ``tolerance`` (None when never reached or no oracle
    is available).
    """
    if tolerance <= 0:
        raise ParameterError(f"tolerance must be > 0, got {tolerance!r}")
    if not metrics:
        return RunReport(
            config_digest=config_digest,
            rounds=0,
            final_objective=float("nan"),
            oracle_objective=oracle_objective,
            oracle_gap=None,
            tolerance=tolerance,
            rounds_to_tolerance=None,
            bytes_up_total=0,
            bytes_down_total=0,
        )
    final = metrics[-1].objective
    gap = None
    reached = None
    if oracle_objective is not None:
        gap = final - oracle_objective
        for row in metrics:
            if row.objective - oracle_objective <= tolerance:
                reached = row.round_index
                break
    return RunReport(
        config_digest=config_digest,
        rounds=len(metrics),
        final_objective=final,
        oracle_objective=oracle_objective,
        oracle_gap=gap,
        tolerance=tolerance,
        rounds_to_tolerance=reached,
        bytes_up_total=sum(m.bytes_up for m in metrics),
        bytes_down_total=sum(m.bytes_down for m in metrics),
    )


def format_report(report: RunReport) -> str:
    """Render a run report as an aligned two-column text table."""
    rows = [
        ("config", report.config_digest),
        ("rounds", str(report.rounds)),
        ("final objective", _fmt(report.final_objective)),
        (
            "oracle objective",
            "n/a" if report.oracle_objective is None else _fmt(report.oracle_objective),
        ),
        ("oracle gap", "n/a" if report.oracle_gap is None else _fmt(report.oracle_gap)),
        ("tolerance", _fmt(report.tolerance)),
        (
            "rounds to tolerance",
            "unreached" if report.rounds_to_tolerance is None else str(report.rounds_to_tolerance),
        ),
        ("bytes up", str(report.bytes_up_total)),
        ("bytes down", str(report.bytes_down_total)),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)
