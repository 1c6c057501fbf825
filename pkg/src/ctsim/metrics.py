"""Evaluation quantities computed from logged traces.

Per-node speed-tracking error against the experiment's target (pid err),
error against the value received over the air (trx err), pairwise CCU
time-sync error from phase-1 timestamps, radio duty cycle, and the stable
CSV report format.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from itertools import combinations


@dataclass(frozen=True)
class MetricsRecord:
    """One phase-3 snapshot logged by a CCU."""

    node_id: int
    global_time_us: int
    local_time_us: int
    target_speed: float
    measured_speed: float
    last_rx_payload_speed: float | None
    round_seq: int


def pid_err_pct(records: list[MetricsRecord]) -> float | None:
    """Mean |measured - target| / target * 100 over records with target > 0.

    Zero-target samples are excluded (the percentage is undefined there);
    None when no record is eligible, which callers must report as absent.
    """
    errs = [abs(r.measured_speed - r.target_speed) / r.target_speed * 100.0
            for r in records if r.target_speed > 0.0]
    if not errs:
        return None
    return sum(errs) / len(errs)


def trx_err_pct(records: list[MetricsRecord]) -> float | None:
    """Mean |measured - received| / received * 100 over records that hold a
    positive over-the-air value."""
    errs = [abs(r.measured_speed - r.last_rx_payload_speed) / r.last_rx_payload_speed * 100.0
            for r in records
            if r.last_rx_payload_speed is not None and r.last_rx_payload_speed > 0.0]
    if not errs:
        return None
    return sum(errs) / len(errs)


def abs_speed_err(records: list[MetricsRecord]) -> float | None:
    """Mean |measured - target| in cm/s over all records, zero targets
    included, so the excluded samples are still accounted for somewhere."""
    if not records:
        return None
    return sum(abs(r.measured_speed - r.target_speed) for r in records) / len(records)


@dataclass
class SyncStats:
    mean_ms: float
    max_ms: float
    pair_series_ms: dict[tuple[int, int], list[float]]


def sync_error(hi_times: dict[int, dict[int, int]]) -> SyncStats | None:
    """Pairwise differences of phase-1 arrival timestamps.

    hi_times maps node -> round -> ground-truth arrival time in us.  For
    every round present on both nodes of a pair the absolute difference is
    taken; rounds missing on either node are skipped pairwise. None when no
    pair shares a round.
    """
    pairs: dict[tuple[int, int], list[float]] = {}
    for a, b in combinations(sorted(hi_times), 2):
        series = []
        common = sorted(set(hi_times[a]) & set(hi_times[b]))
        for rnd in common:
            series.append(abs(hi_times[a][rnd] - hi_times[b][rnd]) / 1000.0)
        if series:
            pairs[(a, b)] = series
    if not pairs:
        return None
    flat = [v for series in pairs.values() for v in series]
    return SyncStats(mean_ms=sum(flat) / len(flat), max_ms=max(flat),
                     pair_series_ms=pairs)


def duty_cycle(radio_on_us: float, window_us: float) -> float:
    if window_us <= 0:
        raise ValueError("duty cycle window must be positive")
    return radio_on_us / window_us


@dataclass
class NodeReport:
    node_id: int
    pid_err_pct: float | None
    trx_err_pct: float | None
    duty_cycle: float | None
    pid_abs_err: float | None
    trx_records: int = 0


@dataclass
class RunReport:
    """Everything one simulation run reports, one row per node in the CSV."""

    run_id: str
    seed: int
    gp_ms: float
    pp_ms: float | None
    lpp_ms: float | None
    fpp_ms: float | None
    nodes: list[NodeReport] = field(default_factory=list)
    sync_mean_ms: float | None = None
    sync_max_ms: float | None = None

    def mean_pid_err(self) -> float | None:
        vals = [n.pid_err_pct for n in self.nodes if n.pid_err_pct is not None]
        return sum(vals) / len(vals) if vals else None

    def mean_trx_err(self) -> float | None:
        vals = [n.trx_err_pct for n in self.nodes if n.trx_err_pct is not None]
        return sum(vals) / len(vals) if vals else None

    def mean_combined_err(self) -> float | None:
        """Arithmetic mean of the two error percentages, the headline number
        for grid experiments; falls back to whichever one exists."""
        pid, trx = self.mean_pid_err(), self.mean_trx_err()
        if pid is None:
            return trx
        if trx is None:
            return pid
        return (pid + trx) / 2.0


CSV_COLUMNS = ["run_id", "seed", "gp_ms", "pp_ms", "lpp_ms", "fpp_ms", "node",
               "pid_err_pct", "trx_err_pct", "sync_mean_ms", "sync_max_ms",
               "duty_cycle", "pid_abs_err"]


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_report_csv(reports: list[RunReport]) -> str:
    """Stable byte-for-byte CSV: fixed column order, repr() floats, rows
    sorted by (run_id, node)."""
    out = io.StringIO()
    out.write(",".join(CSV_COLUMNS) + "\n")
    for rep in sorted(reports, key=lambda r: r.run_id):
        for node in sorted(rep.nodes, key=lambda n: n.node_id):
            row = [rep.run_id, rep.seed, rep.gp_ms, rep.pp_ms, rep.lpp_ms,
                   rep.fpp_ms, node.node_id, node.pid_err_pct, node.trx_err_pct,
                   rep.sync_mean_ms, rep.sync_max_ms, node.duty_cycle,
                   node.pid_abs_err]
            out.write(",".join(_cell(v) for v in row) + "\n")
    return out.getvalue()


def write_report_csv(reports: list[RunReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_report_csv(reports))
