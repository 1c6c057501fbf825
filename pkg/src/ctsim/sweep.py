"""Parameter sweeps over the experiment grids.

A sweep spec is the same flat key=value format as a scenario, plus
axis.<name> entries (comma lists or start:stop:step ranges), repetitions,
and an optional full_duration_s used by --full. Ratio axes pp_ratio /
lpp_ratio / fpp_ratio derive the control periods from the round period,
mirroring how the grids are described. Every cell runs with a seed derived
from (master seed, cell coordinates, repetition), so results do not depend
on execution order or worker count.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path

from .kernel import derive_seed
from .metrics import RunReport, format_report_csv
from .runner import simulate
from .scenario import Scenario, ScenarioError, _FIELD_TYPES, _convert
from . import scenario as scenario_mod

RATIO_AXES = {"pp_ratio": ("pp_ms", "gp_ms"),
              "lpp_ratio": ("lpp_ms", "gp_ms"),
              "fpp_ratio": ("fpp_ms", "lpp_ms")}

# target_speed rewrites the schedule to a constant-speed run, the shape of
# the single-device speed-range study
DERIVED_AXES = set(RATIO_AXES) | {"target_speed"}


@dataclass
class SweepSpec:
    base: dict[str, object]
    axes: list[tuple[str, list[float]]]
    repetitions: int = 1
    full_duration_s: float | None = None

    def cell_count(self) -> int:
        n = 1
        for _, values in self.axes:
            n *= len(values)
        return n

    def cells(self) -> list[dict[str, float]]:
        names = [name for name, _ in self.axes]
        grids = [values for _, values in self.axes]
        return [dict(zip(names, combo)) for combo in itertools.product(*grids)]

    def scenario_for(self, cell: dict[str, float], rep: int, full: bool = False) -> Scenario:
        values = dict(self.base)
        if full and self.full_duration_s is not None:
            values["duration_s"] = self.full_duration_s
        ratios = {}
        for name, val in cell.items():
            if name == "target_speed":
                values["schedule"] = f"steps 0:{val:g}"
            elif name in RATIO_AXES:
                ratios[name] = val
            else:
                values[name] = val
        # ratios resolve against the cell's own settings, in dependency order
        for name in ("pp_ratio", "lpp_ratio", "fpp_ratio"):
            if name in ratios:
                target, source = RATIO_AXES[name]
                values[target] = float(values[source]) * ratios[name]
        values["seed"] = self.cell_seed(cell, rep)
        scn = Scenario(**values)
        scn.validate()
        return scn

    def cell_seed(self, cell: dict[str, float], rep: int) -> int:
        coords = [f"{name}={cell[name]}" for name, _ in self.axes]
        master = int(self.base.get("seed", 1))
        return derive_seed(master, *coords, rep) % (2 ** 31)

    def run_id(self, cell: dict[str, float], rep: int) -> str:
        coords = "_".join(f"{name}={cell[name]:g}" for name, _ in self.axes)
        return f"{coords}_r{rep}"

    def echo_text(self) -> str:
        lines = ["# resolved sweep specification"]
        for key in sorted(self.base):
            lines.append(f"{key} = {self.base[key]}")
        for name, values in self.axes:
            lines.append(f"axis.{name} = {','.join(f'{v:g}' for v in values)}")
        lines.append(f"repetitions = {self.repetitions}")
        if self.full_duration_s is not None:
            lines.append(f"full_duration_s = {self.full_duration_s}")
        return "\n".join(lines) + "\n"


def _parse_axis_values(raw: str, line_no: int) -> list[float]:
    raw = raw.strip()
    if ":" in raw and "," not in raw:
        parts = raw.split(":")
        if len(parts) != 3:
            raise ScenarioError(f"line {line_no}: range axis needs start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ScenarioError(f"line {line_no}: axis step must be positive")
        values, v = [], start
        while v <= stop + 1e-9:
            values.append(round(v, 9))
            v += step
        return values
    return [float(p) for p in raw.split(",") if p.strip()]


def parse_sweep(text: str, source: str = "<string>") -> SweepSpec:
    base: dict[str, object] = {}
    axes: list[tuple[str, list[float]]] = []
    repetitions = 1
    full_duration: float | None = None
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"{source}: line {line_no}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key.startswith("axis."):
            name = key[len("axis."):]
            if name not in DERIVED_AXES and name not in _FIELD_TYPES:
                raise ScenarioError(f"{source}: line {line_no}: unknown axis {name!r}")
            axes.append((name, _parse_axis_values(raw, line_no)))
        elif key == "repetitions":
            repetitions = int(raw)
        elif key == "full_duration_s":
            full_duration = float(raw)
        elif key in _FIELD_TYPES:
            base[key] = _convert(key, raw, line_no)
        else:
            raise ScenarioError(f"{source}: line {line_no}: unknown key {key!r}")
    if not axes:
        raise ScenarioError(f"{source}: a sweep needs at least one axis")
    return SweepSpec(base=base, axes=axes, repetitions=repetitions,
                     full_duration_s=full_duration)


def load_sweep(path) -> SweepSpec:
    path = Path(path)
    return parse_sweep(path.read_text(encoding="utf-8"), source=str(path))


def _run_one(args) -> tuple[str, RunReport | None, str, str]:
    run_id, scenario = args
    try:
        report, world = simulate(scenario, run_id)
        return run_id, report, world.trace.to_jsonl(), ""
    except Exception as exc:  # cell failures are recorded, the sweep continues
        return run_id, None, "", f"{type(exc).__name__}: {exc}"


@dataclass
class SweepResult:
    reports: list[RunReport]
    failures: list[tuple[str, str]]
    cell_means: dict[tuple[tuple[str, float], ...], float | None]
    traces: dict[str, str] = field(default_factory=dict)


def run_sweep(spec: SweepSpec, jobs: int = 1, full: bool = False,
              cells: list[dict[str, float]] | None = None) -> SweepResult:
    if cells is None:
        cells = spec.cells()
    tasks = []
    for cell in cells:
        for rep in range(spec.repetitions):
            tasks.append((spec.run_id(cell, rep), spec.scenario_for(cell, rep, full)))

    if jobs > 1:
        with Pool(jobs) as pool:
            outcomes = pool.map(_run_one, tasks)
    else:
        outcomes = [_run_one(t) for t in tasks]

    reports, failures, traces = [], [], {}
    by_id = {}
    for run_id, report, trace_text, error in outcomes:
        if report is None:
            failures.append((run_id, error))
        else:
            reports.append(report)
            traces[run_id] = trace_text
            by_id[run_id] = report

    cell_means: dict[tuple[tuple[str, float], ...], float | None] = {}
    for cell in cells:
        vals = []
        for rep in range(spec.repetitions):
            rep_report = by_id.get(spec.run_id(cell, rep))
            if rep_report is not None:
                err = rep_report.mean_combined_err()
                if err is not None:
                    vals.append(err)
        key = tuple(sorted(cell.items()))
        cell_means[key] = sum(vals) / len(vals) if vals else None
    return SweepResult(reports, failures, cell_means, traces)


def format_heatmap_csv(spec: SweepSpec, result: SweepResult) -> str:
    """Matrix of per-cell mean errors: columns are the round period axis
    when present, rows are every other axis combination."""
    names = [name for name, _ in spec.axes]
    col_axis = "gp_ms" if "gp_ms" in names else names[0]
    col_values = dict(spec.axes)[col_axis]
    row_axes = [(n, v) for n, v in spec.axes if n != col_axis]
    header = [*(n for n, _ in row_axes),
              *(f"{col_axis}={v:g}" for v in col_values)]
    lines = [",".join(header)]
    row_combos = list(itertools.product(*(v for _, v in row_axes))) or [()]
    for combo in row_combos:
        row = [f"{v:g}" for v in combo]
        cell = dict(zip((n for n, _ in row_axes), combo))
        for cv in col_values:
            cell[col_axis] = cv
            mean = result.cell_means.get(tuple(sorted(cell.items())))
            row.append("" if mean is None else repr(mean))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def sweep_to_dir(spec: SweepSpec, out_dir, jobs: int = 1, full: bool = False) -> SweepResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run_sweep(spec, jobs=jobs, full=full)
    (out / "report.csv").write_text(format_report_csv(result.reports), encoding="utf-8")
    (out / "heatmap.csv").write_text(format_heatmap_csv(spec, result), encoding="utf-8")
    (out / "config.echo").write_text(spec.echo_text(), encoding="utf-8")
    trace_dir = out / "trace"
    trace_dir.mkdir(exist_ok=True)
    for run_id in sorted(result.traces):
        safe = run_id.replace("/", "_")
        (trace_dir / f"{safe}.log").write_text(result.traces[run_id], encoding="utf-8")
    if result.failures:
        lines = [f"{run_id}: {err}" for run_id, err in sorted(result.failures)]
        (out / "failures.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return result
