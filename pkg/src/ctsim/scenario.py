"""Experiment configuration: a flat, strictly parsed key=value file.

Unknown keys are rejected by name and every invariant violation is reported
with its line, so a typo cannot silently corrupt a sweep. echo_text()
produces a complete re-parseable dump of the resolved configuration,
defaults included, which is what reproducibility audits re-run from.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .control import StepSchedule, TriangleSchedule

MODE_LEADER_FOLLOWER = "leader_follower"
MODE_CENTRAL_CONTROLLER = "central_controller"

# name -> list of (x, y) meters; node 0 is the initiator's position
TOPOLOGY_PRESETS: dict[str, list[tuple[float, float]]] = {
    "solo1": [(0.0, 0.0)],
    "pair2": [(0.0, 0.0), (10.0, 0.0)],
    # five nodes spanning roughly 72 m x 25 m, three hops end to end
    "line5": [(0.0, 0.0), (25.0, 0.0), (50.0, 0.0), (72.0, 0.0), (50.0, 25.0)],
}


class ScenarioError(ValueError):
    """Parse or validation failure, with file/line context when known."""


@dataclass
class Scenario:
    mode: str
    schedule: str
    seed: int = 1
    duration_s: float = 60.0
    topology: str = "line5"
    positions: str = ""
    comm_range_m: float = 30.0
    gp_ms: float = 600.0
    gd_ms: float = 20.0
    n_tx: int = 3
    turnaround_us: int = 192
    rx_guard_us: int = 1000
    early_off: bool = False
    pp_ms: float = 0.0
    lpp_ms: float = 0.0
    fpp_ms: float = 0.0
    p_loss: float = 0.01
    p_loss_ci: float = 0.05
    ci_window_us: float = 0.5
    capture_margin_db: float = 3.0
    capture_window_us: float = 160.0
    tx_power_dbm: float = 0.0
    pl0_db: float = 40.0
    path_loss_exp: float = 3.0
    drift_ppm_max: float = 50.0
    clock_offset_max_us: float = 0.0
    serial_byte_us: float = 87.0
    serial_jitter_us: float = 2000.0
    reply_timeout_ms: float = 10.0
    handover_margin_ms: float = 50.0
    tau_s: float = 0.4
    sigma_v: float = 0.3
    v_max: float = 40.0
    gain_v: float = 0.55
    encoder_tick_cm: float = 1.25
    pid_jitter_ms: float = 0.0
    kp: float = 2.0
    ki: float = 0.8
    kd: float = 0.1
    u_min: float = -100.0
    u_max: float = 100.0

    # -- derived views ----------------------------------------------------
    @property
    def gp_us(self) -> int:
        return round(self.gp_ms * 1000)

    @property
    def gd_us(self) -> int:
        return round(self.gd_ms * 1000)

    @property
    def duration_us(self) -> int:
        return round(self.duration_s * 1e6)

    def period_us(self, node_is_leader: bool) -> int:
        if self.mode == MODE_CENTRAL_CONTROLLER:
            return round(self.pp_ms * 1000)
        return round((self.lpp_ms if node_is_leader else self.fpp_ms) * 1000)

    def node_positions(self) -> list[tuple[float, float]]:
        if self.topology == "custom":
            out = []
            for part in self.positions.split(";"):
                x, y = part.split(",")
                out.append((float(x), float(y)))
            return out
        return list(TOPOLOGY_PRESETS[self.topology])

    def build_schedule(self):
        kind, _, rest = self.schedule.partition(" ")
        if kind == "steps":
            steps = []
            for part in rest.split(","):
                t, _, v = part.strip().partition(":")
                steps.append((float(t), float(v)))
            return StepSchedule(steps)
        if kind == "triangle":
            lo, _, hi = rest.strip().partition(":")
            return TriangleSchedule(float(lo), float(hi), self.duration_s)
        raise ScenarioError(f"unknown schedule kind {kind!r}")

    # -- validation --------------------------------------------------------
    def validate(self) -> None:
        def bad(msg: str):
            raise ScenarioError(msg)

        if self.mode not in (MODE_LEADER_FOLLOWER, MODE_CENTRAL_CONTROLLER):
            bad(f"mode must be {MODE_LEADER_FOLLOWER} or {MODE_CENTRAL_CONTROLLER}, "
                f"got {self.mode!r}")
        if self.mode == MODE_LEADER_FOLLOWER:
            if self.lpp_ms <= 0 or self.fpp_ms <= 0:
                bad("leader_follower mode requires lpp_ms > 0 and fpp_ms > 0")
            if self.pp_ms:
                bad("pp_ms is only valid in central_controller mode")
        else:
            if self.pp_ms <= 0:
                bad("central_controller mode requires pp_ms > 0")
            if self.lpp_ms or self.fpp_ms:
                bad("lpp_ms/fpp_ms are only valid in leader_follower mode")

        if self.gd_ms >= self.gp_ms:
            bad(f"gd < gp violated (gd={self.gd_ms} ms, gp={self.gp_ms} ms)")
        if self.gd_ms <= 0 or self.gp_ms <= 0 or self.duration_s <= 0:
            bad("gd_ms, gp_ms and duration_s must be positive")
        if self.n_tx < 1:
            bad("n_tx must be >= 1")
        if not 0 <= self.rx_guard_us < self.gd_us:
            bad("rx_guard_us must be in [0, gd)")
        if self.topology == "custom":
            if not self.positions:
                bad("topology=custom requires positions")
        elif self.topology not in TOPOLOGY_PRESETS:
            bad(f"unknown topology {self.topology!r} "
                f"(presets: {', '.join(sorted(TOPOLOGY_PRESETS))} or custom)")
        elif self.positions:
            bad("positions is only valid with topology=custom")
        n_nodes = len(self.node_positions())
        if self.mode == MODE_CENTRAL_CONTROLLER and n_nodes < 2:
            bad("central_controller mode needs the controller plus >= 1 device")
        if not 0 <= self.p_loss <= 1 or not 0 <= self.p_loss_ci <= 1:
            bad("loss probabilities must be within [0, 1]")
        if self.handover_margin_ms * 1000 < self.gd_us:
            bad("handover_margin_ms must cover at least one gd before the next round")
        self.build_schedule()  # raises on malformed schedule text
        # phase schedule consistency is re-validated when the link is built

    # -- echo ---------------------------------------------------------------
    def echo_text(self) -> str:
        lines = ["# resolved configuration (re-parseable)"]
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "positions" and not value:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(Scenario)}
_REQUIRED = ("mode", "schedule")


def _convert(key: str, raw: str, line_no: int):
    ftype = _FIELD_TYPES[key]
    try:
        if ftype == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ScenarioError(
            f"line {line_no}: key {key!r} expects {ftype}, got {raw!r}") from None


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    values: dict[str, object] = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"{source}: line {line_no}: expected 'key = value', "
                                f"got {raw_line.strip()!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _FIELD_TYPES:
            raise ScenarioError(f"{source}: line {line_no}: unknown key {key!r}")
        if key in values:
            raise ScenarioError(f"{source}: line {line_no}: duplicate key {key!r}")
        values[key] = _convert(key, raw, line_no)
    for req in _REQUIRED:
        if req not in values:
            raise ScenarioError(f"{source}: missing required key {req!r}")
    scenario = Scenario(**values)
    try:
        scenario.validate()
    except ScenarioError as err:
        raise ScenarioError(f"{source}: {err}") from None
    return scenario


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), source=str(path))
