"""Builds a full simulation world from a scenario, runs it, and turns the
logged traces into a run report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .control import (CcuApp, ControllerApp, FollowerApp, LeaderApp,
                      PidController, PlantParams, Pose, Robot, decode_speed)
from .glossy import FloodPacket, GlossyConfig, GlossyNode, Role
from .kernel import NodeClock, Simulator
from .metrics import (MetricsRecord, NodeReport, RunReport, abs_speed_err,
                      pid_err_pct, sync_error, trx_err_pct, write_report_csv)
from .radio import Medium, RadioParams, Topology
from .scenario import MODE_CENTRAL_CONTROLLER, Scenario
from .slp import CcuPort, NuPort, SerialLink, SlpSchedule


@dataclass
class RoundInfo:
    start_exact: float
    packet_length: int
    payload: bytes
    deliveries: dict[int, float] = field(default_factory=dict)


class RunTrace:
    """Line-delimited record of everything the offline analysis needs."""

    def __init__(self):
        self.records: list[MetricsRecord] = []
        self.hi_times: dict[int, dict[int, int]] = {}
        self.payload_log: dict[int, list[tuple[int, float | None]]] = {}
        self.staged_log: dict[int, list[tuple[int, float | None]]] = {}
        self.setpoint_log: dict[int, list[tuple[int, float]]] = {}
        self.rounds: dict[int, RoundInfo] = {}
        self.phase_log: list[tuple[int, int, int, int]] = []   # node, round, phase, t
        self.serial_log: list[tuple[int, int, int, int]] = []  # node, t_send, t_arrive, bytes
        self.radio_log: list[tuple[int, int, float, float]] = []  # node, round, on, off
        self.tx_log: list[tuple[int, int, int, bytes, float]] = []  # node, round, relay, payload, start

    # -- glossy hooks --
    def round_started(self, round_seq: int, start_exact: float,
                      packet_length: int, payload: bytes) -> None:
        self.rounds[round_seq] = RoundInfo(start_exact, packet_length, payload)

    def delivered(self, node_id: int, round_seq: int, rx_end_exact: float,
                  payload: bytes) -> None:
        info = self.rounds.get(round_seq)
        if info is not None and node_id not in info.deliveries:
            info.deliveries[node_id] = rx_end_exact

    def transmitted(self, node_id: int, packet: FloodPacket, start_exact: float) -> None:
        self.tx_log.append((node_id, packet.round_seq, packet.relay_count,
                            packet.payload, start_exact))

    def radio_window(self, node_id: int, round_seq: int, on_exact: float,
                     off_exact: float) -> None:
        self.radio_log.append((node_id, round_seq, on_exact, off_exact))

    # -- slp/ccu hooks --
    def hi(self, node_id: int, round_seq: int, t_us: int) -> None:
        self.hi_times.setdefault(node_id, {})[round_seq] = t_us

    def record(self, rec: MetricsRecord) -> None:
        self.records.append(rec)

    def node_records(self, node_id: int) -> list[MetricsRecord]:
        return [r for r in self.records if r.node_id == node_id]

    def to_jsonl(self) -> str:
        lines = []
        for rec in self.records:
            lines.append(json.dumps({"type": "record", "node": rec.node_id,
                                     "t_us": rec.global_time_us,
                                     "target": rec.target_speed,
                                     "measured": rec.measured_speed,
                                     "payload": rec.last_rx_payload_speed,
                                     "round": rec.round_seq}, sort_keys=True))
        for node in sorted(self.hi_times):
            for rnd in sorted(self.hi_times[node]):
                lines.append(json.dumps({"type": "hi", "node": node, "round": rnd,
                                         "t_us": self.hi_times[node][rnd]},
                                        sort_keys=True))
        for rnd in sorted(self.rounds):
            info = self.rounds[rnd]
            lines.append(json.dumps(
                {"type": "round", "round": rnd, "start_us": info.start_exact,
                 "delivered": sorted(info.deliveries),
                 "len": info.packet_length}, sort_keys=True))
        return "\n".join(lines) + "\n"


@dataclass
class World:
    """A built simulation plus every handle the tests and report need."""

    scenario: Scenario
    sim: Simulator
    topology: Topology
    medium: Medium
    clocks: dict[int, NodeClock]
    glossy_nodes: dict[int, GlossyNode]
    robots: dict[int, Robot]
    apps: dict[int, CcuApp]
    links: dict[int, SerialLink]
    nu_ports: dict[int, NuPort]
    ccu_ports: dict[int, CcuPort]
    trace: RunTrace

    @property
    def initiator(self) -> int:
        return 0

    def robot_nodes(self) -> list[int]:
        return sorted(self.robots)


def build(scenario: Scenario) -> World:
    scenario.validate()
    sim = Simulator(scenario.seed)
    positions = {i: pos for i, pos in enumerate(scenario.node_positions())}
    topology = Topology(positions, scenario.comm_range_m)
    params = RadioParams(
        p_loss=scenario.p_loss, p_loss_ci=scenario.p_loss_ci,
        ci_window_us=scenario.ci_window_us,
        capture_margin_db=scenario.capture_margin_db,
        capture_window_us=scenario.capture_window_us,
        tx_power_dbm=scenario.tx_power_dbm, pl0_db=scenario.pl0_db,
        path_loss_exponent=scenario.path_loss_exp)
    medium = Medium(sim, topology, params)
    cfg = GlossyConfig(gp_us=scenario.gp_us, gd_us=scenario.gd_us,
                       n_tx=scenario.n_tx, turnaround_us=scenario.turnaround_us,
                       rx_guard_us=scenario.rx_guard_us, early_off=scenario.early_off)
    slp_schedule = SlpSchedule(gp_us=scenario.gp_us, gd_us=scenario.gd_us,
                               handover_margin_us=round(scenario.handover_margin_ms * 1000))
    slp_schedule.validate()
    trace = RunTrace()
    schedule = scenario.build_schedule()
    plant = PlantParams(tau_s=scenario.tau_s, sigma_v=scenario.sigma_v,
                        v_max=scenario.v_max, gain_v=scenario.gain_v,
                        encoder_tick_cm=scenario.encoder_tick_cm)

    clocks: dict[int, NodeClock] = {}
    glossy_nodes: dict[int, GlossyNode] = {}
    robots: dict[int, Robot] = {}
    apps: dict[int, CcuApp] = {}
    links: dict[int, SerialLink] = {}
    nu_ports: dict[int, NuPort] = {}
    ccu_ports: dict[int, CcuPort] = {}

    cc_mode = scenario.mode == MODE_CENTRAL_CONTROLLER
    node_ids = sorted(positions)

    for i in node_ids:
        drift = 0.0
        if scenario.drift_ppm_max > 0:
            drift = sim.rng(f"clock/{i}").uniform(-scenario.drift_ppm_max,
                                                  scenario.drift_ppm_max)
        offset = 0
        if scenario.clock_offset_max_us > 0:
            offset = round(sim.rng(f"offset/{i}").uniform(
                -scenario.clock_offset_max_us, scenario.clock_offset_max_us))
        clocks[i] = NodeClock(i, drift_ppm=drift, offset_us=offset)
        role = Role.INITIATOR if i == 0 else Role.RECEIVER
        glossy_nodes[i] = GlossyNode(sim, medium, clocks[i], cfg, i, role, trace=trace)

        def make_pid():
            return PidController(kp=scenario.kp, ki=scenario.ki, kd=scenario.kd,
                                 u_min=scenario.u_min, u_max=scenario.u_max)

        has_robot = not (cc_mode and i == 0)
        if has_robot:
            x, y = positions[i]
            robots[i] = Robot(plant, rng=sim.rng(f"motor/{i}"), pose=Pose(x, y))
            period = scenario.period_us(node_is_leader=(i == 0))
            jitter = round(scenario.pid_jitter_ms * 1000)
            if not cc_mode and i == 0:
                apps[i] = LeaderApp(sim, i, robots[i], make_pid(), period,
                                    schedule.value_at, trace.record,
                                    tick_jitter_us=jitter, schedule=schedule)
            else:
                apps[i] = FollowerApp(sim, i, robots[i], make_pid(), period,
                                      schedule.value_at, trace.record,
                                      tick_jitter_us=jitter)
            apps[i].update_position = (
                lambda pose, node=i: topology.move(node, (pose.x_m, pose.y_m)))
            apps[i].on_setpoint = (
                lambda t, sp, node=i: trace.setpoint_log.setdefault(node, []).append((t, sp)))
        else:
            apps[i] = ControllerApp(sim, i, schedule,
                                    lead_time_us=round(scenario.handover_margin_ms * 1000),
                                    record_target_truth=schedule.value_at,
                                    trace_record=trace.record)

        links[i] = SerialLink(sim, i, byte_us=scenario.serial_byte_us,
                              jitter_us=scenario.serial_jitter_us)
        links[i].set_trace(lambda node, t0, t1, n: trace.serial_log.append((node, t0, t1, n)))
        ccu_ports[i] = CcuPort(sim, links[i], apps[i],
                               on_hi=lambda rnd, t, node=i: trace.hi(node, rnd, t))
        nu_ports[i] = NuPort(sim, links[i], ccu_ports[i], slp_schedule,
                             reply_timeout_us=round(scenario.reply_timeout_ms * 1000),
                             on_phase=lambda rnd, ph, t, node=i:
                                 trace.phase_log.append((node, rnd, ph, t)))
        nu_ports[i].stage = _make_stage(trace, glossy_nodes[i], nu_ports[i], i)
        glossy_nodes[i].port = nu_ports[i]

    return World(scenario, sim, topology, medium, clocks, glossy_nodes, robots,
                 apps, links, nu_ports, ccu_ports, trace)


def _make_stage(trace: RunTrace, node: GlossyNode, port: NuPort, node_id: int):
    def stage(payload: bytes) -> None:
        trace.staged_log.setdefault(node_id, []).append(
            (port._round, decode_speed(payload)))
        node.stage(payload)
    return stage


def _payload_logger(trace: RunTrace, app: CcuApp, node_id: int):
    original = app.on_payload

    def on_payload(payload: bytes, round_seq: int) -> None:
        original(payload, round_seq)
        trace.payload_log.setdefault(node_id, []).append(
            (round_seq, decode_speed(payload)))
    return on_payload


def simulate(scenario: Scenario, run_id: str = "run") -> tuple[RunReport, World]:
    world = build(scenario)
    for i, app in sorted(world.apps.items()):
        app.on_payload = _payload_logger(world.trace, app, i)
    for node in world.glossy_nodes.values():
        node.start()
    for app in world.apps.values():
        app.start()
    world.sim.run_until(scenario.duration_us)
    return compile_report(world, run_id), world


def compile_report(world: World, run_id: str) -> RunReport:
    s = world.scenario
    cc_mode = s.mode == MODE_CENTRAL_CONTROLLER
    report = RunReport(
        run_id=run_id, seed=s.seed, gp_ms=s.gp_ms,
        pp_ms=s.pp_ms if cc_mode else None,
        lpp_ms=None if cc_mode else s.lpp_ms,
        fpp_ms=None if cc_mode else s.fpp_ms)
    stats = sync_error(world.trace.hi_times)
    if stats is not None:
        report.sync_mean_ms = stats.mean_ms
        report.sync_max_ms = stats.max_ms
    for i in sorted(world.glossy_nodes):
        records = world.trace.node_records(i)
        gnode = world.glossy_nodes[i]
        duty = gnode.duty_cycle() if gnode.rounds_accounted >= 1 else None
        trx = None if i == world.initiator else trx_err_pct(records)
        report.nodes.append(NodeReport(
            node_id=i,
            pid_err_pct=pid_err_pct(records),
            trx_err_pct=trx,
            duty_cycle=duty,
            pid_abs_err=abs_speed_err(records),
            trx_records=sum(1 for r in records if r.last_rx_payload_speed is not None)))
    return report


def run_to_dir(scenario: Scenario, out_dir, run_id: str = "run") -> RunReport:
    """Run one scenario and write report.csv, config.echo and the trace log."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report, world = simulate(scenario, run_id)
    write_report_csv([report], out / "report.csv")
    (out / "config.echo").write_text(scenario.echo_text(), encoding="utf-8")
    trace_dir = out / "trace"
    trace_dir.mkdir(exist_ok=True)
    (trace_dir / f"{run_id}.log").write_text(world.trace.to_jsonl(), encoding="utf-8")
    return report
