"""Flooding state machine: dissemination, timing recovery, duty accounting."""

import math

import pytest

from ctsim.glossy import FloodPacket, GlossyConfig, GlossyNode, Role
from ctsim.kernel import NodeClock, Simulator
from ctsim.radio import Medium, RadioParams, Topology
from ctsim.runner import RunTrace
from ctsim.scenario import TOPOLOGY_PRESETS

KEEPALIVE_LEN = 5  # header-only flood packet


def build_stack(positions, comm_range, *, gp=600_000, gd=20_000, n_tx=3,
                drifts=None, p_loss=0.0, p_loss_ci=0.0, seed=1, initiator=0,
                early_off=False):
    sim = Simulator(seed)
    topo = Topology(dict(enumerate(positions)), comm_range)
    medium = Medium(sim, topo, RadioParams(p_loss=p_loss, p_loss_ci=p_loss_ci))
    cfg = GlossyConfig(gp_us=gp, gd_us=gd, n_tx=n_tx, early_off=early_off)
    trace = RunTrace()
    nodes = {}
    for i in range(len(positions)):
        clock = NodeClock(i, drift_ppm=(drifts or {}).get(i, 0.0))
        role = Role.INITIATOR if i == initiator else Role.RECEIVER
        nodes[i] = GlossyNode(sim, medium, clock, cfg, i, role, trace=trace)
    for node in nodes.values():
        node.start()
    return sim, topo, nodes, trace, cfg


def run_rounds(sim, gp, rounds):
    sim.run_until(rounds * gp + gp // 2)


def test_two_node_lossless_delivers_within_one_slot():
    sim, topo, nodes, trace, cfg = build_stack(TOPOLOGY_PRESETS["pair2"], 30.0)
    run_rounds(sim, cfg.gp_us, 3)
    slot = cfg.slot_len_us(KEEPALIVE_LEN)
    for rnd, info in trace.rounds.items():
        assert 1 in info.deliveries, f"round {rnd} not delivered"
        assert info.deliveries[1] - info.start_exact <= slot


def test_default_five_node_topology_floods_within_latency_bound():
    sim, topo, nodes, trace, cfg = build_stack(TOPOLOGY_PRESETS["line5"], 30.0)
    run_rounds(sim, cfg.gp_us, 5)
    slot = cfg.slot_len_us(KEEPALIVE_LEN)
    bound = (topo.diameter() + cfg.n_tx) * slot
    for rnd, info in trace.rounds.items():
        assert set(info.deliveries) == {1, 2, 3, 4}
        latency = max(info.deliveries.values()) - info.start_exact
        assert latency <= bound


def test_first_reception_triggers_relay_one_slot_later():
    sim, topo, nodes, trace, cfg = build_stack(TOPOLOGY_PRESETS["pair2"], 30.0)
    run_rounds(sim, cfg.gp_us, 1)
    slot = cfg.slot_len_us(KEEPALIVE_LEN)
    round0 = [t for t in trace.tx_log if t[1] == 0]
    start_by_node = {}
    for node, rnd, relay, payload, start in round0:
        start_by_node.setdefault((node, relay), start)
    assert (0, 0) in start_by_node and (1, 1) in start_by_node
    assert start_by_node[(1, 1)] - start_by_node[(0, 0)] == pytest.approx(slot, abs=1e-6)


def test_tx_budget_respected():
    for n_tx in (1, 2, 3):
        sim, topo, nodes, trace, cfg = build_stack(
            TOPOLOGY_PRESETS["line5"], 30.0, n_tx=n_tx)
        run_rounds(sim, cfg.gp_us, 4)
        per_round_node: dict = {}
        for node, rnd, relay, payload, start in trace.tx_log:
            per_round_node[(node, rnd)] = per_round_node.get((node, rnd), 0) + 1
        assert max(per_round_node.values()) <= n_tx


def test_simultaneous_relays_reach_downstream_by_combining():
    # 1 and 2 both hear the source and relay in the same slot; 3 hears only
    # their combined transmission
    positions = [(0.0, 0.0), (8.0, 3.0), (8.0, -3.0), (16.0, 0.0)]
    sim, topo, nodes, trace, cfg = build_stack(positions, 10.0)
    run_rounds(sim, cfg.gp_us, 3)
    for rnd, info in trace.rounds.items():
        assert 3 in info.deliveries
        relayers = {n for n, r, relay, _, _ in trace.tx_log
                    if r == rnd and relay == 1}
        assert relayers == {1, 2}


def test_reference_time_back_calculation():
    sim, topo, nodes, trace, cfg = build_stack(TOPOLOGY_PRESETS["pair2"], 30.0)
    # keep-alive packet: airtime 352 us, slot 544 us at the default turnaround
    assert cfg.slot_len_us(KEEPALIVE_LEN) == 544
    assert nodes[1].estimate_reference_time(5000.0, 2, KEEPALIVE_LEN) == \
        pytest.approx(5000.0 - 2 * 544 - 352)
    # zero-hop: reception ends one airtime after the round started
    assert nodes[1].estimate_reference_time(1000.0 + 352, 0, KEEPALIVE_LEN) == \
        pytest.approx(1000.0)


def test_drifting_receiver_realigns_every_round():
    # +50 ppm over a 2 s period accumulates ~100 us of wake-up error, which
    # one reception per round pulls back to quantization level
    gp = 2_000_000
    sim, topo, nodes, trace, cfg = build_stack(
        TOPOLOGY_PRESETS["pair2"], 30.0, gp=gp, drifts={1: 50.0})
    run_rounds(sim, gp, 5)
    guard_global = cfg.rx_guard_us / nodes[1].clock.rate
    for rnd in range(1, 5):
        t0 = trace.rounds[rnd].start_exact
        window_on = [on for node, r, on, off in trace.radio_log
                     if node == 1 and r == rnd]
        assert window_on, f"receiver skipped round {rnd}"
        wake_err = (window_on[0] + guard_global) - t0
        # pre-correction: the wake was scheduled from the previous round's
        # estimate, so it carries one period of relative drift
        assert abs(wake_err) == pytest.approx(gp * 50e-6, abs=5.0)
        # post-correction: the in-round estimate lands on the true start
        est_err = nodes[1].clock.global_exact(
            nodes[1].estimate_reference_time(
                nodes[1].clock.local_exact(trace.rounds[rnd].deliveries[1]),
                0, KEEPALIVE_LEN)) - t0
        assert abs(est_err) <= 2.0


def test_round_boundary_misalignment_does_not_grow():
    drifts = {0: -37.0, 1: 50.0, 2: -12.0, 3: 25.0, 4: 8.0}
    sim, topo, nodes, trace, cfg = build_stack(
        TOPOLOGY_PRESETS["line5"], 30.0, drifts=drifts)
    run_rounds(sim, cfg.gp_us, 30)
    spread_ppm = (max(drifts.values()) - min(drifts.values())) * 1e-6
    bound = cfg.gp_us * spread_ppm + 5.0  # one period of drift + quantization
    for rnd in range(2, 30):
        t0 = trace.rounds[rnd].start_exact
        offs = []
        for node, r, on, off in trace.radio_log:
            if r == rnd and node != 0:
                offs.append(on + cfg.rx_guard_us / nodes[node].clock.rate - t0)
        assert offs and max(abs(o) for o in offs) <= bound


def test_duty_cycle_accounting_is_exact():
    gp, gd, rounds = 2_000_000, 20_000, 100
    sim, topo, nodes, trace, cfg = build_stack(
        TOPOLOGY_PRESETS["pair2"], 30.0, gp=gp, gd=gd,
        drifts={0: 11.0, 1: -29.0})
    sim.run_until(rounds * gp + gp // 2)
    node = nodes[0]
    assert node.rounds_accounted >= rounds
    # 100 rounds at gd 20 ms accumulate exactly 2.0 s of on-time
    assert node.radio_on_us_accum == node.rounds_accounted * gd
    assert node.duty_cycle() == pytest.approx(gd / gp, rel=1e-12)
    assert nodes[1].duty_cycle() == pytest.approx(gd / gp, rel=1e-12)


def test_early_off_reduces_duty_cycle():
    sim, topo, nodes, trace, cfg = build_stack(
        TOPOLOGY_PRESETS["pair2"], 30.0, early_off=True)
    run_rounds(sim, cfg.gp_us, 10)
    assert nodes[1].duty_cycle() < cfg.gd_us / cfg.gp_us
    assert nodes[1].radio_on_us_accum < nodes[1].rounds_accounted * cfg.gd_us


def test_duty_cycle_requires_one_round():
    sim, topo, nodes, trace, cfg = build_stack(TOPOLOGY_PRESETS["pair2"], 30.0)
    with pytest.raises(ValueError):
        nodes[1].duty_cycle()


def test_payload_uniform_within_each_round():
    sim, topo, nodes, trace, cfg = build_stack(TOPOLOGY_PRESETS["line5"], 30.0)
    nodes[0].stage(b"\x01\x02\x03")
    run_rounds(sim, cfg.gp_us, 4)
    by_round: dict = {}
    for node, rnd, relay, payload, start in trace.tx_log:
        by_round.setdefault(rnd, set()).add(payload)
    for rnd, payloads in by_round.items():
        assert len(payloads) == 1, f"round {rnd} carried mixed payloads"


def test_relay_counter_growth_is_bounded():
    sim, topo, nodes, trace, cfg = build_stack(TOPOLOGY_PRESETS["line5"], 30.0)
    run_rounds(sim, cfg.gp_us, 4)
    bound = cfg.n_tx * topo.diameter() + cfg.n_tx
    assert max(relay for _, _, relay, _, _ in trace.tx_log) <= bound


def test_staged_payload_is_flooded_then_cleared():
    sim, topo, nodes, trace, cfg = build_stack(TOPOLOGY_PRESETS["pair2"], 30.0)
    nodes[0].stage(b"\x42")
    run_rounds(sim, cfg.gp_us, 2)
    assert trace.rounds[0].payload == b"\x42"
    assert trace.rounds[1].payload == b""  # nothing staged: keep-alive
    assert nodes[1].round_payload == b""


def test_missed_rounds_extrapolate_and_recover():
    sim, topo, nodes, trace, cfg = build_stack(TOPOLOGY_PRESETS["pair2"], 30.0)
    gp = cfg.gp_us
    # walk the receiver out of range for rounds 2..3, then back
    sim.schedule_at(round(1.5 * gp), lambda: topo.move(1, (500.0, 0.0)))
    sim.schedule_at(round(3.5 * gp), lambda: topo.move(1, (10.0, 0.0)))
    run_rounds(sim, gp, 6)
    delivered = {rnd for rnd, info in trace.rounds.items() if 1 in info.deliveries}
    assert {0, 1} <= delivered
    assert 2 not in delivered and 3 not in delivered
    assert {4, 5} <= delivered  # extrapolated wake-ups caught the flood again
    windows = {r for node, r, on, off in trace.radio_log if node == 1}
    assert {2, 3} <= windows  # kept waking on schedule while deaf


CONNECTED_FOUR_NODE_LAYOUTS = {
    "path": [(0.0, 0.0), (9.0, 0.0), (18.0, 0.0), (27.0, 0.0)],
    "star": [(0.0, 0.0), (9.0, 0.0), (-4.5, 7.8), (-4.5, -7.8)],
    "triangle_pendant": [(0.0, 0.0), (9.0, 0.0), (4.5, 7.8), (18.0, 0.0)],
    "cycle": [(0.0, 0.0), (9.0, 0.0), (9.0, 9.0), (0.0, 9.0)],
    "diamond": [(0.0, 0.0), (9.0, 0.0), (4.5, 7.79), (4.5, -7.79)],
    "complete": [(0.0, 0.0), (5.0, 0.0), (5.0, 5.0), (0.0, 5.0)],
}


@pytest.mark.parametrize("name", sorted(CONNECTED_FOUR_NODE_LAYOUTS))
@pytest.mark.parametrize("initiator", [0, 1, 2, 3])
def test_every_connected_four_node_topology_floods(name, initiator):
    positions = CONNECTED_FOUR_NODE_LAYOUTS[name]
    sim, topo, nodes, trace, cfg = build_stack(
        positions, 10.0, initiator=initiator)
    assert topo.is_connected()
    run_rounds(sim, cfg.gp_us, 3)
    slot = cfg.slot_len_us(KEEPALIVE_LEN)
    bound = (topo.diameter() + cfg.n_tx) * slot
    expected = set(range(4)) - {initiator}
    assert len(trace.rounds) >= 3
    for rnd, info in trace.rounds.items():
        assert set(info.deliveries) == expected, f"{name}: round {rnd} incomplete"
        assert max(info.deliveries.values()) - info.start_exact <= bound
