"""Networking unit: one-to-all flooding by concurrent retransmission.

Each round the initiator transmits a packet at its period boundary; every
node that decodes it retransmits on the next slot boundary with the relay
counter incremented, up to n_tx transmissions per round. Simultaneous
relays carry identical bytes, so receivers decode them constructively.
Receivers back-calculate the round start from the relay counter and realign
their next wake-up to it, which is what keeps the network synchronized.

Sub-microsecond alignment note: kernel events fire on integer microseconds,
but all protocol timing here is derived with exact (float) clock
arithmetic anchored at reception instants, the way a radio's hardware timer
runs from the rx interrupt. Quantizing these to the 1 us event grid would
inject artificial skew larger than the real phenomenon being modeled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .kernel import Event, NodeClock, Simulator
from .radio import Medium, airtime_us

PACKET_HEADER_BYTES = 5    # 4-byte round counter + 1-byte relay counter


class Role(Enum):
    INITIATOR = "initiator"
    RECEIVER = "receiver"


@dataclass(frozen=True)
class FloodPacket:
    """Payload disseminated in one flood round.

    Equality covers all fields: transmissions are combinable in the air only
    when their bytes are identical, and relays in the same slot always carry
    the same relay_count.
    """

    round_seq: int
    relay_count: int
    payload: bytes

    @property
    def length_bytes(self) -> int:
        return PACKET_HEADER_BYTES + len(self.payload)


@dataclass(frozen=True)
class GlossyConfig:
    """Round timing: gp_us period, gd_us maximum radio-on window per round,
    n_tx transmissions per node per round.

    rx_guard_us: non-initiators wake this much before their estimated round
    start so accumulated drift cannot make them miss the first packet; the
    radio window is still exactly gd_us long.
    """

    gp_us: int
    gd_us: int
    n_tx: int = 3
    turnaround_us: int = 192
    rx_guard_us: int = 1000
    early_off: bool = False

    def __post_init__(self):
        if not 0 < self.gd_us < self.gp_us:
            raise ValueError(f"need 0 < gd ({self.gd_us}) < gp ({self.gp_us})")
        if self.n_tx < 1:
            raise ValueError("n_tx must be >= 1")
        if not 0 <= self.rx_guard_us < self.gd_us:
            raise ValueError("rx_guard_us must be in [0, gd_us)")

    def slot_len_us(self, packet_length_bytes: int) -> int:
        """One rx/tx hop: packet airtime plus the rx-to-tx turnaround."""
        return airtime_us(packet_length_bytes) + self.turnaround_us


class GlossyNode:
    """Per-node protocol state machine driven by kernel events."""

    def __init__(self, sim: Simulator, medium: Medium, clock: NodeClock,
                 cfg: GlossyConfig, node_id: int, role: Role, trace=None):
        self.sim = sim
        self.medium = medium
        self.clock = clock
        self.cfg = cfg
        self.node_id = node_id
        self.role = role
        self.trace = trace
        self.port = None                   # serial-line port, wired by the runner

        self.listening_since_exact: float | None = None
        self._radio_on = False
        self._transmitting = False
        self.synced = role is Role.INITIATOR

        self.round = 0
        self.round_payload: bytes | None = None   # received this round
        self.got_rx = False
        self.tx_count = 0
        self.staged_payload: bytes | None = None  # handed over by phase 4
        self.t_ref_local: float | None = None

        self._anchor_local: float = float(clock.offset_us)  # round start estimate
        self._accountable = False
        self._window_on_exact: float = 0.0
        self._pending_tx: Event | None = None
        self._gd_event: Event | None = None
        self._gd_deadline_exact: float | None = None

        self.radio_on_us_accum = 0.0       # local us, accounted rounds only
        self.rounds_accounted = 0
        self.tx_total = 0

        medium.attach(self)

    # ------------------------------------------------------------------
    # lifecycle
    # ------------------------------------------------------------------
    def start(self) -> None:
        if self.role is Role.INITIATOR:
            self.sim.schedule_at(max(self.sim.now, self.clock.global_time(self._anchor_local)),
                                 self._wake, kind="round-wake", target=self.node_id)
        else:
            # acquisition: listen continuously until the first reception
            self._radio_on = True
            self.listening_since_exact = float(self.sim.now)
            self._window_on_exact = self.listening_since_exact

    def stage(self, payload: bytes) -> None:
        """Accept the next round's flood payload (meaningful on the
        initiator; others keep it for logging symmetry)."""
        self.staged_payload = payload

    def duty_cycle(self) -> float:
        """Radio-on fraction over all accounted rounds; lossless operation
        without early-off gives exactly gd/gp."""
        if self.rounds_accounted < 1:
            raise ValueError("duty cycle needs at least one complete round")
        return self.radio_on_us_accum / (self.rounds_accounted * self.cfg.gp_us)

    # ------------------------------------------------------------------
    # round machinery
    # ------------------------------------------------------------------
    def _wake(self) -> None:
        cfg = self.cfg
        self.got_rx = False
        self.tx_count = 0
        self.round_payload = None
        self._radio_on = True
        self._accountable = True

        if self.role is Role.INITIATOR:
            wake_exact = self.clock.global_exact(self._anchor_local)
            self.listening_since_exact = wake_exact
            self._window_on_exact = wake_exact
            payload = self.staged_payload if self.staged_payload is not None else b""
            self.staged_payload = None
            packet = FloodPacket(self.round, 0, payload)
            self.round_payload = payload
            self.got_rx = True
            if self.trace is not None:
                self.trace.round_started(self.round, wake_exact, packet.length_bytes, payload)
            self._start_tx(packet, wake_exact)
            window_start_local = self._anchor_local
        else:
            window_start_local = self._anchor_local - cfg.rx_guard_us
            self.listening_since_exact = self.clock.global_exact(window_start_local)
            self._window_on_exact = self.listening_since_exact

        off_at = self.clock.global_exact(window_start_local + cfg.gd_us)
        self._gd_deadline_exact = off_at
        self._gd_event = self.sim.schedule_at(max(self.sim.now, math.ceil(off_at)),
                                              self._gd_expiry, kind="gd-expiry",
                                              target=self.node_id)

    def estimate_reference_time(self, rx_local_time: float, relay_count: int,
                                packet_length_bytes: int) -> float:
        """Round start in local time, back-calculated from the relay count:
        each hop costs one slot, and the reception itself one airtime."""
        return (rx_local_time
                - relay_count * self.cfg.slot_len_us(packet_length_bytes)
                - airtime_us(packet_length_bytes))

    def on_rx(self, packet: FloodPacket, rx_end_exact: float) -> None:
        if not self._radio_on:
            return
        if packet.round_seq < self.round:
            return  # stale round, ignore
        if packet.round_seq > self.round:
            self.round = packet.round_seq
            self.tx_count = 0
            self.got_rx = False

        self.round_payload = packet.payload
        first_rx = not self.got_rx
        self.got_rx = True
        if self.trace is not None and first_rx:
            self.trace.delivered(self.node_id, self.round, rx_end_exact, packet.payload)

        if self.role is Role.RECEIVER:
            rx_local = self.clock.local_exact(rx_end_exact)
            self.t_ref_local = self.estimate_reference_time(
                rx_local, packet.relay_count, packet.length_bytes)
            self._anchor_local = self.t_ref_local
            if not self.synced:
                # first-ever reception: leave acquisition, adopt the schedule
                self.synced = True
                off_at = self.clock.global_exact(self.t_ref_local + self.cfg.gd_us)
                self._gd_deadline_exact = off_at
                self._gd_event = self.sim.schedule_at(
                    max(self.sim.now, math.ceil(off_at)), self._gd_expiry,
                    kind="gd-expiry", target=self.node_id)

        if self.tx_count >= self.cfg.n_tx or self._pending_tx is not None:
            return  # duplicate beyond the tx budget, or a relay already queued
        relayed = FloodPacket(packet.round_seq, packet.relay_count + 1, packet.payload)
        start_exact = rx_end_exact + self.clock.global_elapsed(self.cfg.turnaround_us)
        self._pending_tx = self.sim.schedule_at(
            round(start_exact), lambda: self._tx_fire(relayed, start_exact),
            kind="relay-tx", target=self.node_id)

    def _start_tx(self, packet: FloodPacket, start_exact: float) -> None:
        assert self.tx_count < self.cfg.n_tx
        self.tx_count += 1
        self.tx_total += 1
        self._transmitting = True
        self.listening_since_exact = None
        tx = self.medium.transmit(self.node_id, packet, start_exact, airtime_us(packet.length_bytes))
        if self.trace is not None:
            self.trace.transmitted(self.node_id, packet, start_exact)
        self.sim.schedule_at(math.ceil(tx.end_exact), lambda: self._tx_done(tx.end_exact),
                             kind="tx-done", target=self.node_id)

    def _tx_fire(self, packet: FloodPacket, start_exact: float) -> None:
        self._pending_tx = None
        if not self._radio_on:
            return
        self._start_tx(packet, start_exact)

    def _tx_done(self, end_exact: float) -> None:
        self._transmitting = False
        if not self._radio_on:
            return  # window closed while the frame was on the air
        if self._gd_deadline_exact is not None and end_exact >= self._gd_deadline_exact:
            overrun = self.clock.local_exact(end_exact) - self.clock.local_exact(self._gd_deadline_exact)
            self._radio_off(extra_on_us=max(0.0, overrun))
            return
        if self.cfg.early_off and self.tx_count >= self.cfg.n_tx:
            early_by = self.clock.local_exact(self._gd_deadline_exact) - self.clock.local_exact(end_exact)
            self._radio_off(extra_on_us=-max(0.0, early_by))
            return
        self.listening_since_exact = end_exact

    def _gd_expiry(self) -> None:
        self._gd_event = None
        if not self._radio_on:
            return
        if self._transmitting:
            return  # _tx_done finalizes the window, charging the overrun
        self._radio_off(extra_on_us=0.0)

    def _radio_off(self, extra_on_us: float) -> None:
        cfg = self.cfg
        self._radio_on = False
        self.listening_since_exact = None
        if self._pending_tx is not None:
            self.sim.cancel(self._pending_tx)
            self._pending_tx = None
        if self._gd_event is not None:
            self.sim.cancel(self._gd_event)
            self._gd_event = None

        if self._accountable:
            # window length is gd_us of the local crystal by construction
            self.radio_on_us_accum += cfg.gd_us + extra_on_us
            self.rounds_accounted += 1
        if self.trace is not None:
            self.trace.radio_window(self.node_id, self.round,
                                    self._window_on_exact, float(self.sim.now))

        if self.port is not None:
            payload = self.round_payload if self.got_rx else None
            self.port.begin_round(self.round, payload)
            p3_local = self._anchor_local + self.port.schedule.t_phase3
            p4_local = self._anchor_local + self.port.schedule.t_phase4
            self.sim.schedule_at(max(self.sim.now, self.clock.global_time(p3_local)),
                                 self.port.run_phase3, kind="slp-phase3", target=self.node_id)
            self.sim.schedule_at(max(self.sim.now, self.clock.global_time(p4_local)),
                                 self.port.run_phase4, kind="slp-phase4", target=self.node_id)

        # advance to the next round on the local schedule; a missed round
        # keeps extrapolating the previous estimate until the next reception
        self._anchor_local += cfg.gp_us
        self.round += 1
        wake_local = self._anchor_local
        if self.role is Role.RECEIVER:
            wake_local -= cfg.rx_guard_us
        self.sim.schedule_at(max(self.sim.now, self.clock.global_time(wake_local)),
                             self._wake, kind="round-wake", target=self.node_id)
