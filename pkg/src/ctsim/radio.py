"""Shared wireless medium model.

Geometric connectivity, 802.15.4 airtime, log-distance path loss, and the
reception outcome under overlapping transmissions: a lone packet suffers
independent loss; simultaneous identical packets combine constructively
when their start-time skew is sub-microsecond; a sufficiently dominant
signal is captured; everything else collides.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, TYPE_CHECKING

if TYPE_CHECKING:
    from .kernel import Simulator

FRAME_OVERHEAD_BYTES = 6   # preamble + SFD + length byte
BYTE_AIRTIME_US = 32       # 250 kbit/s


def airtime_us(length_bytes: int) -> int:
    """On-air duration of a radio frame with the given payload length."""
    if not 1 <= length_bytes <= 127:
        raise ValueError(f"frame length {length_bytes} outside 1..127 bytes")
    return (FRAME_OVERHEAD_BYTES + length_bytes) * BYTE_AIRTIME_US


def received_power_dbm(distance_m: float, tx_power_dbm: float = 0.0, *,
                       pl0_db: float = 40.0, ref_distance_m: float = 1.0,
                       exponent: float = 3.0) -> float:
    """Log-distance path loss: tx - PL0 - 10*eta*log10(d/d0)."""
    if distance_m <= 0.0:
        raise ValueError("path loss undefined at zero distance")
    return tx_power_dbm - pl0_db - 10.0 * exponent * math.log10(distance_m / ref_distance_m)


@dataclass
class RadioParams:
    p_loss: float = 0.01            # independent per-reception loss
    p_loss_ci: float = 0.05         # loss under constructive interference
    ci_window_us: float = 0.5       # max pairwise start skew for CI
    capture_margin_db: float = 3.0  # dominance over the sum of interferers
    capture_window_us: float = 160.0
    tx_power_dbm: float = 0.0
    pl0_db: float = 40.0
    ref_distance_m: float = 1.0
    path_loss_exponent: float = 3.0


class Topology:
    """Node positions in meters plus a symmetric in-range link relation.

    Positions are mutable (robots move); link membership is evaluated from
    current positions whenever asked, never cached.
    """

    def __init__(self, positions: dict[int, tuple[float, float]], comm_range_m: float):
        if comm_range_m <= 0:
            raise ValueError("comm_range_m must be positive")
        self.positions = dict(positions)
        self.comm_range_m = comm_range_m

    @property
    def nodes(self) -> list[int]:
        return sorted(self.positions)

    def move(self, node: int, position: tuple[float, float]) -> None:
        self.positions[node] = position

    def distance(self, a: int, b: int) -> float:
        (xa, ya), (xb, yb) = self.positions[a], self.positions[b]
        return math.hypot(xa - xb, ya - yb)

    def in_range(self, a: int, b: int) -> bool:
        return a != b and self.distance(a, b) <= self.comm_range_m

    def neighbors(self, a: int) -> list[int]:
        return [b for b in self.nodes if b != a and self.in_range(a, b)]

    def hop_counts(self, source: int) -> dict[int, int]:
        """BFS hop distance from source over the current link set."""
        hops = {source: 0}
        frontier = [source]
        while frontier:
            nxt = []
            for a in frontier:
                for b in self.neighbors(a):
                    if b not in hops:
                        hops[b] = hops[a] + 1
                        nxt.append(b)
            frontier = nxt
        return hops

    def is_connected(self) -> bool:
        return len(self.hop_counts(self.nodes[0])) == len(self.nodes)

    def diameter(self) -> int:
        best = 0
        for a in self.nodes:
            hops = self.hop_counts(a)
            if len(hops) != len(self.nodes):
                raise ValueError("diameter undefined on a disconnected topology")
            best = max(best, max(hops.values()))
        return best


class OutcomeKind(enum.Enum):
    IDLE = "idle"
    RECEIVED = "received"
    COLLISION = "collision"
    MISSED = "missed"


@dataclass(frozen=True)
class ReceptionOutcome:
    kind: OutcomeKind
    packet: object | None = None
    rx_end_exact: float | None = None
    via: str = ""          # "single" | "ci" | "capture"


IDLE = ReceptionOutcome(OutcomeKind.IDLE)
COLLISION = ReceptionOutcome(OutcomeKind.COLLISION)
MISSED = ReceptionOutcome(OutcomeKind.MISSED)


@dataclass(eq=False)
class Transmission:
    """One on-air frame. start_exact keeps sub-microsecond alignment.

    positions_at_start snapshots all node positions when the frame hits the
    air: link membership for this transmission is judged from that instant.
    """

    sender: int
    packet: object
    start_exact: float
    airtime_us: int
    power_dbm: float
    positions_at_start: dict[int, tuple[float, float]]

    @property
    def end_exact(self) -> float:
        return self.start_exact + self.airtime_us


def _dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def resolve_reception(in_range: list[tuple[Transmission, float]],
                      params: RadioParams,
                      draw: Callable[[], float]) -> ReceptionOutcome:
    """Outcome for one receiver given its in-range overlapping transmissions.

    in_range pairs each transmission with its received power at this
    receiver in dBm. Rules are applied in a fixed order:

      1. nothing in range             -> IDLE
      2. exactly one                  -> RECEIVED w.p. 1 - p_loss, else MISSED
      3. all payload-identical and start skew <= ci_window_us
                                      -> constructive interference:
                                         RECEIVED w.p. 1 - p_loss_ci
      4. one signal at least capture_margin_db above the summed power of the
         rest and starting within capture_window_us of the earliest
                                      -> capture: RECEIVED (strongest)
      5. otherwise                    -> COLLISION

    draw() yields uniform [0,1) values and is consulted only by rules 2/3,
    so repeated resolution with the same draws is reproducible.
    """
    if not in_range:
        return IDLE

    if len(in_range) == 1:
        tx, _ = in_range[0]
        if draw() < params.p_loss:
            return MISSED
        return ReceptionOutcome(OutcomeKind.RECEIVED, tx.packet, tx.end_exact, "single")

    starts = [tx.start_exact for tx, _ in in_range]
    earliest = min(starts)

    first = in_range[0][0].packet
    if all(tx.packet == first for tx, _ in in_range):
        if max(starts) - earliest <= params.ci_window_us:
            if draw() < params.p_loss_ci:
                return MISSED
            lead = min(in_range, key=lambda pair: pair[0].start_exact)[0]
            return ReceptionOutcome(OutcomeKind.RECEIVED, lead.packet, lead.end_exact, "ci")

    strongest_tx, strongest_dbm = max(in_range, key=lambda pair: pair[1])
    others_mw = sum(_dbm_to_mw(p) for tx, p in in_range if tx is not strongest_tx)
    margin_ok = strongest_dbm >= 10.0 * math.log10(others_mw) + params.capture_margin_db
    timing_ok = strongest_tx.start_exact - earliest <= params.capture_window_us
    if margin_ok and timing_ok:
        return ReceptionOutcome(OutcomeKind.RECEIVED, strongest_tx.packet,
                                strongest_tx.end_exact, "capture")

    return COLLISION


class RadioListener:
    """Interface the medium expects from an attached radio (duck-typed).

    listening_since_exact is None while the radio is off or transmitting;
    otherwise it is the global instant continuous listening began. on_rx is
    invoked with the decoded packet at the end of a successful reception.
    """

    node_id: int
    listening_since_exact: float | None

    def on_rx(self, packet, rx_end_exact: float) -> None:  # pragma: no cover
        raise NotImplementedError


@dataclass
class MediumStats:
    received: int = 0
    collisions: int = 0
    missed: int = 0


class Medium:
    """Resolves overlapping transmissions into per-receiver outcomes.

    Transmissions are grouped into clusters of mutually overlapping
    intervals; a cluster is resolved once, when its last member leaves the
    air. A node hears a cluster only if it listened continuously from the
    cluster's first start (half-duplex: its own transmissions exclude it).
    """

    def __init__(self, sim: Simulator, topology: Topology, params: RadioParams):
        self.sim = sim
        self.topology = topology
        self.params = params
        self._listeners: dict[int, RadioListener] = {}
        self._pending: list[Transmission] = []
        self.stats: dict[int, MediumStats] = {}

    def attach(self, listener: RadioListener) -> None:
        self._listeners[listener.node_id] = listener
        self.stats[listener.node_id] = MediumStats()

    def transmit(self, sender: int, packet, start_exact: float, airtime: int) -> Transmission:
        power = self.params.tx_power_dbm
        tx = Transmission(sender, packet, start_exact, airtime, power,
                          dict(self.topology.positions))
        self._pending.append(tx)
        self.sim.schedule_at(math.ceil(tx.end_exact), lambda: self._on_tx_end(tx),
                             kind="radio-tx-end", target=sender)
        return tx

    def _cluster_of(self, tx: Transmission) -> list[Transmission]:
        """Connected component of interval overlap containing tx."""
        cluster = [tx]
        changed = True
        while changed:
            changed = False
            lo = min(m.start_exact for m in cluster)
            hi = max(m.end_exact for m in cluster)
            for other in self._pending:
                if other in cluster:
                    continue
                if other.start_exact < hi and lo < other.end_exact:
                    cluster.append(other)
                    changed = True
        return cluster

    def _on_tx_end(self, tx: Transmission) -> None:
        if tx not in self._pending:
            return  # already resolved as part of an earlier member's cluster
        cluster = self._cluster_of(tx)
        if any(m.end_exact > self.sim.now for m in cluster):
            return  # a later-ending member's event will resolve the cluster
        for m in cluster:
            self._pending.remove(m)
        self._resolve_cluster(cluster)

    def _resolve_cluster(self, cluster: list[Transmission]) -> None:
        cluster_start = min(m.start_exact for m in cluster)
        senders = {m.sender for m in cluster}
        for node_id in sorted(self._listeners):
            if node_id in senders:
                continue
            listener = self._listeners[node_id]
            since = listener.listening_since_exact
            if since is None or since > cluster_start:
                continue
            in_range = []
            for m in cluster:
                rx_pos = m.positions_at_start[node_id]
                tx_pos = m.positions_at_start[m.sender]
                d = math.hypot(rx_pos[0] - tx_pos[0], rx_pos[1] - tx_pos[1])
                if d <= self.topology.comm_range_m and d > 0.0:
                    in_range.append((m, received_power_dbm(
                        d, m.power_dbm, pl0_db=self.params.pl0_db,
                        ref_distance_m=self.params.ref_distance_m,
                        exponent=self.params.path_loss_exponent)))
            if not in_range:
                continue
            rng = self.sim.rng(f"radio/{node_id}")
            outcome = resolve_reception(in_range, self.params, rng.random)
            stats = self.stats[node_id]
            if outcome.kind is OutcomeKind.RECEIVED:
                stats.received += 1
                listener.on_rx(outcome.packet, outcome.rx_end_exact)
            elif outcome.kind is OutcomeKind.COLLISION:
                stats.collisions += 1
            elif outcome.kind is OutcomeKind.MISSED:
                stats.missed += 1
