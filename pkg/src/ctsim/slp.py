"""Serial line protocol between each networking unit (NU) and its
computation/control unit (CCU).

Bit-exact framing (SOF + CRC-16/CCITT-FALSE) and the four-phase per-period
interaction: (1) Hi/Hello availability check, (2) flood payload transfer
down to the CCU, (3) mid-period synchronized log snapshot, (4) end-of-period
handover of the CCU's outgoing state for the next flood. The NU initiates
every exchange; the CCU only replies.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

from .kernel import Event, Simulator

SOF = 0x7E
MAX_PAYLOAD = 64

PHASE_HI = 1
PHASE_DATA = 2
PHASE_LOG = 3
PHASE_HANDOVER = 4


class FrameError(Exception):
    """Base class for frame decode rejections."""


class BadSof(FrameError):
    pass


class BadLength(FrameError):
    pass


class BadCrc(FrameError):
    pass


def _crc16_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else (crc << 1)
        table.append(crc & 0xFFFF)
    return table


_CRC16_TABLE = _crc16_table()


def crc16_ccitt_false(data: bytes) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection."""
    crc = 0xFFFF
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC16_TABLE[((crc >> 8) ^ byte) & 0xFF]
    return crc


@dataclass(frozen=True)
class SlpFrame:
    phase: int
    seq: int
    payload: bytes = b""


def encode_frame(frame: SlpFrame) -> bytes:
    """SOF, phase, seq, len, payload, CRC16 (big-endian) over phase..payload."""
    if not 1 <= frame.phase <= 4:
        raise ValueError(f"phase {frame.phase} outside 1..4")
    if not 0 <= frame.seq <= 255:
        raise ValueError(f"seq {frame.seq} outside 0..255")
    if len(frame.payload) > MAX_PAYLOAD:
        raise ValueError(f"payload {len(frame.payload)} exceeds {MAX_PAYLOAD} bytes")
    body = bytes([frame.phase, frame.seq, len(frame.payload)]) + frame.payload
    return bytes([SOF]) + body + struct.pack(">H", crc16_ccitt_false(body))


def decode_frame(buf: bytes) -> SlpFrame:
    if len(buf) < 6:
        raise BadLength(f"frame of {len(buf)} bytes is shorter than the 6-byte minimum")
    if buf[0] != SOF:
        raise BadSof(f"expected SOF 0x7E, got 0x{buf[0]:02X}")
    length = buf[3]
    if length > MAX_PAYLOAD or len(buf) != 6 + length:
        raise BadLength(f"length byte {length} does not match frame size {len(buf)}")
    body = buf[1:4 + length]
    (crc,) = struct.unpack(">H", buf[4 + length:6 + length])
    if crc != crc16_ccitt_false(body):
        raise BadCrc("frame CRC mismatch")
    phase = buf[1]
    if not 1 <= phase <= 4:
        raise BadLength(f"phase {phase} outside 1..4")
    return SlpFrame(phase=phase, seq=buf[2], payload=bytes(buf[4:4 + length]))


@dataclass(frozen=True)
class SlpSchedule:
    """Per-period phase offsets, all relative to the NU's round start.

    Phases 1+2 run right after the radio window closes, phase 3 near the
    middle of the period, phase 4 near the end but early enough that the
    staged payload is ready at least one radio window before the next round.
    """

    gp_us: int
    gd_us: int
    phase12_offset_us: int = 0          # after GD expiry
    phase3_offset_us: int | None = None   # default gp/2
    handover_margin_us: int = 50_000

    def __post_init__(self):
        if self.phase3_offset_us is None:
            object.__setattr__(self, "phase3_offset_us", self.gp_us // 2)

    @property
    def t_phase12(self) -> int:
        return self.gd_us + self.phase12_offset_us

    @property
    def t_phase3(self) -> int:
        return self.phase3_offset_us

    @property
    def t_phase4(self) -> int:
        return self.gp_us - self.handover_margin_us

    def validate(self) -> None:
        if not self.gd_us <= self.t_phase12 < self.t_phase3 < self.t_phase4 < self.gp_us:
            raise ValueError(
                f"phase schedule violates gd <= p12 < p3 < p4 < gp "
                f"({self.gd_us} <= {self.t_phase12} < {self.t_phase3} "
                f"< {self.t_phase4} < {self.gp_us})")
        if self.handover_margin_us < self.gd_us:
            raise ValueError(
                f"handover margin {self.handover_margin_us} us completes less than "
                f"one radio window ({self.gd_us} us) before the next round")


@dataclass
class LinkStats:
    frames_ok: int = 0
    bad_sof: int = 0
    bad_length: int = 0
    bad_crc: int = 0
    skipped_rounds: int = 0

    def count_error(self, err: FrameError) -> None:
        if isinstance(err, BadSof):
            self.bad_sof += 1
        elif isinstance(err, BadCrc):
            self.bad_crc += 1
        else:
            self.bad_length += 1


class SerialLink:
    """Byte-serial wire between one NU and its CCU.

    Transfer delay is a fixed per-byte cost plus uniform per-frame jitter,
    drawn from this node's own stream. No interrupts on either side: the
    receiver sees the frame only when the last byte has arrived.
    """

    def __init__(self, sim: Simulator, node_id: int, *, byte_us: float = 87.0,
                 jitter_us: float = 2000.0):
        self.sim = sim
        self.node_id = node_id
        self.byte_us = byte_us
        self.jitter_us = jitter_us
        self.stats = LinkStats()
        self.corrupt_hook: Callable[[bytes], bytes] | None = None
        self._trace: Callable[[int, int, int, int], None] | None = None

    def set_trace(self, cb: Callable[[int, int, int, int], None]) -> None:
        """cb(node_id, t_send_us, t_arrive_us, nbytes) per frame transfer."""
        self._trace = cb

    def send(self, frame: SlpFrame, deliver: Callable[[SlpFrame], None]) -> None:
        wire = encode_frame(frame)
        if self.corrupt_hook is not None:
            wire = self.corrupt_hook(wire)
        rng = self.sim.rng(f"serial/{self.node_id}")
        delay = len(wire) * self.byte_us + rng.uniform(0.0, self.jitter_us)
        t_send = self.sim.now

        def arrive():
            if self._trace is not None:
                self._trace(self.node_id, t_send, self.sim.now, len(wire))
            try:
                decoded = decode_frame(wire)
            except FrameError as err:
                self.stats.count_error(err)
                return  # a bad frame silently skips the phase
            self.stats.frames_ok += 1
            deliver(decoded)

        self.sim.schedule_in(delay, arrive, kind="serial-frame", target=self.node_id)


class CcuPort:
    """CCU side of the link: replies to NU queries, never initiates.

    The attached application object provides on_payload(value),
    record_snapshot(round_seq) and outgoing_payload(); hi timestamps are
    reported through on_hi(round_seq, t_us) for the offline sync analysis.
    """

    def __init__(self, sim: Simulator, link: SerialLink, app,
                 on_hi: Callable[[int, int], None] | None = None):
        self.sim = sim
        self.link = link
        self.app = app
        self.on_hi = on_hi
        self.responsive = True

    def handle(self, frame: SlpFrame, reply: Callable[[SlpFrame], None],
               round_seq: int) -> None:
        """round_seq is the unwrapped round number; the 1-byte wire seq wraps
        at 256 and the offline analysis disambiguates rounds by timestamp, so
        the simulation carries the true value alongside the frame."""
        if not self.responsive:
            return
        if frame.phase == PHASE_HI:
            if self.on_hi is not None:
                self.on_hi(round_seq, self.sim.now)
            reply(SlpFrame(PHASE_HI, frame.seq))
        elif frame.phase == PHASE_DATA:
            if frame.payload:
                self.app.on_payload(frame.payload, round_seq)
        elif frame.phase == PHASE_LOG:
            self.app.record_snapshot(round_seq)
        elif frame.phase == PHASE_HANDOVER:
            reply(SlpFrame(PHASE_HANDOVER, frame.seq, self.app.outgoing_payload()))


class NuPort:
    """NU side of the link: drives the four phases once per round.

    Phase flow per round: Hi -> (Hello) -> Data, then the kernel events the
    radio layer scheduled call run_phase3/run_phase4. A CCU that fails to
    answer Hi within reply_timeout_us causes phases 2..4 to be skipped for
    the round; flooding is unaffected.
    """

    def __init__(self, sim: Simulator, link: SerialLink, ccu: CcuPort,
                 schedule: SlpSchedule, *,
                 reply_timeout_us: int = 10_000,
                 stage: Callable[[bytes], None] | None = None,
                 on_phase: Callable[[int, int, int], None] | None = None):
        self.sim = sim
        self.link = link
        self.ccu = ccu
        self.schedule = schedule
        self.reply_timeout_us = reply_timeout_us
        self.stage = stage          # deliver phase-4 payload to the radio layer
        self.on_phase = on_phase    # trace: (round_seq, phase, t_us)
        self._round_ok = False
        self._round_payload: bytes | None = None
        self._round = 0             # unwrapped round number
        self._timeout_ev: Event | None = None

    # -- NU -> CCU with the CCU's reply routed back over the same wire --
    def _send(self, frame: SlpFrame) -> None:
        ctx = self._round
        self.link.send(frame, lambda f: self.ccu.handle(f, self._send_reply, ctx))

    def _send_reply(self, frame: SlpFrame) -> None:
        self.link.send(frame, self._on_reply)

    @property
    def _wire_seq(self) -> int:
        return self._round & 0xFF

    def begin_round(self, round_seq: int, flood_payload: bytes | None) -> None:
        """Phases 1+2, fired right after the radio window closes."""
        self._round = round_seq
        self._round_payload = flood_payload
        self._round_ok = False
        self._note_phase(PHASE_HI)
        self._send(SlpFrame(PHASE_HI, self._wire_seq))
        self._timeout_ev = self.sim.schedule_in(
            self.reply_timeout_us, self._on_timeout, kind="slp-timeout",
            target=self.link.node_id)

    def _on_reply(self, frame: SlpFrame) -> None:
        if frame.phase == PHASE_HI and frame.seq == self._wire_seq:
            if self._timeout_ev is not None:
                self.sim.cancel(self._timeout_ev)
                self._timeout_ev = None
            self._round_ok = True
            self._note_phase(PHASE_DATA)
            self._send(SlpFrame(PHASE_DATA, self._wire_seq,
                                self._round_payload or b""))
        elif frame.phase == PHASE_HANDOVER and frame.seq == self._wire_seq:
            if self.stage is not None:
                self.stage(frame.payload)

    def _on_timeout(self) -> None:
        self._timeout_ev = None
        self._round_ok = False
        self.link.stats.skipped_rounds += 1

    def run_phase3(self) -> None:
        if not self._round_ok:
            return
        self._note_phase(PHASE_LOG)
        self._send(SlpFrame(PHASE_LOG, self._wire_seq))

    def run_phase4(self) -> None:
        if not self._round_ok:
            return
        self._note_phase(PHASE_HANDOVER)
        self._send(SlpFrame(PHASE_HANDOVER, self._wire_seq))

    def _note_phase(self, phase: int) -> None:
        if self.on_phase is not None:
            self.on_phase(self._round, phase, self.sim.now)
