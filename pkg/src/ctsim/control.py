"""Computation & control unit: PID speed loop, differential-drive plant,
target schedules, and the coordination roles (leader, follower, central
controller, commanded device).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from random import Random
from typing import Callable

from .metrics import MetricsRecord


def clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


class PidController:
    """Discrete PID with dt-scaled integral, anti-windup clamping of the
    integral term, and output saturation. Derivative acts on the error."""

    def __init__(self, kp: float = 2.0, ki: float = 0.8, kd: float = 0.1,
                 u_min: float = -100.0, u_max: float = 100.0):
        self.kp = kp
        self.ki = ki
        self.kd = kd
        self.u_min = u_min
        self.u_max = u_max
        self.setpoint = 0.0
        self.integral = 0.0
        self.prev_error = 0.0

    def step(self, measured: float, dt_s: float) -> float:
        if dt_s <= 0:
            raise ValueError("dt must be positive")
        error = self.setpoint - measured
        self.integral += error * dt_s
        if self.ki != 0.0:
            # keep the integral contribution alone within the output clamp
            bound = self.u_max / self.ki
            self.integral = clamp(self.integral, -bound, bound)
        derivative = (error - self.prev_error) / dt_s
        self.prev_error = error
        u = self.kp * error + self.ki * self.integral + self.kd * derivative
        return clamp(u, self.u_min, self.u_max)


@dataclass
class PlantParams:
    """First-order motor lag plus encoder-quantized speed sensing.

    encoder_tick_cm is the odometry resolution; measured speed is whole
    ticks over the sampling window, so short windows read noisier speeds.
    """

    tau_s: float = 0.4
    sigma_v: float = 0.3        # process noise, cm/s per sqrt(s)
    v_max: float = 40.0         # cm/s
    gain_v: float = 0.55        # steady-state cm/s per actuation unit
    encoder_tick_cm: float = 1.25


@dataclass
class Pose:
    x_m: float
    y_m: float
    heading_rad: float = 0.0


def integrate_unicycle(pose: Pose, v_left_cm_s: float, v_right_cm_s: float,
                       wheel_base_cm: float, dt_s: float) -> Pose:
    """Standard differential-drive kinematics over one step."""
    v = (v_left_cm_s + v_right_cm_s) / 2.0 / 100.0   # m/s
    w = (v_right_cm_s - v_left_cm_s) / wheel_base_cm  # rad/s
    if abs(w) < 1e-12:
        return Pose(pose.x_m + v * dt_s * math.cos(pose.heading_rad),
                    pose.y_m + v * dt_s * math.sin(pose.heading_rad),
                    pose.heading_rad)
    h2 = pose.heading_rad + w * dt_s
    r = v / w
    return Pose(pose.x_m + r * (math.sin(h2) - math.sin(pose.heading_rad)),
                pose.y_m - r * (math.cos(h2) - math.cos(pose.heading_rad)),
                h2)


class Robot:
    """Differential-drive car driven at equal wheel speeds.

    The motor is a first-order lag toward v_ss(u) = clamp(gain_v*u, 0, v_max)
    discretized exactly (matches the continuous response for any step size),
    with Gaussian process noise added per step. Odometry integrates the
    exact noise-free path of the lag within the step; speed is sensed by
    counting whole encoder ticks over the sampling window.
    """

    def __init__(self, params: PlantParams, rng: Random | None = None,
                 pose: Pose | None = None):
        self.params = params
        self.rng = rng
        self.pose = pose or Pose(0.0, 0.0)
        self.v = 0.0              # cm/s, both wheels
        self.u = 0.0
        self.odom_cm = 0.0
        self._ticks_seen = 0
        self._last_us: int = 0

    def v_ss(self, u: float) -> float:
        return clamp(self.params.gain_v * u, 0.0, self.params.v_max)

    def set_drive(self, u: float) -> None:
        self.u = u

    def _advance(self, dt_s: float) -> None:
        p = self.params
        target = self.v_ss(self.u)
        decay = math.exp(-dt_s / p.tau_s)
        dist = target * dt_s + (self.v - target) * p.tau_s * (1.0 - decay)
        self.v = target + (self.v - target) * decay
        if p.sigma_v > 0.0 and self.rng is not None:
            self.v = clamp(self.v + self.rng.gauss(0.0, p.sigma_v * math.sqrt(dt_s)),
                           0.0, p.v_max)
        dist = max(dist, 0.0)
        self.odom_cm += dist
        self.pose = Pose(self.pose.x_m + (dist / 100.0) * math.cos(self.pose.heading_rad),
                         self.pose.y_m + (dist / 100.0) * math.sin(self.pose.heading_rad),
                         self.pose.heading_rad)

    def step(self, u: float, dt_s: float) -> float:
        """Apply actuation u for dt seconds; returns the new wheel speed."""
        self.set_drive(u)
        self._advance(dt_s)
        return self.v

    def advance_to(self, t_us: int) -> None:
        if t_us > self._last_us:
            self._advance((t_us - self._last_us) / 1e6)
            self._last_us = t_us

    def read_encoder_speed(self, window_s: float) -> float:
        """Speed estimate from whole ticks accumulated since the last read."""
        total = math.floor(self.odom_cm / self.params.encoder_tick_cm)
        ticks = total - self._ticks_seen
        self._ticks_seen = total
        return ticks * self.params.encoder_tick_cm / window_s


# ---------------------------------------------------------------------------
# Target schedules
# ---------------------------------------------------------------------------

class StepSchedule:
    """Piecewise-constant targets: list of (start_time_s, speed_cm_s)."""

    def __init__(self, steps: list[tuple[float, float]]):
        if not steps:
            raise ValueError("schedule needs at least one step")
        self.steps = sorted(steps)

    def value_at(self, t_us: float) -> float:
        t_s = t_us / 1e6
        value = self.steps[0][1]
        for start, speed in self.steps:
            if t_s >= start:
                value = speed
            else:
                break
        return value


class TriangleSchedule:
    """Ramp lo -> hi over the first half of the run, back to lo over the
    second half. Used for the single-device speed-range studies."""

    def __init__(self, lo: float, hi: float, duration_s: float):
        self.lo = lo
        self.hi = hi
        self.duration_s = duration_s

    def value_at(self, t_us: float) -> float:
        t = clamp(t_us / 1e6, 0.0, self.duration_s)
        half = self.duration_s / 2.0
        frac = t / half if t <= half else (self.duration_s - t) / half
        return self.lo + (self.hi - self.lo) * frac


# ---------------------------------------------------------------------------
# Speed payload codec (application bytes inside flood packets / SLP frames)
# ---------------------------------------------------------------------------

def encode_speed(value: float) -> bytes:
    return struct.pack("<d", value)


def decode_speed(payload: bytes) -> float | None:
    if len(payload) != 8:
        return None
    return struct.unpack("<d", payload)[0]


# ---------------------------------------------------------------------------
# Coordination roles
# ---------------------------------------------------------------------------

class CcuApp:
    """Shared CCU plumbing: owns the robot and PID, reacts to SLP callbacks.

    Subclasses decide where the setpoint comes from and what phase 4 hands
    over. record_target_truth is the experiment's scheduled target used by
    the offline error analysis (the follower itself never knows it).
    """

    def __init__(self, sim, node_id: int, robot: Robot | None,
                 pid: PidController, period_us: int,
                 record_target_truth: Callable[[int], float],
                 trace_record: Callable[[MetricsRecord], None],
                 tick_jitter_us: int = 0):
        self.sim = sim
        self.node_id = node_id
        self.robot = robot
        self.pid = pid
        self.period_us = period_us
        self.record_target_truth = record_target_truth
        self.trace_record = trace_record
        self.tick_jitter_us = tick_jitter_us
        self.latest_measured = 0.0
        self.payload_value: float | None = None
        self.payload_round: int | None = None
        self.on_setpoint: Callable[[int, float], None] | None = None
        self.update_position: Callable[[Pose], None] | None = None
        self._next_nominal_us = 0

    def start(self) -> None:
        if self.robot is not None:
            self._schedule_tick()

    def _schedule_tick(self) -> None:
        # loop deadlines keep the nominal grid but each tick lands late by a
        # scheduling delay, the way a non-realtime OS runs a periodic task;
        # the control code still divides by the nominal period
        self._next_nominal_us += self.period_us
        fire_at = self._next_nominal_us
        if self.tick_jitter_us > 0:
            rng = self.sim.rng(f"pid/{self.node_id}")
            fire_at += rng.randrange(self.tick_jitter_us)
        self.sim.schedule_at(max(self.sim.now, fire_at), self._tick,
                             kind="pid-tick", target=self.node_id)

    def _tick(self) -> None:
        # run after any same-instant frame deliveries already queued, so a
        # payload landing on the tick boundary is consumed, not missed
        self.sim.schedule_at(self.sim.now, self._control_step, kind="pid-step",
                             target=self.node_id)
        self._schedule_tick()

    def _control_step(self) -> None:
        self._choose_setpoint()
        if self.on_setpoint is not None:
            self.on_setpoint(self.sim.now, self.pid.setpoint)
        dt_s = self.period_us / 1e6
        self.robot.advance_to(self.sim.now)
        if self.update_position is not None:
            self.update_position(self.robot.pose)
        measured = self.robot.read_encoder_speed(dt_s)
        self.latest_measured = measured
        self.robot.set_drive(self.pid.step(measured, dt_s))

    def _choose_setpoint(self) -> None:
        raise NotImplementedError

    # -- SLP callbacks --
    def on_payload(self, payload: bytes, round_seq: int) -> None:
        value = decode_speed(payload)
        if value is not None:
            self.payload_value = value
            self.payload_round = round_seq

    def record_snapshot(self, round_seq: int) -> None:
        if self.robot is None:
            return
        now = self.sim.now
        self.trace_record(MetricsRecord(
            node_id=self.node_id,
            global_time_us=now,
            local_time_us=now,  # CCU clocks are ground-truth synced stand-ins
            target_speed=self.record_target_truth(now),
            measured_speed=self.latest_measured,
            last_rx_payload_speed=self.payload_value,
            round_seq=round_seq))

    def outgoing_payload(self) -> bytes:
        return encode_speed(self.latest_measured)


class LeaderApp(CcuApp):
    """Tracks its own target schedule; phase 4 hands over the latest
    measured (not target) speed for dissemination."""

    def __init__(self, *args, schedule, **kwargs):
        super().__init__(*args, **kwargs)
        self.schedule = schedule

    def _choose_setpoint(self) -> None:
        self.pid.setpoint = self.schedule.value_at(self.sim.now)


class FollowerApp(CcuApp):
    """Adopts the last value received over the air as its setpoint; with no
    payload ever received the setpoint stays 0 (fail-safe stop)."""

    def _choose_setpoint(self) -> None:
        if self.payload_value is not None:
            self.pid.setpoint = self.payload_value


class ControllerApp(CcuApp):
    """Static central controller: no robot, no PID; phase 4 stages the
    command scheduled for the round about to start."""

    def __init__(self, sim, node_id: int, schedule, lead_time_us: int,
                 record_target_truth, trace_record):
        super().__init__(sim, node_id, robot=None, pid=PidController(),
                         period_us=0, record_target_truth=record_target_truth,
                         trace_record=trace_record)
        self.schedule = schedule
        self.lead_time_us = lead_time_us

    def start(self) -> None:
        pass

    def _choose_setpoint(self) -> None:
        pass

    def outgoing_payload(self) -> bytes:
        return encode_speed(self.schedule.value_at(self.sim.now + self.lead_time_us))
