"""Force-triggered loading controller.

The controller drives into the pile, starts lifting and tilting once the
digging force passes per-actuator thresholds, brakes, then reverses out while
curling the bucket back.  It is a pure function of its state and the current
observation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

from .config import ActionParams, ControlConstants
from .machine import HOLD, ActuatorCommand, Commands
from .terrain import DigForce


class Phase(enum.IntEnum):
    APPROACH = 0
    PENETRATE = 1
    DIG = 2
    BRAKE = 3
    REVERSE = 4
    DONE = 5

    @property
    def label(self) -> str:
        return self.name.capitalize()


class Observation(NamedTuple):
    t: float
    x: float
    v: float
    theta_boom: float  # deg
    theta_bucket: float  # deg
    omega_boom: float  # rad/s
    omega_bucket: float  # rad/s
    tip_z: float
    surface_z: float  # soil surface under the tip
    soil_under_tip: bool  # pile material (not bare ground) below the tip


@dataclass(frozen=True)
class LoadingPhase:
    phase: Phase = Phase.APPROACH
    entered_at: float = 0.0
    lift_triggered: bool = False
    tilt_triggered: bool = False
    lift_done: bool = False
    tilt_done: bool = False
    contact_time: float | None = None
    entry_x: float | None = None
    dig_begun: bool = False  # tip has cut into the soil or a dig latch has fired
    broken_out: bool = False
    stall_time: float = 0.0
    brake_steps: int = 0
    brake_end: float | None = None
    dig_end_cause: str | None = None  # completed, breakout_early or stalled
    events: tuple[tuple[str, float], ...] = field(default=())


def detect_breakout(phase: LoadingPhase, tip_z: float, surface_z: float,
                    hysteresis: float = 1e-3) -> bool:
    """Tip clear of the soil surface after digging has begun."""
    if phase.phase == Phase.APPROACH or not phase.dig_begun:
        return False
    return tip_z > surface_z + hysteresis


def detect_stall(window: Sequence[tuple[float, float, float]], dt: float,
                 constants: ControlConstants = ControlConstants()) -> bool:
    """True when the last ``stall_dwell`` seconds of (v, omega_boom, omega_bucket)
    samples are all below the stall thresholds."""
    need = int(math.ceil(constants.stall_dwell / dt - 1e-9))
    if need <= 0 or len(window) < need:
        return False
    return all(_is_still(v, wb, wk, constants) for v, wb, wk in window[-need:])


def _is_still(v: float, wb: float, wk: float, c: ControlConstants) -> bool:
    return abs(v) < c.stall_speed and abs(wb) < c.stall_omega and abs(wk) < c.stall_omega


def _in_contact(obs: Observation, dig: DigForce, c: ControlConstants) -> bool:
    return dig.magnitude > c.contact_force or (
        obs.soil_under_tip and obs.tip_z <= obs.surface_z + c.contact_gap)


def controller_step(state: LoadingPhase, obs: Observation, dig_force: DigForce,
                    action: ActionParams, constants: ControlConstants
                    ) -> tuple[Commands, LoadingPhase]:
    c = constants
    s = state
    events = s.events
    v_max = c.v_drive_max

    if s.phase == Phase.APPROACH:
        if not _in_contact(obs, dig_force, c):
            return Commands(ActuatorCommand(action.alpha1 * v_max), HOLD, HOLD), s
        events = events + (("contact", obs.t), ("Penetrate", obs.t))
        s = replace(s, phase=Phase.PENETRATE, entered_at=obs.t, contact_time=obs.t,
                    entry_x=obs.x, events=events)

    if s.phase != Phase.APPROACH and not s.dig_begun and (
            dig_force.depth > 0.0 or s.lift_triggered or s.tilt_triggered):
        s = replace(s, dig_begun=True)
    if s.phase != Phase.APPROACH and not s.broken_out and detect_breakout(
            s, obs.tip_z, obs.surface_z, c.breakout_hysteresis):
        events = events + (("breakout", obs.t),)
        s = replace(s, broken_out=True, events=events)

    if s.phase in (Phase.PENETRATE, Phase.DIG):
        force = dig_force.magnitude
        lift_triggered = s.lift_triggered or force >= action.alpha3 * c.F_dig0
        tilt_triggered = s.tilt_triggered or force >= action.alpha4 * c.F_dig0
        lift_done = s.lift_done or (lift_triggered and obs.theta_boom >= action.alpha7)
        tilt_done = s.tilt_done or (tilt_triggered and obs.theta_bucket >= action.alpha8)
        if lift_triggered and not s.lift_triggered:
            events = events + (("lift_trigger", obs.t),)
        if tilt_triggered and not s.tilt_triggered:
            events = events + (("tilt_trigger", obs.t),)
        phase = s.phase
        if phase == Phase.PENETRATE and (lift_triggered or tilt_triggered):
            phase = Phase.DIG
            events = events + (("Dig", obs.t),)
        still = _is_still(obs.v, obs.omega_boom, obs.omega_bucket, c)
        stall_time = s.stall_time + c.dt if still else 0.0
        cause = None
        if lift_done and tilt_done:
            cause = "completed"
        elif s.broken_out:
            cause = "breakout_early"
        elif stall_time >= c.stall_dwell - 1e-9:
            cause = "stalled"
        s = replace(s, phase=phase, lift_triggered=lift_triggered, tilt_triggered=tilt_triggered,
                    lift_done=lift_done, tilt_done=tilt_done, stall_time=stall_time,
                    events=events)
        if cause is None:
            lift = ActuatorCommand(action.alpha5 * c.v_lift_max) if (
                lift_triggered and not lift_done) else HOLD
            tilt = ActuatorCommand(action.alpha6 * c.v_tilt_max) if (
                tilt_triggered and not tilt_done) else HOLD
            return Commands(ActuatorCommand(action.alpha2 * v_max), lift, tilt), s
        events = events + ((cause, obs.t), ("Brake", obs.t))
        s = replace(s, phase=Phase.BRAKE, entered_at=obs.t, dig_end_cause=cause,
                    events=events)

    if s.phase == Phase.BRAKE:
        if s.brake_steps < c.brake_steps:
            return IDLE_BRAKE, replace(s, brake_steps=s.brake_steps + 1)
        events = events + (("Reverse", obs.t),)
        s = replace(s, phase=Phase.REVERSE, entered_at=obs.t, brake_end=obs.t, events=events)

    if s.phase == Phase.REVERSE:
        if obs.x <= s.entry_x - c.reverse_distance:
            events = events + (("Done", obs.t),)
            return IDLE_BRAKE, replace(s, phase=Phase.DONE, entered_at=obs.t, events=events)
        k = c.reverse_fraction
        tilt = ActuatorCommand(k * c.v_tilt_max) if obs.theta_bucket < c.bucket_end_angle else HOLD
        lift = ActuatorCommand(k * c.v_lift_max) if (
            s.broken_out and obs.theta_boom < c.boom_end_angle) else HOLD
        return Commands(ActuatorCommand(-k * v_max), lift, tilt), s

    return IDLE_BRAKE, s


IDLE_BRAKE = Commands(HOLD, HOLD, HOLD)
