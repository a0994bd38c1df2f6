"""Planar reduced-order wheel loader.

Three actuated degrees of freedom: vehicle travel, boom angle and bucket angle.
Both angles are measured against the chassis; the linkage keeps the bucket
orientation while the boom moves.  Each actuator is a speed servo with a force or torque
limit.  Soil reaction acts as a resistance that can stop motion but never
drives it backwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .config import MachineSpec
from .terrain import G, DigForce


class NumericalError(FloatingPointError):
    """The integrated state became non-finite."""


class ActuatorCommand(NamedTuple):
    target_speed: float = 0.0  # m/s for drive and cylinders
    active: bool = True


class Commands(NamedTuple):
    drive: ActuatorCommand
    lift: ActuatorCommand
    tilt: ActuatorCommand


HOLD = ActuatorCommand(0.0, True)
IDLE = Commands(HOLD, HOLD, HOLD)


@dataclass(frozen=True)
class MachineState:
    x: float  # front axle position [m]
    v: float  # [m/s]
    theta_boom: float  # [rad]
    theta_bucket: float  # [rad], relative to the chassis
    omega_boom: float = 0.0
    omega_bucket: float = 0.0
    bucket_load_volume: float = 0.0  # m^3
    bucket_load_mass: float = 0.0  # kg
    W_accum: float = 0.0  # kJ of positive actuator work
    F_drive: float = 0.0  # N
    tau_lift: float = 0.0  # Nm
    tau_tilt: float = 0.0  # Nm
    power: float = 0.0  # W, positive actuator power over the last step

    @property
    def theta_boom_deg(self) -> float:
        return math.degrees(self.theta_boom)

    @property
    def theta_bucket_deg(self) -> float:
        return math.degrees(self.theta_bucket)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (
            self.x, self.v, self.theta_boom, self.theta_bucket, self.omega_boom,
            self.omega_bucket, self.W_accum, self.F_drive, self.tau_lift, self.tau_tilt))


def actuator_force(command: ActuatorCommand, current_speed: float, load_force_estimate: float,
                   limit: float, gain: float) -> float:
    """Proportional speed servo with load feed-forward, clamped to the limit."""
    if limit <= 0.0:
        raise ValueError("actuator limit must be positive")
    f = gain * (command.target_speed - current_speed) + load_force_estimate
    return min(max(f, -limit), limit)


def carry_capacity(theta_bucket: float, capacity: float = 3.0) -> float:
    """Volume the bucket retains at a bucket angle [deg]."""
    return capacity * min(max(0.3 + 0.7 * theta_bucket / 45.0, 0.0), 1.1)


class Pose(NamedTuple):
    pivot: tuple[float, float]
    hinge: tuple[float, float]
    tip: tuple[float, float]
    edge: tuple[float, float]  # unit vector hinge -> tip


def machine_pose(state: MachineState, spec: MachineSpec) -> Pose:
    px = state.x + spec.boom_pivot[0]
    pz = spec.boom_pivot[1]
    tb = state.theta_boom
    hx = px + spec.boom_length * math.cos(tb)
    hz = pz + spec.boom_length * math.sin(tb)
    ta = state.theta_bucket
    ex, ez = math.cos(ta), math.sin(ta)
    return Pose((px, pz), (hx, hz),
                (hx + spec.bucket_tip_offset * ex, hz + spec.bucket_tip_offset * ez), (ex, ez))


def bucket_tip_pose(state: MachineState, spec: MachineSpec):
    """Bucket tip position and cutting edge direction."""
    pose = machine_pose(state, spec)
    return pose.tip, pose.edge


def tip_jacobian(state: MachineState, spec: MachineSpec):
    """d(tip)/d(x, theta_boom, theta_bucket) as three column vectors."""
    tb, ta = state.theta_boom, state.theta_bucket
    lb, lk = spec.boom_length, spec.bucket_tip_offset
    d_boom = (-lb * math.sin(tb), lb * math.cos(tb))
    d_bucket = (-lk * math.sin(ta), lk * math.cos(ta))
    return (1.0, 0.0), d_boom, d_bucket


def tip_velocity(state: MachineState, spec: MachineSpec) -> tuple[float, float]:
    dx, db, dk = tip_jacobian(state, spec)
    wb, wk = state.omega_boom, state.omega_bucket
    return (state.v + db[0] * wb + dk[0] * wk, db[1] * wb + dk[1] * wk)


def lowered_state(spec: MachineSpec, x: float, theta_bucket_deg: float = 0.0) -> MachineState:
    """Machine at rest with the bucket tip on the ground at the given bucket angle."""
    tk = math.radians(theta_bucket_deg)
    s = -(spec.boom_pivot[1] + spec.bucket_tip_offset * math.sin(tk)) / spec.boom_length
    if not -1.0 <= s <= 1.0:
        raise ValueError("bucket tip cannot reach the ground at this bucket angle")
    return MachineState(x=x, v=0.0, theta_boom=math.asin(s), theta_bucket=tk)


def _servo_coulomb(speed: float, target: float, active: bool, gain: float, inertia: float,
                   limit: float, active_load: float, resist_fwd: float, resist_any: float,
                   dt: float) -> tuple[float, float]:
    """Advance one servo-driven degree of freedom.

    ``active_load`` drives motion (gravity); ``resist_fwd`` resists positive
    motion only and ``resist_any`` resists motion in both directions.  The
    servo term is treated implicitly so stiff gains stay stable.  Returns the
    new speed and the actuator effort.
    """
    if active:
        # the servo knows gravity and rolling loads; soil reaction is a disturbance
        resist_est = resist_any if target > 0.0 else (-resist_any if target < 0.0 else 0.0)
        ff = resist_est - active_load
        a = dt * gain / inertia
        implicit = (speed + a * target) / (1.0 + a)
        effort = gain * (target - implicit) + ff
        effort = min(max(effort, -limit), limit)
    else:
        effort = 0.0
    trial = speed + dt * (effort + active_load) / inertia
    resist = resist_any + (resist_fwd if trial > 0.0 else 0.0)
    dv = dt * resist / inertia
    if trial > dv:
        new = trial - dv
    elif trial < -dv:
        new = trial + dv
    else:
        new = 0.0
    return new, effort


def step_dynamics(state: MachineState, commands: Commands, dig_force: DigForce, dt: float,
                  spec: MachineSpec) -> MachineState:
    """Semi-implicit Euler step of the vehicle, boom and bucket."""
    pose = machine_pose(state, spec)
    (px, pz), (hx, hz), (tx, tz), _ = pose
    m_load = state.bucket_load_mass
    m_bk = spec.bucket_mass + m_load
    cx, cz = 0.5 * (hx + tx), 0.5 * (hz + tz)

    # Gravity torques, counter-clockwise positive (raising boom / curling bucket).
    # The bucket rides on the boom end without turning, so the boom carries its
    # weight and the soil reaction as forces at the hinge while the tilt
    # actuator takes their moments about the hinge.
    tau_g_boom = -G * (spec.boom_mass * 0.5 + m_bk) * (hx - px)
    tau_g_tilt = -G * m_bk * (cx - hx)
    i_boom = spec.boom_mass * spec.boom_length ** 2 / 3.0 + m_bk * spec.boom_length ** 2
    i_tilt = m_bk * ((cx - hx) ** 2 + (cz - hz) ** 2) + spec.bucket_mass * spec.bucket_tip_offset ** 2 / 12.0

    # soil reaction (-H, -V) at the tip; only the part opposing raising/curling counts
    fh, fv = dig_force.horizontal, dig_force.vertical
    r_boom = max((hx - px) * fv - (hz - pz) * fh, 0.0)
    r_tilt = max((tx - hx) * fv - (tz - hz) * fh, 0.0)

    mass = spec.operating_mass + m_load
    rolling = spec.rolling_resistance * mass * G
    arm = spec.lever_arm
    cmd_d, cmd_l, cmd_t = commands

    v_max = spec.drive_speed_max
    v, f_drive = _servo_coulomb(state.v, cmd_d.target_speed, cmd_d.active, spec.drive_gain,
                                mass, spec.traction_limit, 0.0, fh, rolling, dt)
    v = min(max(v, -v_max), v_max)

    if cmd_l.active:
        wb, tau_lift = _servo_coulomb(state.omega_boom, cmd_l.target_speed / arm, True,
                                      spec.joint_gain, i_boom, spec.lift_torque_limit,
                                      tau_g_boom, r_boom, 0.0, dt)
    else:
        wb, tau_lift = 0.0, min(max(-tau_g_boom, -spec.lift_torque_limit), spec.lift_torque_limit)
    if cmd_t.active:
        wk, tau_tilt = _servo_coulomb(state.omega_bucket, cmd_t.target_speed / arm, True,
                                      spec.joint_gain, i_tilt, spec.tilt_torque_limit,
                                      tau_g_tilt, r_tilt, 0.0, dt)
    else:
        wk, tau_tilt = 0.0, min(max(-tau_g_tilt, -spec.tilt_torque_limit), spec.tilt_torque_limit)

    lo, hi = spec.lift_omega_range
    wb = min(max(wb, lo), hi)
    lo, hi = spec.tilt_omega_range
    wk = min(max(wk, lo), hi)

    tb = state.theta_boom + wb * dt
    lo, hi = math.radians(spec.boom_angle_range[0]), math.radians(spec.boom_angle_range[1])
    if not lo <= tb <= hi:
        tb = min(max(tb, lo), hi)
        wb = (tb - state.theta_boom) / dt
    tk = state.theta_bucket + wk * dt
    lo, hi = math.radians(spec.bucket_angle_range[0]), math.radians(spec.bucket_angle_range[1])
    if not lo <= tk <= hi:
        tk = min(max(tk, lo), hi)
        wk = (tk - state.theta_bucket) / dt

    power = max(f_drive * v, 0.0) + max(tau_lift * wb, 0.0) + max(tau_tilt * wk, 0.0)
    work = state.W_accum + 0.5 * (state.power + power) * dt * 1e-3

    new = MachineState(state.x + v * dt, v, tb, tk, wb, wk, state.bucket_load_volume,
                       m_load, work, f_drive, tau_lift, tau_tilt, power)
    if not new.is_finite():
        raise NumericalError("machine state became non-finite")
    return new
