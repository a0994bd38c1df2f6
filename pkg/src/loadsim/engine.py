"""One loading cycle: terrain, machine and controller stepped at a fixed rate."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ActionParams, ControlConstants, MachineSpec, PileSpec, make_run_id
from .controller import LoadingPhase, Observation, Phase, controller_step
from .machine import (MachineState, NumericalError, carry_capacity, lowered_state,
                      machine_pose, step_dynamics, tip_velocity)
from .terrain import (NO_CONTACT, PileState, TerrainError, column_index, confinement_factor,
                      cutting_depth, dig_resistance, excavate_step, init_pile, relax_slopes,
                      spill_from_bucket, surface_height)

log = logging.getLogger(__name__)

FLAGS = ("completed", "stalled", "breakout_early", "timeout", "numeric_error")
SERIES_HEADER = ("t", "x", "v", "theta_boom", "theta_bucket", "F_drive", "F_lift", "F_tilt",
                 "F_dig", "W_accum", "load_mass", "phase")


class MetricError(ValueError):
    pass


@dataclass
class Series:
    """Per-step log of one cycle.  Angles in degrees, joint efforts in Nm."""

    t: list[float] = field(default_factory=list)
    x: list[float] = field(default_factory=list)
    v: list[float] = field(default_factory=list)
    theta_boom: list[float] = field(default_factory=list)
    theta_bucket: list[float] = field(default_factory=list)
    F_drive: list[float] = field(default_factory=list)
    F_lift: list[float] = field(default_factory=list)
    F_tilt: list[float] = field(default_factory=list)
    F_dig: list[float] = field(default_factory=list)
    W_accum: list[float] = field(default_factory=list)
    load_mass: list[float] = field(default_factory=list)
    phase: list[str] = field(default_factory=list)
    tip_x: list[float] = field(default_factory=list)
    tip_z: list[float] = field(default_factory=list)
    conservation: list[float] = field(default_factory=list)

    def append(self, t: float, st: MachineState, dig: float, phase: Phase,
               tip: tuple[float, float], cons: float) -> None:
        self.t.append(t)
        self.x.append(st.x)
        self.v.append(st.v)
        self.theta_boom.append(math.degrees(st.theta_boom))
        self.theta_bucket.append(math.degrees(st.theta_bucket))
        self.F_drive.append(st.F_drive)
        self.F_lift.append(st.tau_lift)
        self.F_tilt.append(st.tau_tilt)
        self.F_dig.append(dig)
        self.W_accum.append(st.W_accum)
        self.load_mass.append(st.bucket_load_mass)
        self.phase.append(phase.label)
        self.tip_x.append(tip[0])
        self.tip_z.append(tip[1])
        self.conservation.append(cons)

    def __len__(self) -> int:
        return len(self.t)

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(SERIES_HEADER)
            cols = [getattr(self, name) for name in SERIES_HEADER]
            for row in zip(*cols):
                writer.writerow([v if isinstance(v, str) else repr(v) for v in row])
        return path

    def power(self, dt: float) -> np.ndarray:
        """Positive actuator power per logged step, rebuilt from positions and efforts."""
        x = np.asarray(self.x)
        tb = np.radians(self.theta_boom)
        tk = np.radians(self.theta_bucket)
        p = np.zeros(len(x))
        if len(x) > 1:
            v = np.diff(x) / dt
            wb = np.diff(tb) / dt
            wk = np.diff(tk) / dt
            p[1:] = (np.maximum(np.asarray(self.F_drive[1:]) * v, 0.0)
                     + np.maximum(np.asarray(self.F_lift[1:]) * wb, 0.0)
                     + np.maximum(np.asarray(self.F_tilt[1:]) * wk, 0.0))
        return p


@dataclass(frozen=True)
class LoadingRecord:
    run_id: str
    pile_id: str
    action: ActionParams
    m_load: float  # kg
    t_load: float  # s
    W: float  # kJ
    s_load: float  # % of bucket volume
    P_e: float  # kg/kJ
    P_p: float  # kg/s
    P_b: float
    flag: str
    V_load: float = 0.0
    V_spill: float = 0.0
    events: tuple[tuple[str, float], ...] = ()
    series: Series | None = field(default=None, compare=False, repr=False)
    pile: PileState | None = field(default=None, compare=False, repr=False)

    @property
    def completed(self) -> bool:
        return self.flag not in ("timeout", "numeric_error")


def compute_metrics(m_load: float, t_load: float, W: float, V_load: float, V_spill: float,
                    V_bucket: float) -> tuple[float, float, float, float]:
    """(P_e, P_p, P_b, s_load) for one cycle; all zero except spillage when nothing was loaded."""
    s_load = 100.0 * V_spill / V_bucket
    if m_load <= 0.0:
        return 0.0, 0.0, 0.0, s_load
    if t_load <= 0.0:
        raise MetricError(f"non-positive dig time {t_load} with load {m_load} kg")
    if W <= 0.0:
        raise MetricError(f"non-positive work {W} with load {m_load} kg")
    return m_load / W, m_load / t_load, V_load / V_bucket, s_load


def weighted_score(record: LoadingRecord, w: Sequence[float]) -> float:
    """Weighted sum of (P_e, P_p, P_b) for single-cycle ranking."""
    if len(w) != 3:
        raise ValueError("weight vector must have three entries (P_e, P_p, P_b)")
    return w[0] * record.P_e + w[1] * record.P_p + w[2] * record.P_b


def t_load_definition(events: Sequence[tuple[str, float]]) -> float:
    """Dig time: first soil contact to the end of braking."""
    contact = next((t for name, t in events if name == "contact"), None)
    if contact is None:
        return 0.0
    brake_end = next((t for name, t in events if name == "Reverse"), None)
    if brake_end is None:
        return 0.0
    return brake_end - contact


def initial_machine_state(pile_spec: PileSpec, constants: ControlConstants,
                          machine: MachineSpec) -> MachineState:
    return lowered_state(machine, pile_spec.toe_x - constants.approach_gap)


def run_loading_cycle(pile_spec: PileSpec, machine_spec: MachineSpec, action: ActionParams,
                      constants: ControlConstants, seed: int = 0, *, log_series: bool = False,
                      keep_pile: bool = False, check_conservation: bool = False,
                      run_id: str | None = None) -> LoadingRecord:
    """Simulate one loading cycle and reduce it to a LoadingRecord.

    ``seed`` is accepted for interface stability; the physics is deterministic.
    Failures inside the step loop become flags, never exceptions.
    """
    del seed
    run_id = run_id or make_run_id(pile_spec, action)
    dt = constants.dt
    pile = init_pile(pile_spec, width=machine_spec.bucket_width)
    state = initial_machine_state(pile_spec, constants, machine_spec)
    ctrl = LoadingPhase()
    series = Series() if log_series else None
    rho = pile_spec.soil.density
    capacity = machine_spec.bucket_capacity
    heap = machine_spec.heap_factor
    max_steps = int(round(constants.timeout / dt))
    heights = pile.heights
    pose = machine_pose(state, machine_spec)
    if series is not None:
        series.append(0.0, state, 0.0, ctrl.phase, pose.tip, pile.conservation_error())

    flag = None
    wall = None
    w_contact = w_brake_end = None
    step = 0
    try:
        while ctrl.phase != Phase.DONE:
            if step >= max_steps:
                flag = "timeout"
                break
            t = step * dt
            tip = pose.tip
            surface = surface_height(pile, tip[0], heights)
            soil_under = heights[column_index(pile, tip[0])] > 1e-9
            if soil_under and tip[0] > 0.0:
                dig = dig_resistance(pile, tip, tip_velocity(state, machine_spec),
                                     math.degrees(state.theta_bucket), heights)
            else:
                dig = NO_CONTACT
            obs = Observation(t, state.x, state.v, math.degrees(state.theta_boom),
                              math.degrees(state.theta_bucket), state.omega_boom,
                              state.omega_bucket, tip[1], surface, soil_under)
            was_contact = ctrl.contact_time
            commands, ctrl = controller_step(ctrl, obs, dig, action, constants)
            if was_contact is None and ctrl.contact_time is not None:
                w_contact = state.W_accum
            if w_brake_end is None and ctrl.brake_end is not None:
                w_brake_end = state.W_accum

            state = step_dynamics(state, commands, dig, dt, machine_spec)
            step += 1
            pose = machine_pose(state, machine_spec)
            new_tip = pose.tip

            changed = False
            keep = carry_capacity(math.degrees(state.theta_bucket), capacity)
            if ctrl.contact_time is not None and (dig.depth > 0.0 or soil_under):
                removed, _, _ = excavate_step(
                    pile, (tip[0], tip[1], new_tip[0], new_tip[1]),
                    math.degrees(state.theta_bucket), dt,
                    heap * keep - pile.loaded_mass / rho,
                    confinement_factor(pile, new_tip[0], machine_spec.fill_window,
                                       machine_spec.fill_exponent, heights))
                changed = removed > 0.0
            # the heap above the carry capacity only holds while the soil supports it
            supported = cutting_depth(pile, new_tip[0], new_tip[1]) > 0.0 if changed else (
                dig.depth > 0.0)
            excess = pile.loaded_mass / rho - (heap * keep if supported else keep)
            if excess > 1e-12:
                spill_from_bucket(pile, excess, new_tip[0])
                changed = True
            # the blade holds the soil heaped in front of it while cutting
            new_wall = column_index(pile, new_tip[0]) if supported else None
            if changed or new_wall != wall:
                cols = [column_index(pile, tip[0]), column_index(pile, new_tip[0])]
                cols += [c for c in (wall, new_wall) if c is not None]
                relax_slopes(pile, wall=new_wall, span=(min(cols) - 2, max(cols) + 4))
                heights = pile.heights
                wall = new_wall
            state = _with_load(state, pile.loaded_mass, rho)
            if check_conservation or series is not None:
                cons = pile.conservation_error()
                if check_conservation and cons > 1e-9:
                    raise TerrainError(f"mass conservation broken at t={step * dt:.2f}: {cons:.3e}")
            else:
                cons = 0.0
            if series is not None:
                series.append(step * dt, state, dig.magnitude, ctrl.phase, new_tip, cons)
    except (NumericalError, FloatingPointError) as exc:
        log.warning("run %s: numeric error: %s", run_id, exc)
        flag = "numeric_error"

    m_load = pile.loaded_mass
    V_load = m_load / rho
    V_spill = pile.spilled_mass / rho
    t_load = t_load_definition(ctrl.events)
    if flag is None:
        flag = ctrl.dig_end_cause or "completed"
    if flag in ("timeout", "numeric_error") or w_contact is None or w_brake_end is None:
        W = 0.0 if w_contact is None else state.W_accum - w_contact
    else:
        W = w_brake_end - w_contact
    if flag in ("timeout", "numeric_error"):
        P_e = P_p = P_b = 0.0
        s_load = 100.0 * V_spill / capacity
    else:
        P_e, P_p, P_b, s_load = compute_metrics(m_load, t_load, W, V_load, V_spill, capacity)
    return LoadingRecord(run_id, pile_spec.name, action, m_load, t_load, W, s_load, P_e, P_p,
                         P_b, flag, V_load, V_spill, ctrl.events, series,
                         pile if keep_pile else None)


def _with_load(state: MachineState, mass: float, rho: float) -> MachineState:
    if mass == state.bucket_load_mass:
        return state
    d = dict(state.__dict__)
    d["bucket_load_mass"] = mass
    d["bucket_load_volume"] = mass / rho
    return MachineState(**d)
