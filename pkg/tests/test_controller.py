import numpy as np
import pytest

from loadsim.config import ActionParams, ControlConstants, MachineSpec
from loadsim.controller import (IDLE_BRAKE, LoadingPhase, Observation, Phase, controller_step,
                                detect_breakout, detect_stall)
from loadsim.engine import run_loading_cycle
from loadsim.machine import HOLD, ActuatorCommand, Commands, lowered_state, step_dynamics
from loadsim.terrain import NO_CONTACT, DigForce

C = ControlConstants()
TRIVIAL = ActionParams(0.6, 0.4, 0.0, 0.0, 0.8, 0.6, -30.0, 45.0)


def obs(t=0.0, x=0.0, v=1.0, boom=-33.0, bucket=0.0, tip_z=0.0, surface=0.0, soil=True):
    return Observation(t, x, v, boom, bucket, 0.0, 0.0, tip_z, surface, soil)


class TestLatches:
    def test_zero_thresholds_latch_on_contact(self):
        state = LoadingPhase()
        cmd, state = controller_step(state, obs(soil=False, surface=-1.0), NO_CONTACT, TRIVIAL, C)
        assert state.phase == Phase.APPROACH
        assert cmd.drive.target_speed == pytest.approx(0.6 * C.v_drive_max)
        cmd, state = controller_step(state, obs(t=0.01), NO_CONTACT, TRIVIAL, C)
        assert state.phase == Phase.DIG
        assert state.lift_triggered and state.tilt_triggered
        assert state.contact_time == 0.01
        assert cmd.drive.target_speed == pytest.approx(0.4 * C.v_drive_max)
        assert cmd.lift.target_speed == pytest.approx(0.8 * C.v_lift_max)
        assert cmd.tilt.target_speed == pytest.approx(0.6 * C.v_tilt_max)

    def test_contact_by_force(self):
        state = LoadingPhase()
        force = DigForce(2e3, 0.0, 2e3, depth=0.01)
        _, state = controller_step(state, obs(tip_z=1.0, surface=0.0), force, TRIVIAL, C)
        assert state.phase != Phase.APPROACH

    def test_thresholds(self):
        action = ActionParams(0.6, 0.4, 0.6, 0.9, 0.8, 0.6, -30.0, 45.0)
        state = LoadingPhase(phase=Phase.PENETRATE, contact_time=0.0, entry_x=0.0)
        _, state = controller_step(state, obs(), DigForce(50e3, 0, 59e3, depth=0.2), action, C)
        assert not state.lift_triggered and state.phase == Phase.PENETRATE
        _, state = controller_step(state, obs(), DigForce(60e3, 0, 60e3, depth=0.2), action, C)
        assert state.lift_triggered and not state.tilt_triggered and state.phase == Phase.DIG
        # latches persist when the force drops
        _, state = controller_step(state, obs(), DigForce(1e3, 0, 1e3, depth=0.2), action, C)
        assert state.lift_triggered
        _, state = controller_step(state, obs(), DigForce(90e3, 0, 90e3, depth=0.2), action, C)
        assert state.tilt_triggered

    def test_targets_stop_actuators(self):
        state = LoadingPhase(phase=Phase.DIG, lift_triggered=True, tilt_triggered=True,
                             contact_time=0.0, entry_x=0.0, dig_begun=True)
        cmd, state = controller_step(state, obs(boom=-29.0, bucket=10.0, tip_z=-0.5), NO_CONTACT,
                                     TRIVIAL, C)
        assert state.lift_done and not state.tilt_done
        assert cmd.lift == HOLD and cmd.tilt.target_speed > 0.0

    def test_commands_within_ranges(self):
        m = MachineSpec()
        for a in (0.2, 1.0):
            action = ActionParams(a, a, 0.0, 0.0, a, a, -10.0, 60.0)
            cmd, _ = controller_step(LoadingPhase(), obs(), NO_CONTACT, action, C)
            assert abs(cmd.drive.target_speed) <= m.drive_speed_max
            assert 0.0 <= cmd.lift.target_speed <= m.lift_speed_range[1]
            assert 0.0 <= cmd.tilt.target_speed <= m.tilt_speed_range[1]


class TestBrakeAndReverse:
    def test_brake_is_100_steps(self):
        state = LoadingPhase(phase=Phase.DIG, lift_triggered=True, tilt_triggered=True,
                             lift_done=True, tilt_done=True, contact_time=0.0, entry_x=0.0)
        assert C.brake_steps == 100
        brake = 0
        for k in range(300):
            cmd, state = controller_step(state, obs(t=k * C.dt, x=1.0), NO_CONTACT, TRIVIAL, C)
            if state.phase == Phase.BRAKE:
                assert cmd == IDLE_BRAKE
                brake += 1
            elif state.phase == Phase.REVERSE:
                break
        assert brake == 100
        assert cmd.drive.target_speed == pytest.approx(-0.6 * C.v_drive_max)

    def test_reverse_ends_5m_from_entry(self):
        state = LoadingPhase(phase=Phase.REVERSE, contact_time=0.0, entry_x=12.0)
        _, state = controller_step(state, obs(x=7.01, bucket=50.0), NO_CONTACT, TRIVIAL, C)
        assert state.phase == Phase.REVERSE
        _, state = controller_step(state, obs(x=7.0, bucket=50.0), NO_CONTACT, TRIVIAL, C)
        assert state.phase == Phase.DONE

    def test_reverse_lift_after_breakout(self):
        state = LoadingPhase(phase=Phase.REVERSE, contact_time=0.0, entry_x=12.0, broken_out=True)
        cmd, _ = controller_step(state, obs(x=11.0, boom=-30.0, bucket=20.0), NO_CONTACT,
                                 TRIVIAL, C)
        assert cmd.lift.target_speed == pytest.approx(0.6 * C.v_lift_max)
        assert cmd.tilt.target_speed == pytest.approx(0.6 * C.v_tilt_max)
        cmd, _ = controller_step(state, obs(x=11.0, boom=-5.0, bucket=55.0), NO_CONTACT,
                                 TRIVIAL, C)
        assert cmd.lift == HOLD and cmd.tilt == HOLD


class TestBreakout:
    def test_above_surface_after_dig(self):
        dug = LoadingPhase(phase=Phase.DIG, dig_begun=True)
        assert detect_breakout(dug, 1.1, 1.0)

    def test_approach_is_never_breakout(self):
        assert not detect_breakout(LoadingPhase(), 5.0, 0.0)

    def test_grazing_is_not_breakout(self):
        dug = LoadingPhase(phase=Phase.DIG, dig_begun=True)
        assert not detect_breakout(dug, 1.0, 1.0)
        assert not detect_breakout(dug, 1.0 + 0.999e-3, 1.0)
        assert detect_breakout(dug, 1.0 + 1.001e-3, 1.0)


class TestStall:
    def test_empty_window(self):
        assert not detect_stall([], C.dt, C)

    def test_hard_wall(self):
        spec = MachineSpec()
        state = lowered_state(spec, 0.0)
        state = state.__class__(**{**state.__dict__, "v": 1.5})
        wall = DigForce(horizontal=5e5, magnitude=5e5, depth=0.5)
        cmd = Commands(ActuatorCommand(2.0), HOLD, HOLD)
        window, t_still, t_stall = [], None, None
        for k in range(1, 600):
            state = step_dynamics(state, cmd, wall, C.dt, spec)
            window.append((state.v, state.omega_boom, state.omega_bucket))
            if t_still is None and abs(state.v) < C.stall_speed:
                t_still = k * C.dt
            if detect_stall(window, C.dt, C):
                t_stall = k * C.dt
                break
        assert t_stall is not None and t_stall - t_still <= 2.1

    def test_moving_is_not_stall(self):
        window = [(0.5, 0.0, 0.0)] * 400
        assert not detect_stall(window, C.dt, C)
        window = [(0.0, 0.0, 0.0)] * 199
        assert not detect_stall(window, C.dt, C)
        assert detect_stall(window + [(0.0, 0.0, 0.0)], C.dt, C)


class TestScenarios:
    def test_latches_fire_at_first_contact(self, cfg, gravel30):
        rec = run_loading_cycle(gravel30, cfg.machine, TRIVIAL, cfg.control)
        ev = dict(rec.events)
        assert ev["lift_trigger"] == ev["contact"] == ev["tilt_trigger"]

    def test_high_threshold_on_weak_pile(self, cfg):
        action = ActionParams(0.4, 0.2, 1.2, 0.0, 0.2, 1.0, -40.0, 30.0)
        rec = run_loading_cycle(cfg.pile("gravel-10"), cfg.machine, action, cfg.control,
                                log_series=True)
        assert max(rec.series.F_dig) < 1.2 * cfg.control.F_dig0
        assert "lift_trigger" not in dict(rec.events)
        assert rec.flag in ("stalled", "completed", "breakout_early")

    def test_phase_sequence_monotone(self, cfg, gravel30, aggressive):
        rec = run_loading_cycle(gravel30, cfg.machine, aggressive, cfg.control, log_series=True)
        order = [Phase[p.upper()] for p in rec.series.phase]
        assert np.all(np.diff(order) >= 0)
        names = [n for n, _ in rec.events if n in {p.label for p in Phase}]
        assert names == sorted(set(names), key=lambda n: Phase[n.upper()])

    def test_moderate_dig_reaches_targets(self, cfg, gravel30):
        action = ActionParams(0.6, 0.4, 0.4, 0.4, 1.0, 1.0, -10.0, 45.0)
        rec = run_loading_cycle(gravel30, cfg.machine, action, cfg.control)
        assert rec.flag == "completed"
        assert rec.m_load > 0.0
