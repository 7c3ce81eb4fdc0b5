import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hopplan.slip import (
    ApexState,
    Failure,
    FailureKind,
    FullState,
    HopperParams,
    Liftoff,
    Mode,
    OdeCounter,
    Touchdown,
    apex_step,
    flight_phase,
    stance_phase,
    total_energy,
    touchdown_x,
)
from hopplan.terrain import Terrain, flat

# closed-form oracles for the vertical bounce from z=0.8 with the default hopper
FALL_TIME = math.sqrt(2 * 0.3 / 9.81)  # 0.24730...
_a, _b, _c = 0.5 * 3200.0, -7.0 * 9.81, -7.0 * 9.81 * 0.3
DELTA = (-_b + math.sqrt(_b * _b - 4 * _a * _c)) / (2 * _a)  # 0.13694...


def test_frozen_oracle_values():
    assert FALL_TIME == pytest.approx(0.247310, abs=1e-6)
    assert DELTA == pytest.approx(0.136942, abs=1e-6)


class TestParams:
    def test_defaults(self):
        p = HopperParams()
        assert (p.mass, p.spring_k, p.leg_len, p.min_leg_len, p.gravity, p.dt) == (7.0, 3200.0, 0.5, 0.1, 9.81, 0.01)

    @pytest.mark.parametrize(
        "kw", [{"mass": 0}, {"spring_k": -1}, {"min_leg_len": 0.6}, {"dt": 1e-7}, {"event_tol": 0}]
    )
    def test_rejects_bad(self, kw):
        with pytest.raises(ValueError):
            HopperParams(**kw)


class TestEnergy:
    def test_apex_at_rest(self, params):
        assert total_energy(ApexState(0, 0.8, 0), params) == pytest.approx(54.936, abs=1e-9)

    def test_apex_moving(self, params):
        assert total_energy(ApexState(0, 0.8, 2.0), params) == pytest.approx(68.936, abs=1e-9)

    def test_stance_includes_spring(self, params):
        s = FullState(0.0, 0.4, 0.0, 0.0, 0.0, 0.0, Mode.STANCE)
        assert total_energy(s, params) == pytest.approx(7 * 9.81 * 0.4 + 0.5 * 3200 * 0.1**2)


class TestFlight:
    def test_vertical_drop_time(self, params, ground):
        td = flight_phase(ApexState(0, 0.8, 0), 0.0, ground, params)
        assert isinstance(td, Touchdown)
        assert td.time == pytest.approx(FALL_TIME, abs=1e-9)
        assert td.state.body_z == pytest.approx(0.5, abs=1e-12)
        assert td.state.leg_length == pytest.approx(0.5, abs=1e-9)

    def test_trip_when_foot_at_ground(self, params, ground):
        out = flight_phase(ApexState(0, 0.5, 1.0), 0.0, ground, params)
        assert isinstance(out, Failure) and out.kind is FailureKind.TRIP

    def test_wall_hits_swinging_foot(self, params):
        wall = Terrain(((-math.inf, 0.0), (0.3, 1.0)))
        out = flight_phase(ApexState(0, 0.8, 2.0), 0.3, wall, params)
        assert isinstance(out, Failure) and out.kind is FailureKind.FOOT_COLLISION

    def test_wall_matches_fine_sweep(self, params):
        # brute-force oracle: march the foot in 1e-5 s steps and find the first
        # sample that is inside the raised block
        wall = Terrain(((-math.inf, 0.0), (0.3, 1.0)))
        apex, th = ApexState(0, 0.8, 2.0), 0.3
        t = 0.0
        while True:
            fx = apex.x + apex.xdot * t + 0.5 * math.sin(th)
            fz = apex.z - 0.5 * 9.81 * t * t - 0.5 * math.cos(th)
            if fz <= wall.height_at(fx):
                break
            t += 1e-5
        assert fx >= 0.3 and wall.height_at(fx) == 1.0  # the face is hit, not the top
        out = flight_phase(apex, th, wall, params)
        assert out.kind is FailureKind.FOOT_COLLISION
        assert out.at_time == pytest.approx(t, abs=2e-5)

    def test_lands_on_ditch_floor(self, params):
        ditch = Terrain(((-math.inf, 0.0), (0.2, -1.0), (1.0, 0.0)))
        out = flight_phase(ApexState(0, 0.8, 1.0), 0.2, ditch, params)
        # foot or body drops into the ditch; either way no success at the rim
        assert not isinstance(out, Touchdown) or out.state.foot_z == -1.0

    def test_touchdown_x_matches_flight(self, params, ground):
        apex = ApexState(0.0, 0.85, 1.2)
        td = flight_phase(apex, 0.2, ground, params)
        assert touchdown_x(apex, 0.2, ground, params) == pytest.approx(td.state.foot_x, abs=1e-12)


class TestStance:
    def _td(self, params, ground, z=0.8):
        return flight_phase(ApexState(0, z, 0.0), 0.0, ground, params)

    def test_symmetric_bounce_compression(self, params, ground):
        lo = stance_phase(self._td(params, ground), ground, params)
        assert isinstance(lo, Liftoff)
        assert 0.5 - lo.min_leg_len == pytest.approx(DELTA, abs=1e-3)
        assert lo.state.body_vz == pytest.approx(math.sqrt(2 * 9.81 * 0.3), abs=1e-3)
        assert lo.state.body_z == pytest.approx(0.5, abs=1e-6)

    def test_bottom_out(self, ground):
        p = HopperParams(min_leg_len=0.40)
        td = flight_phase(ApexState(0, 0.8, 0.0), 0.0, ground, p)
        out = stance_phase(td, ground, p)
        assert isinstance(out, Failure) and out.kind is FailureKind.BOTTOM_OUT

    def test_friction_at_contact(self, params):
        slick = flat(0.0, mu=0.2)
        td = flight_phase(ApexState(0, 0.8, 0.0), 0.5, slick, params)
        out = stance_phase(td, slick, params)
        assert isinstance(out, Failure) and out.kind is FailureKind.FRICTION_VIOLATION
        assert out.at_time == pytest.approx(td.time, abs=1e-12)  # first stance check

    def test_mid_stance_energy(self, params, ground):
        td = self._td(params, ground)
        e0 = total_energy(td.state, params)
        lo = stance_phase(td, ground, params)
        assert total_energy(lo.state, params) == pytest.approx(e0, rel=5e-3)
        assert e0 == pytest.approx(54.936, rel=1e-9)


class TestApexStep:
    def test_vertical_bounce_returns_same_apex(self, params, ground):
        r = apex_step(ApexState(0, 0.8, 0), 0.0, ground, params)
        assert r.ok
        assert r.footstep_x == 0.0
        assert abs(r.next_apex.x) <= 1e-6
        assert abs(r.next_apex.z - 0.8) <= 1e-3

    def test_high_speed_vertical_leg_fails(self, params, ground):
        r = apex_step(ApexState(0, 0.8, 4.0), 0.0, ground, params)
        assert not r.ok and r.kind in (FailureKind.TRIP, FailureKind.FRICTION_VIOLATION)

    def test_counter(self, params, ground):
        c = OdeCounter()
        for _ in range(3):
            apex_step(ApexState(0, 0.8, 1.0), 0.1, ground, params, c)
        apex_step(ApexState(0, 0.5, 1.0), 0.0, ground, params, c)  # failures count too
        assert c.calls == 4

    def test_deterministic(self, params, ground):
        a = apex_step(ApexState(0.1, 0.9, 1.3), 0.17, ground, params)
        b = apex_step(ApexState(0.1, 0.9, 1.3), 0.17, ground, params)
        assert a == b

    def test_dt_convergence(self, ground):
        apex = ApexState(0, 0.85, 1.0)
        ref = apex_step(apex, 0.15, ground, HopperParams(dt=1e-4)).next_apex.z
        errs = [abs(apex_step(apex, 0.15, ground, HopperParams(dt=dt)).next_apex.z - ref) for dt in (0.02, 0.01)]
        assert errs[1] <= 0.5 * errs[0] + 1e-9

    def test_step_up_and_down(self, params):
        up = Terrain(((-math.inf, 0.0), (0.2, 0.1)))
        r = apex_step(ApexState(0, 0.85, 1.0), 0.2, up, params)
        assert r.ok and up.height_at(r.footstep_x) == 0.1

    def test_body_hits_rising_block(self, params):
        block = Terrain(((-math.inf, 0.0), (0.1, 0.7)))
        r = apex_step(ApexState(0, 0.8, 1.0), 0.3, block, params)
        assert not r.ok


@settings(max_examples=60, deadline=None)
@given(
    z=st.floats(0.6, 1.2),
    xdot=st.floats(0.0, 3.0),
    theta=st.floats(-0.66, 0.66),
)
def test_energy_drift_property(z, xdot, theta):
    p = HopperParams()
    apex = ApexState(0.0, z, xdot)
    r = apex_step(apex, theta, flat(0.0, 0.8), p)
    if r.ok:
        e0 = total_energy(apex, p)
        assert abs(total_energy(r.next_apex, p) - e0) <= 5e-3 * e0


@settings(max_examples=40, deadline=None)
@given(z=st.floats(0.6, 1.2), theta=st.floats(0.0, 0.6))
def test_reflection_symmetry(z, theta):
    p = HopperParams()
    g = flat()
    a = apex_step(ApexState(0.0, z, 0.0), theta, g, p)
    b = apex_step(ApexState(0.0, z, 0.0), -theta, g, p)
    assert a.ok == b.ok
    if a.ok:
        assert a.footstep_x == pytest.approx(-b.footstep_x, abs=1e-12)
        assert a.next_apex.xdot == pytest.approx(-b.next_apex.xdot, abs=1e-9)


def test_stance_never_below_min_length():
    p = HopperParams()
    rng = np.random.default_rng(5)
    for _ in range(100):
        apex = ApexState(0.0, rng.uniform(0.6, 1.2), rng.uniform(0, 3))
        td = flight_phase(apex, rng.uniform(-0.6, 0.6), flat(), p)
        if isinstance(td, Touchdown):
            lo = stance_phase(td, flat(), p)
            if isinstance(lo, Liftoff):
                assert lo.min_leg_len >= p.min_leg_len
