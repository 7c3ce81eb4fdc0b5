"""Passive planar SLIP hopper: closed-form flight, RK4 stance, failure detection.

Leg angles are measured from the vertical, positive when the foot is placed
ahead of the body. All terrain is piecewise flat, so the ground normal is
always vertical.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Union

from .terrain import Terrain


@dataclass(frozen=True)
class HopperParams:
    mass: float = 7.0
    spring_k: float = 3200.0
    leg_len: float = 0.5
    min_leg_len: float = 0.1
    gravity: float = 9.81
    dt: float = 0.01
    event_tol: float = 1e-6

    def __post_init__(self):
        for name in ("mass", "spring_k", "leg_len", "min_leg_len", "gravity", "dt", "event_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.min_leg_len < self.leg_len:
            raise ValueError("min_leg_len must be shorter than leg_len")
        if not self.dt > self.event_tol:
            raise ValueError("dt must exceed event_tol")


class ApexState(NamedTuple):
    x: float
    z: float
    xdot: float


class Mode(enum.Enum):
    FLIGHT = "flight"
    STANCE = "stance"


@dataclass(frozen=True)
class FullState:
    body_x: float
    body_z: float
    body_vx: float
    body_vz: float
    foot_x: float
    foot_z: float
    mode: Mode = Mode.FLIGHT

    @property
    def leg_length(self) -> float:
        return math.hypot(self.body_x - self.foot_x, self.body_z - self.foot_z)


class FailureKind(enum.Enum):
    BODY_COLLISION = "BodyCollision"
    FOOT_COLLISION = "FootCollision"
    FRICTION_VIOLATION = "FrictionViolation"
    BOTTOM_OUT = "BottomOut"
    TRIP = "Trip"


@dataclass(frozen=True)
class Failure:
    kind: FailureKind
    at_time: float  # seconds since the apex

    ok = False


@dataclass(frozen=True)
class Touchdown:
    time: float  # since the apex
    state: FullState


@dataclass(frozen=True)
class Liftoff:
    time: float
    state: FullState
    min_leg_len: float


@dataclass(frozen=True)
class Success:
    next_apex: ApexState
    footstep_x: float
    stance_time: float = 0.0

    ok = True


StepOutcome = Union[Success, Failure]


class OdeCounter:
    """Caller-owned tally of simulator invocations for one planning query."""

    __slots__ = ("calls",)

    def __init__(self, calls: int = 0):
        self.calls = calls

    def __repr__(self):
        return f"OdeCounter({self.calls})"


def total_energy(state: FullState | ApexState, params: HopperParams) -> float:
    m, g = params.mass, params.gravity
    if isinstance(state, ApexState):
        return m * g * state.z + 0.5 * m * state.xdot**2
    e = m * g * state.body_z + 0.5 * m * (state.body_vx**2 + state.body_vz**2)
    if state.mode is Mode.STANCE:
        e += 0.5 * params.spring_k * (params.leg_len - state.leg_length) ** 2
    return e


# --------------------------------------------------------------------------
# ballistic contact against piecewise-flat ground

_TOP = 0
_FACE = 1


def _first_contact(terrain: Terrain, x0, z0, vx, vz, g, t_max=math.inf):
    """First time a ballistic point meets the terrain.

    Returns ``(t, kind)`` where kind is ``_TOP`` (lands on a segment) or
    ``_FACE`` (runs into a vertical face), or None if nothing is hit before
    ``t_max``. A point starting below ground is reported as a face hit at 0.
    """
    i = terrain.segment_index(x0)
    hs = terrain.heights
    n = len(hs)
    if z0 < hs[i] - 1e-12:
        return 0.0, _FACE
    t_a = 0.0
    while True:
        lo, hi = terrain.segment_bounds(i)
        if vx > 0:
            t_b = (hi - x0) / vx
        elif vx < 0:
            t_b = (lo - x0) / vx
        else:
            t_b = math.inf
        h = hs[i]
        disc = vz * vz + 2.0 * g * (z0 - h)
        if disc >= 0.0:
            t_land = (vz + math.sqrt(disc)) / g
            if t_land >= t_a and t_land <= t_b:
                return (t_land, _TOP) if t_land <= t_max else None
        if t_b >= t_max:
            return None
        j = i + 1 if vx > 0 else i - 1
        if j < 0 or j >= n:
            return None
        z_b = z0 + vz * t_b - 0.5 * g * t_b * t_b
        if z_b < hs[j]:
            return t_b, _FACE
        i, t_a = j, t_b


# --------------------------------------------------------------------------
# phases


def flight_phase(apex: ApexState, leg_angle: float, terrain: Terrain, params: HopperParams):
    """Fall from ``apex`` with the leg fixed at ``leg_angle`` until touchdown."""
    L, g = params.leg_len, params.gravity
    s, c = math.sin(leg_angle), math.cos(leg_angle)
    fx0, fz0 = apex.x + L * s, apex.z - L * c
    if apex.z <= terrain.height_at(apex.x):
        return Failure(FailureKind.BODY_COLLISION, 0.0)
    if fz0 <= terrain.height_at(fx0):
        return Failure(FailureKind.TRIP, 0.0)
    foot = _first_contact(terrain, fx0, fz0, apex.xdot, 0.0, g)
    body = _first_contact(terrain, apex.x, apex.z, apex.xdot, 0.0, g, t_max=foot[0] if foot else math.inf)
    if body is not None and (foot is None or body[0] < foot[0]):
        return Failure(FailureKind.BODY_COLLISION, body[0])
    if foot is None:
        # only possible with an empty terrain profile below
        return Failure(FailureKind.BODY_COLLISION, math.inf)
    t, kind = foot
    if kind == _FACE:
        return Failure(FailureKind.FOOT_COLLISION, t)
    bx = apex.x + apex.xdot * t
    bz = apex.z - 0.5 * g * t * t
    fx = bx + L * s
    fz = terrain.height_at(fx)
    state = FullState(bx, bz, apex.xdot, -g * t, fx, fz, Mode.STANCE)
    return Touchdown(t, state)


def _rk4(x, z, vx, vz, fx, fz, h, km, L, g):
    def acc(x, z):
        dx, dz = x - fx, z - fz
        ell = math.sqrt(dx * dx + dz * dz)
        f = km * (L / ell - 1.0)
        return f * dx, f * dz - g

    a1x, a1z = acc(x, z)
    hh = 0.5 * h
    x2, z2, vx2, vz2 = x + hh * vx, z + hh * vz, vx + hh * a1x, vz + hh * a1z
    a2x, a2z = acc(x2, z2)
    x3, z3, vx3, vz3 = x + hh * vx2, z + hh * vz2, vx + hh * a2x, vz + hh * a2z
    a3x, a3z = acc(x3, z3)
    x4, z4, vx4, vz4 = x + h * vx3, z + h * vz3, vx + h * a3x, vz + h * a3z
    a4x, a4z = acc(x4, z4)
    h6 = h / 6.0
    return (
        x + h6 * (vx + 2.0 * vx2 + 2.0 * vx3 + vx4),
        z + h6 * (vz + 2.0 * vz2 + 2.0 * vz3 + vz4),
        vx + h6 * (a1x + 2.0 * a2x + 2.0 * a3x + a4x),
        vz + h6 * (a1z + 2.0 * a2z + 2.0 * a3z + a4z),
    )


def _stance_failure(x, z, fx, fz, terrain, mu, min_len):
    dx, dz = x - fx, z - fz
    if dz <= 0.0 or abs(dx) > mu * dz:
        return FailureKind.FRICTION_VIOLATION
    if math.sqrt(dx * dx + dz * dz) < min_len:
        return FailureKind.BOTTOM_OUT
    if z <= terrain.height_at(x):
        return FailureKind.BODY_COLLISION
    return None


def stance_phase(td: Touchdown, terrain: Terrain, params: HopperParams, max_time: float = 5.0):
    """Integrate stance with the foot pinned until the leg is back at full length."""
    s = td.state
    x, z, vx, vz = s.body_x, s.body_z, s.body_vx, s.body_vz
    fx, fz = s.foot_x, s.foot_z
    L, g, dt, mu = params.leg_len, params.gravity, params.dt, terrain.mu
    km = params.spring_k / params.mass
    t = td.time
    kind = _stance_failure(x, z, fx, fz, terrain, mu, params.min_leg_len)
    if kind is not None:
        return Failure(kind, t)
    if (x - fx) * vx + (z - fz) * vz >= 0.0:
        # leg extending at contact: spring never loads
        return Liftoff(t, s, params.leg_len)
    min_ell = L
    t_end = td.time + max_time
    while t < t_end:
        nx, nz, nvx, nvz = _rk4(x, z, vx, vz, fx, fz, dt, km, L, g)
        ell = math.hypot(nx - fx, nz - fz)
        if ell >= L:
            lo, hi = 0.0, dt
            while hi - lo > params.event_tol:
                mid = 0.5 * (lo + hi)
                mx, mz, _, _ = _rk4(x, z, vx, vz, fx, fz, mid, km, L, g)
                if math.hypot(mx - fx, mz - fz) >= L:
                    hi = mid
                else:
                    lo = mid
            nx, nz, nvx, nvz = _rk4(x, z, vx, vz, fx, fz, hi, km, L, g)
            t += hi
            kind = _stance_failure(nx, nz, fx, fz, terrain, mu, params.min_leg_len)
            if kind is not None:
                return Failure(kind, t)
            out = FullState(nx, nz, nvx, nvz, fx, fz, Mode.FLIGHT)
            return Liftoff(t, out, min_ell)
        x, z, vx, vz = nx, nz, nvx, nvz
        t += dt
        min_ell = min(min_ell, ell)
        kind = _stance_failure(x, z, fx, fz, terrain, mu, params.min_leg_len)
        if kind is not None:
            return Failure(kind, t)
    return Failure(FailureKind.BOTTOM_OUT, t)


def rise_phase(lo: Liftoff, terrain: Terrain, params: HopperParams):
    """Ballistic climb from liftoff to the next apex, leg held at its liftoff angle."""
    s = lo.state
    g = params.gravity
    if s.body_vz <= 0.0:
        # no apex ahead: no height left to swing the leg
        return Failure(FailureKind.TRIP, lo.time)
    t_up = s.body_vz / g
    body = _first_contact(terrain, s.body_x, s.body_z, s.body_vx, s.body_vz, g, t_max=t_up)
    foot = _first_contact(terrain, s.foot_x, s.foot_z + 1e-9, s.body_vx, s.body_vz, g, t_max=t_up)
    if body is not None and (foot is None or body[0] <= foot[0]):
        return Failure(FailureKind.BODY_COLLISION, lo.time + body[0])
    if foot is not None:
        return Failure(FailureKind.FOOT_COLLISION, lo.time + foot[0])
    return ApexState(s.body_x + s.body_vx * t_up, s.body_z + 0.5 * s.body_vz * t_up, s.body_vx)


def apex_step(
    apex: ApexState,
    leg_angle: float,
    terrain: Terrain,
    params: HopperParams,
    counter: OdeCounter | None = None,
) -> StepOutcome:
    """Simulate one full hop: apex -> touchdown -> liftoff -> next apex."""
    if counter is not None:
        counter.calls += 1
    td = flight_phase(apex, leg_angle, terrain, params)
    if isinstance(td, Failure):
        return td
    lo = stance_phase(td, terrain, params)
    if isinstance(lo, Failure):
        return lo
    nxt = rise_phase(lo, terrain, params)
    if isinstance(nxt, Failure):
        return nxt
    return Success(nxt, td.state.foot_x, lo.time - td.time)


def touchdown_x(apex: ApexState, leg_angle: float, terrain: Terrain, params: HopperParams) -> float | None:
    """Foot position of the committed touchdown; closed form, not an ODE call."""
    td = flight_phase(apex, leg_angle, terrain, params)
    return None if isinstance(td, Failure) else td.state.foot_x
