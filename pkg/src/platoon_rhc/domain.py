"""Shared physical types, gap kinematics, platoon detection and id bookkeeping.

Vehicles are identified as in the usual platooning setup: ``0`` is the
optional preceding vehicle (PV), ``1`` the controlled CAV and ``2..N`` the
human-driven followers ordered by distance behind the CAV.  All quantities
are SI.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

from .errors import ConfigError, InvalidEvent, OrderingViolation

DEFAULT_VEHICLE_LENGTH = 5.0


@dataclass(frozen=True)
class VehicleState:
    position: float
    speed: float
    accel: float = 0.0


@dataclass(frozen=True)
class RoadLimits:
    v_min: float = 0.0
    v_max: float = 35.0
    u_min: float = -5.0
    u_max: float = 3.0
    l_c: float = DEFAULT_VEHICLE_LENGTH
    s_0: float = 3.0
    L: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.v_min < self.v_max:
            raise ConfigError(f"need 0 <= v_min < v_max, got {self.v_min}, {self.v_max}")
        if not self.u_min < 0.0 < self.u_max:
            raise ConfigError(f"need u_min < 0 < u_max, got {self.u_min}, {self.u_max}")
        if self.s_0 <= 0.0 or self.l_c <= 0.0:
            raise ConfigError("s_0 and l_c must be positive")
        if self.L is not None and self.L <= 0.0:
            raise ConfigError("roadway length L must be positive when given")

    def clamp_accel(self, u: float) -> float:
        return min(max(u, self.u_min), self.u_max)


@dataclass(frozen=True)
class SafetyParams:
    """Per-vehicle safe time headways for the platoon members ``1..N``.

    ``rho[0]`` belongs to the CAV (used against the PV), ``rho[i - 1]`` to
    vehicle ``i``.
    """

    rho: tuple[float, ...]
    s_0: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "rho", tuple(float(r) for r in self.rho))
        if any(r <= 0.0 for r in self.rho):
            raise ConfigError("time headways must be positive")
        if self.s_0 <= 0.0:
            raise ConfigError("standstill distance must be positive")

    def rho_of(self, vehicle_id: int) -> float:
        return self.rho[vehicle_id - 1]

    def safe_gap_of(self, vehicle_id: int, speed: float) -> float:
        return safe_gap(speed, self.rho_of(vehicle_id), self.s_0)


@dataclass(frozen=True)
class PlatoonCriteria:
    eps_dp: float = 1.0
    eps_v: float = 0.5

    def __post_init__(self):
        if self.eps_dp <= 0.0 or self.eps_v <= 0.0:
            raise ConfigError("platoon tolerances must be strictly positive")


@dataclass(frozen=True)
class VehicleSet:
    has_pv: bool
    n_total: int

    def __post_init__(self):
        if self.n_total < 2:
            raise ConfigError("the HDV set must be non-empty (N >= 2)")

    @property
    def ids(self) -> tuple[int, ...]:
        first = 0 if self.has_pv else 1
        return tuple(range(first, self.n_total + 1))

    @property
    def hdv_ids(self) -> tuple[int, ...]:
        return tuple(range(2, self.n_total + 1))

    @property
    def platoon_ids(self) -> tuple[int, ...]:
        return tuple(range(1, self.n_total + 1))


@dataclass(frozen=True)
class Departure:
    id: int


@dataclass(frozen=True)
class Insertion:
    behind_id: int


LaneChange = Union[Departure, Insertion]


def safe_gap(v: float, rho: float, s0: float) -> float:
    return rho * v + s0


def headway(lead: VehicleState, follow: VehicleState, l_c: float) -> float:
    if lead.position < follow.position:
        raise OrderingViolation(
            f"leader at {lead.position} is behind follower at {follow.position}"
        )
    return lead.position - follow.position - l_c


def approach_rate(lead: VehicleState, follow: VehicleState) -> float:
    return lead.speed - follow.speed


def safety_satisfied(
    lead: VehicleState, follow: VehicleState, sp: SafetyParams, l_c: float, follow_id: int
) -> bool:
    """Rear-end constraint ``headway >= rho_i * v_i + s_0`` for follower ``follow_id``."""
    return headway(lead, follow, l_c) >= sp.safe_gap_of(follow_id, follow.speed)


def platoon_residuals(
    states: Sequence[VehicleState], sp: SafetyParams, l_c: float
) -> tuple[float, float]:
    """Return the (gap, speed) root-sum-square residuals of the platoon test.

    ``states`` lists the platoon members front to back, CAV first.
    """
    if len(states) < 2:
        raise ValueError("a platoon needs the CAV and at least one follower")
    gap_sq = 0.0
    for i in range(1, len(states)):
        dp = headway(states[i - 1], states[i], l_c)
        gap_sq += (dp - sp.safe_gap_of(i + 1, states[i].speed)) ** 2
    speeds = [s.speed for s in states]
    mean = math.fsum(speeds) / len(speeds)
    speed_sq = math.fsum((v - mean) ** 2 for v in speeds)
    return math.sqrt(gap_sq), math.sqrt(speed_sq)


def platoon_formed(
    states: Sequence[VehicleState], sp: SafetyParams, crit: PlatoonCriteria, l_c: float
) -> bool:
    gap_res, speed_res = platoon_residuals(states, sp, l_c)
    return gap_res <= crit.eps_dp and speed_res <= crit.eps_v


def lane_change_id_map(vs: VehicleSet, event: LaneChange) -> dict[int, int | None]:
    """Map every pre-event id to its post-event id (``None`` for a departed vehicle)."""
    if isinstance(event, Departure):
        if event.id in (0, 1):
            raise InvalidEvent("the PV and the CAV cannot leave the platoon set")
        if event.id not in vs.hdv_ids:
            raise InvalidEvent(f"unknown HDV id {event.id}")
        if len(vs.hdv_ids) == 1:
            raise InvalidEvent("departure would leave the HDV set empty")
        return {
            i: (None if i == event.id else i - 1 if i > event.id else i) for i in vs.ids
        }
    if isinstance(event, Insertion):
        if event.behind_id in (0, 1):
            raise InvalidEvent("insertions are referenced by an HDV id")
        if event.behind_id not in vs.hdv_ids:
            raise InvalidEvent(f"unknown HDV id {event.behind_id}")
        return {i: (i + 1 if i > event.behind_id else i) for i in vs.ids}
    raise InvalidEvent(f"unsupported event {event!r}")


def reindex_after_lane_change(vs: VehicleSet, event: LaneChange) -> VehicleSet:
    lane_change_id_map(vs, event)
    delta = -1 if isinstance(event, Departure) else 1
    return VehicleSet(has_pv=vs.has_pv, n_total=vs.n_total + delta)
