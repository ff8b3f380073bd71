"""Closed-form pre-checks for platoon formation on a finite roadway.

Both checks assume the most aggressive admissible CAV behaviour: brake at
``u_min`` until the speed floor, then cruise at ``v_min``.  They are
advisory; a passing check does not guarantee the receding-horizon problem
is solvable.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

from .domain import RoadLimits, SafetyParams, VehicleState, headway


@dataclass(frozen=True)
class HorizonBounds:
    t_lower: float
    t_upper: float  # math.inf when the CAV stops before covering L
    L_s: float
    t_s: float
    regime: str  # "braking" (L <= L_s) or "cruise" (L > L_s)

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.t_upper)


@dataclass(frozen=True)
class FeasibilityReport:
    t_f_lower: float
    t_f_upper: float
    L_s: float
    platoon_feasible: bool
    tau_p: float | None
    already_formed: bool = False
    gap_excess: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        if not math.isfinite(self.t_f_upper):
            d["t_f_upper"] = None
            d["upper_unbounded"] = True
        else:
            d["upper_unbounded"] = False
        return d


def piecewise_extreme_control(v: float, limits: RoadLimits) -> float:
    return limits.u_min if v > limits.v_min else 0.0


def switch_point(v1_0: float, limits: RoadLimits) -> tuple[float, float]:
    """Time and distance after which full braking reaches ``v_min``."""
    t_s = (limits.v_min - v1_0) / limits.u_min
    L_s = (limits.v_min**2 - v1_0**2) / (2.0 * limits.u_min)
    return t_s, L_s


def horizon_bounds(v1_0: float, limits: RoadLimits, L: float) -> HorizonBounds:
    if v1_0 <= 0.0:
        raise ValueError("initial CAV speed must be positive")
    if L <= 0.0:
        raise ValueError("roadway length must be positive")
    t_s, L_s = switch_point(v1_0, limits)
    t_lower = L / v1_0
    if L <= L_s:
        disc = max(v1_0**2 + 2.0 * limits.u_min * L, 0.0)
        t_upper = (-v1_0 + math.sqrt(disc)) / limits.u_min
        return HorizonBounds(t_lower, t_upper, L_s, t_s, "braking")
    if limits.v_min == 0.0:
        return HorizonBounds(t_lower, math.inf, L_s, t_s, "cruise")
    return HorizonBounds(t_lower, t_s + (L - L_s) / limits.v_min, L_s, t_s, "cruise")


def closure_time(v1_0: float, vN_0: float, gap_excess: float, limits: RoadLimits) -> float | None:
    """Time for a constant-speed last follower to eat ``gap_excess`` behind a braking CAV.

    The CAV follows the extreme piecewise control.  Returns ``None`` when the
    gap never closes.
    """
    if gap_excess < 0.0:
        raise ValueError("gap excess must be non-negative")
    u = limits.u_min
    rel = vN_0 - v1_0
    t_s, L_s = switch_point(v1_0, limits)
    disc = rel * rel - 2.0 * u * gap_excess
    if disc >= 0.0:
        t_brake = (rel - math.sqrt(disc)) / u
        if 0.0 <= t_brake <= t_s:
            return t_brake
    closed_at_switch = vN_0 * t_s - L_s
    rate = vN_0 - limits.v_min
    if rate <= 0.0:
        return None
    return t_s + (gap_excess - closed_at_switch) / rate


def gap_excess(
    states: Sequence[VehicleState], sp: SafetyParams, l_c: float
) -> float:
    """Sum over followers of headway beyond the safe gap; ``states`` is CAV first."""
    return math.fsum(
        headway(states[i - 1], states[i], l_c) - sp.safe_gap_of(i + 1, states[i].speed)
        for i in range(1, len(states))
    )


def platoon_feasible(
    states: Sequence[VehicleState],
    sp: SafetyParams,
    limits: RoadLimits,
    L: float,
    l_c: float | None = None,
) -> FeasibilityReport:
    l_c = limits.l_c if l_c is None else l_c
    v1_0, vN_0 = states[0].speed, states[-1].speed
    bounds = horizon_bounds(v1_0, limits, L)
    excess = gap_excess(states, sp, l_c)
    if excess < 0.0:
        raise ValueError(f"initial headways undercut the safe gaps by {-excess:.3f} m")
    if excess == 0.0:
        return FeasibilityReport(
            bounds.t_lower, bounds.t_upper, bounds.L_s, True, 0.0, True, excess
        )
    tau_p = closure_time(v1_0, vN_0, excess, limits)
    feasible = tau_p is not None and 0.0 < tau_p <= bounds.t_upper
    return FeasibilityReport(
        bounds.t_lower, bounds.t_upper, bounds.L_s, feasible, tau_p, False, excess
    )
