"""Car-following models for the human-driven followers.

The nonlinear optimal velocity model (OVM) drives the simulated HDVs; the
linear constant time headway relative velocity model (CTH-RV), written in
its regression form, is what the controller predicts with.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .domain import RoadLimits, VehicleState
from .errors import ConfigError, DegenerateGamma

GAMMA_EPS = 1e-8


@dataclass(frozen=True)
class OvmParams:
    alpha: float = 0.4
    beta: float = 0.2
    v_d: float = 30.0
    rho: float = 1.8
    s_0: float = 3.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0 or self.rho <= 0 or self.v_d <= 0:
            raise ConfigError(f"OVM gains, headway and desired speed must be positive: {self}")

    def validate_against(self, limits: RoadLimits) -> None:
        if not limits.v_min < self.v_d <= limits.v_max:
            raise ConfigError(
                f"desired speed {self.v_d} outside ({limits.v_min}, {limits.v_max}]"
            )


@dataclass(frozen=True)
class CthRvParams:
    eta: float
    nu: float
    rho: float


class GammaVector(NamedTuple):
    g1: float
    g2: float
    g3: float


def ovm_optimal_speed(delta: float, s: float, v_d: float) -> float:
    return 0.5 * v_d * (math.tanh(delta) + math.tanh(s))


def ovm_accel(
    dp: float | None,
    dv: float,
    v: float,
    p: OvmParams,
    limits: RoadLimits | None = None,
) -> float:
    """OVM acceleration; ``dp=None`` means nothing ahead (infinite headway).

    With ``limits`` the result is clamped to the admissible input range.
    """
    s = p.rho * v + p.s_0
    tanh_delta = 1.0 if dp is None else math.tanh(dp - s)
    target = 0.5 * p.v_d * (tanh_delta + math.tanh(s))
    dv_term = 0.0 if dp is None else dv
    u = p.alpha * (target - v) + p.beta * dv_term
    if limits is not None:
        u = limits.clamp_accel(u)
    return u


def ovm_free_speed(p: OvmParams, iters: int = 200) -> float:
    """Fixed point ``v = v_d (1 + tanh(rho v + s_0)) / 2`` reached with no leader."""
    v = p.v_d
    for _ in range(iters):
        v_next = 0.5 * p.v_d * (1.0 + math.tanh(p.rho * v + p.s_0))
        if v_next == v:
            break
        v = v_next
    return v


def ovm_equilibrium_headway(v: float, p: OvmParams) -> float:
    """Headway at which a follower at speed ``v`` behind an equal-speed leader is at rest."""
    s = p.rho * v + p.s_0
    arg = 2.0 * v / p.v_d - math.tanh(s)
    if not -1.0 < arg < 1.0:
        raise ValueError(f"speed {v} has no finite OVM equilibrium headway")
    return s + math.atanh(arg)


def perturb_ovm(
    nominal: OvmParams, fraction: float, rng: np.random.Generator, count: int
) -> list[OvmParams]:
    """Draw ``count`` drivers with each gain uniform within ``±fraction`` of nominal."""
    out = []
    for _ in range(count):
        f = rng.uniform(-fraction, fraction, size=4)
        out.append(
            replace(
                nominal,
                alpha=nominal.alpha * (1.0 + f[0]),
                beta=nominal.beta * (1.0 + f[1]),
                v_d=nominal.v_d * (1.0 + f[2]),
                rho=nominal.rho * (1.0 + f[3]),
            )
        )
    return out


def cthrv_next_speed(v: float, dp: float, v_lead: float, gamma: GammaVector) -> float:
    return gamma[0] * v + gamma[1] * dp + gamma[2] * v_lead


def gamma_from_params(p: CthRvParams, tau: float) -> GammaVector:
    if tau <= 0:
        raise ValueError("sampling time must be positive")
    return GammaVector(
        1.0 - (p.eta * p.rho + p.nu) * tau,
        p.eta * tau,
        p.nu * tau,
    )


def params_from_gamma(gamma: GammaVector, tau: float) -> CthRvParams:
    if tau <= 0:
        raise ValueError("sampling time must be positive")
    g1, g2, g3 = gamma
    if abs(g2) < GAMMA_EPS:
        raise DegenerateGamma(f"headway coefficient {g2!r} too small to recover rho")
    return CthRvParams(eta=g2 / tau, nu=g3 / tau, rho=(1.0 - g1 - g3) / g2)


def euler_step(state: VehicleState, u: float, tau: float, limits: RoadLimits) -> VehicleState:
    """Advance one sample with constant input, keeping speed inside its bounds.

    The input is clamped to ``[u_min, u_max]`` and then shrunk so the speed
    lands exactly on a bound instead of crossing it.  ``accel`` of the result
    is the input actually applied over the step.
    """
    if tau <= 0:
        raise ValueError("sampling time must be positive")
    u = limits.clamp_accel(u)
    v_next = state.speed + u * tau
    if v_next < limits.v_min:
        u = (limits.v_min - state.speed) / tau
        v_next = limits.v_min
    elif v_next > limits.v_max:
        u = (limits.v_max - state.speed) / tau
        v_next = limits.v_max
    p_next = state.position + state.speed * tau + 0.5 * tau * tau * u
    return VehicleState(position=p_next, speed=v_next, accel=u)
