"""Closed-loop simulation: scripted PV, RHC-controlled CAV, OVM followers."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .controller import Snapshot, control_step
from .domain import (
    Departure,
    Insertion,
    SafetyParams,
    VehicleSet,
    VehicleState,
    headway,
    lane_change_id_map,
    platoon_residuals,
    reindex_after_lane_change,
)
from .errors import CollisionDetected, ConfigError, DegenerateGamma, PlatoonError
from .estimation import Regressor, RlsEstimator, rls_update
from .feasibility import FeasibilityReport, platoon_feasible
from .hdv import OvmParams, euler_step, ovm_accel, params_from_gamma, perturb_ovm
from .scenario import Scenario, apply_axis

log = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("step", "t", "vid", "index", "position", "speed", "accel", "headway")
STEP_COLUMNS = (
    "step", "t", "n_platoon", "gap_sum", "reference", "gap_residual", "speed_residual",
    "formed", "status", "iterations", "kkt_residual", "active_slacks", "max_slack", "wall_ms",
)
ESTIMATE_COLUMNS = ("step", "t", "vid", "index", "g1", "g2", "g3", "eta", "nu", "rho")


@dataclass
class _Follower:
    vid: str
    state: VehicleState
    ovm: OvmParams
    est: RlsEstimator
    last_phi: tuple[float, float, float] | None = None


@dataclass
class RunResult:
    scenario: Scenario
    ovm_params: dict[str, OvmParams]
    trajectory: list[tuple] = field(default_factory=list)
    steps: list[tuple] = field(default_factory=list)
    estimates: list[tuple] = field(default_factory=list)
    formation_time: float | None = None
    feasibility: FeasibilityReport | None = None
    collision: dict | None = None

    @property
    def seed(self) -> int:
        return self.scenario.seed

    def _wall(self) -> np.ndarray:
        idx = STEP_COLUMNS.index("wall_ms")
        return np.array([row[idx] for row in self.steps], dtype=float)

    @property
    def mean_ms(self) -> float | None:
        w = self._wall()
        return float(w.mean()) if w.size else None

    @property
    def max_ms(self) -> float | None:
        w = self._wall()
        return float(w.max()) if w.size else None

    def column(self, table: str, name: str) -> np.ndarray:
        cols = {"steps": STEP_COLUMNS, "trajectory": TRAJECTORY_COLUMNS, "estimates": ESTIMATE_COLUMNS}
        idx = cols[table].index(name)
        return np.array([row[idx] for row in getattr(self, table)])

    def vehicle(self, vid: str) -> dict[str, np.ndarray]:
        rows = [r for r in self.trajectory if r[2] == vid]
        return {
            name: np.array([r[i] for r in rows], dtype=float)
            for i, name in enumerate(TRAJECTORY_COLUMNS)
            if name != "vid"
        }

    def metrics(self) -> dict:
        status_idx = STEP_COLUMNS.index("status")
        statuses = [row[status_idx] for row in self.steps]
        return {
            "formation_time": self.formation_time,
            "mean_controller_ms": self.mean_ms,
            "max_controller_ms": self.max_ms,
            "steps": len(self.steps),
            "failsafe_steps": sum(s != "optimal" for s in statuses),
            "collision": self.collision is not None,
        }


def pv_reference_speed(profile: Sequence[Sequence[float]], t: float) -> float:
    times = [k[0] for k in profile]
    speeds = [k[1] for k in profile]
    return float(np.interp(t, times, speeds))


def detect_formation_time(times: Sequence[float], formed: Sequence[bool]) -> float | None:
    """Earliest recorded time from which the platoon test holds at every later sample."""
    start = None
    for t, ok in zip(times, formed):
        if ok:
            if start is None:
                start = t
        else:
            start = None
    return start


def initial_states(sc: Scenario, ovms: Sequence[OvmParams], sp: SafetyParams):
    """Return (pv_state or None, [CAV, HDV...] states) at t = 0."""
    init = sc.initial
    l_c = sc.limits.l_c
    n = sc.n_vehicles
    if init.positions is not None or init.speeds is not None:
        if init.positions is None or init.speeds is None:
            raise ConfigError("initial.positions and initial.speeds must be given together")
        if len(init.positions) != n or len(init.speeds) != n:
            raise ConfigError(f"explicit initial states need {n} entries each")
        members = [VehicleState(float(p), float(v)) for p, v in zip(init.positions, init.speeds)]
    else:
        members = [VehicleState(0.0, init.cav_speed)]
        for i in range(2, n + 1):
            gap = init.headway_factor * sp.safe_gap_of(i, init.hdv_speed)
            members.append(VehicleState(members[-1].position - l_c - gap, init.hdv_speed))
    pv = None
    if sc.has_pv:
        speed = pv_reference_speed(sc.pv_profile, 0.0)
        gap = init.pv_headway_factor * sp.safe_gap_of(1, members[0].speed)
        pv = VehicleState(members[0].position + l_c + gap, speed)
    return pv, members


def _validate_initial(sc: Scenario, pv, members, sp: SafetyParams) -> None:
    lim = sc.limits
    for s in ([pv] if pv else []) + members:
        if not lim.v_min <= s.speed <= lim.v_max:
            raise ConfigError(f"initial speed {s.speed} outside [{lim.v_min}, {lim.v_max}]")
    chain = ([pv] if pv else []) + members
    first_id = 0 if pv else 1
    for j in range(1, len(chain)):
        follower_id = first_id + j
        if chain[j - 1].position < chain[j].position:
            raise ConfigError("initial positions must decrease front to back")
        dp = headway(chain[j - 1], chain[j], lim.l_c)
        if dp < sp.safe_gap_of(follower_id, chain[j].speed):
            raise ConfigError(
                f"initial headway {dp:.3f} m of vehicle {follower_id} is below its safe gap"
            )


def _estimate_row(step, t, f: _Follower, index, tau):
    g = f.est.estimate
    try:
        cp = params_from_gamma(g, tau)
        derived = (cp.eta, cp.nu, cp.rho)
    except DegenerateGamma:
        derived = (math.nan, math.nan, math.nan)
    return (step, t, f.vid, index, *g, *derived)


def setup(sc: Scenario):
    """Seeded draw of the follower models and the validated t = 0 states.

    Returns ``(rng, ovms, safety_params, pv_or_None, members)``; the generator
    is returned in the state ``run`` continues from.
    """
    rng = np.random.default_rng(sc.seed)
    ovms = perturb_ovm(sc.ovm, sc.perturbation, rng, sc.n_vehicles - 1)
    sp = SafetyParams((sc.rho_cav, *(p.rho for p in ovms)), sc.limits.s_0)
    pv, members = initial_states(sc, ovms, sp)
    _validate_initial(sc, pv, members, sp)
    return rng, ovms, sp, pv, members


def feasibility_of(sc: Scenario) -> FeasibilityReport:
    """Closed-form formation check for the scenario's initial platoon; needs ``limits.L``."""
    if sc.limits.L is None:
        raise ConfigError("the feasibility check needs a roadway length (limits.L)")
    _, _, sp, _, members = setup(sc)
    try:
        return platoon_feasible(members, sp, sc.limits, sc.limits.L)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def run(sc: Scenario) -> RunResult:
    """Simulate ``sc``; raises ``CollisionDetected`` (with the partial result attached)."""
    rng, ovms, sp, pv, members = setup(sc)
    lim, cfg = sc.limits, sc.controller
    tau = cfg.tau

    def fresh_estimator():
        return RlsEstimator(
            gamma=np.array(sc.estimator.gamma0),
            P=sc.estimator.p0_scale * np.eye(3),
            xi=sc.estimator.xi,
        )

    cav = members[0]
    followers = [
        _Follower(f"hdv{i}", s, p, fresh_estimator())
        for i, (s, p) in enumerate(zip(members[1:], ovms), start=2)
    ]
    result = RunResult(scenario=sc, ovm_params={f.vid: f.ovm for f in followers})
    if lim.L is not None:
        try:
            result.feasibility = platoon_feasible(members, sp, lim, lim.L)
        except ValueError as exc:
            log.warning("feasibility check skipped: %s", exc)

    events = sorted(sc.events, key=lambda e: e.time)
    next_event = 0
    inserted = 0
    times, formed_flags = [], []

    for k in range(sc.n_steps):
        t = k * tau

        while next_event < len(events) and events[next_event].time <= t + 1e-9:
            ev = events[next_event]
            next_event += 1
            followers, sp, inserted = _apply_lane_change(
                ev, pv is not None, cav, followers, sp, sc, rng, inserted, fresh_estimator
            )

        # (1) measurement, (2) estimation
        for j, f in enumerate(followers):
            if f.last_phi is not None:
                f.est = rls_update(f.est, Regressor(f.last_phi, f.state.speed))

        # (3) control
        snap = Snapshot(cav=cav, hdvs=tuple(f.state for f in followers), pv=pv)
        gammas = [f.est.estimate for f in followers]
        u_cav, diag = control_step(snap, gammas, cfg, sp, lim)

        # (4) followers, (5) PV
        leaders = [cav] + [f.state for f in followers[:-1]]
        u_hdv = []
        for f, lead in zip(followers, leaders):
            dp = headway(lead, f.state, lim.l_c)
            u_hdv.append(ovm_accel(dp, lead.speed - f.state.speed, f.state.speed, f.ovm, lim))
        u_pv = None
        if pv is not None:
            target = pv_reference_speed(sc.pv_profile, t + tau)
            u_pv = (target - pv.speed) / tau

        # (6) actuate
        new_cav = euler_step(cav, u_cav, tau, lim)
        new_hdv = [euler_step(f.state, u, tau, lim) for f, u in zip(followers, u_hdv)]
        new_pv = euler_step(pv, u_pv, tau, lim) if pv is not None else None

        # record samples at t_k with the input actually applied over [t_k, t_k + tau)
        platoon_now = [cav] + [f.state for f in followers]
        gap_res, speed_res = platoon_residuals(platoon_now, sp, lim.l_c)
        formed = gap_res <= sc.criteria.eps_dp and speed_res <= sc.criteria.eps_v
        times.append(t)
        formed_flags.append(formed)
        rows = []
        if pv is not None:
            rows.append((k, t, "pv", 0, pv.position, pv.speed, new_pv.accel, math.nan))
        lead = pv
        for idx, (s, applied, vid) in enumerate(
            zip(platoon_now, [new_cav] + new_hdv, ["cav"] + [f.vid for f in followers]),
            start=1,
        ):
            dp = headway(lead, s, lim.l_c) if lead is not None else math.nan
            rows.append((k, t, vid, idx, s.position, s.speed, applied.accel, dp))
            lead = s
        result.trajectory.extend(rows)
        gap_sum = platoon_now[0].position - platoon_now[-1].position - (len(platoon_now) - 1) * lim.l_c
        reference = sum(sp.safe_gap_of(i, s.speed) for i, s in enumerate(platoon_now[1:], start=2))
        result.steps.append((
            k, t, len(platoon_now), gap_sum, reference, gap_res, speed_res, int(formed),
            diag.status, diag.iterations, diag.kkt_residual, diag.active_slacks,
            diag.max_slack, diag.wall_ms,
        ))
        for idx, f in enumerate(followers, start=2):
            result.estimates.append(_estimate_row(k, t, f, idx, tau))

        for f, lead_state, new in zip(followers, leaders, new_hdv):
            f.last_phi = (
                f.state.speed,
                headway(lead_state, f.state, lim.l_c),
                lead_state.speed,
            )
            f.state = new
        cav, pv = new_cav, new_pv

        chain = ([pv] if pv is not None else []) + [cav] + [f.state for f in followers]
        labels = (["pv"] if pv is not None else []) + ["cav"] + [f.vid for f in followers]
        for a in range(1, len(chain)):
            gap = chain[a - 1].position - chain[a].position - lim.l_c
            if gap < 0.0:
                result.collision = {
                    "time": t + tau,
                    "leader": labels[a - 1],
                    "follower": labels[a],
                    "headway": gap,
                    "states": {
                        lab: {"position": s.position, "speed": s.speed, "accel": s.accel}
                        for lab, s in zip(labels, chain)
                    },
                }
                result.formation_time = detect_formation_time(times, formed_flags)
                raise CollisionDetected(
                    f"{labels[a]} hit {labels[a - 1]} at t={t + tau:.2f} s (headway {gap:.3f} m)",
                    dump={"result": result, **result.collision},
                )

    result.formation_time = detect_formation_time(times, formed_flags)
    return result


def _apply_lane_change(ev, has_pv, cav, followers, sp, sc, rng, inserted, fresh_estimator):
    vs = VehicleSet(has_pv=has_pv, n_total=len(followers) + 1)
    event = Departure(ev.id) if ev.kind == "departure" else Insertion(ev.id)
    mapping = lane_change_id_map(vs, event)
    reindex_after_lane_change(vs, event)
    rho = list(sp.rho)
    if isinstance(event, Departure):
        pos = ev.id - 2
        followers = followers[:pos] + followers[pos + 1:]
        del rho[ev.id - 1]
        # the new follower of the gap has a different leader now
        if pos < len(followers):
            followers[pos].last_phi = None
    else:
        pos = ev.id - 1  # list index of the new follower
        ahead = followers[pos - 1].state
        behind = followers[pos].state if pos < len(followers) else None
        if behind is not None:
            position = 0.5 * (ahead.position + behind.position)
            speed = 0.5 * (ahead.speed + behind.speed)
        else:
            position = ahead.position - sc.limits.l_c - sp.safe_gap_of(ev.id, ahead.speed) * 1.5
            speed = ahead.speed
        ovm = perturb_ovm(sc.ovm, sc.perturbation, rng, 1)[0]
        inserted += 1
        newcomer = _Follower(f"ins{inserted}", VehicleState(position, speed), ovm, fresh_estimator())
        followers = followers[:pos] + [newcomer] + followers[pos:]
        rho.insert(ev.id, ovm.rho)
        if pos + 1 < len(followers):
            followers[pos + 1].last_phi = None
    log.info("lane change %s at t=%.2f: id map %s", ev.kind, ev.time, mapping)
    return followers, SafetyParams(tuple(rho), sp.s_0), inserted


@dataclass
class SweepRow:
    axis: str
    value: float
    seed: int
    formation_time: float | None
    mean_ms: float | None
    max_ms: float | None
    error: str = ""


def _sweep_cell(args) -> SweepRow:
    base, axis, value, seed = args
    try:
        sc = apply_axis(base, axis, value)
        from dataclasses import replace
        sc = replace(sc, seed=int(seed))
        res = run(sc)
        return SweepRow(axis, value, int(seed), res.formation_time, res.mean_ms, res.max_ms)
    except PlatoonError as exc:
        return SweepRow(axis, value, int(seed), None, None, None, f"{type(exc).__name__}: {exc}")


def sweep_workers() -> int:
    raw = os.environ.get("PLATOON_RHC_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"PLATOON_RHC_THREADS must be an integer, got {raw!r}")
    return os.cpu_count() or 1


def sweep(
    base: Scenario,
    axis: str,
    values: Sequence[float],
    seeds: Sequence[int],
    workers: int | None = None,
) -> list[SweepRow]:
    cells = [(base, axis, v, s) for v in values for s in seeds]
    if not cells:
        return []
    apply_axis(base, axis, values[0])  # reject a bad axis before fanning out
    workers = sweep_workers() if workers is None else workers
    if workers <= 1 or len(cells) == 1:
        return [_sweep_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
        return list(pool.map(_sweep_cell, cells))


def aggregate(rows: Sequence[SweepRow]) -> list[dict]:
    """Per-value means over the cells that formed a platoon (formation) or ran (timing)."""
    out = []
    for value in dict.fromkeys(r.value for r in rows):
        cells = [r for r in rows if r.value == value]
        formed = [r.formation_time for r in cells if r.formation_time is not None]
        timed = [r.mean_ms for r in cells if r.mean_ms is not None]
        out.append({
            "value": value,
            "cells": len(cells),
            "formed": len(formed),
            "failed": sum(bool(r.error) for r in cells),
            "mean_formation_time": float(np.mean(formed)) if formed else None,
            "mean_compute_ms": float(np.mean(timed)) if timed else None,
        })
    return out
