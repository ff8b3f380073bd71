"""Receding-horizon controller for the lead CAV.

Every step the CAV predicts itself (exact double integrator) and its
followers (CTH-RV with the current RLS estimates) as affine functions of
its own input sequence, condenses the tracking/effort problem into a dense
QP and applies the first input of the solution.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain import RoadLimits, SafetyParams, VehicleState
from .errors import ConfigError, InfeasibleHard
from .hdv import GammaVector
from .qp import QpProblem, solve_qp

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControllerConfig:
    horizon: int = 20
    w_e: float = 1.0
    w_u: float = 1.0
    slack_penalty: float = 1e4
    tau: float = 0.1
    # False: hold the reference at its measured value over the horizon.
    # True: let it follow the predicted follower speeds (affine in U).
    predict_reference: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be at least one step")
        if self.w_e <= 0 or self.w_u <= 0 or self.slack_penalty <= 0:
            raise ConfigError("controller weights must be positive")
        if self.tau <= 0:
            raise ConfigError("sampling time must be positive")


@dataclass
class PredictionChain:
    """Affine predictions over ``n = 1..H`` for platoon members ``1..N``.

    ``pos_const[n-1, j] + pos_sens[n-1, j] @ U`` is the predicted position of
    member ``j`` (0 is the CAV) ``n`` steps ahead; same layout for speeds.
    """

    pos_const: np.ndarray  # (H, M)
    pos_sens: np.ndarray  # (H, M, H)
    vel_const: np.ndarray
    vel_sens: np.ndarray
    l_c: float
    speeds0: np.ndarray | None = None  # measured speeds at the current sample

    @property
    def horizon(self) -> int:
        return self.pos_const.shape[0]

    @property
    def members(self) -> int:
        return self.pos_const.shape[1]

    def positions(self, U: np.ndarray) -> np.ndarray:
        return self.pos_const + self.pos_sens @ U

    def speeds(self, U: np.ndarray) -> np.ndarray:
        return self.vel_const + self.vel_sens @ U

    def gap_sum(self) -> tuple[np.ndarray, np.ndarray]:
        """CAV-to-last-follower gap ``p_1 - p_N - (N-1) l_c`` as (const, sens)."""
        m = self.members
        c = self.pos_const[:, 0] - self.pos_const[:, -1] - (m - 1) * self.l_c
        S = self.pos_sens[:, 0, :] - self.pos_sens[:, -1, :]
        return c, S


@dataclass(frozen=True)
class Snapshot:
    """Information available to the CAV at one sample (delay-free)."""

    cav: VehicleState
    hdvs: tuple[VehicleState, ...]
    pv: VehicleState | None = None


@dataclass
class StepDiagnostics:
    status: str
    iterations: int = 0
    wall_ms: float = 0.0
    kkt_residual: float = float("nan")
    active_slacks: int = 0
    max_slack: float = 0.0
    plan: np.ndarray | None = field(default=None, repr=False)


def worst_case_pv_trajectory(
    v0: float, tau: float, H: int, limits: RoadLimits, p0: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Positions and speeds ``n = 1..H`` of a PV braking as hard as the floor allows."""
    pos = np.empty(H)
    vel = np.empty(H)
    p, v = p0, v0
    for n in range(H):
        u = max(limits.u_min, (limits.v_min - v) / tau)
        p = p + v * tau + 0.5 * tau * tau * u
        v = v + u * tau
        pos[n] = p
        vel[n] = v
    return pos, vel


def build_reference(hdv_speeds: Sequence[float], sp: SafetyParams) -> float:
    """Sum of the followers' safe gaps, ``sum_i (rho_i v_i + s_0)`` for ``i = 2..N``."""
    return sum(sp.safe_gap_of(i + 2, v) for i, v in enumerate(hdv_speeds))


def build_prediction_chain(
    snap: Snapshot, gammas: Sequence[GammaVector], cfg: ControllerConfig, l_c: float
) -> PredictionChain:
    if len(gammas) != len(snap.hdvs):
        raise ValueError("need one gamma estimate per follower")
    H, tau = cfg.horizon, cfg.tau
    members = [snap.cav, *snap.hdvs]
    M = len(members)
    g = np.array(gammas, dtype=float).reshape(-1, 3)

    p_c = np.array([s.position for s in members], dtype=float)
    v_c = np.array([s.speed for s in members], dtype=float)
    speeds0 = v_c.copy()
    p_s = np.zeros((M, H))
    v_s = np.zeros((M, H))

    pos_const = np.empty((H, M))
    pos_sens = np.empty((H, M, H))
    vel_const = np.empty((H, M))
    vel_sens = np.empty((H, M, H))

    for n in range(H):
        # followers: v+ = g1 v + g2 (p_lead - p - l_c) + g3 v_lead, p+ = p + v tau
        dp_c = p_c[:-1] - p_c[1:] - l_c
        dp_s = p_s[:-1] - p_s[1:]
        nv_c = g[:, 0] * v_c[1:] + g[:, 1] * dp_c + g[:, 2] * v_c[:-1]
        nv_s = g[:, 0:1] * v_s[1:] + g[:, 1:2] * dp_s + g[:, 2:3] * v_s[:-1]
        np_c = p_c[1:] + tau * v_c[1:]
        np_s = p_s[1:] + tau * v_s[1:]
        # CAV: exact double integrator under u_n
        cav_p_c = p_c[0] + tau * v_c[0]
        cav_p_s = p_s[0] + tau * v_s[0]
        cav_p_s[n] += 0.5 * tau * tau
        cav_v_c = v_c[0]
        cav_v_s = v_s[0].copy()
        cav_v_s[n] += tau

        p_c = np.concatenate(([cav_p_c], np_c))
        v_c = np.concatenate(([cav_v_c], nv_c))
        p_s = np.vstack((cav_p_s, np_s))
        v_s = np.vstack((cav_v_s, nv_s))

        pos_const[n] = p_c
        pos_sens[n] = p_s
        vel_const[n] = v_c
        vel_sens[n] = v_s

    return PredictionChain(pos_const, pos_sens, vel_const, vel_sens, l_c, speeds0)


def reference_affine(
    chain: PredictionChain, sp: SafetyParams, predicted: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Reference ``e_r(k+n)`` as (const, sens).

    With ``predicted`` the follower speeds come from the prediction chain;
    otherwise the measured speeds are held over the whole horizon.
    """
    m = chain.members
    rho = np.array([sp.rho_of(i) for i in range(2, m + 1)])
    if not predicted:
        if chain.speeds0 is None:
            raise ValueError("chain carries no measured speeds")
        value = (m - 1) * sp.s_0 + float(chain.speeds0[1:] @ rho)
        return np.full(chain.horizon, value), np.zeros((chain.horizon, chain.horizon))
    c = (m - 1) * sp.s_0 + chain.vel_const[:, 1:] @ rho
    S = np.einsum("nih,i->nh", chain.vel_sens[:, 1:, :], rho)
    return c, S


def assemble_qp(
    chain: PredictionChain,
    pv_positions: np.ndarray | None,
    cfg: ControllerConfig,
    sp: SafetyParams,
    limits: RoadLimits,
) -> QpProblem:
    """Condense tracking, effort and safety into ``x = [U, slacks]``.

    Hard rows: CAV speed bounds and, with a PV, the CAV-vs-worst-case-PV
    rear-end constraint.  Follower rear-end rows are softened with one
    quadratically penalized slack each.
    """
    H = chain.horizon
    m = chain.members
    n_hdv = m - 1
    n_slack = n_hdv * H
    n = H + n_slack

    e_c, e_S = chain.gap_sum()
    r_c, r_S = reference_affine(chain, sp, cfg.predict_reference)
    res_c = e_c - r_c
    res_S = e_S - r_S

    hess = np.zeros((n, n))
    grad = np.zeros(n)
    hess[:H, :H] = cfg.w_e * res_S.T @ res_S + cfg.w_u * np.eye(H)
    grad[:H] = cfg.w_e * res_S.T @ res_c
    hess[H:, H:] = cfg.slack_penalty * np.eye(n_slack)

    rows, rhs, labels = [], [], []

    def add(row_u, bound, label, slack_index=None):
        row = np.zeros(n)
        row[:H] = row_u
        if slack_index is not None:
            row[H + slack_index] = -1.0
        rows.append(row)
        rhs.append(bound)
        labels.append(label)

    v1_c = chain.vel_const[:, 0]
    v1_S = chain.vel_sens[:, 0, :]
    for k in range(H):
        add(v1_S[k], limits.v_max - v1_c[k], f"vmax[{k + 1}]")
        add(-v1_S[k], v1_c[k] - limits.v_min, f"vmin[{k + 1}]")

    rho1 = sp.rho_of(1)
    if pv_positions is not None:
        # p0 - p1 - l_c >= rho_1 v1 + s0
        p1_c = chain.pos_const[:, 0]
        p1_S = chain.pos_sens[:, 0, :]
        for k in range(H):
            row = p1_S[k] + rho1 * v1_S[k]
            bound = pv_positions[k] - p1_c[k] - chain.l_c - sp.s_0 - rho1 * v1_c[k]
            add(row, bound, f"pv[{k + 1}]")

    n_hard = len(rows)
    # follower j (vehicle id j+1): p_{j-1} - p_j - l_c - rho v_j - s0 + slack >= 0
    for j in range(1, m):
        rho = sp.rho_of(j + 1)
        for k in range(H):
            row = (
                chain.pos_sens[k, j, :]
                - chain.pos_sens[k, j - 1, :]
                + rho * chain.vel_sens[k, j, :]
            )
            bound = (
                chain.pos_const[k, j - 1]
                - chain.pos_const[k, j]
                - chain.l_c
                - sp.s_0
                - rho * chain.vel_const[k, j]
            )
            add(row, bound, f"safe{j + 1}[{k + 1}]", slack_index=(j - 1) * H + k)

    lb = np.concatenate([np.full(H, limits.u_min), np.zeros(n_slack)])
    ub = np.concatenate([np.full(H, limits.u_max), np.full(n_slack, np.inf)])
    return QpProblem(
        hessian=hess,
        gradient=grad,
        A=np.array(rows).reshape(-1, n),
        b=np.array(rhs),
        lb=lb,
        ub=ub,
        n_slack=n_slack,
        n_hard_rows=n_hard,
        row_labels=labels,
    )


def fail_safe_input(v1: float, cfg: ControllerConfig, limits: RoadLimits) -> float:
    return max(limits.u_min, (limits.v_min - v1) / cfg.tau)


def control_step(
    snap: Snapshot,
    gammas: Sequence[GammaVector],
    cfg: ControllerConfig,
    sp: SafetyParams,
    limits: RoadLimits,
) -> tuple[float, StepDiagnostics]:
    """Return the CAV input for this sample and solver diagnostics; never raises on solver trouble."""
    start = time.perf_counter()
    try:
        pv_pos = None
        if snap.pv is not None:
            pv_pos, _ = worst_case_pv_trajectory(
                snap.pv.speed, cfg.tau, cfg.horizon, limits, p0=snap.pv.position
            )
        chain = build_prediction_chain(snap, gammas, cfg, limits.l_c)
        qp = assemble_qp(chain, pv_pos, cfg, sp, limits)
        sol = solve_qp(qp)
    except InfeasibleHard as exc:
        log.warning("hard constraints infeasible, applying fail-safe braking: %s", exc)
        u = fail_safe_input(snap.cav.speed, cfg, limits)
        return u, StepDiagnostics(
            status="failsafe", wall_ms=1e3 * (time.perf_counter() - start)
        )
    except (ValueError, np.linalg.LinAlgError) as exc:
        log.error("controller failure, applying fail-safe braking: %s", exc)
        u = fail_safe_input(snap.cav.speed, cfg, limits)
        return u, StepDiagnostics(
            status="error", wall_ms=1e3 * (time.perf_counter() - start)
        )
    H = cfg.horizon
    slacks = sol.x[H:]
    u = float(np.clip(sol.x[0], limits.u_min, limits.u_max))
    diag = StepDiagnostics(
        status=sol.status,
        iterations=sol.iterations,
        wall_ms=1e3 * (time.perf_counter() - start),
        kkt_residual=sol.kkt_residual,
        active_slacks=int(np.count_nonzero(slacks > 1e-9)),
        max_slack=float(slacks.max(initial=0.0)),
        plan=sol.x[:H].copy(),
    )
    return u, diag
