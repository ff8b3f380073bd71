"""Dense convex QP container and solver front-end.

Problems are stated as::

    minimize    0.5 x' H x + q' x
    subject to  A x <= b,   lb <= x <= ub

The solve is delegated to the Goldfarb-Idnani dual active-set method in
``quadprog``; this module only translates the problem and reports KKT
diagnostics.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import quadprog

from .errors import InfeasibleHard


@dataclass
class QpProblem:
    hessian: np.ndarray
    gradient: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    n_slack: int = 0
    n_hard_rows: int = 0
    row_labels: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.gradient.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.hessian @ x + self.gradient @ x)

    def stacked_constraints(self) -> tuple[np.ndarray, np.ndarray]:
        """All inequalities, box rows included, as ``G x <= h``."""
        n = self.n
        eye = np.eye(n)
        lo = np.isfinite(self.lb)
        hi = np.isfinite(self.ub)
        G = np.vstack([self.A.reshape(-1, n), -eye[lo], eye[hi]])
        h = np.concatenate([self.b, -self.lb[lo], self.ub[hi]])
        return G, h


@dataclass
class QpSolution:
    x: np.ndarray
    multipliers: np.ndarray  # for stacked_constraints rows, >= 0
    objective: float
    iterations: int
    kkt_residual: float
    wall_ms: float
    status: str = "optimal"


def kkt_residual(qp: QpProblem, x: np.ndarray, lam: np.ndarray) -> float:
    """Max of stationarity, primal infeasibility, dual infeasibility and complementarity."""
    G, h = qp.stacked_constraints()
    stat = qp.hessian @ x + qp.gradient + G.T @ lam
    slack = h - G @ x
    parts = [
        np.max(np.abs(stat), initial=0.0),
        np.max(-slack, initial=0.0),
        np.max(-lam, initial=0.0),
        np.max(np.abs(lam * slack), initial=0.0),
    ]
    return float(max(parts))


def solve_qp(qp: QpProblem) -> QpSolution:
    G, h = qp.stacked_constraints()
    start = time.perf_counter()
    try:
        x, obj, _, iters, lagr, _ = quadprog.solve_qp(
            np.ascontiguousarray(qp.hessian, dtype=float),
            -np.ascontiguousarray(qp.gradient, dtype=float),
            np.ascontiguousarray(-G.T, dtype=float),
            -h,
            0,
        )
    except ValueError as exc:
        msg = str(exc)
        if "inconsistent" in msg:
            raise InfeasibleHard(msg) from exc
        raise
    wall_ms = 1e3 * (time.perf_counter() - start)
    lam = np.asarray(lagr, dtype=float)
    return QpSolution(
        x=np.asarray(x, dtype=float),
        multipliers=lam,
        objective=qp.objective(x),
        iterations=int(iters[0]),
        kkt_residual=kkt_residual(qp, x, lam),
        wall_ms=wall_ms,
    )
